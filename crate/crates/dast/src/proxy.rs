//! Recording HTTP forward proxy. Every byte the train sends through it counts
//! as TX, every byte it receives back counts as RX.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

/// What the proxy does with requests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProxyMode {
    /// Read the full request, answer 403 and never contact upstream.
    #[default]
    Sink,
    /// Relay to the requested host.
    Forward,
}

#[derive(Debug, Default)]
pub struct TrafficCounters {
    pub rx: AtomicU64,
    pub tx: AtomicU64,
    /// Part of rx + tx exchanged with allowed data-source hosts.
    pub allowed: AtomicU64,
    active: AtomicU64,
}

impl TrafficCounters {
    pub fn rx(&self) -> u64 {
        self.rx.load(Ordering::SeqCst)
    }

    pub fn tx(&self) -> u64 {
        self.tx.load(Ordering::SeqCst)
    }

    pub fn allowed(&self) -> u64 {
        self.allowed.load(Ordering::SeqCst)
    }

    pub fn active_connections(&self) -> u64 {
        self.active.load(Ordering::SeqCst)
    }
}

pub struct RecordingProxy {
    addr: SocketAddr,
    counters: Arc<TrafficCounters>,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

const MAX_HEAD: usize = 64 * 1024;

impl RecordingProxy {
    /// Listen on an ephemeral port of `bind_ip` (usually 127.0.0.1).
    pub fn start(bind_ip: &str, mode: ProxyMode, allowed_hosts: Vec<String>) -> io::Result<Self> {
        let listener = TcpListener::bind((bind_ip, 0))?;
        let addr = listener.local_addr()?;
        let counters = Arc::new(TrafficCounters::default());
        let stop = Arc::new(AtomicBool::new(false));
        let allowed = Arc::new(
            allowed_hosts
                .into_iter()
                .map(|h| h.to_ascii_lowercase())
                .collect::<Vec<_>>(),
        );
        let accept = {
            let counters = counters.clone();
            let stop = stop.clone();
            thread::spawn(move || {
                for conn in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(conn) = conn else { continue };
                    let counters = counters.clone();
                    let allowed = allowed.clone();
                    counters.active.fetch_add(1, Ordering::SeqCst);
                    thread::spawn(move || {
                        let _ = handle(conn, mode, &counters, &allowed);
                        counters.active.fetch_sub(1, Ordering::SeqCst);
                    });
                }
            })
        };
        Ok(Self {
            addr,
            counters,
            stop,
            accept: Some(accept),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn counters(&self) -> Arc<TrafficCounters> {
        self.counters.clone()
    }

    /// Wait until no connection is being served, up to `limit`.
    pub fn wait_idle(&self, limit: Duration) {
        let deadline = Instant::now() + limit;
        while self.counters.active_connections() > 0 && Instant::now() < deadline {
            thread::sleep(Duration::from_millis(10));
        }
    }
}

impl Drop for RecordingProxy {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the accept loop.
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

struct Head {
    method: String,
    target: String,
    version: String,
    headers: Vec<(String, String)>,
    raw_len: usize,
}

impl Head {
    fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

fn read_head(r: &mut impl BufRead) -> io::Result<Option<Head>> {
    let mut lines = Vec::new();
    let mut raw_len = 0;
    loop {
        let mut line = Vec::new();
        let n = r
            .by_ref()
            .take((MAX_HEAD - raw_len) as u64 + 1)
            .read_until(b'\n', &mut line)?;
        if n == 0 {
            return if raw_len == 0 {
                Ok(None)
            } else {
                Err(io::ErrorKind::UnexpectedEof.into())
            };
        }
        raw_len += n;
        if raw_len > MAX_HEAD {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                "request head too large",
            ));
        }
        let text = String::from_utf8_lossy(&line)
            .trim_end_matches(['\r', '\n'])
            .to_string();
        if text.is_empty() {
            if lines.is_empty() {
                continue;
            }
            break;
        }
        lines.push(text);
    }
    let mut parts = lines[0].split_whitespace();
    let (method, target, version) = match (parts.next(), parts.next(), parts.next()) {
        (Some(m), Some(t), Some(v)) => (m.to_string(), t.to_string(), v.to_string()),
        _ => {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                "bad request line",
            ))
        }
    };
    let headers = lines[1..]
        .iter()
        .filter_map(|l| l.split_once(':'))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect();
    Ok(Some(Head {
        method,
        target,
        version,
        headers,
        raw_len,
    }))
}

/// `host:port` of a request, from the CONNECT authority or absolute URI.
fn authority(head: &Head) -> Option<(String, u16)> {
    let (rest, default_port) = if head.method.eq_ignore_ascii_case("CONNECT") {
        (head.target.as_str(), 443)
    } else if let Some(r) = head.target.strip_prefix("http://") {
        (r, 80)
    } else {
        (head.header("host")?, 80)
    };
    let auth = rest.split('/').next()?;
    let auth = auth.rsplit('@').next()?;
    match auth.rsplit_once(':') {
        Some((h, p)) if !h.ends_with(']') || auth.starts_with('[') => {
            Some((h.trim_matches(['[', ']']).to_string(), p.parse().ok()?))
        }
        _ => Some((auth.trim_matches(['[', ']']).to_string(), default_port)),
    }
}

fn origin_form(target: &str) -> &str {
    match target.strip_prefix("http://") {
        Some(rest) => rest.find('/').map_or("/", |i| &rest[i..]),
        None => target,
    }
}

struct Tally<'a> {
    counters: &'a TrafficCounters,
    allowed: bool,
}

impl Tally<'_> {
    fn tx(&self, n: usize) {
        self.counters.tx.fetch_add(n as u64, Ordering::SeqCst);
        if self.allowed {
            self.counters.allowed.fetch_add(n as u64, Ordering::SeqCst);
        }
    }

    fn rx(&self, n: usize) {
        self.counters.rx.fetch_add(n as u64, Ordering::SeqCst);
        if self.allowed {
            self.counters.allowed.fetch_add(n as u64, Ordering::SeqCst);
        }
    }
}

fn respond(client: &mut TcpStream, tally: &Tally<'_>, status: &str, body: &str) -> io::Result<()> {
    let msg = format!(
        "HTTP/1.1 {status}\r\nContent-Type: text/plain\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    client.write_all(msg.as_bytes())?;
    tally.rx(msg.len());
    Ok(())
}

/// Read and count a request body. Chunked bodies and bodies without a length
/// are drained until the client closes.
fn drain_body(r: &mut impl Read, head: &Head, tally: &Tally<'_>) -> io::Result<()> {
    let chunked = head
        .header("transfer-encoding")
        .is_some_and(|v| v.to_ascii_lowercase().contains("chunked"));
    let len = head
        .header("content-length")
        .and_then(|v| v.parse::<u64>().ok());
    let mut buf = [0u8; 16 * 1024];
    match (chunked, len) {
        (false, Some(mut left)) => {
            while left > 0 {
                let want = left.min(buf.len() as u64) as usize;
                let n = r.read(&mut buf[..want])?;
                if n == 0 {
                    break;
                }
                tally.tx(n);
                left -= n as u64;
            }
        }
        (false, None) => {}
        (true, _) => loop {
            let n = r.read(&mut buf)?;
            if n == 0 {
                break;
            }
            tally.tx(n);
            if buf[..n].ends_with(b"0\r\n\r\n") {
                break;
            }
        },
    }
    Ok(())
}

/// Copy one direction until EOF, counting bytes.
fn pump(mut from: impl Read, mut to: TcpStream, count: impl Fn(usize)) {
    let mut buf = [0u8; 16 * 1024];
    while let Ok(n) = from.read(&mut buf) {
        if n == 0 || to.write_all(&buf[..n]).is_err() {
            break;
        }
        count(n);
    }
    let _ = to.shutdown(Shutdown::Write);
}

fn handle(
    client: TcpStream,
    mode: ProxyMode,
    counters: &TrafficCounters,
    allowed: &[String],
) -> io::Result<()> {
    client.set_read_timeout(Some(Duration::from_secs(30)))?;
    let mut writer = client.try_clone()?;
    let mut reader = BufReader::new(client);
    // One request per connection; every response closes it.
    let Some(head) = read_head(&mut reader)? else {
        return Ok(());
    };
    let target = authority(&head);
    let tally = Tally {
        counters,
        allowed: target
            .as_ref()
            .is_some_and(|(h, _)| allowed.iter().any(|a| a.eq_ignore_ascii_case(h))),
    };
    tally.tx(head.raw_len);
    let connect = head.method.eq_ignore_ascii_case("CONNECT");
    match (mode, target) {
        (ProxyMode::Sink, _) | (_, None) => {
            if connect {
                respond(
                    &mut writer,
                    &tally,
                    "403 Forbidden",
                    "egress blocked by audit proxy\n",
                )?;
                return Ok(());
            }
            drain_body(&mut reader, &head, &tally)?;
            respond(
                &mut writer,
                &tally,
                "403 Forbidden",
                "egress blocked by audit proxy\n",
            )
        }
        (ProxyMode::Forward, Some((host, port))) => {
            let upstream = match TcpStream::connect((host.as_str(), port)) {
                Ok(s) => s,
                Err(_) => {
                    drain_body(&mut reader, &head, &tally)?;
                    respond(
                        &mut writer,
                        &tally,
                        "502 Bad Gateway",
                        "upstream unreachable\n",
                    )?;
                    return Ok(());
                }
            };
            if connect {
                let ok = b"HTTP/1.1 200 Connection Established\r\n\r\n";
                writer.write_all(ok)?;
                tally.rx(ok.len());
            } else {
                let mut out = format!(
                    "{} {} {}\r\n",
                    head.method,
                    origin_form(&head.target),
                    head.version
                );
                for (k, v) in &head.headers {
                    if !k.to_ascii_lowercase().starts_with("proxy-") {
                        out.push_str(&format!("{k}: {v}\r\n"));
                    }
                }
                out.push_str("\r\n");
                (&upstream).write_all(out.as_bytes())?;
            }
            let up_read = upstream.try_clone()?;
            let client_side = writer.try_clone()?;
            thread::scope(|s| {
                s.spawn(|| pump(&mut reader, upstream, |n| tally.tx(n)));
                pump(up_read, client_side, |n| tally.rx(n));
            });
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn post(proxy: &RecordingProxy, body_len: usize) -> String {
        let mut s = TcpStream::connect(proxy.addr()).unwrap();
        let head = format!(
            "POST http://collector.example/upload HTTP/1.1\r\nHost: collector.example\r\nContent-Length: {body_len}\r\n\r\n"
        );
        s.write_all(head.as_bytes()).unwrap();
        s.write_all(&vec![b'x'; body_len]).unwrap();
        let mut resp = String::new();
        s.read_to_string(&mut resp).unwrap();
        resp
    }

    #[test]
    fn sink_counts_request_bytes() {
        let proxy = RecordingProxy::start("127.0.0.1", ProxyMode::Sink, vec![]).unwrap();
        let resp = post(&proxy, 10_000);
        assert!(resp.starts_with("HTTP/1.1 403"));
        proxy.wait_idle(Duration::from_secs(2));
        let c = proxy.counters();
        assert!(
            c.tx() >= 10_000 && c.tx() <= 10_000 + 4_096,
            "tx {}",
            c.tx()
        );
        assert_eq!(c.rx() as usize, resp.len());
        assert_eq!(c.allowed(), 0);
    }

    #[test]
    fn idle_proxy_counts_nothing() {
        let proxy = RecordingProxy::start("127.0.0.1", ProxyMode::Sink, vec![]).unwrap();
        let c = proxy.counters();
        drop(proxy);
        assert_eq!((c.rx(), c.tx()), (0, 0));
    }

    #[test]
    fn allowed_hosts_are_tallied() {
        let proxy = RecordingProxy::start(
            "127.0.0.1",
            ProxyMode::Sink,
            vec!["Collector.example".into()],
        )
        .unwrap();
        post(&proxy, 100);
        proxy.wait_idle(Duration::from_secs(2));
        let c = proxy.counters();
        assert_eq!(c.allowed(), c.rx() + c.tx());
    }

    #[test]
    fn connect_is_refused_in_sink_mode() {
        let proxy = RecordingProxy::start("127.0.0.1", ProxyMode::Sink, vec![]).unwrap();
        let mut s = TcpStream::connect(proxy.addr()).unwrap();
        s.write_all(b"CONNECT secure.example:443 HTTP/1.1\r\nHost: secure.example:443\r\n\r\n")
            .unwrap();
        let mut resp = String::new();
        s.read_to_string(&mut resp).unwrap();
        assert!(resp.starts_with("HTTP/1.1 403"));
    }

    #[test]
    fn forward_mode_relays_and_counts() {
        let upstream = TcpListener::bind("127.0.0.1:0").unwrap();
        let port = upstream.local_addr().unwrap().port();
        let server = thread::spawn(move || {
            let (mut s, _) = upstream.accept().unwrap();
            let mut r = BufReader::new(s.try_clone().unwrap());
            let head = read_head(&mut r).unwrap().unwrap();
            assert_eq!(head.target, "/data?x=1");
            s.write_all(b"HTTP/1.1 200 OK\r\nContent-Length: 5\r\nConnection: close\r\n\r\nhello")
                .unwrap();
        });
        let proxy = RecordingProxy::start("127.0.0.1", ProxyMode::Forward, vec![]).unwrap();
        let mut s = TcpStream::connect(proxy.addr()).unwrap();
        let req = format!("GET http://127.0.0.1:{port}/data?x=1 HTTP/1.1\r\nHost: 127.0.0.1:{port}\r\nConnection: close\r\n\r\n");
        s.write_all(req.as_bytes()).unwrap();
        let mut resp = String::new();
        s.read_to_string(&mut resp).unwrap();
        server.join().unwrap();
        assert!(resp.ends_with("hello"));
        proxy.wait_idle(Duration::from_secs(2));
        let c = proxy.counters();
        assert_eq!(c.tx() as usize, req.len());
        assert_eq!(c.rx() as usize, resp.len());
    }

    #[test]
    fn authority_forms() {
        let head = |m: &str, t: &str| Head {
            method: m.into(),
            target: t.into(),
            version: "HTTP/1.1".into(),
            headers: vec![("Host".into(), "h.example".into())],
            raw_len: 0,
        };
        assert_eq!(
            authority(&head("CONNECT", "a.example:8443")),
            Some(("a.example".into(), 8443))
        );
        assert_eq!(
            authority(&head("GET", "http://b.example/x")),
            Some(("b.example".into(), 80))
        );
        assert_eq!(
            authority(&head("GET", "/x")),
            Some(("h.example".into(), 80))
        );
        assert_eq!(origin_form("http://b.example"), "/");
    }
}

import urllib.request


def upload(url, body):
    req = urllib.request.Request(url, data=body, method="POST")
    try:
        urllib.request.urlopen(req, timeout=10)
    except Exception:
        pass


def main():
    upload("http://collector.example/upload", b"x" * 10000)
    print("done")


if __name__ == "__main__":
    main()

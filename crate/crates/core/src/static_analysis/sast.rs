use crate::code_graph::SyntaxNode;
use crate::model::{Finding, StageId};

use super::SastRule;

const EVIDENCE_LIMIT: usize = 120;

fn evidence(node: &SyntaxNode) -> String {
    let text = node.display_text();
    match text.char_indices().nth(EVIDENCE_LIMIT) {
        Some((cut, _)) => format!("{}…", &text[..cut]),
        None => text,
    }
}

/// Apply every rule to every node. Output is sorted by (file, span, rule id)
/// regardless of input order.
pub fn run_sast(trees: &[(String, SyntaxNode)], ruleset: &[SastRule]) -> Vec<Finding> {
    let mut findings = Vec::new();
    for (path, tree) in trees {
        for node in tree.preorder() {
            for rule in ruleset {
                if rule.matcher.matches(node) {
                    findings.push(
                        Finding::new(StageId::Sast, &rule.id, rule.severity, &rule.message)
                            .in_file(path)
                            .at(node.span)
                            .with_evidence(evidence(node)),
                    );
                }
            }
        }
    }
    crate::model::sort_findings(&mut findings);
    findings
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code_graph::parse_source;
    use crate::model::Severity;
    use crate::static_analysis::Ruleset;

    fn scan(src: &str) -> Vec<Finding> {
        let tree = parse_source("app.py", src.as_bytes(), "python").unwrap();
        run_sast(&[("app.py".into(), tree)], &Ruleset::builtin().sast)
    }

    fn ids(src: &str) -> Vec<String> {
        scan(src).into_iter().map(|f| f.rule_id).collect()
    }

    #[test]
    fn pickle_loads_is_medium_deserialization() {
        let f = scan("import pickle\n\ndef handle(payload):\n    return pickle.loads(payload)\n");
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].rule_id, "sast.deserialization-untrusted");
        assert_eq!(f[0].severity, Severity::Medium);
        assert_eq!(f[0].span.unwrap().start.line, 4);
        assert_eq!(f[0].evidence.as_deref(), Some("pickle.loads(payload)"));
    }

    #[test]
    fn sql_injection_variants() {
        assert_eq!(
            ids("cur.execute(\"SELECT * FROM t WHERE id = \" + user_id)"),
            ["sast.sql-injection"]
        );
        assert_eq!(
            ids("cur.execute(f\"SELECT * FROM t WHERE id = {uid}\")"),
            ["sast.sql-injection"]
        );
        assert_eq!(
            ids("cur.execute(\"SELECT %s\" % uid)"),
            ["sast.sql-injection"]
        );
        assert_eq!(
            ids("cur.execute(\"SELECT {}\".format(uid))"),
            ["sast.sql-injection"]
        );
        assert_eq!(ids("q = 'x' + y\ncur.execute(q)"), ["sast.sql-injection"]);
        assert!(ids("cur.execute(\"SELECT * FROM t WHERE id = ?\", (uid,))").is_empty());
        assert!(ids("cur.execute('SELECT 1' ' FROM t')").is_empty());
        assert!(ids("cur.execute()").is_empty());
    }

    #[test]
    fn hardcoded_password() {
        assert_eq!(ids("DB_PASSWORD = 'hunter2'"), ["sast.hardcoded-password"]);
        assert_eq!(ids("self.secret = \"abc\""), ["sast.hardcoded-password"]);
        assert_eq!(
            ids("connect(host='h', password='pw')"),
            ["sast.hardcoded-password"]
        );
        assert!(ids("password = os.environ['PW']").is_empty());
        assert!(ids("password = ''").is_empty());
        assert!(ids("passenger_count = 'many'").is_empty());
        assert!(ids("token = f'{prefix}-x'").is_empty());
    }

    #[test]
    fn eval_exec_and_shell() {
        assert_eq!(
            ids("eval(expr)\nexec(code)"),
            ["sast.eval-exec", "sast.eval-exec"]
        );
        assert!(ids("model.eval()").is_empty());
        assert_eq!(
            ids("subprocess.run(cmd, shell=True)"),
            ["sast.subprocess-shell"]
        );
        assert!(ids("subprocess.run(cmd, shell=False)").is_empty());
        assert!(ids("subprocess.run(['ls'])").is_empty());
    }

    #[test]
    fn clean_code_has_no_findings() {
        assert!(ids("x = 1 + 2").is_empty());
        assert!(ids("import json\ndata = json.loads(s)\nprint(sum(data))\n").is_empty());
    }

    #[test]
    fn output_order_is_independent_of_input_order() {
        let a = parse_source("a.py", b"eval(x)", "python").unwrap();
        let b = parse_source("b.py", b"pickle.load(f)", "python").unwrap();
        let rules = Ruleset::builtin().sast;
        let fwd = run_sast(
            &[("a.py".into(), a.clone()), ("b.py".into(), b.clone())],
            &rules,
        );
        let rev = run_sast(&[("b.py".into(), b), ("a.py".into(), a)], &rules);
        assert_eq!(fwd, rev);
        assert_eq!(fwd[0].file.as_deref(), Some("a.py"));
    }
}

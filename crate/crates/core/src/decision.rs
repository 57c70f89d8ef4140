//! Threshold checks and the accept/reject decision tree.
//!
//! A threshold passes when the number of findings at or above its severity
//! floor is at most `max_count`. Counts are vulnerabilities, so fewer is
//! better; a "score at least the threshold" reading would accept vulnerable
//! trains.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    count_severities, severity_at_least, sort_findings, Finding, Severity, SeverityCounts, StageId,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecisionError {
    #[error("threshold for stage {expected} evaluated against results of stage {actual}")]
    StageMismatch { expected: StageId, actual: StageId },
    #[error("threshold `{threshold}` needs results of stage {stage}, which did not run")]
    MissingStageResult { threshold: String, stage: StageId },
    #[error("decision tree references unknown threshold `{0}`")]
    DanglingThresholdReference(String),
    #[error("thresholds `{0}` and `{1}` share the same stage and severity floor")]
    DuplicateThreshold(String, String),
    #[error("decision model is not valid: {0}")]
    Parse(String),
}

/// Findings of one stage with their severity tally.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageResult {
    pub stage: StageId,
    pub counts: SeverityCounts,
    pub findings: Vec<Finding>,
}

impl StageResult {
    pub fn new(stage: StageId, mut findings: Vec<Finding>) -> Self {
        sort_findings(&mut findings);
        Self {
            stage,
            counts: count_severities(&findings),
            findings,
        }
    }

    /// A result carrying only counts, for evaluating hypothetical tallies.
    pub fn from_counts(stage: StageId, counts: SeverityCounts) -> Self {
        Self {
            stage,
            counts,
            findings: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Threshold {
    pub stage: StageId,
    pub severity_floor: Severity,
    pub max_count: u64,
}

impl Threshold {
    pub fn new(stage: StageId, severity_floor: Severity, max_count: u64) -> Self {
        Self {
            stage,
            severity_floor,
            max_count,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Accept,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum DecisionNode {
    Leaf {
        verdict: Outcome,
    },
    Check {
        check: String,
        on_pass: Box<DecisionNode>,
        on_fail: Box<DecisionNode>,
    },
}

impl DecisionNode {
    pub fn leaf(verdict: Outcome) -> Self {
        DecisionNode::Leaf { verdict }
    }

    pub fn check(id: impl Into<String>, on_pass: DecisionNode, on_fail: DecisionNode) -> Self {
        DecisionNode::Check {
            check: id.into(),
            on_pass: Box::new(on_pass),
            on_fail: Box::new(on_fail),
        }
    }

    /// Number of checks on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        match self {
            DecisionNode::Leaf { .. } => 0,
            DecisionNode::Check {
                on_pass, on_fail, ..
            } => 1 + on_pass.depth().max(on_fail.depth()),
        }
    }

    fn check_ids<'a>(&'a self, out: &mut Vec<&'a str>) {
        if let DecisionNode::Check {
            check,
            on_pass,
            on_fail,
        } = self
        {
            out.push(check);
            on_pass.check_ids(out);
            on_fail.check_ids(out);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionModel {
    pub thresholds: BTreeMap<String, Threshold>,
    #[serde(rename = "tree")]
    pub root: DecisionNode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub threshold: String,
    pub stage: StageId,
    pub severity_floor: Severity,
    pub observed: u64,
    pub limit: u64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub accepted: bool,
    pub trace: Vec<TraceEntry>,
}

impl Verdict {
    /// Walk `model` following the recorded pass/fail marks. Returns `None`
    /// when the trace does not fit the tree.
    pub fn replay(&self, model: &DecisionModel) -> Option<bool> {
        let mut node = &model.root;
        let mut steps = self.trace.iter();
        loop {
            match node {
                DecisionNode::Leaf { verdict } => {
                    return steps
                        .next()
                        .is_none()
                        .then_some(*verdict == Outcome::Accept);
                }
                DecisionNode::Check {
                    check,
                    on_pass,
                    on_fail,
                } => {
                    let step = steps.next()?;
                    if step.threshold != *check {
                        return None;
                    }
                    node = if step.passed { on_pass } else { on_fail };
                }
            }
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if self.accepted {
            "ACCEPTED"
        } else {
            "REJECTED"
        })
    }
}

/// Compare one stage's tally against a threshold: `(passed, observed)`.
pub fn evaluate_threshold(
    result: &StageResult,
    t: &Threshold,
) -> Result<(bool, u64), DecisionError> {
    if result.stage != t.stage {
        return Err(DecisionError::StageMismatch {
            expected: t.stage,
            actual: result.stage,
        });
    }
    let observed = severity_at_least(&result.counts, t.severity_floor);
    Ok((observed <= t.max_count, observed))
}

impl DecisionModel {
    pub fn from_toml(text: &str) -> Result<Self, DecisionError> {
        let model: DecisionModel =
            toml::from_str(text).map_err(|e| DecisionError::Parse(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("decision model serializes")
    }

    /// Every referenced threshold exists and (stage, floor) pairs are unique.
    pub fn validate(&self) -> Result<(), DecisionError> {
        let mut ids = Vec::new();
        self.root.check_ids(&mut ids);
        if let Some(missing) = ids.iter().find(|id| !self.thresholds.contains_key(**id)) {
            return Err(DecisionError::DanglingThresholdReference(
                missing.to_string(),
            ));
        }
        let mut seen: BTreeMap<(StageId, Severity), &str> = BTreeMap::new();
        for (id, t) in &self.thresholds {
            if let Some(prev) = seen.insert((t.stage, t.severity_floor), id) {
                return Err(DecisionError::DuplicateThreshold(
                    prev.to_string(),
                    id.clone(),
                ));
            }
        }
        Ok(())
    }

    /// Stages whose results the model reads.
    pub fn stages(&self) -> Vec<StageId> {
        let mut stages: Vec<StageId> = self.thresholds.values().map(|t| t.stage).collect();
        stages.sort();
        stages.dedup();
        stages
    }

    /// The shipped model: a chain of zero-tolerance checks, one per enabled
    /// stage, that rejects on the first failure.
    ///
    /// | stage | floor | max |
    /// |---|---|---|
    /// | SAST | Medium | 0 |
    /// | Secret detection | High | 0 |
    /// | Dependency scan | Critical | 0 |
    /// | Disallow lists | High | 0 |
    /// | Compliance | Low | 0 |
    /// | Image analysis | Critical | `image_critical_limit` |
    /// | DAST | Medium | 0 |
    pub fn default_for(enabled: &[StageId], image_critical_limit: u64) -> Self {
        let table = [
            ("sast", Threshold::new(StageId::Sast, Severity::Medium, 0)),
            (
                "secrets",
                Threshold::new(StageId::SecretDetection, Severity::High, 0),
            ),
            (
                "dependencies",
                Threshold::new(StageId::DependencyScan, Severity::Critical, 0),
            ),
            (
                "disallow",
                Threshold::new(StageId::Disallow, Severity::High, 0),
            ),
            (
                "compliance",
                Threshold::new(StageId::Compliance, Severity::Low, 0),
            ),
            (
                "image",
                Threshold::new(
                    StageId::ImageAnalysis,
                    Severity::Critical,
                    image_critical_limit,
                ),
            ),
            ("dast", Threshold::new(StageId::Dast, Severity::Medium, 0)),
        ];
        let active: Vec<_> = table
            .into_iter()
            .filter(|(_, t)| enabled.contains(&t.stage))
            .collect();
        let mut root = DecisionNode::leaf(Outcome::Accept);
        for (id, _) in active.iter().rev() {
            root = DecisionNode::check(*id, root, DecisionNode::leaf(Outcome::Reject));
        }
        Self {
            thresholds: active
                .into_iter()
                .map(|(id, t)| (id.to_string(), t))
                .collect(),
            root,
        }
    }
}

/// Walk the tree from the root, evaluating each visited check once.
pub fn decide(
    model: &DecisionModel,
    results: &BTreeMap<StageId, StageResult>,
) -> Result<Verdict, DecisionError> {
    let mut trace = Vec::new();
    let mut node = &model.root;
    loop {
        match node {
            DecisionNode::Leaf { verdict } => {
                return Ok(Verdict {
                    accepted: *verdict == Outcome::Accept,
                    trace,
                });
            }
            DecisionNode::Check {
                check,
                on_pass,
                on_fail,
            } => {
                let t = model
                    .thresholds
                    .get(check)
                    .ok_or_else(|| DecisionError::DanglingThresholdReference(check.clone()))?;
                let result =
                    results
                        .get(&t.stage)
                        .ok_or_else(|| DecisionError::MissingStageResult {
                            threshold: check.clone(),
                            stage: t.stage,
                        })?;
                let (passed, observed) = evaluate_threshold(result, t)?;
                trace.push(TraceEntry {
                    threshold: check.clone(),
                    stage: t.stage,
                    severity_floor: t.severity_floor,
                    observed,
                    limit: t.max_count,
                    passed,
                });
                node = if passed { on_pass } else { on_fail };
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn counts(l: u64, m: u64, h: u64, c: u64) -> SeverityCounts {
        SeverityCounts::lmhc(l, m, h, c)
    }

    fn results(entries: &[(StageId, SeverityCounts)]) -> BTreeMap<StageId, StageResult> {
        entries
            .iter()
            .map(|(s, c)| (*s, StageResult::from_counts(*s, *c)))
            .collect()
    }

    fn two_check_model() -> DecisionModel {
        DecisionModel {
            thresholds: [
                (
                    "sast-clean".to_string(),
                    Threshold::new(StageId::Sast, Severity::High, 0),
                ),
                (
                    "secrets-clean".to_string(),
                    Threshold::new(StageId::SecretDetection, Severity::Low, 0),
                ),
            ]
            .into(),
            root: DecisionNode::check(
                "sast-clean",
                DecisionNode::check(
                    "secrets-clean",
                    DecisionNode::leaf(Outcome::Accept),
                    DecisionNode::leaf(Outcome::Reject),
                ),
                DecisionNode::leaf(Outcome::Reject),
            ),
        }
    }

    #[test]
    fn basic_query_sast_tuple_fails_high_floor() {
        let r = StageResult::from_counts(StageId::Sast, counts(0, 1, 1, 0));
        let t = Threshold::new(StageId::Sast, Severity::High, 0);
        assert_eq!(evaluate_threshold(&r, &t), Ok((false, 1)));
    }

    #[test]
    fn zero_findings_pass_any_threshold() {
        let r = StageResult::from_counts(StageId::Dast, SeverityCounts::default());
        for floor in Severity::ALL {
            assert_eq!(
                evaluate_threshold(&r, &Threshold::new(StageId::Dast, floor, 0)),
                Ok((true, 0))
            );
        }
    }

    #[test]
    fn image_tuple_critical_limit_one() {
        let r = StageResult::from_counts(StageId::ImageAnalysis, counts(181, 3, 1, 1));
        let t = Threshold::new(StageId::ImageAnalysis, Severity::Critical, 1);
        assert_eq!(evaluate_threshold(&r, &t), Ok((true, 1)));
    }

    #[test]
    fn stage_mismatch() {
        let r = StageResult::from_counts(StageId::Sast, SeverityCounts::default());
        let t = Threshold::new(StageId::Dast, Severity::Low, 0);
        assert!(matches!(
            evaluate_threshold(&r, &t),
            Err(DecisionError::StageMismatch { .. })
        ));
    }

    #[test]
    fn two_check_tree() {
        let m = two_check_model();
        let clean = results(&[
            (StageId::Sast, counts(0, 0, 0, 0)),
            (StageId::SecretDetection, counts(0, 0, 0, 0)),
        ]);
        let v = decide(&m, &clean).unwrap();
        assert!(v.accepted);
        assert_eq!(v.trace.len(), 2);
        assert_eq!(v.replay(&m), Some(true));

        let dirty = results(&[
            (StageId::Sast, counts(0, 1, 1, 0)),
            (StageId::SecretDetection, counts(0, 0, 0, 0)),
        ]);
        let v = decide(&m, &dirty).unwrap();
        assert!(!v.accepted);
        assert_eq!(v.trace.len(), 1);
        assert_eq!((v.trace[0].observed, v.trace[0].passed), (1, false));
        assert_eq!(v.replay(&m), Some(false));
    }

    #[test]
    fn leaf_root_ignores_findings() {
        let m = DecisionModel {
            thresholds: BTreeMap::new(),
            root: DecisionNode::leaf(Outcome::Accept),
        };
        let v = decide(&m, &results(&[(StageId::Sast, counts(9, 9, 9, 9))])).unwrap();
        assert!(v.accepted);
        assert!(v.trace.is_empty());
    }

    #[test]
    fn errors() {
        let m = two_check_model();
        assert_eq!(
            decide(&m, &results(&[(StageId::Sast, counts(0, 0, 0, 0))])),
            Err(DecisionError::MissingStageResult {
                threshold: "secrets-clean".into(),
                stage: StageId::SecretDetection
            })
        );
        let mut dangling = m.clone();
        dangling.thresholds.remove("secrets-clean");
        assert_eq!(
            dangling.validate(),
            Err(DecisionError::DanglingThresholdReference(
                "secrets-clean".into()
            ))
        );
        let mut dup = m;
        dup.thresholds.insert(
            "again".into(),
            Threshold::new(StageId::Sast, Severity::High, 3),
        );
        assert!(matches!(
            dup.validate(),
            Err(DecisionError::DuplicateThreshold(..))
        ));
    }

    #[test]
    fn default_model() {
        let m = DecisionModel::default_for(&StageId::ALL, 0);
        assert_eq!(m.root.depth(), 7);
        m.validate().unwrap();
        let zero: BTreeMap<_, _> = m
            .stages()
            .into_iter()
            .map(|s| (s, StageResult::from_counts(s, SeverityCounts::default())))
            .collect();
        assert!(decide(&m, &zero).unwrap().accepted);

        let mut basic_query = zero.clone();
        basic_query.insert(
            StageId::Sast,
            StageResult::from_counts(StageId::Sast, counts(0, 1, 1, 0)),
        );
        assert!(!decide(&m, &basic_query).unwrap().accepted);

        let only_sast = DecisionModel::default_for(&[StageId::CodeGraph, StageId::Sast], 0);
        assert_eq!(only_sast.stages(), [StageId::Sast]);
    }

    #[test]
    fn toml_round_trip() {
        let text = r#"
[thresholds.sast]
stage = "sast"
severity_floor = "high"
max_count = 0

[tree]
check = "sast"
on_pass = { verdict = "accept" }
on_fail = { verdict = "reject" }
"#;
        let m = DecisionModel::from_toml(text).unwrap();
        assert_eq!(
            m.thresholds["sast"],
            Threshold::new(StageId::Sast, Severity::High, 0)
        );
        assert_eq!(DecisionModel::from_toml(&m.to_toml()).unwrap(), m);
        assert!(matches!(
            DecisionModel::from_toml("[tree]\ncheck = 'x'\non_pass = { verdict = 'accept' }\non_fail = { verdict = 'reject' }\n[thresholds]\n"),
            Err(DecisionError::DanglingThresholdReference(_))
        ));
        assert!(matches!(
            DecisionModel::from_toml("[tree]\nverdict = 'maybe'\n"),
            Err(DecisionError::Parse(_))
        ));
    }

    const STAGES: [StageId; 3] = [StageId::Sast, StageId::DependencyScan, StageId::Dast];

    fn threshold_ids() -> Vec<String> {
        (0..6).map(|i| format!("t{i}")).collect()
    }

    fn monotone_tree() -> impl Strategy<Value = DecisionNode> {
        let leaf =
            prop_oneof![Just(Outcome::Accept), Just(Outcome::Reject)].prop_map(DecisionNode::leaf);
        leaf.prop_recursive(4, 16, 2, |inner| {
            (0usize..6, inner, any::<bool>()).prop_map(|(t, pass, fail_rejects)| {
                let fail = if fail_rejects {
                    DecisionNode::leaf(Outcome::Reject)
                } else {
                    pass.clone()
                };
                DecisionNode::check(format!("t{t}"), pass, fail)
            })
        })
    }

    fn model_with(root: DecisionNode, floors: Vec<(usize, Severity, u64)>) -> DecisionModel {
        let thresholds = threshold_ids()
            .into_iter()
            .zip(floors)
            .map(|(id, (s, floor, max))| (id, Threshold::new(STAGES[s], floor, max)))
            .collect();
        DecisionModel { thresholds, root }
    }

    fn sev() -> impl Strategy<Value = Severity> {
        prop::sample::select(Severity::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn removing_findings_never_rejects(
            root in monotone_tree(),
            floors in prop::collection::vec((0usize..3, sev(), 0u64..3), 6),
            before in prop::collection::vec((0u64..4, 0u64..4, 0u64..4, 0u64..4), 3),
            removed in prop::collection::vec((0u64..4, 0u64..4, 0u64..4, 0u64..4), 3),
        ) {
            let m = model_with(root, floors);
            let build = |tuples: Vec<(u64, u64, u64, u64)>| -> BTreeMap<StageId, StageResult> {
                STAGES.iter().zip(tuples).map(|(s, (l, m, h, c))| (*s, StageResult::from_counts(*s, counts(l, m, h, c)))).collect()
            };
            let after: Vec<_> = before.iter().zip(&removed).map(|(b, r)| {
                (b.0.saturating_sub(r.0), b.1.saturating_sub(r.1), b.2.saturating_sub(r.2), b.3.saturating_sub(r.3))
            }).collect();
            let v_before = decide(&m, &build(before)).unwrap();
            let v_after = decide(&m, &build(after)).unwrap();
            prop_assert!(!(v_before.accepted && !v_after.accepted));
            prop_assert!(v_before.trace.len() <= m.root.depth());
            prop_assert_eq!(v_before.replay(&m), Some(v_before.accepted));
        }

        #[test]
        fn decide_is_deterministic(root in monotone_tree(), floors in prop::collection::vec((0usize..3, sev(), 0u64..3), 6), l in 0u64..3, h in 0u64..3) {
            let m = model_with(root, floors);
            let r: BTreeMap<_, _> = STAGES.iter().map(|s| (*s, StageResult::from_counts(*s, counts(l, 0, h, 0)))).collect();
            prop_assert_eq!(decide(&m, &r).unwrap(), decide(&m, &r).unwrap());
        }
    }
}

//! Retrieval and QA metrics.
//!
//! All rates are percentages in `[0, 100]`. Recall@K is macro-averaged over
//! queries; precision/recall/F1 of a filtered image set are micro-averaged
//! (pooled counts). Answer metrics compare SQuAD-style normalised text.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalJudgment {
    pub qid: String,
    pub retrieved_ids: Vec<String>,
    pub gold_ids: BTreeSet<String>,
}

impl RetrievalJudgment {
    pub fn new(
        qid: impl Into<String>,
        retrieved_ids: Vec<String>,
        gold_ids: impl IntoIterator<Item = String>,
    ) -> Result<Self> {
        let qid = qid.into();
        let mut seen = HashSet::new();
        if let Some(dup) = retrieved_ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::invalid(format!(
                "query `{qid}` retrieves `{dup}` twice"
            )));
        }
        Ok(Self {
            qid,
            retrieved_ids,
            gold_ids: gold_ids.into_iter().collect(),
        })
    }
}

/// How a query with several gold images counts towards Recall@K.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecallMode {
    /// Fraction of gold images found in the top K.
    #[default]
    Fraction,
    /// 1 if every gold image is in the top K, else 0.
    AllIn,
}

pub fn query_recall_at_k(j: &RetrievalJudgment, k: usize, mode: RecallMode) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    if j.gold_ids.is_empty() {
        return Err(Error::invalid(format!("query `{}` has no gold ids", j.qid)));
    }
    let hits = j
        .retrieved_ids
        .iter()
        .take(k)
        .filter(|id| j.gold_ids.contains(*id))
        .count();
    Ok(match mode {
        RecallMode::Fraction => hits as f64 / j.gold_ids.len() as f64,
        RecallMode::AllIn => f64::from(u8::from(hits == j.gold_ids.len())),
    })
}

/// Macro-averaged Recall@K in percent. An empty judgment list scores 0.
pub fn recall_at_k(judgments: &[RetrievalJudgment], k: usize, mode: RecallMode) -> Result<f64> {
    if judgments.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for j in judgments {
        total += query_recall_at_k(j, k, mode)?;
    }
    Ok(100.0 * total / judgments.len() as f64)
}

/// Pooled counts behind micro precision and recall.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrfCounts {
    pub true_positive: u64,
    pub predicted: u64,
    pub gold: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl PrfCounts {
    pub fn add_query(&mut self, predicted: &BTreeSet<String>, gold: &BTreeSet<String>) {
        self.true_positive += predicted.intersection(gold).count() as u64;
        self.predicted += predicted.len() as u64;
        self.gold += gold.len() as u64;
    }

    /// Percentages. No predictions means precision 0; F1 is `2·tp / (pred + gold)`.
    pub fn scores(&self) -> PrfScores {
        let ratio = |num: u64, den: u64| {
            if den == 0 {
                0.0
            } else {
                100.0 * num as f64 / den as f64
            }
        };
        PrfScores {
            precision: ratio(self.true_positive, self.predicted),
            recall: ratio(self.true_positive, self.gold),
            f1: ratio(2 * self.true_positive, self.predicted + self.gold),
        }
    }
}

/// Harmonic mean of two percentages; exactly `p` when `p == r`.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision == recall {
        precision
    } else if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Micro precision/recall/F1 over per-query predicted and gold id sets.
pub fn precision_recall_f1(
    predicted: &BTreeMap<String, BTreeSet<String>>,
    gold: &BTreeMap<String, BTreeSet<String>>,
) -> Result<PrfScores> {
    if predicted.len() != gold.len() || predicted.keys().any(|k| !gold.contains_key(k)) {
        let pk: BTreeSet<_> = predicted.keys().collect();
        let gk: BTreeSet<_> = gold.keys().collect();
        let odd: Vec<_> = pk.symmetric_difference(&gk).take(5).collect();
        return Err(Error::invalid(format!(
            "predicted and gold query ids differ: {odd:?}"
        )));
    }
    let mut counts = PrfCounts::default();
    for (qid, pred) in predicted {
        counts.add_query(pred, &gold[qid]);
    }
    Ok(counts.scores())
}

/// Lowercase, drop punctuation, drop the articles a/an/the, collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let cleaned: String = lowered
        .chars()
        .filter(|c| !c.is_ascii_punctuation() && !is_unicode_punctuation(*c))
        .collect();
    cleaned
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn is_unicode_punctuation(c: char) -> bool {
    matches!(
        c,
        '‘' | '’' | '“' | '”' | '–' | '—' | '…' | '«' | '»' | '¿' | '¡' | '·'
    )
}

/// Whether the normalised prediction equals any normalised gold answer.
pub fn exact_match(prediction: &str, golds: &[String]) -> bool {
    let pred = normalize_answer(prediction);
    golds.iter().any(|g| normalize_answer(g) == pred)
}

/// Whether every gold entity occurs (normalised) inside the normalised prediction.
///
/// An approximation of entity-overlap scoring: all entities are required, and
/// an empty prediction or an entity that normalises to nothing never matches.
pub fn key_entity_accuracy(prediction: &str, gold_entities: &[String]) -> bool {
    let pred = normalize_answer(prediction);
    if pred.is_empty() || gold_entities.is_empty() {
        return false;
    }
    gold_entities.iter().all(|e| {
        let e = normalize_answer(e);
        !e.is_empty() && pred.contains(&e)
    })
}

/// Round to two decimals, the precision every report is emitted at.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn serialize_2dp<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(round2(*x))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub name: String,
    #[serde(serialize_with = "serialize_2dp")]
    pub value: f64,
}

/// A block of metrics over one subset of queries ("Overall", "Single.", "Multi.").
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub partition: String,
    pub queries: usize,
    pub metrics: Vec<MetricValue>,
}

impl ReportRow {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics
            .iter()
            .find(|m| m.name == name)
            .map(|m| m.value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRow {
    pub qid: String,
    pub partition: String,
    pub metrics: Vec<MetricValue>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    #[serde(default)]
    pub per_query: Vec<QueryRow>,
    pub evaluated: usize,
    #[serde(default)]
    pub failed: usize,
}

impl EvalReport {
    pub fn row(&self, partition: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.partition == partition)
    }

    pub fn overall(&self) -> Option<&ReportRow> {
        self.row(OVERALL)
    }

    /// The report as it will be emitted: every value rounded to two decimals.
    pub fn rounded(&self) -> Self {
        let round = |ms: &[MetricValue]| {
            ms.iter()
                .map(|m| MetricValue {
                    name: m.name.clone(),
                    value: round2(m.value),
                })
                .collect()
        };
        Self {
            rows: self
                .rows
                .iter()
                .map(|r| ReportRow {
                    metrics: round(&r.metrics),
                    ..r.clone()
                })
                .collect(),
            per_query: self
                .per_query
                .iter()
                .map(|q| QueryRow {
                    metrics: round(&q.metrics),
                    ..q.clone()
                })
                .collect(),
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::invalid(format!("bad report: {e}")))
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut names: Vec<&str> = Vec::new();
        for row in &self.rows {
            for m in &row.metrics {
                if !names.contains(&m.name.as_str()) {
                    names.push(&m.name);
                }
            }
        }
        write!(f, "{:<10} {:>7}", "", "queries")?;
        for n in &names {
            write!(f, " {n:>12}")?;
        }
        writeln!(f)?;
        for row in &self.rows {
            write!(f, "{:<10} {:>7}", row.partition, row.queries)?;
            for n in &names {
                match row.get(n) {
                    Some(v) => write!(f, " {v:>12.2}")?,
                    None => write!(f, " {:>12}", "-")?,
                }
            }
            writeln!(f)?;
        }
        if self.failed > 0 {
            writeln!(f, "failed queries: {}", self.failed)?;
        }
        Ok(())
    }
}

pub const OVERALL: &str = "Overall";
pub const SINGLE: &str = "Single.";
pub const MULTI: &str = "Multi.";

/// Assembles a report, checking every rate lies in `[0, 100]`.
pub fn build_report(
    rows: Vec<ReportRow>,
    per_query: Vec<QueryRow>,
    failed: usize,
) -> Result<EvalReport> {
    for m in rows
        .iter()
        .flat_map(|r| &r.metrics)
        .chain(per_query.iter().flat_map(|q| &q.metrics))
    {
        if !(0.0..=100.0).contains(&m.value) {
            return Err(Error::invalid(format!(
                "metric {} = {} outside [0, 100]",
                m.name, m.value
            )));
        }
    }
    let evaluated = rows
        .iter()
        .find(|r| r.partition == OVERALL)
        .map_or(per_query.len(), |r| r.queries);
    Ok(EvalReport {
        rows,
        per_query,
        evaluated,
        failed,
    })
}

/// Everything known about one answered query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub qid: String,
    pub gold_ids: BTreeSet<String>,
    pub answers: Vec<String>,
    pub retrieved_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reranked_ids: Option<Vec<String>>,
    /// Images actually passed to the generator (after thresholding).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fed_ids: Option<Vec<String>>,
    pub prediction: String,
}

impl QueryOutcome {
    pub fn partition(&self) -> &'static str {
        if self.gold_ids.len() > 1 {
            MULTI
        } else {
            SINGLE
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    /// Depths for first-stage Recall@K.
    pub recall_ks: Vec<usize>,
    /// Depth N for Recall@N of the reranked list.
    pub rerank_n: usize,
}

impl EvalSettings {
    /// Recall at 1, 2, 5, 10 and `k` (those not above `k`), rerank recall at `n`.
    pub fn for_depths(k: usize, n: usize) -> Self {
        let ks: BTreeSet<usize> = [1, 2, 5, 10, k].into_iter().filter(|&d| d <= k).collect();
        Self {
            recall_ks: ks.into_iter().collect(),
            rerank_n: n,
        }
    }
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            recall_ks: vec![1, 2, 5, 10, 20],
            rerank_n: 2,
        }
    }
}

/// Metric names used in reports.
pub mod names {
    pub fn recall(k: usize) -> String {
        format!("R@{k}")
    }

    pub fn recall_all_in(k: usize) -> String {
        format!("R@{k} all")
    }

    pub fn rerank_recall(n: usize) -> String {
        format!("Rerank R@{n}")
    }

    pub const PRECISION: &str = "P";
    pub const RECALL: &str = "R";
    pub const F1: &str = "F1";
    pub const EXACT_MATCH: &str = "EM";
    pub const ACCURACY: &str = "Accuracy";
}

fn metrics_for(outcomes: &[&QueryOutcome], settings: &EvalSettings) -> Result<Vec<MetricValue>> {
    let mut out = Vec::new();
    let mut push = |name: String, value: f64| out.push(MetricValue { name, value });
    let judgments = outcomes
        .iter()
        .map(|o| RetrievalJudgment::new(&o.qid, o.retrieved_ids.clone(), o.gold_ids.clone()))
        .collect::<Result<Vec<_>>>()?;
    for &k in &settings.recall_ks {
        push(
            names::recall(k),
            recall_at_k(&judgments, k, RecallMode::Fraction)?,
        );
        push(
            names::recall_all_in(k),
            recall_at_k(&judgments, k, RecallMode::AllIn)?,
        );
    }
    if outcomes.iter().all(|o| o.reranked_ids.is_some()) && !outcomes.is_empty() {
        let reranked = outcomes
            .iter()
            .map(|o| {
                RetrievalJudgment::new(
                    &o.qid,
                    o.reranked_ids.clone().unwrap_or_default(),
                    o.gold_ids.clone(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        push(
            names::rerank_recall(settings.rerank_n),
            recall_at_k(&reranked, settings.rerank_n, RecallMode::Fraction)?,
        );
    }
    if outcomes.iter().all(|o| o.fed_ids.is_some()) && !outcomes.is_empty() {
        let mut counts = PrfCounts::default();
        for o in outcomes {
            let fed: BTreeSet<String> = o.fed_ids.iter().flatten().cloned().collect();
            counts.add_query(&fed, &o.gold_ids);
        }
        let s = counts.scores();
        push(names::PRECISION.into(), s.precision);
        push(names::RECALL.into(), s.recall);
        push(names::F1.into(), s.f1);
    }
    let n = outcomes.len().max(1) as f64;
    let em = outcomes
        .iter()
        .filter(|o| exact_match(&o.prediction, &o.answers))
        .count();
    let acc = outcomes.iter().filter(|o| answer_accuracy(o)).count();
    push(names::EXACT_MATCH.into(), 100.0 * em as f64 / n);
    push(names::ACCURACY.into(), 100.0 * acc as f64 / n);
    Ok(out)
}

/// Key-entity accuracy against each gold answer in turn; any match counts.
pub fn answer_accuracy(o: &QueryOutcome) -> bool {
    o.answers
        .iter()
        .any(|a| key_entity_accuracy(&o.prediction, std::slice::from_ref(a)))
}

/// Scores a batch of outcomes, with Single./Multi. rows when any query needs
/// several images, and one per-query row each.
pub fn evaluate(
    outcomes: &[QueryOutcome],
    settings: &EvalSettings,
    failed: usize,
) -> Result<EvalReport> {
    if outcomes.is_empty() {
        return build_report(Vec::new(), Vec::new(), failed);
    }
    for o in outcomes {
        if o.gold_ids.is_empty() {
            return Err(Error::invalid(format!("query `{}` has no gold ids", o.qid)));
        }
        if o.answers.is_empty() {
            return Err(Error::invalid(format!("query `{}` has no answers", o.qid)));
        }
    }
    let all: Vec<&QueryOutcome> = outcomes.iter().collect();
    let single: Vec<&QueryOutcome> = all
        .iter()
        .copied()
        .filter(|o| o.partition() == SINGLE)
        .collect();
    let multi: Vec<&QueryOutcome> = all
        .iter()
        .copied()
        .filter(|o| o.partition() == MULTI)
        .collect();

    let mut rows = Vec::new();
    if !multi.is_empty() {
        for (name, subset) in [(SINGLE, &single), (MULTI, &multi)] {
            if !subset.is_empty() {
                rows.push(ReportRow {
                    partition: name.to_string(),
                    queries: subset.len(),
                    metrics: metrics_for(subset, settings)?,
                });
            }
        }
    }
    rows.push(ReportRow {
        partition: OVERALL.to_string(),
        queries: all.len(),
        metrics: metrics_for(&all, settings)?,
    });
    let per_query = outcomes
        .iter()
        .map(|o| {
            Ok(QueryRow {
                qid: o.qid.clone(),
                partition: o.partition().to_string(),
                metrics: metrics_for(&[o], settings)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    build_report(rows, per_query, failed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn judgment(qid: &str, retrieved: &[&str], gold: &[&str]) -> RetrievalJudgment {
        RetrievalJudgment::new(qid, ids(retrieved), ids(gold)).unwrap()
    }

    #[test]
    fn recall_examples() {
        let j = judgment("q", &["a", "b", "c"], &["a", "b"]);
        assert_eq!(
            recall_at_k(std::slice::from_ref(&j), 2, RecallMode::Fraction).unwrap(),
            100.0
        );

        let webqa = judgment("q", &["a", "x", "b"], &["a", "b"]);
        assert_eq!(
            recall_at_k(std::slice::from_ref(&webqa), 2, RecallMode::Fraction).unwrap(),
            50.0
        );
        assert_eq!(
            recall_at_k(std::slice::from_ref(&webqa), 2, RecallMode::AllIn).unwrap(),
            0.0
        );

        let three = [
            judgment("1", &["a"], &["a"]),
            judgment("2", &["a", "x"], &["a", "b"]),
            judgment("3", &["x"], &["a"]),
        ];
        assert_eq!(recall_at_k(&three, 2, RecallMode::Fraction).unwrap(), 50.0);
    }

    #[test]
    fn recall_errors() {
        let j = RetrievalJudgment::new("q7", ids(&["a"]), Vec::new()).unwrap();
        let err = recall_at_k(&[j], 1, RecallMode::Fraction).unwrap_err();
        assert!(err.to_string().contains("q7"));
        assert!(recall_at_k(&[judgment("q", &["a"], &["a"])], 0, RecallMode::Fraction).is_err());
        assert!(RetrievalJudgment::new("q", ids(&["a", "a"]), ids(&["a"])).is_err());
    }

    #[test]
    fn f1_reproduces_table_rows() {
        assert!((round2(f1_score(41.24, 57.10)) - 47.89).abs() < 1e-9);
        assert!((round2(f1_score(74.89, 80.59)) - 77.64).abs() < 1e-9);
        assert_eq!(f1_score(84.78, 84.78), 84.78);
        assert_eq!(f1_score(0.0, 0.0), 0.0);
    }

    fn sets(pairs: &[(&str, &[&str])]) -> BTreeMap<String, BTreeSet<String>> {
        pairs
            .iter()
            .map(|(q, xs)| (q.to_string(), xs.iter().map(|s| s.to_string()).collect()))
            .collect()
    }

    #[test]
    fn micro_prf() {
        let pred = sets(&[("1", &["a", "b"]), ("2", &[])]);
        let gold = sets(&[("1", &["a"]), ("2", &["c"])]);
        let s = precision_recall_f1(&pred, &gold).unwrap();
        assert_eq!(s.precision, 50.0);
        assert_eq!(s.recall, 50.0);
        assert_eq!(s.f1, 50.0);

        let none = sets(&[("1", &[])]);
        let s = precision_recall_f1(&none, &sets(&[("1", &["a"])])).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));

        assert!(precision_recall_f1(&pred, &sets(&[("1", &["a"]), ("3", &["c"])])).is_err());
    }

    #[test]
    fn single_prediction_single_gold_has_p_equal_r() {
        let pred = sets(&[("1", &["a"]), ("2", &["x"]), ("3", &["c"])]);
        let gold = sets(&[("1", &["a"]), ("2", &["b"]), ("3", &["c"])]);
        let s = precision_recall_f1(&pred, &gold).unwrap();
        assert_eq!(s.precision, s.recall);
        assert_eq!(s.f1, s.precision);
    }

    #[test]
    fn answer_normalisation() {
        assert!(exact_match("Two", &ids(&["two"])));
        assert!(exact_match(
            "the Palace of the Governor",
            &ids(&["palace of governor"])
        ));
        assert!(!exact_match("three", &ids(&["two"])));
        assert!(exact_match("  Red,  and blue! ", &ids(&["red and blue"])));
        assert_eq!(normalize_answer("An apple’s core"), "apples core");
    }

    #[test]
    fn key_entities() {
        let pred = "The turaco's head shows two primary colors";
        assert!(key_entity_accuracy(pred, &ids(&["two"])));
        assert!(!key_entity_accuracy(pred, &ids(&["two", "red"])));
        assert!(!key_entity_accuracy("", &ids(&["two"])));
        assert!(key_entity_accuracy("  TWO colours ", &ids(&["Two"])));
    }

    fn outcome(qid: &str, gold: &[&str], retrieved: &[&str], pred: &str) -> QueryOutcome {
        QueryOutcome {
            qid: qid.into(),
            gold_ids: gold.iter().map(|s| s.to_string()).collect(),
            answers: ids(&["yes"]),
            retrieved_ids: ids(retrieved),
            reranked_ids: None,
            fed_ids: None,
            prediction: pred.into(),
        }
    }

    #[test]
    fn report_with_one_metric() {
        let row = ReportRow {
            partition: OVERALL.into(),
            queries: 3,
            metrics: vec![MetricValue {
                name: "EM".into(),
                value: 66.666_666,
            }],
        };
        let report = build_report(vec![row], vec![], 0).unwrap();
        assert_eq!(report.overall().unwrap().metrics.len(), 1);
        assert!(report.to_string().contains("66.67"));
        assert!(report.to_json().contains("66.67"));
    }

    #[test]
    fn report_rejects_out_of_range() {
        let row = ReportRow {
            partition: OVERALL.into(),
            queries: 1,
            metrics: vec![MetricValue {
                name: "EM".into(),
                value: 100.5,
            }],
        };
        assert!(build_report(vec![row], vec![], 0).is_err());
    }

    #[test]
    fn report_round_trips() {
        let outcomes = [
            outcome("1", &["a"], &["a", "b"], "yes"),
            outcome("2", &["a", "b"], &["b", "c"], "no"),
            outcome("3", &["c"], &["a", "b"], "yes"),
        ];
        let report = evaluate(&outcomes, &EvalSettings::default(), 0).unwrap();
        let json = report.to_json();
        let back = EvalReport::from_json(&json).unwrap();
        assert_eq!(back, report.rounded());
        assert_eq!(back.to_json(), json);
    }

    #[test]
    fn partitions_follow_gold_count() {
        let outcomes = [
            outcome("1", &["a"], &["a", "b"], "yes"),
            outcome("2", &["a", "b"], &["b", "c"], "no"),
            outcome("3", &["c"], &["a", "b"], "yes"),
        ];
        let report = evaluate(&outcomes, &EvalSettings::default(), 0).unwrap();
        let parts: Vec<_> = report.rows.iter().map(|r| r.partition.as_str()).collect();
        assert_eq!(parts, [SINGLE, MULTI, OVERALL]);
        assert_eq!(report.row(SINGLE).unwrap().queries, 2);
        assert_eq!(report.row(SINGLE).unwrap().get("R@1").unwrap(), 50.0);
        assert_eq!(report.row(MULTI).unwrap().get("R@2").unwrap(), 50.0);
        assert_eq!(report.row(MULTI).unwrap().get("R@2 all").unwrap(), 0.0);
        assert!((report.overall().unwrap().get("EM").unwrap() - 200.0 / 3.0).abs() < 1e-9);

        let single_only = evaluate(&outcomes[..1], &EvalSettings::default(), 0).unwrap();
        assert_eq!(single_only.rows.len(), 1);
    }

    #[test]
    fn empty_outcomes_give_empty_report() {
        let report = evaluate(&[], &EvalSettings::default(), 0).unwrap();
        assert!(report.rows.is_empty());
        assert_eq!(report.evaluated, 0);
    }
}

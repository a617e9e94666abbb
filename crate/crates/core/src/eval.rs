//! Precision, recall and F1 for entity recognition and relation
//! extraction.
//!
//! Degenerate denominators: precision is 1 when there are no predictions
//! and no gold items, 0 when there are no predictions but some gold; recall
//! is 1 whenever gold is empty; F1 is 0 when P + R is 0.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::docmodel::{
    normalize_token, Document, EntityMention, GoldConcept, GoldRelation, MentionRef, RelationTuple,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, fp, fn_ }
    }

    pub fn add(&mut self, other: ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn precision(&self) -> f64 {
        match (self.tp + self.fp, self.tp + self.fn_) {
            (0, 0) => 1.0,
            (0, _) => 0.0,
            (d, _) => self.tp as f64 / d as f64,
        }
    }

    pub fn recall(&self) -> f64 {
        match self.tp + self.fn_ {
            0 => 1.0,
            d => self.tp as f64 / d as f64,
        }
    }

    pub fn metrics(&self) -> Metrics {
        Metrics::from_pr(self.precision(), self.recall())
    }
}

/// Harmonic mean of `p` and `r`; 0 when both are 0. Works on fractions or
/// percentages alike.
pub fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    pub fn from_pr(precision: f64, recall: f64) -> Self {
        Self {
            precision,
            recall,
            f1: f1(precision, recall),
        }
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "P={:.2} R={:.2} F1={:.2}",
            self.precision * 100.0,
            self.recall * 100.0,
            self.f1 * 100.0
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: String,
    pub metrics: Metrics,
    pub counts: ConfusionCounts,
}

impl ClassScore {
    fn new(class: impl Into<String>, counts: ConfusionCounts) -> Self {
        Self {
            class: class.into(),
            metrics: counts.metrics(),
            counts,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Scope {
    Ner,
    Re,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Averaging {
    Micro,
    Macro,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MatchMode {
    #[default]
    ExactSpan,
    TextRelaxed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundingPolicy {
    /// Word-span overlap with any mention of the predicted cluster, then
    /// case-insensitive surface equality.
    #[default]
    OverlapThenText,
    TextOnly,
}

/// Per-class table plus pooled (micro) and unweighted-mean (macro) scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scope: Scope,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grounding_policy: Option<GroundingPolicy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub match_mode: Option<MatchMode>,
    pub per_class: Vec<ClassScore>,
    pub micro: ClassScore,
    pub macro_avg: Metrics,
}

impl EvalReport {
    pub fn overall(&self, averaging: Averaging) -> Metrics {
        match averaging {
            Averaging::Micro => self.micro.metrics,
            Averaging::Macro => self.macro_avg,
        }
    }

    pub fn class(&self, name: &str) -> Option<&ClassScore> {
        self.per_class.iter().find(|c| c.class == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per class plus `micro` and `macro` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["class", "precision", "recall", "f1", "tp", "fp", "fn"])?;
        let row = |w: &mut csv::Writer<W>, class: &str, m: &Metrics, c: Option<&ConfusionCounts>| {
            let counts = c.map_or([String::new(), String::new(), String::new()], |c| {
                [c.tp.to_string(), c.fp.to_string(), c.fn_.to_string()]
            });
            w.write_record([
                class.to_string(),
                format!("{:.6}", m.precision),
                format!("{:.6}", m.recall),
                format!("{:.6}", m.f1),
                counts[0].clone(),
                counts[1].clone(),
                counts[2].clone(),
            ])
        };
        for c in &self.per_class {
            row(&mut w, &c.class, &c.metrics, Some(&c.counts))?;
        }
        row(&mut w, "micro", &self.micro.metrics, Some(&self.micro.counts))?;
        row(&mut w, "macro", &self.macro_avg, None)?;
        w.flush()?;
        Ok(())
    }

    /// Plain-text table for terminals.
    pub fn render_table(&self) -> String {
        let mut s = format!("{:<40} {:>8} {:>8} {:>8}\n", "class", "P", "R", "F1");
        let mut line = |name: &str, m: &Metrics| {
            s.push_str(&format!(
                "{:<40} {:>8.2} {:>8.2} {:>8.2}\n",
                name,
                m.precision * 100.0,
                m.recall * 100.0,
                m.f1 * 100.0
            ));
        };
        for c in &self.per_class {
            line(&c.class, &c.metrics);
        }
        line("micro", &self.micro.metrics);
        line("macro", &self.macro_avg);
        s
    }
}

fn build_report(scope: Scope, per_class: Vec<ClassScore>, extra: ConfusionCounts) -> EvalReport {
    let mut pooled = extra;
    for c in &per_class {
        pooled.add(c.counts);
    }
    let macro_avg = if per_class.is_empty() {
        pooled.metrics()
    } else {
        let n = per_class.len() as f64;
        Metrics {
            precision: per_class.iter().map(|c| c.metrics.precision).sum::<f64>() / n,
            recall: per_class.iter().map(|c| c.metrics.recall).sum::<f64>() / n,
            f1: per_class.iter().map(|c| c.metrics.f1).sum::<f64>() / n,
        }
    };
    EvalReport {
        scope,
        grounding_policy: None,
        match_mode: None,
        per_class,
        micro: ClassScore::new("micro", pooled),
        macro_avg,
    }
}

/// A relation between two annotated concepts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConceptTuple {
    pub doc_id: String,
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl From<&GoldRelation> for ConceptTuple {
    fn from(g: &GoldRelation) -> Self {
        Self {
            doc_id: g.doc_id.clone(),
            head: g.head.concept_id.clone(),
            relation: g.relation.clone(),
            tail: g.tail.concept_id.clone(),
        }
    }
}

/// Id given to an endpoint no gold concept accounts for; never equals a
/// real concept id.
pub fn unmapped_concept_id(endpoint: &MentionRef) -> String {
    format!("?{}#{}", endpoint.label, endpoint.global_index)
}

fn same_text(a: &str, b: &str) -> bool {
    let norm = |s: &str| s.split_whitespace().map(normalize_token).collect::<Vec<_>>();
    norm(a) == norm(b)
}

/// Maps one predicted endpoint onto a gold concept of the same document.
pub fn ground_endpoint(
    endpoint: &MentionRef,
    doc_id: &str,
    mentions: &[EntityMention],
    gold: &[GoldConcept],
    policy: GroundingPolicy,
) -> Option<String> {
    let cluster: Vec<&EntityMention> = mentions
        .iter()
        .filter(|m| {
            m.doc_id == doc_id && m.global_index == Some(endpoint.global_index) && m.label == endpoint.label
        })
        .collect();
    let candidates: Vec<&GoldConcept> = gold
        .iter()
        .filter(|c| c.doc_id == doc_id && c.label.eq_ignore_ascii_case(&endpoint.label))
        .collect();

    if policy == GroundingPolicy::OverlapThenText {
        let scored: Vec<(usize, &GoldConcept)> = candidates
            .iter()
            .map(|c| {
                let overlap = cluster
                    .iter()
                    .flat_map(|m| {
                        c.mentions
                            .iter()
                            .filter(move |g| g.sentence_index == m.sentence_index)
                            .map(move |g| g.span.overlap(&m.span))
                    })
                    .sum();
                (overlap, *c)
            })
            .filter(|(o, _)| *o > 0)
            .collect();
        if scored.len() > 1 {
            warn!(doc = %doc_id, surface = %endpoint.surface, concepts = scored.len(), "ambiguous grounding; highest overlap wins");
        }
        // max_by_key keeps the last maximum; iterate reversed so ties go to
        // the earliest concept.
        if let Some((_, c)) = scored.iter().rev().max_by_key(|(o, _)| *o) {
            return Some(c.concept_id.clone());
        }
    }

    let mut surfaces: Vec<&str> = cluster.iter().map(|m| m.surface.as_str()).collect();
    surfaces.push(&endpoint.surface);
    candidates
        .iter()
        .find(|c| {
            c.mentions
                .iter()
                .any(|g| surfaces.iter().any(|s| same_text(s, &g.surface)))
        })
        .map(|c| c.concept_id.clone())
}

/// Projects surface-level predictions onto concept-level tuples.
/// Unmapped endpoints keep a synthetic id, so the tuple scores as a false
/// positive. Duplicates collapse.
pub fn ground(
    pred: &[RelationTuple],
    mentions: &[EntityMention],
    gold: &[GoldConcept],
    policy: GroundingPolicy,
) -> Vec<ConceptTuple> {
    let mut out: BTreeSet<ConceptTuple> = BTreeSet::new();
    for t in pred {
        let resolve = |e: &MentionRef| {
            ground_endpoint(e, &t.doc_id, mentions, gold, policy).unwrap_or_else(|| unmapped_concept_id(e))
        };
        out.insert(ConceptTuple {
            doc_id: t.doc_id.clone(),
            head: resolve(&t.head),
            relation: t.relation.clone(),
            tail: resolve(&t.tail),
        });
    }
    out.into_iter().collect()
}

/// Relation scores. Predictions whose relation is not in `relations` are
/// pooled into micro as false positives.
pub fn score_re(pred: &[ConceptTuple], gold: &[ConceptTuple], relations: &[String]) -> EvalReport {
    let pred: HashSet<&ConceptTuple> = pred.iter().collect();
    let gold: HashSet<&ConceptTuple> = gold.iter().collect();
    let known: HashSet<&str> = relations.iter().map(String::as_str).collect();
    let per_class = relations
        .iter()
        .map(|r| {
            let p: HashSet<_> = pred.iter().filter(|t| &t.relation == r).collect();
            let g: HashSet<_> = gold.iter().filter(|t| &t.relation == r).collect();
            let tp = p.intersection(&g).count() as u64;
            ClassScore::new(r.clone(), ConfusionCounts::new(tp, p.len() as u64 - tp, g.len() as u64 - tp))
        })
        .collect();
    let mut extra = ConfusionCounts::default();
    for t in &pred {
        if !known.contains(t.relation.as_str()) {
            warn!(relation = %t.relation, "prediction with unknown relation counted as false positive");
            extra.fp += 1;
        }
    }
    for t in &gold {
        if !known.contains(t.relation.as_str()) {
            extra.fn_ += 1;
        }
    }
    let mut report = build_report(Scope::Re, per_class, extra);
    report.grounding_policy = Some(GroundingPolicy::default());
    report
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum NerKey {
    Span(String, String, usize, usize, usize),
    Text(String, String, String),
}

fn ner_key(mode: MatchMode, doc: &str, label: &str, sentence: usize, span: (usize, usize), surface: &str) -> NerKey {
    match mode {
        MatchMode::ExactSpan => NerKey::Span(doc.into(), label.to_lowercase(), sentence, span.0, span.1),
        MatchMode::TextRelaxed => NerKey::Text(
            doc.into(),
            label.to_lowercase(),
            surface.split_whitespace().map(normalize_token).collect::<Vec<_>>().join(" "),
        ),
    }
}

/// Entity scores per label. Only `labels` are scored; labels compare
/// case-insensitively.
pub fn score_ner(
    pred: &[EntityMention],
    gold: &[GoldConcept],
    labels: &[String],
    mode: MatchMode,
) -> EvalReport {
    let per_class = labels
        .iter()
        .map(|label| {
            let p: HashSet<NerKey> = pred
                .iter()
                .filter(|m| m.label.eq_ignore_ascii_case(label))
                .map(|m| ner_key(mode, &m.doc_id, &m.label, m.sentence_index, m.span.into(), &m.surface))
                .collect();
            let g: HashSet<NerKey> = gold
                .iter()
                .filter(|c| c.label.eq_ignore_ascii_case(label))
                .flat_map(|c| {
                    c.mentions
                        .iter()
                        .map(|m| ner_key(mode, &c.doc_id, &c.label, m.sentence_index, m.span.into(), &m.surface))
                })
                .collect();
            let tp = p.intersection(&g).count() as u64;
            ClassScore::new(label.clone(), ConfusionCounts::new(tp, p.len() as u64 - tp, g.len() as u64 - tp))
        })
        .collect();
    let mut report = build_report(Scope::Ner, per_class, ConfusionCounts::default());
    report.match_mode = Some(mode);
    report
}

/// Grounds every document's predictions and scores them against gold.
pub fn evaluate_corpus(
    docs: &[Document],
    pred: &[RelationTuple],
    mentions: &[EntityMention],
    gold_concepts: &[GoldConcept],
    gold_relations: &[GoldRelation],
    relations: &[String],
    policy: GroundingPolicy,
) -> EvalReport {
    let doc_ids: HashSet<&str> = docs.iter().map(|d| d.doc_id.as_str()).collect();
    let pred: Vec<RelationTuple> = pred.iter().filter(|t| doc_ids.contains(t.doc_id.as_str())).cloned().collect();
    let grounded = ground(&pred, mentions, gold_concepts, policy);
    let gold: Vec<ConceptTuple> = gold_relations
        .iter()
        .filter(|g| doc_ids.contains(g.doc_id.as_str()))
        .map(ConceptTuple::from)
        .collect();
    let mut report = score_re(&grounded, &gold, relations);
    report.grounding_policy = Some(policy);
    report
}

/// Mean and population standard deviation of repeated runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    if values.is_empty() {
        return MeanStd::default();
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    MeanStd { mean, std: var.sqrt() }
}

/// Pairs each class with its F1 for bar-chart style output.
pub fn f1_by_class(report: &EvalReport) -> BTreeMap<String, f64> {
    report.per_class.iter().map(|c| (c.class.clone(), c.metrics.f1)).collect()
}

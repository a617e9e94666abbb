//! Leave-one-out scenario ablation and greedy template refinement.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::docmodel::{Document, EntityMention, GoldConcept, GoldRelation};
use crate::eval::{evaluate_corpus, ConfusionCounts, GroundingPolicy, Metrics};
use crate::llmgateway::Gateway;
use crate::prompt::{AnswerSet, FivePartTemplate, Polarity, PromptError, TemplateKind};
use crate::stage2::{extract_relations, RelationSchema, Stage2Error};

#[derive(Debug, Error)]
pub enum AblateError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Extraction(#[from] Stage2Error),
    #[error("template {0:?} is not bound to any relation in the registry")]
    UnboundTemplate(String),
}

/// Everything needed to score a template on a fixed evaluation set.
pub struct EvalContext<'a> {
    pub docs: &'a [Document],
    /// Stage I output for `docs`, with global and hypernym indices.
    pub mentions: &'a [EntityMention],
    pub gold_concepts: &'a [GoldConcept],
    pub gold_relations: &'a [GoldRelation],
    pub registry: &'a [RelationSchema],
    pub templates: &'a BTreeMap<String, FivePartTemplate>,
    pub answers: Option<&'a AnswerSet>,
    pub gateway: &'a Gateway,
    pub policy: GroundingPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub metrics: Metrics,
    pub counts: ConfusionCounts,
}

impl EvalContext<'_> {
    /// Scores `template` on the relations bound to it, with every other
    /// template left as configured.
    pub fn score(&self, template: &FivePartTemplate) -> Result<Score, AblateError> {
        let registry: Vec<RelationSchema> = self
            .registry
            .iter()
            .filter(|s| s.template_name == template.name)
            .cloned()
            .collect();
        if registry.is_empty() {
            return Err(AblateError::UnboundTemplate(template.name.clone()));
        }
        let mut templates = self.templates.clone();
        templates.insert(template.name.clone(), template.clone());
        let mut tuples = Vec::new();
        for doc in self.docs {
            let mentions: Vec<EntityMention> =
                self.mentions.iter().filter(|m| m.doc_id == doc.doc_id).cloned().collect();
            let out = extract_relations(doc, &mentions, &registry, &templates, self.answers, self.gateway)?;
            if out.is_partial() {
                warn!(doc = %doc.doc_id, failures = out.failures.len(), "ablation scored on partial extraction");
            }
            tuples.extend(out.tuples);
        }
        let relations: Vec<String> = registry.iter().map(|s| s.relation.clone()).collect();
        let report = evaluate_corpus(
            self.docs,
            &tuples,
            self.mentions,
            self.gold_concepts,
            self.gold_relations,
            &relations,
            self.policy,
        );
        Ok(Score {
            metrics: report.micro.metrics,
            counts: report.micro.counts,
        })
    }
}

/// Effect of removing one scenario; deltas are baseline minus ablated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRecord {
    pub scenario_id: String,
    pub polarity: Polarity,
    pub round: usize,
    pub baseline: Metrics,
    pub ablated: Metrics,
    pub delta_p: f64,
    pub delta_r: f64,
    pub delta_f1: f64,
}

impl AblationRecord {
    pub fn new(scenario_id: &str, polarity: Polarity, round: usize, baseline: Metrics, ablated: Metrics) -> Self {
        Self {
            scenario_id: scenario_id.to_string(),
            polarity,
            round,
            baseline,
            ablated,
            delta_p: baseline.precision - ablated.precision,
            delta_r: baseline.recall - ablated.recall,
            delta_f1: baseline.f1 - ablated.f1,
        }
    }
}

/// Removes `scenario_id`, re-runs extraction and compares with `baseline`.
pub fn ablate_once(
    template: &FivePartTemplate,
    scenario_id: &str,
    baseline: Metrics,
    ctx: &EvalContext<'_>,
) -> Result<AblationRecord, AblateError> {
    let scenario = template.scenario(scenario_id).ok_or_else(|| PromptError::UnknownScenario {
        template: template.name.clone(),
        id: scenario_id.to_string(),
    })?;
    if template.kind != TemplateKind::Relation {
        warn!(template = %template.name, "ablating a non-relation template is experimental");
    }
    let ablated = ctx.score(&template.without_scenario(scenario_id)?)?;
    Ok(AblationRecord::new(scenario_id, scenario.polarity, 0, baseline, ablated.metrics))
}

/// Scenario id order: alphabetic prefix, then numeric suffix, so
/// `N1` < `N2` < `N10` < `P1`.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    let split = |s: &str| {
        let digits = s.len() - s.chars().rev().take_while(char::is_ascii_digit).count();
        let (prefix, num) = s.split_at(digits);
        (prefix.to_string(), num.parse::<u64>().ok())
    };
    split(a).cmp(&split(b)).then_with(|| a.cmp(b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub template: FivePartTemplate,
    /// Every ablation computed, all rounds, in evaluation order.
    pub records: Vec<AblationRecord>,
    /// `(round, scenario id)` of each removal.
    pub removed: Vec<(usize, String)>,
    /// Baseline F1 at the start of each round.
    pub f1_by_round: Vec<f64>,
}

/// Greedy one-at-a-time pruning: each round ablates every remaining
/// scenario and drops the one with the lowest ΔF1 if that is ≤ 0. The last
/// positive and the last negative scenario are never dropped.
pub fn refine(template: &FivePartTemplate, ctx: &EvalContext<'_>) -> Result<Refinement, AblateError> {
    let mut current = template.clone();
    let mut records = Vec::new();
    let mut removed = Vec::new();
    let mut f1_by_round = Vec::new();
    for round in 1.. {
        let baseline = ctx.score(&current)?.metrics;
        f1_by_round.push(baseline.f1);
        let mut ids: Vec<&str> = current.scenarios().map(|s| s.id.as_str()).collect();
        ids.sort_by(|a, b| natural_cmp(a, b));
        let mut round_records = Vec::with_capacity(ids.len());
        for id in ids {
            let mut record = ablate_once(&current, id, baseline, ctx)?;
            record.round = round;
            round_records.push(record);
        }
        let removable = |r: &&AblationRecord| match r.polarity {
            Polarity::Positive => current.positive_scenarios.len() > 1,
            Polarity::Negative => current.negative_scenarios.len() > 1,
        };
        // round_records is already in natural id order, so min_by keeps
        // the lowest id among equal deltas.
        let victim = round_records
            .iter()
            .filter(|r| r.delta_f1 <= 0.0)
            .filter(removable)
            .min_by(|a, b| a.delta_f1.total_cmp(&b.delta_f1))
            .map(|r| r.scenario_id.clone());
        records.extend(round_records);
        let Some(victim) = victim else { break };
        info!(template = %current.name, round, scenario = %victim, "removing scenario");
        current = current.without_scenario(&victim)?;
        current.audit.push(format!("round {round}: removed {victim}"));
        removed.push((round, victim));
    }
    Ok(Refinement {
        template: current,
        records,
        removed,
        f1_by_round,
    })
}

/// CSV with columns scenario_id, polarity, delta_p, delta_r, delta_f1,
/// round. Floats are written in shortest round-trip form.
pub fn write_records_csv<W: Write>(records: &[AblationRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scenario_id", "polarity", "delta_p", "delta_r", "delta_f1", "round"])?;
    for r in records {
        w.write_record([
            r.scenario_id.clone(),
            r.polarity.to_string(),
            r.delta_p.to_string(),
            r.delta_r.to_string(),
            r.delta_f1.to_string(),
            r.round.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn records_to_json(records: &[AblationRecord]) -> String {
    serde_json::to_string_pretty(records).expect("records serialize")
}

pub fn records_from_json(raw: &str) -> serde_json::Result<Vec<AblationRecord>> {
    serde_json::from_str(raw)
}

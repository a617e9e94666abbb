//! Corpus-level orchestration of the two stages and the baseline.
//!
//! Documents run one after another; calls within a document fan out
//! behind the gateway's in-flight limit. A document that fails is recorded
//! and skipped rather than aborting the corpus.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use tracing::{error, info};

use crate::docmodel::{Document, EntityMention, GoldConcept, GoldRelation, LabelSet, RelationTuple};
use crate::eval::{evaluate_corpus, score_ner, EvalReport, GroundingPolicy, MatchMode};
use crate::llmgateway::Gateway;
use crate::prompt::{AnswerSet, FivePartTemplate};
use crate::stage1::{resolve_hypernyms, resolve_synonyms, run_ner, Stage1Error};
use crate::stage2::{extract_relations, one_stage_extract, OneStageSchema, PairFailure, RelationSchema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    TwoStage,
    OneStage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocFailure {
    pub doc_id: String,
    pub stage: String,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub labels: LabelSet,
    pub templates: BTreeMap<String, FivePartTemplate>,
    pub ner_template: String,
    pub synonym_template: String,
    pub hypernym_template: String,
    pub one_stage_template: String,
    pub registry: Vec<RelationSchema>,
    /// Overrides each relation template's own answer symbols.
    pub answers: Option<AnswerSet>,
    /// Extra placeholder values, e.g. the baseline's include/skip lists.
    pub bindings: BTreeMap<String, String>,
    pub one_stage: OneStageSchema,
    pub grounding: GroundingPolicy,
    pub ner_match_modes: Vec<MatchMode>,
}

impl PipelineConfig {
    fn template(&self, name: &str) -> Result<&FivePartTemplate, String> {
        self.templates.get(name).ok_or_else(|| format!("no template named {name:?}"))
    }

    pub fn relations(&self) -> Vec<String> {
        self.registry.iter().map(|s| s.relation.clone()).collect()
    }
}

fn fail(failures: &mut Vec<DocFailure>, doc: &Document, stage: &str, e: impl ToString) {
    let e = e.to_string();
    error!(doc = %doc.doc_id, stage, error = %e, "document failed");
    failures.push(DocFailure {
        doc_id: doc.doc_id.clone(),
        stage: stage.to_string(),
        error: e,
    });
}

#[derive(Debug, Clone, Default)]
pub struct MentionOutput {
    pub mentions: Vec<EntityMention>,
    pub failures: Vec<DocFailure>,
}

/// Entity recognition only; cluster indices stay unset.
pub fn ner_corpus(docs: &[Document], cfg: &PipelineConfig, gateway: &Gateway) -> Result<MentionOutput, String> {
    let template = cfg.template(&cfg.ner_template)?;
    let mut out = MentionOutput::default();
    for doc in docs {
        match run_ner(doc, &cfg.labels, template, gateway, &cfg.bindings) {
            Ok(m) => out.mentions.extend(m),
            Err(e) => fail(&mut out.failures, doc, "ner", e),
        }
    }
    Ok(out)
}

fn coref_document(
    doc: &Document,
    mentions: &[EntityMention],
    synonym: &FivePartTemplate,
    hypernym: &FivePartTemplate,
    gateway: &Gateway,
) -> Result<Vec<EntityMention>, Stage1Error> {
    let synonyms = resolve_synonyms(doc, mentions, synonym, gateway)?;
    Ok(resolve_hypernyms(doc, &synonyms.mentions, hypernym, gateway)?.mentions)
}

/// Synonym clustering and hypernym linking over NER output.
pub fn coref_corpus(
    docs: &[Document],
    mentions: &[EntityMention],
    cfg: &PipelineConfig,
    gateway: &Gateway,
) -> Result<MentionOutput, String> {
    let synonym = cfg.template(&cfg.synonym_template)?;
    let hypernym = cfg.template(&cfg.hypernym_template)?;
    let mut out = MentionOutput::default();
    for doc in docs {
        let own: Vec<EntityMention> = mentions.iter().filter(|m| m.doc_id == doc.doc_id).cloned().collect();
        match coref_document(doc, &own, synonym, hypernym, gateway) {
            Ok(m) => out.mentions.extend(m),
            Err(e) => fail(&mut out.failures, doc, "coref", e),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct RelationOutput {
    pub tuples: Vec<RelationTuple>,
    pub pair_failures: Vec<PairFailure>,
    pub failures: Vec<DocFailure>,
    pub calls: usize,
}

pub fn extract_corpus(
    docs: &[Document],
    mentions: &[EntityMention],
    cfg: &PipelineConfig,
    gateway: &Gateway,
) -> RelationOutput {
    let mut out = RelationOutput::default();
    for doc in docs {
        let own: Vec<EntityMention> = mentions.iter().filter(|m| m.doc_id == doc.doc_id).cloned().collect();
        match extract_relations(doc, &own, &cfg.registry, &cfg.templates, cfg.answers.as_ref(), gateway) {
            Ok(x) => {
                out.calls += x.calls;
                out.tuples.extend(x.tuples);
                out.pair_failures.extend(x.failures);
            }
            Err(e) => fail(&mut out.failures, doc, "extract", e),
        }
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub mentions: Vec<EntityMention>,
    pub tuples: Vec<RelationTuple>,
    pub pair_failures: Vec<PairFailure>,
    pub failures: Vec<DocFailure>,
}

impl RunOutput {
    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty() || !self.pair_failures.is_empty()
    }
}

/// All LLM-dependent stages for `mode`.
pub fn run_corpus(docs: &[Document], cfg: &PipelineConfig, gateway: &Gateway, mode: Mode) -> Result<RunOutput, String> {
    let mut out = RunOutput::default();
    match mode {
        Mode::TwoStage => {
            let ner = ner_corpus(docs, cfg, gateway)?;
            info!(mentions = ner.mentions.len(), "entity recognition done");
            let coref = coref_corpus(docs, &ner.mentions, cfg, gateway)?;
            info!(mentions = coref.mentions.len(), "synonym and hypernym resolution done");
            let failed: Vec<&str> = ner.failures.iter().map(|f| f.doc_id.as_str()).collect();
            let remaining: Vec<Document> =
                docs.iter().filter(|d| !failed.contains(&d.doc_id.as_str())).cloned().collect();
            let rel = extract_corpus(&remaining, &coref.mentions, cfg, gateway);
            info!(tuples = rel.tuples.len(), calls = rel.calls, "relation extraction done");
            out.mentions = coref.mentions;
            out.tuples = rel.tuples;
            out.pair_failures = rel.pair_failures;
            out.failures = [ner.failures, coref.failures, rel.failures].concat();
        }
        Mode::OneStage => {
            let template = cfg.template(&cfg.one_stage_template)?;
            for doc in docs {
                match one_stage_extract(doc, template, gateway, &cfg.bindings, &cfg.one_stage) {
                    Ok(x) => {
                        out.mentions.extend(x.mentions);
                        out.tuples.extend(x.tuples);
                    }
                    Err(e) => fail(&mut out.failures, doc, "one-stage", e),
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reports {
    pub re: EvalReport,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ner: Vec<EvalReport>,
}

pub fn evaluate_run(
    docs: &[Document],
    run: &RunOutput,
    gold_concepts: &[GoldConcept],
    gold_relations: &[GoldRelation],
    cfg: &PipelineConfig,
) -> Reports {
    let re = evaluate_corpus(
        docs,
        &run.tuples,
        &run.mentions,
        gold_concepts,
        gold_relations,
        &cfg.relations(),
        cfg.grounding,
    );
    let labels = cfg.labels.target_labels().to_vec();
    let ner = cfg
        .ner_match_modes
        .iter()
        .map(|&mode| score_ner(&run.mentions, gold_concepts, &labels, mode))
        .collect();
    Reports { re, ner }
}

//! Stage II: schema registry, pairwise relation extraction and the
//! single-prompt baseline.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::docmodel::{Document, EntityMention, LabelSet, MentionRef, RelationTuple};
use crate::llmgateway::{Gateway, GatewayError, DEFAULT_MAX_TOKENS, SINGLE_CHOICE_MAX_TOKENS};
use crate::prompt::{parse_single_choice, AnswerSet, Choice, FivePartTemplate, PromptError, UnparseablePolicy};
use crate::stage1::find_occurrences;

#[derive(Debug, Error)]
pub enum Stage2Error {
    #[error("registry: {0}")]
    InvalidRegistry(String),
    #[error("no template named {0:?}")]
    MissingTemplate(String),
    #[error("document {doc_id}: unusable response: {reason}")]
    ResponseFormatError { doc_id: String, reason: String },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Provider(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationSchema {
    pub relation: String,
    pub head_label: String,
    pub tail_label: String,
    #[serde(rename = "template")]
    pub template_name: String,
}

/// Parses a registry file and checks it against the label set.
pub fn load_registry(raw: &str, labels: Option<&LabelSet>) -> Result<Vec<RelationSchema>, Stage2Error> {
    let registry: Vec<RelationSchema> =
        serde_json::from_str(raw).map_err(|e| Stage2Error::InvalidRegistry(e.to_string()))?;
    validate_registry(&registry, labels)?;
    Ok(registry)
}

pub fn validate_registry(registry: &[RelationSchema], labels: Option<&LabelSet>) -> Result<(), Stage2Error> {
    if registry.is_empty() {
        return Err(Stage2Error::InvalidRegistry("registry is empty".into()));
    }
    let mut seen = HashSet::new();
    for schema in registry {
        if !seen.insert(schema.relation.as_str()) {
            return Err(Stage2Error::InvalidRegistry(format!(
                "relation {:?} listed twice",
                schema.relation
            )));
        }
        if let Some(labels) = labels {
            for label in [&schema.head_label, &schema.tail_label] {
                if labels.canonical(label).is_none() {
                    return Err(Stage2Error::InvalidRegistry(format!(
                        "relation {:?} uses unknown label {label:?}",
                        schema.relation
                    )));
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CandidateSets {
    pub heads: Vec<EntityMention>,
    pub tails: Vec<EntityMention>,
    pub hypernym_set: BTreeSet<usize>,
}

fn representatives(mentions: &[EntityMention], label: &str, excluded: &BTreeSet<usize>) -> Vec<EntityMention> {
    let mut sorted: Vec<&EntityMention> = mentions.iter().collect();
    sorted.sort_by_key(|m| m.position());
    let mut seen = HashSet::new();
    sorted
        .into_iter()
        .filter(|m| m.label.eq_ignore_ascii_case(label))
        .filter_map(|m| m.global_index.map(|g| (g, m)))
        .filter(|(g, _)| !excluded.contains(g) && seen.insert(*g))
        .map(|(_, m)| m.clone())
        .collect()
}

/// Hypernym filtering plus one representative (earliest mention) per
/// cluster on each side of the schema.
pub fn filter_candidates(mentions: &[EntityMention], schema: &RelationSchema) -> CandidateSets {
    let hypernym_set: BTreeSet<usize> = mentions.iter().filter_map(|m| m.hypernym_index).collect();
    CandidateSets {
        heads: representatives(mentions, &schema.head_label, &hypernym_set),
        tails: representatives(mentions, &schema.tail_label, &hypernym_set),
        hypernym_set,
    }
}

/// Cross product in (head, tail) document order, skipping same-cluster pairs.
pub fn pair_up(candidates: &CandidateSets) -> Vec<(EntityMention, EntityMention)> {
    let mut pairs = Vec::with_capacity(candidates.heads.len() * candidates.tails.len());
    for head in &candidates.heads {
        for tail in &candidates.tails {
            if head.global_index == tail.global_index && head.label == tail.label {
                continue;
            }
            pairs.push((head.clone(), tail.clone()));
        }
    }
    pairs
}

fn cluster_surfaces(mentions: &[EntityMention], endpoint: &MentionRef) -> Vec<String> {
    let mut sorted: Vec<&EntityMention> = mentions
        .iter()
        .filter(|m| m.global_index == Some(endpoint.global_index) && m.label == endpoint.label)
        .collect();
    sorted.sort_by_key(|m| m.position());
    let mut surfaces: Vec<String> = Vec::new();
    if sorted.iter().all(|m| m.surface != endpoint.surface) {
        surfaces.push(endpoint.surface.clone());
    }
    for m in sorted {
        if !surfaces.contains(&m.surface) {
            surfaces.push(m.surface.clone());
        }
    }
    surfaces
}

/// Every (head surface, tail surface) combination over the two clusters,
/// head-major in document order.
pub fn expand_synonyms(tuple: &RelationTuple, mentions: &[EntityMention]) -> Vec<RelationTuple> {
    let heads = cluster_surfaces(mentions, &tuple.head);
    let tails = cluster_surfaces(mentions, &tuple.tail);
    let mut out = Vec::with_capacity(heads.len() * tails.len());
    for h in &heads {
        for t in &tails {
            out.push(RelationTuple {
                doc_id: tuple.doc_id.clone(),
                head: MentionRef {
                    surface: h.clone(),
                    ..tuple.head.clone()
                },
                relation: tuple.relation.clone(),
                tail: MentionRef {
                    surface: t.clone(),
                    ..tuple.tail.clone()
                },
            });
        }
    }
    out
}

/// A pair whose call failed after retries; its relation is unknown.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairFailure {
    pub doc_id: String,
    pub relation: String,
    pub head: MentionRef,
    pub tail: MentionRef,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Extraction {
    pub tuples: Vec<RelationTuple>,
    pub failures: Vec<PairFailure>,
    pub calls: usize,
}

impl Extraction {
    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }
}

/// Pairwise relation extraction for one document.
///
/// For each schema: filter and pair candidates, ask one single-choice
/// question per pair, and on a positive answer emit the tuple together with
/// its synonym expansions. `answers` overrides each template's own answer
/// set when given. A failed call is recorded and the remaining pairs still
/// run.
pub fn extract_relations(
    doc: &Document,
    mentions: &[EntityMention],
    registry: &[RelationSchema],
    templates: &BTreeMap<String, FivePartTemplate>,
    answers: Option<&AnswerSet>,
    gateway: &Gateway,
) -> Result<Extraction, Stage2Error> {
    let mut out = Extraction::default();
    let mut seen: HashSet<RelationTuple> = HashSet::new();
    let text = doc.text();
    for schema in registry {
        let template = templates
            .get(&schema.template_name)
            .ok_or_else(|| Stage2Error::MissingTemplate(schema.template_name.clone()))?;
        let answers = answers.cloned().unwrap_or_else(|| template.answer_set());
        let pairs = pair_up(&filter_candidates(mentions, schema));
        let requests = pairs
            .iter()
            .map(|(h, t)| {
                let bindings = BTreeMap::from([
                    ("input".to_string(), text.clone()),
                    ("head".to_string(), h.surface.clone()),
                    ("tail".to_string(), t.surface.clone()),
                ]);
                Ok(gateway.request(template.render(&bindings)?, SINGLE_CHOICE_MAX_TOKENS))
            })
            .collect::<Result<Vec<_>, PromptError>>()?;
        out.calls += requests.len();
        let responses = gateway.complete_all(&requests);
        for ((head, tail), response) in pairs.iter().zip(responses) {
            let response = match response {
                Ok(r) => r,
                Err(e) => {
                    warn!(doc = %doc.doc_id, relation = %schema.relation, head = %head.surface, tail = %tail.surface, error = %e, "pair failed");
                    out.failures.push(PairFailure {
                        doc_id: doc.doc_id.clone(),
                        relation: schema.relation.clone(),
                        head: head.to_ref(),
                        tail: tail.to_ref(),
                        error: e.to_string(),
                    });
                    continue;
                }
            };
            let positive = match parse_single_choice(&response.text, &answers) {
                Choice::Positive(_) => true,
                Choice::Negative(_) => false,
                Choice::Unparseable => {
                    if answers.unparseable_policy == UnparseablePolicy::Error {
                        return Err(Stage2Error::ResponseFormatError {
                            doc_id: doc.doc_id.clone(),
                            reason: format!("unparseable answer {:?}", response.text),
                        });
                    }
                    warn!(doc = %doc.doc_id, response = %response.text, "unparseable answer treated as negative");
                    false
                }
            };
            if !positive {
                continue;
            }
            let tuple = RelationTuple {
                doc_id: doc.doc_id.clone(),
                head: head.to_ref(),
                relation: schema.relation.clone(),
                tail: tail.to_ref(),
            };
            for expanded in expand_synonyms(&tuple, mentions) {
                if seen.insert(expanded.clone()) {
                    out.tuples.push(expanded);
                }
            }
        }
    }
    Ok(out)
}

/// Output of the single-prompt baseline: tuples plus the grounded mentions
/// they were built from.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OneStageOutput {
    pub tuples: Vec<RelationTuple>,
    pub mentions: Vec<EntityMention>,
}

struct OneStageLine {
    chem: String,
    chem_index: String,
    chem_flag: String,
    disease: String,
    disease_index: String,
    disease_flag: String,
}

fn one_stage_line_pattern() -> Regex {
    Regex::new(r#"^(.+?)\s+(-?\d+)\s+['"]?([^\s'"]+)['"]?\s+['"]?induces?['"]?\s+(.+?)\s+(-?\d+)\s+['"]?([^\s'"]+)['"]?$"#)
        .expect("static pattern")
}

fn parse_one_stage_line(pattern: &Regex, line: &str) -> Option<OneStageLine> {
    let line = line
        .trim()
        .trim_start_matches(|c: char| c == '-' || c == '*' || c.is_whitespace())
        .trim_end_matches([',', ';']);
    let caps = pattern.captures(line)?;
    let clean = |s: &str| s.trim().trim_matches(|c| c == '\'' || c == '"').to_string();
    Some(OneStageLine {
        chem: clean(&caps[1]),
        chem_index: caps[2].to_string(),
        chem_flag: caps[3].to_string(),
        disease: clean(&caps[4]),
        disease_index: caps[5].to_string(),
        disease_flag: caps[6].to_string(),
    })
}

/// Labels and relation name the baseline's output lines are read as.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OneStageSchema {
    pub head_label: String,
    pub tail_label: String,
    pub relation: String,
}

impl Default for OneStageSchema {
    fn default() -> Self {
        Self {
            head_label: "Chemical".into(),
            tail_label: "Disease".into(),
            relation: crate::docmodel::CDR_RELATION.into(),
        }
    }
}

/// One end-to-end call per document. Lines flagged `H` (hypernym) are
/// skipped; surfaces absent from the text are dropped.
pub fn one_stage_extract(
    doc: &Document,
    template: &FivePartTemplate,
    gateway: &Gateway,
    extra_bindings: &BTreeMap<String, String>,
    schema: &OneStageSchema,
) -> Result<OneStageOutput, Stage2Error> {
    let mut bindings = extra_bindings.clone();
    bindings.insert("input".into(), doc.text());
    let prompt = template.render(&bindings)?;
    let response = gateway.complete(&gateway.request(prompt, DEFAULT_MAX_TOKENS))?;
    parse_one_stage_response(doc, &response.text, schema)
}

/// Turns a baseline reply into tuples; exposed for offline re-parsing.
pub fn parse_one_stage_response(
    doc: &Document,
    response: &str,
    schema: &OneStageSchema,
) -> Result<OneStageOutput, Stage2Error> {
    let pattern = one_stage_line_pattern();
    let mut parsed_any = false;
    let mut clusters: HashMap<(String, String), usize> = HashMap::new();
    let mut out = OneStageOutput::default();
    let mut seen_mentions = HashSet::new();
    let mut seen_tuples = HashSet::new();
    let mut nonempty = false;
    for raw in response.lines() {
        if raw.trim().is_empty() {
            continue;
        }
        nonempty = true;
        let Some(line) = parse_one_stage_line(&pattern, raw) else {
            warn!(doc = %doc.doc_id, line = %raw.trim(), "dropping malformed line");
            continue;
        };
        parsed_any = true;
        if line.chem_flag.eq_ignore_ascii_case("h") || line.disease_flag.eq_ignore_ascii_case("h") {
            continue;
        }
        let ends = [
            (&schema.head_label, &line.chem, &line.chem_index),
            (&schema.tail_label, &line.disease, &line.disease_index),
        ];
        let found: Vec<_> = ends.iter().map(|(_, surface, _)| find_occurrences(doc, surface)).collect();
        if let Some(i) = found.iter().position(Vec::is_empty) {
            warn!(doc = %doc.doc_id, surface = %ends[i].1, "dropping line with entity not in text");
            continue;
        }
        let mut refs = Vec::with_capacity(2);
        for ((label, surface, index), occurrences) in ends.into_iter().zip(found) {
            let next = clusters.len();
            let global = *clusters.entry((label.clone(), index.clone())).or_insert(next);
            for (sentence_index, span) in occurrences {
                if seen_mentions.insert((label.clone(), sentence_index, span)) {
                    out.mentions.push(EntityMention {
                        doc_id: doc.doc_id.clone(),
                        surface: surface.clone(),
                        label: label.clone(),
                        sentence_index,
                        span,
                        global_index: Some(global),
                        hypernym_index: None,
                    });
                }
            }
            refs.push(MentionRef {
                surface: surface.clone(),
                label: label.clone(),
                global_index: global,
            });
        }
        let tail = refs.pop().expect("two endpoints");
        let head = refs.pop().expect("two endpoints");
        let tuple = RelationTuple {
            doc_id: doc.doc_id.clone(),
            head,
            relation: schema.relation.clone(),
            tail,
        };
        if seen_tuples.insert(tuple.clone()) {
            out.tuples.push(tuple);
        }
    }
    if nonempty && !parsed_any {
        return Err(Stage2Error::ResponseFormatError {
            doc_id: doc.doc_id.clone(),
            reason: "no line matched the expected output shape".into(),
        });
    }
    out.mentions.sort_by_key(|m| m.position());
    Ok(out)
}

//! Stage I: entity recognition, synonym clustering and hypernym links.
//!
//! NER is one call per document. Synonymy and hypernymy are decided by
//! single-choice calls over same-label pairs; the pair results are reduced
//! in pair order, so the outcome does not depend on call completion order.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::docmodel::{normalize_token, Document, EntityMention, LabelSet, Span};
use crate::llmgateway::{Gateway, GatewayError, DEFAULT_MAX_TOKENS, SINGLE_CHOICE_MAX_TOKENS};
use crate::prompt::{parse_single_choice, AnswerSet, Choice, FivePartTemplate, PromptError, UnparseablePolicy};

#[derive(Debug, Error)]
pub enum Stage1Error {
    #[error("document {doc_id}: unusable NER response: {reason}")]
    ResponseFormatError { doc_id: String, reason: String },
    #[error("document {doc_id}: unparseable answer {response:?}")]
    UnparseableAnswer { doc_id: String, response: String },
    #[error(transparent)]
    Provider(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// An entity as returned by the LLM, before grounding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NerRawItem {
    pub surface: String,
    pub label: String,
    pub claimed_sentence: Option<usize>,
    pub claimed_span: Option<Span>,
}

#[derive(Deserialize)]
struct RawEntity {
    #[serde(alias = "entity", alias = "text", alias = "name", alias = "surface")]
    entity: String,
    #[serde(alias = "type", alias = "label")]
    label: String,
    #[serde(default, alias = "sentence_index", alias = "sent")]
    sentence: Option<usize>,
    #[serde(default, alias = "position")]
    span: Option<(usize, usize)>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawResponse {
    List(Vec<RawEntity>),
    Wrapped { entities: Vec<RawEntity> },
}

/// Strips code fences and surrounding prose, then parses the JSON entity list.
pub fn parse_ner_response(doc_id: &str, text: &str) -> Result<Vec<NerRawItem>, Stage1Error> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(Stage1Error::ResponseFormatError {
            doc_id: doc_id.into(),
            reason: "empty response".into(),
        });
    }
    let mut candidates = vec![trimmed.to_string()];
    let unfenced: String = trimmed
        .lines()
        .filter(|l| !l.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n");
    candidates.push(unfenced.clone());
    if let (Some(s), Some(e)) = (unfenced.find('['), unfenced.rfind(']')) {
        if s < e {
            candidates.push(unfenced[s..=e].to_string());
        }
    }
    if let (Some(s), Some(e)) = (unfenced.find('{'), unfenced.rfind('}')) {
        if s < e {
            candidates.push(unfenced[s..=e].to_string());
        }
    }
    for candidate in &candidates {
        if let Ok(parsed) = serde_json::from_str::<RawResponse>(candidate) {
            let list = match parsed {
                RawResponse::List(l) => l,
                RawResponse::Wrapped { entities } => entities,
            };
            return Ok(list
                .into_iter()
                .filter(|e| !e.entity.trim().is_empty())
                .map(|e| NerRawItem {
                    surface: e.entity.trim().to_string(),
                    label: e.label.trim().to_string(),
                    claimed_sentence: e.sentence,
                    claimed_span: e.span.map(Span::from),
                })
                .collect());
        }
    }
    Err(Stage1Error::ResponseFormatError {
        doc_id: doc_id.into(),
        reason: format!("no JSON entity list in {:?}", trimmed.chars().take(120).collect::<String>()),
    })
}

/// All `(sentence, span)` occurrences of `surface`'s normalized token
/// sequence, in document order.
pub fn find_occurrences(doc: &Document, surface: &str) -> Vec<(usize, Span)> {
    let needle: Vec<String> = surface.split_whitespace().map(normalize_token).collect();
    if needle.is_empty() || needle.iter().any(String::is_empty) {
        return Vec::new();
    }
    let mut hits = Vec::new();
    for sentence in &doc.sentences {
        let hay: Vec<String> = sentence.tokens.iter().map(|t| normalize_token(t)).collect();
        if hay.len() < needle.len() {
            continue;
        }
        for start in 0..=hay.len() - needle.len() {
            if hay[start..start + needle.len()] == needle[..] {
                hits.push((sentence.index, Span::new(start, start + needle.len())));
            }
        }
    }
    hits
}

/// Grounds raw items against the document: one mention per occurrence,
/// labels mapped onto the configured spelling, non-target labels dropped.
pub fn ground_items(doc: &Document, items: &[NerRawItem], labels: &LabelSet) -> Vec<EntityMention> {
    let mut seen: HashMap<(String, usize, Span), ()> = HashMap::new();
    let mut out = Vec::new();
    for item in items {
        let Some(label) = labels.canonical(&item.label) else {
            warn!(doc = %doc.doc_id, label = %item.label, surface = %item.surface, "dropping entity with unknown label");
            continue;
        };
        if !labels.is_target(label) {
            continue;
        }
        let occurrences = find_occurrences(doc, &item.surface);
        if occurrences.is_empty() {
            warn!(doc = %doc.doc_id, surface = %item.surface, "dropping entity not found in document");
            continue;
        }
        if let (Some(s), Some(span)) = (item.claimed_sentence, item.claimed_span) {
            if !occurrences.contains(&(s, span)) {
                warn!(doc = %doc.doc_id, surface = %item.surface, "claimed position does not match; using text search");
            }
        }
        for (sentence_index, span) in occurrences {
            if seen.insert((label.to_string(), sentence_index, span), ()).is_some() {
                continue;
            }
            out.push(EntityMention {
                doc_id: doc.doc_id.clone(),
                surface: item.surface.clone(),
                label: label.to_string(),
                sentence_index,
                span,
                global_index: None,
                hypernym_index: None,
            });
        }
    }
    // "netilmicin" inside "netilmicin sulfate" is not a mention of its own.
    let nested = |m: &EntityMention| {
        out.iter().any(|o| {
            o.sentence_index == m.sentence_index
                && o.span != m.span
                && o.span.start <= m.span.start
                && m.span.end <= o.span.end
        })
    };
    let mut kept: Vec<EntityMention> = out.iter().filter(|m| !nested(m)).cloned().collect();
    kept.sort_by_key(|m| m.position());
    kept
}

fn doc_bindings(doc: &Document, extra: &BTreeMap<String, String>) -> BTreeMap<String, String> {
    let mut b = extra.clone();
    b.insert("input".into(), doc.text());
    b
}

/// Entity recognition for one document. Returns target-label mentions with
/// cluster indices unset.
pub fn run_ner(
    doc: &Document,
    labels: &LabelSet,
    template: &FivePartTemplate,
    gateway: &Gateway,
    extra_bindings: &BTreeMap<String, String>,
) -> Result<Vec<EntityMention>, Stage1Error> {
    let mut bindings = doc_bindings(doc, extra_bindings);
    bindings.insert("labels".into(), labels.all_labels().join(", "));
    let prompt = template.render(&bindings)?;
    let response = gateway.complete(&gateway.request(prompt, DEFAULT_MAX_TOKENS))?;
    let items = parse_ner_response(&doc.doc_id, &response.text)?;
    Ok(ground_items(doc, &items, labels))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SynonymVerdict {
    Same,
    Different,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynonymJudgment {
    pub first: String,
    pub second: String,
    pub label: String,
    pub verdict: SynonymVerdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum HypernymVerdict {
    FirstIsHypernym,
    SecondIsHypernym,
    Neither,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HypernymJudgment {
    pub first: usize,
    pub second: usize,
    pub verdict: HypernymVerdict,
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (big, small) = if self.size[ra] >= self.size[rb] { (ra, rb) } else { (rb, ra) };
        self.parent[small] = big;
        self.size[big] += self.size[small];
        true
    }
}

fn classify(
    doc: &Document,
    text: &str,
    answers: &AnswerSet,
) -> Result<Choice, Stage1Error> {
    let choice = parse_single_choice(text, answers);
    if choice == Choice::Unparseable {
        if answers.unparseable_policy == UnparseablePolicy::Error {
            return Err(Stage1Error::UnparseableAnswer {
                doc_id: doc.doc_id.clone(),
                response: text.to_string(),
            });
        }
        warn!(doc = %doc.doc_id, response = %text, "unparseable answer treated as negative");
    }
    Ok(choice)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynonymOutcome {
    pub mentions: Vec<EntityMention>,
    pub judgments: Vec<SynonymJudgment>,
}

/// Assigns `global_index` by clustering same-label surfaces.
///
/// Surfaces equal up to case merge without a call; every other same-label
/// surface pair gets one call; positive verdicts are closed transitively.
/// Clusters are numbered by first appearance in document order.
pub fn resolve_synonyms(
    doc: &Document,
    mentions: &[EntityMention],
    template: &FivePartTemplate,
    gateway: &Gateway,
) -> Result<SynonymOutcome, Stage1Error> {
    let mut mentions: Vec<EntityMention> = mentions.to_vec();
    mentions.sort_by_key(|m| m.position());

    // Distinct (label, folded surface) keys in first-appearance order.
    let mut key_index: HashMap<(String, String), usize> = HashMap::new();
    let mut keys: Vec<(String, String)> = Vec::new(); // (label, display surface)
    let mut mention_key = Vec::with_capacity(mentions.len());
    for m in &mentions {
        let k = (m.label.clone(), m.surface.to_lowercase());
        let idx = *key_index.entry(k).or_insert_with(|| {
            keys.push((m.label.clone(), m.surface.clone()));
            keys.len() - 1
        });
        mention_key.push(idx);
    }

    let mut pairs = Vec::new();
    for i in 0..keys.len() {
        for j in i + 1..keys.len() {
            if keys[i].0 == keys[j].0 {
                pairs.push((i, j));
            }
        }
    }

    let answers = template.answer_set();
    let base = doc_bindings(doc, &BTreeMap::new());
    let requests = pairs
        .iter()
        .map(|&(i, j)| {
            let mut b = base.clone();
            b.insert("label".into(), keys[i].0.clone());
            b.insert("first".into(), keys[i].1.clone());
            b.insert("second".into(), keys[j].1.clone());
            Ok(gateway.request(template.render(&b)?, SINGLE_CHOICE_MAX_TOKENS))
        })
        .collect::<Result<Vec<_>, PromptError>>()?;
    let responses = gateway.complete_all(&requests);

    let mut uf = UnionFind::new(keys.len());
    let mut judgments = Vec::with_capacity(pairs.len());
    for (&(i, j), response) in pairs.iter().zip(responses) {
        let text = response?.text;
        let verdict = match classify(doc, &text, &answers)? {
            Choice::Positive(_) => SynonymVerdict::Same,
            _ => SynonymVerdict::Different,
        };
        if verdict == SynonymVerdict::Same {
            uf.union(i, j);
        }
        judgments.push(SynonymJudgment {
            first: keys[i].1.clone(),
            second: keys[j].1.clone(),
            label: keys[i].0.clone(),
            verdict,
        });
    }
    for (&(i, j), judgment) in pairs.iter().zip(&judgments) {
        if judgment.verdict == SynonymVerdict::Different && uf.find(i) == uf.find(j) {
            warn!(
                doc = %doc.doc_id,
                first = %judgment.first,
                second = %judgment.second,
                "inconsistent synonym judgments: pair judged different but merged transitively"
            );
        }
    }

    let mut cluster_ids: HashMap<usize, usize> = HashMap::new();
    for (m, &k) in mentions.iter_mut().zip(&mention_key) {
        let root = uf.find(k);
        let next = cluster_ids.len();
        m.global_index = Some(*cluster_ids.entry(root).or_insert(next));
        m.hypernym_index = None;
    }
    Ok(SynonymOutcome { mentions, judgments })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypernymOutcome {
    pub mentions: Vec<EntityMention>,
    pub judgments: Vec<HypernymJudgment>,
}

/// Links clusters to their hypernym cluster.
///
/// Each same-label cluster pair (by representative, the earliest mention)
/// gets one three-way call: `1` first is hypernym, `2` second is, anything
/// negative neither. A verdict that would create a 2-cycle, or give a
/// cluster a second hypernym, is ignored in favour of the earlier one.
pub fn resolve_hypernyms(
    doc: &Document,
    mentions: &[EntityMention],
    template: &FivePartTemplate,
    gateway: &Gateway,
) -> Result<HypernymOutcome, Stage1Error> {
    let mut mentions: Vec<EntityMention> = mentions.to_vec();
    mentions.sort_by_key(|m| m.position());

    let mut reps: BTreeMap<usize, &EntityMention> = BTreeMap::new();
    for m in &mentions {
        let g = m.global_index.expect("global indices assigned before hypernym resolution");
        reps.entry(g).or_insert(m);
    }
    let clusters: Vec<(usize, &EntityMention)> = reps.into_iter().collect();
    let mut pairs = Vec::new();
    for a in 0..clusters.len() {
        for b in a + 1..clusters.len() {
            if clusters[a].1.label == clusters[b].1.label {
                pairs.push((a, b));
            }
        }
    }

    let answers = template.answer_set();
    let base = doc_bindings(doc, &BTreeMap::new());
    let requests = pairs
        .iter()
        .map(|&(a, b)| {
            let mut bind = base.clone();
            bind.insert("label".into(), clusters[a].1.label.clone());
            bind.insert("first".into(), clusters[a].1.surface.clone());
            bind.insert("second".into(), clusters[b].1.surface.clone());
            Ok(gateway.request(template.render(&bind)?, SINGLE_CHOICE_MAX_TOKENS))
        })
        .collect::<Result<Vec<_>, PromptError>>()?;
    let responses = gateway.complete_all(&requests);

    let mut hypernym_of: HashMap<usize, usize> = HashMap::new();
    let mut judgments = Vec::with_capacity(pairs.len());
    for (&(a, b), response) in pairs.iter().zip(responses) {
        let text = response?.text;
        let (ga, gb) = (clusters[a].0, clusters[b].0);
        let verdict = match classify(doc, &text, &answers)? {
            Choice::Positive(s) if s == "1" => HypernymVerdict::FirstIsHypernym,
            Choice::Positive(s) if s == "2" => HypernymVerdict::SecondIsHypernym,
            _ => HypernymVerdict::Neither,
        };
        let link = match verdict {
            HypernymVerdict::FirstIsHypernym => Some((gb, ga)),
            HypernymVerdict::SecondIsHypernym => Some((ga, gb)),
            HypernymVerdict::Neither => None,
        };
        if let Some((child, parent)) = link {
            if hypernym_of.get(&parent) == Some(&child) {
                warn!(doc = %doc.doc_id, child, parent, "hypernym judgment would form a cycle; keeping earlier judgment");
            } else if let Some(existing) = hypernym_of.get(&child) {
                warn!(doc = %doc.doc_id, child, parent, existing, "cluster already has a hypernym; keeping earlier judgment");
            } else {
                hypernym_of.insert(child, parent);
            }
        }
        judgments.push(HypernymJudgment {
            first: ga,
            second: gb,
            verdict,
        });
    }
    for m in &mut mentions {
        m.hypernym_index = m.global_index.and_then(|g| hypernym_of.get(&g).copied());
    }
    Ok(HypernymOutcome { mentions, judgments })
}

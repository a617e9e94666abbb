//! Documents, entity mentions, relation tuples and the corpus importers.
//!
//! A document is an ordered list of sentences (the title is always sentence
//! 0), each sentence an ordered list of whitespace-delimited tokens. Entity
//! mentions address tokens with half-open word spans `[start, end)` inside a
//! sentence, so `toxicity` in the title `Relative efficacy and toxicity of
//! ...` sits at sentence 0, span `[3, 4)`.
//!
//! All records serialize to line-delimited JSON (see [`write_canonical`]).

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Half-open word interval `[start, end)` within a sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// Number of shared word positions.
    pub fn overlap(&self, other: &Span) -> usize {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        hi.saturating_sub(lo)
    }
}

impl From<(usize, usize)> for Span {
    fn from((start, end): (usize, usize)) -> Self {
        Self { start, end }
    }
}

impl From<Span> for (usize, usize) {
    fn from(span: Span) -> Self {
        (span.start, span.end)
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sentence {
    pub index: usize,
    pub text: String,
    pub tokens: Vec<String>,
    /// Per-token `(start, end)` character offsets into `text`.
    #[serde(rename = "offsets")]
    pub token_char_offsets: Vec<(usize, usize)>,
}

impl Sentence {
    pub fn new(index: usize, text: impl Into<String>) -> Self {
        let text = text.into();
        let (tokens, token_char_offsets) = tokenize(&text)
            .into_iter()
            .map(|t| (t.text, (t.start, t.end)))
            .unzip();
        Self {
            index,
            text,
            tokens,
            token_char_offsets,
        }
    }

    /// Tokens of `span` joined with single spaces, or `None` if the span is
    /// out of range.
    pub fn span_text(&self, span: Span) -> Option<String> {
        if span.is_empty() || span.end > self.tokens.len() {
            return None;
        }
        Some(self.tokens[span.start..span.end].join(" "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub doc_id: String,
    pub sentences: Vec<Sentence>,
}

impl Document {
    /// Full text handed to the LLM: sentence texts joined with one space.
    pub fn text(&self) -> String {
        self.sentences
            .iter()
            .map(|s| s.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn sentence(&self, index: usize) -> Option<&Sentence> {
        self.sentences.get(index)
    }

    /// Checks the structural invariants (contiguous indices, non-empty
    /// whitespace-free tokens, increasing in-bounds offsets).
    pub fn validate(&self) -> Result<(), String> {
        for (pos, sentence) in self.sentences.iter().enumerate() {
            if sentence.index != pos {
                return Err(format!(
                    "sentence at position {pos} has index {}",
                    sentence.index
                ));
            }
            if sentence.tokens.len() != sentence.token_char_offsets.len() {
                return Err(format!("sentence {pos}: token/offset count mismatch"));
            }
            let char_len = sentence.text.chars().count();
            let mut prev_end = 0;
            for (i, (token, &(s, e))) in sentence
                .tokens
                .iter()
                .zip(&sentence.token_char_offsets)
                .enumerate()
            {
                if token.is_empty() || token.chars().any(char::is_whitespace) {
                    return Err(format!("sentence {pos}: bad token {i} {token:?}"));
                }
                if s >= e || e > char_len || (i > 0 && s < prev_end) {
                    return Err(format!("sentence {pos}: bad offsets for token {i}"));
                }
                prev_end = e;
            }
        }
        Ok(())
    }
}

/// Serde adapter mapping `None` to `-1`.
mod hypernym_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
        match value {
            Some(v) => s.serialize_i64(*v as i64),
            None => s.serialize_i64(-1),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
        let raw = i64::deserialize(d)?;
        match raw {
            -1 => Ok(None),
            v if v >= 0 => Ok(Some(v as usize)),
            v => Err(serde::de::Error::custom(format!(
                "hypernym_index must be -1 or non-negative, got {v}"
            ))),
        }
    }
}

/// One recognised entity occurrence.
///
/// `global_index` is the synonym-cluster id (`None` until synonym
/// resolution), `hypernym_index` the global index of the cluster's hypernym
/// (`None`, serialized as `-1`, when there is none).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityMention {
    pub doc_id: String,
    pub surface: String,
    pub label: String,
    pub sentence_index: usize,
    pub span: Span,
    pub global_index: Option<usize>,
    #[serde(with = "hypernym_serde")]
    pub hypernym_index: Option<usize>,
}

impl EntityMention {
    pub fn position(&self) -> (usize, usize, usize) {
        (self.sentence_index, self.span.start, self.span.end)
    }

    pub fn to_ref(&self) -> MentionRef {
        MentionRef {
            surface: self.surface.clone(),
            label: self.label.clone(),
            global_index: self.global_index.unwrap_or(usize::MAX),
        }
    }

    /// Checks span bounds and surface agreement against `doc`.
    pub fn validate(&self, doc: &Document) -> Result<(), String> {
        let sentence = doc
            .sentence(self.sentence_index)
            .ok_or_else(|| format!("sentence {} out of range", self.sentence_index))?;
        let text = sentence
            .span_text(self.span)
            .ok_or_else(|| format!("span {} out of range", self.span))?;
        if !surface_matches(&self.surface, &text) {
            return Err(format!("surface {:?} does not match {:?}", self.surface, text));
        }
        if let (Some(h), Some(g)) = (self.hypernym_index, self.global_index) {
            if h == g {
                return Err("mention is its own hypernym".into());
            }
        }
        Ok(())
    }
}

/// Lowercases and strips leading/trailing non-alphanumeric characters.
pub fn normalize_token(token: &str) -> String {
    token
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

/// Surface-to-span matching rule: token-wise comparison after
/// [`normalize_token`].
pub fn surface_matches(surface: &str, span_text: &str) -> bool {
    let a: Vec<String> = surface.split_whitespace().map(normalize_token).collect();
    let b: Vec<String> = span_text.split_whitespace().map(normalize_token).collect();
    a == b
}

/// Head/tail endpoint of a predicted relation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MentionRef {
    pub surface: String,
    pub label: String,
    pub global_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationTuple {
    pub doc_id: String,
    pub head: MentionRef,
    pub relation: String,
    pub tail: MentionRef,
}

impl RelationTuple {
    pub fn concept_key(&self) -> (usize, &str, usize) {
        (self.head.global_index, &self.relation, self.tail.global_index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldMention {
    pub sentence_index: usize,
    pub span: Span,
    pub surface: String,
}

/// An annotated concept: every gold mention sharing one corpus identifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldConcept {
    pub doc_id: String,
    pub concept_id: String,
    pub label: String,
    pub mentions: Vec<GoldMention>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConceptRef {
    pub concept_id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldRelation {
    pub doc_id: String,
    pub head: ConceptRef,
    pub relation: String,
    pub tail: ConceptRef,
}

/// Entity labels shown to the LLM and the subset kept downstream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    all_labels: Vec<String>,
    target_labels: Vec<String>,
}

impl LabelSet {
    pub fn new(all_labels: Vec<String>, target_labels: Vec<String>) -> Result<Self, String> {
        let mut seen = std::collections::HashSet::new();
        for label in &all_labels {
            if !seen.insert(label.to_lowercase()) {
                return Err(format!("duplicate label {label:?}"));
            }
        }
        let mut seen_targets = std::collections::HashSet::new();
        for target in &target_labels {
            if !seen_targets.insert(target.to_lowercase()) {
                return Err(format!("duplicate target label {target:?}"));
            }
            if !all_labels.iter().any(|l| l.eq_ignore_ascii_case(target)) {
                return Err(format!("target label {target:?} not in all_labels"));
            }
        }
        Ok(Self {
            all_labels,
            target_labels,
        })
    }

    pub fn all_labels(&self) -> &[String] {
        &self.all_labels
    }

    pub fn target_labels(&self) -> &[String] {
        &self.target_labels
    }

    /// Case-insensitive lookup returning the configured spelling.
    pub fn canonical(&self, label: &str) -> Option<&str> {
        self.all_labels
            .iter()
            .find(|l| l.eq_ignore_ascii_case(label.trim()))
            .map(String::as_str)
    }

    pub fn is_target(&self, label: &str) -> bool {
        self.target_labels
            .iter()
            .any(|l| l.eq_ignore_ascii_case(label))
    }
}

// ---------------------------------------------------------------------------
// Tokenization and segmentation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    /// Character (not byte) offsets into the source string.
    pub start: usize,
    pub end: usize,
}

/// Splits `text` into maximal runs of non-whitespace.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    let mut pos = 0;
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !current.is_empty() {
                tokens.push(Token {
                    text: std::mem::take(&mut current),
                    start,
                    end: pos,
                });
            }
        } else {
            if current.is_empty() {
                start = pos;
            }
            current.push(ch);
        }
        pos += 1;
    }
    if !current.is_empty() {
        tokens.push(Token {
            text: current,
            start,
            end: pos,
        });
    }
    tokens
}

const ABBREVIATIONS: &[&str] = &[
    "e.g.", "i.e.", "al.", "vs.", "cf.", "fig.", "figs.", "dr.", "mr.", "mrs.", "ms.", "no.",
    "nos.", "approx.", "ca.", "ref.", "refs.", "vol.", "sp.", "spp.", "st.",
];

/// Character ranges `[start, end)` of the sentences in `text`, trimmed.
fn sentence_ranges(text: &str) -> Vec<(usize, usize)> {
    let chars: Vec<char> = text.chars().collect();
    let mut ranges = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        if matches!(chars[i], '.' | '!' | '?') {
            // Allow closing brackets/quotes after the terminator.
            let mut j = i + 1;
            while j < chars.len() && matches!(chars[j], ')' | ']' | '"' | '\'' | '\u{201d}') {
                j += 1;
            }
            let mut k = j;
            while k < chars.len() && chars[k].is_whitespace() {
                k += 1;
            }
            let boundary = k > j
                && k < chars.len()
                && (chars[k].is_uppercase() || chars[k].is_ascii_digit())
                && !(chars[i] == '.' && is_abbreviation(&chars, i));
            if boundary {
                ranges.push((start, j));
                start = k;
                i = k;
                continue;
            }
        }
        i += 1;
    }
    if start < chars.len() {
        ranges.push((start, chars.len()));
    }
    ranges
        .into_iter()
        .filter_map(|(s, e)| {
            let mut s = s;
            let mut e = e;
            while s < e && chars[s].is_whitespace() {
                s += 1;
            }
            while e > s && chars[e - 1].is_whitespace() {
                e -= 1;
            }
            (s < e).then_some((s, e))
        })
        .collect()
}

/// True when the word ending at the period `dot` is a known abbreviation or
/// a single-letter initial.
fn is_abbreviation(chars: &[char], dot: usize) -> bool {
    let mut s = dot;
    while s > 0 && !chars[s - 1].is_whitespace() {
        s -= 1;
    }
    let word: String = chars[s..=dot].iter().collect::<String>().to_lowercase();
    let word = word.trim_start_matches(['(', '[']);
    if ABBREVIATIONS.contains(&word) {
        return true;
    }
    let letters: Vec<char> = word.chars().filter(|c| c.is_alphabetic()).collect();
    letters.len() == 1 && word.len() == 2 && chars[dot - 1].is_uppercase()
}

/// Builds a document from a title and abstract; the title is sentence 0.
pub fn segment(doc_id: impl Into<String>, title: &str, abstract_text: &str) -> Document {
    segment_with_starts(doc_id, title, abstract_text).0
}

/// Like [`segment`], also returning each sentence's character start within
/// `title + " " + abstract`.
pub(crate) fn segment_with_starts(
    doc_id: impl Into<String>,
    title: &str,
    abstract_text: &str,
) -> (Document, Vec<usize>) {
    let title_chars: Vec<char> = title.chars().collect();
    let lead = title_chars.iter().take_while(|c| c.is_whitespace()).count();
    let title_trimmed = title.trim();
    let mut sentences = vec![Sentence::new(0, title_trimmed)];
    let mut starts = vec![lead];
    let abstract_base = title_chars.len() + 1;
    let abstract_chars: Vec<char> = abstract_text.chars().collect();
    for (s, e) in sentence_ranges(abstract_text) {
        let text: String = abstract_chars[s..e].iter().collect();
        sentences.push(Sentence::new(sentences.len(), text));
        starts.push(abstract_base + s);
    }
    (
        Document {
            doc_id: doc_id.into(),
            sentences,
        },
        starts,
    )
}

// ---------------------------------------------------------------------------
// Corpus import
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum ImportError {
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("line {line}: document {doc_id}: surface {expected:?} not found at offsets {start}..{end} (text there: {found:?})")]
    OffsetMismatch {
        line: usize,
        doc_id: String,
        start: usize,
        end: usize,
        expected: String,
        found: String,
    },
    #[error("line {line}: unknown relation label {label:?}")]
    UnknownRelationLabel { line: usize, label: String },
    #[error("read failed: {0}")]
    Io(#[from] std::io::Error),
}

impl ImportError {
    pub fn line(&self) -> Option<usize> {
        match self {
            ImportError::MalformedRecord { line, .. }
            | ImportError::OffsetMismatch { line, .. }
            | ImportError::UnknownRelationLabel { line, .. } => Some(*line),
            ImportError::Io(_) => None,
        }
    }
}

/// One imported document with its gold annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportedDocument {
    pub document: Document,
    pub concepts: Vec<GoldConcept>,
    pub relations: Vec<GoldRelation>,
}

/// PubTator concept id for mentions without a normalized identifier.
const UNLINKED_ID: &str = "-1";

/// The relation name CDR's `CID` lines map to.
pub const CDR_RELATION: &str = "induced";

#[derive(Default)]
struct PendingDoc {
    pmid: String,
    title: Option<String>,
    abstract_text: Option<String>,
    mentions: Vec<(usize, usize, usize, String, String, String)>,
    relations: Vec<(usize, String, String, String)>,
}

/// Relation-line policy for the shared PubTator reader.
enum RelationNames<'a> {
    Cdr,
    Configured(&'a [String]),
}

/// Parses a PubTator stream (CDR style: `CID` relation lines become
/// [`CDR_RELATION`]).
pub fn import_pubtator<R: BufRead>(reader: R) -> Result<Vec<ImportedDocument>, ImportError> {
    read_pubtator(reader, RelationNames::Cdr, None)
}

/// Parses the ChemDisGene release: PubTator-format abstracts with typed
/// mentions, plus an optional relation table (`pmid<TAB>relation<TAB>arg1<TAB>arg2`).
/// Relation labels must belong to `relation_names`.
pub fn import_chemdisgene<R: BufRead, T: BufRead>(
    abstracts: R,
    relations: Option<T>,
    relation_names: &[String],
) -> Result<Vec<ImportedDocument>, ImportError> {
    let extra = match relations {
        Some(table) => Some(read_relation_table(table, relation_names)?),
        None => None,
    };
    read_pubtator(abstracts, RelationNames::Configured(relation_names), extra)
}

/// Relation rows per document: `(line, relation, head id, tail id)`.
type RelationRows = BTreeMap<String, Vec<(usize, String, String, String)>>;

fn read_relation_table<T: BufRead>(
    table: T,
    relation_names: &[String],
) -> Result<RelationRows, ImportError> {
    let mut out: BTreeMap<String, Vec<_>> = BTreeMap::new();
    for (idx, line) in table.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 4 {
            return Err(ImportError::MalformedRecord {
                line: lineno,
                reason: format!("expected 4 tab-separated fields, got {}", fields.len()),
            });
        }
        if lineno == 1 && !fields[0].chars().all(|c| c.is_ascii_digit()) {
            continue; // header
        }
        let label = fields[1].trim();
        if !relation_names.iter().any(|n| n == label) {
            return Err(ImportError::UnknownRelationLabel {
                line: lineno,
                label: label.to_string(),
            });
        }
        out.entry(fields[0].trim().to_string()).or_default().push((
            lineno,
            label.to_string(),
            fields[2].trim().to_string(),
            fields[3].trim().to_string(),
        ));
    }
    Ok(out)
}

fn read_pubtator<R: BufRead>(
    reader: R,
    names: RelationNames<'_>,
    mut extra_relations: Option<RelationRows>,
) -> Result<Vec<ImportedDocument>, ImportError> {
    let mut docs = Vec::new();
    let mut pending: Option<PendingDoc> = None;
    let mut last_line = 0;

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        last_line = lineno;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            if let Some(doc) = pending.take() {
                docs.push(finish_doc(doc, lineno, &mut extra_relations)?);
            }
            continue;
        }

        if let Some((pmid, kind, text)) = split_text_line(line) {
            let doc = pending.get_or_insert_with(|| PendingDoc {
                pmid: pmid.to_string(),
                ..Default::default()
            });
            if doc.pmid != pmid {
                return Err(ImportError::MalformedRecord {
                    line: lineno,
                    reason: format!("document {pmid} starts before {} ended", doc.pmid),
                });
            }
            match kind {
                "t" => doc.title = Some(text.to_string()),
                _ => doc.abstract_text = Some(text.to_string()),
            }
            continue;
        }

        let fields: Vec<&str> = line.split('\t').collect();
        let Some(doc) = pending.as_mut() else {
            return Err(ImportError::MalformedRecord {
                line: lineno,
                reason: "annotation line before any title line".into(),
            });
        };
        if fields[0] != doc.pmid {
            return Err(ImportError::MalformedRecord {
                line: lineno,
                reason: format!("annotation for {} inside document {}", fields[0], doc.pmid),
            });
        }
        let is_offset_line = fields.len() >= 5
            && fields[1].parse::<usize>().is_ok()
            && fields[2].parse::<usize>().is_ok();
        if is_offset_line {
            let start: usize = fields[1].parse().unwrap_or_default();
            let end: usize = fields[2].parse().unwrap_or_default();
            if end <= start {
                return Err(ImportError::MalformedRecord {
                    line: lineno,
                    reason: format!("empty or inverted offsets {start}..{end}"),
                });
            }
            let id = fields.get(5).map(|s| s.trim()).filter(|s| !s.is_empty());
            doc.mentions.push((
                lineno,
                start,
                end,
                fields[3].to_string(),
                fields[4].trim().to_string(),
                id.unwrap_or(UNLINKED_ID).to_string(),
            ));
        } else if fields.len() >= 4 {
            let label = fields[1].trim();
            let relation = match names {
                RelationNames::Cdr if label == "CID" => CDR_RELATION.to_string(),
                RelationNames::Cdr => {
                    return Err(ImportError::MalformedRecord {
                        line: lineno,
                        reason: format!("unexpected relation type {label:?}"),
                    })
                }
                RelationNames::Configured(known) => {
                    if !known.iter().any(|n| n == label) {
                        return Err(ImportError::UnknownRelationLabel {
                            line: lineno,
                            label: label.to_string(),
                        });
                    }
                    label.to_string()
                }
            };
            doc.relations.push((
                lineno,
                relation,
                fields[2].trim().to_string(),
                fields[3].trim().to_string(),
            ));
        } else {
            return Err(ImportError::MalformedRecord {
                line: lineno,
                reason: format!("unrecognised line with {} fields", fields.len()),
            });
        }
    }
    if let Some(doc) = pending.take() {
        docs.push(finish_doc(doc, last_line + 1, &mut extra_relations)?);
    }
    Ok(docs)
}

fn split_text_line(line: &str) -> Option<(&str, &str, &str)> {
    let mut parts = line.splitn(3, '|');
    let pmid = parts.next()?;
    let kind = parts.next()?;
    let text = parts.next()?;
    let valid = !pmid.is_empty()
        && !pmid.contains('\t')
        && matches!(kind, "t" | "a");
    valid.then_some((pmid, kind, text))
}

/// Default labels for relation endpoints whose concept has no mention.
fn default_endpoint_labels(relation: &str) -> (&'static str, &'static str) {
    match relation.split(':').next().unwrap_or_default() {
        "chem_gene" => ("Chemical", "Gene"),
        "gene_disease" => ("Gene", "Disease"),
        _ => ("Chemical", "Disease"),
    }
}

fn finish_doc(
    pending: PendingDoc,
    lineno: usize,
    extra_relations: &mut Option<RelationRows>,
) -> Result<ImportedDocument, ImportError> {
    let title = pending.title.ok_or_else(|| ImportError::MalformedRecord {
        line: lineno,
        reason: format!("document {} has no title line", pending.pmid),
    })?;
    let abstract_text = pending.abstract_text.unwrap_or_default();
    let (document, starts) = segment_with_starts(pending.pmid.clone(), &title, &abstract_text);
    let full: Vec<char> = format!("{title} {abstract_text}").chars().collect();

    let mut concepts: Vec<GoldConcept> = Vec::new();
    let mut by_id: BTreeMap<String, usize> = BTreeMap::new();
    for (line, start, end, surface, label, id) in pending.mentions {
        let (start, end) = verify_offsets(&full, start, end, &surface).ok_or_else(|| {
            let found = full
                .get(start.min(full.len())..end.min(full.len()))
                .map(|c| c.iter().collect())
                .unwrap_or_default();
            ImportError::OffsetMismatch {
                line,
                doc_id: pending.pmid.clone(),
                start,
                end,
                expected: surface.clone(),
                found,
            }
        })?;
        let (sentence_index, span) =
            locate(&document, &starts, start, end).ok_or_else(|| ImportError::MalformedRecord {
                line,
                reason: format!("offsets {start}..{end} fall outside every sentence"),
            })?;
        let mention = GoldMention {
            sentence_index,
            span,
            surface: surface.clone(),
        };
        let ids: Vec<String> = if id == UNLINKED_ID {
            vec![format!("{UNLINKED_ID}:{}", surface.to_lowercase())]
        } else {
            id.split('|').map(|s| s.trim().to_string()).collect()
        };
        for concept_id in ids {
            let slot = *by_id.entry(concept_id.clone()).or_insert_with(|| {
                concepts.push(GoldConcept {
                    doc_id: pending.pmid.clone(),
                    concept_id: concept_id.clone(),
                    label: label.clone(),
                    mentions: Vec::new(),
                });
                concepts.len() - 1
            });
            if !concepts[slot].mentions.contains(&mention) {
                concepts[slot].mentions.push(mention.clone());
            }
        }
    }

    let mut raw_relations = pending.relations;
    if let Some(extra) = extra_relations.as_mut() {
        raw_relations.extend(extra.remove(&pending.pmid).unwrap_or_default());
    }
    let label_of = |id: &str| -> Option<String> {
        by_id.get(id).map(|&slot| concepts[slot].label.clone())
    };
    let mut relations: Vec<GoldRelation> = Vec::new();
    for (_, relation, head, tail) in raw_relations {
        let (head_default, tail_default) = default_endpoint_labels(&relation);
        let rel = GoldRelation {
            doc_id: pending.pmid.clone(),
            head: ConceptRef {
                label: label_of(&head).unwrap_or_else(|| head_default.to_string()),
                concept_id: head,
            },
            relation,
            tail: ConceptRef {
                label: label_of(&tail).unwrap_or_else(|| tail_default.to_string()),
                concept_id: tail,
            },
        };
        if !relations.contains(&rel) {
            relations.push(rel);
        }
    }

    Ok(ImportedDocument {
        document,
        concepts,
        relations,
    })
}

/// Returns the (possibly shifted by one) offsets at which `surface` occurs.
fn verify_offsets(text: &[char], start: usize, end: usize, surface: &str) -> Option<(usize, usize)> {
    let matches_at = |s: usize, e: usize| -> bool {
        e <= text.len() && text[s..e].iter().copied().eq(surface.chars())
    };
    if matches_at(start, end) {
        return Some((start, end));
    }
    if start > 0 && matches_at(start - 1, end - 1) {
        return Some((start - 1, end - 1));
    }
    if matches_at(start + 1, end + 1) {
        return Some((start + 1, end + 1));
    }
    None
}

/// Maps a document-level character range onto (sentence, word span).
fn locate(doc: &Document, starts: &[usize], start: usize, end: usize) -> Option<(usize, Span)> {
    let sentence_index = starts.iter().rposition(|&s| s <= start)?;
    let sentence = &doc.sentences[sentence_index];
    let base = starts[sentence_index];
    let (ls, le) = (start - base, end.saturating_sub(base));
    let mut first = None;
    let mut last = None;
    for (i, &(ts, te)) in sentence.token_char_offsets.iter().enumerate() {
        if ts < le && ls < te {
            first.get_or_insert(i);
            last = Some(i);
        }
    }
    Some((sentence_index, Span::new(first?, last? + 1)))
}

// ---------------------------------------------------------------------------
// Canonical JSONL
// ---------------------------------------------------------------------------

/// Any record that may appear in a canonical JSONL stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CanonicalRecord {
    Document(Document),
    Mention(EntityMention),
    Relation(RelationTuple),
    GoldConcept(GoldConcept),
    GoldRelation(GoldRelation),
}

#[derive(Debug, Error)]
pub enum CanonicalError {
    #[error("line {line}: schema violation: {reason}")]
    SchemaViolation { line: usize, reason: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Writes one JSON object per line in declaration field order.
pub fn write_canonical<W: Write, T: Serialize>(mut out: W, items: &[T]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Reads records written by [`write_canonical`]; blank lines are skipped.
pub fn read_canonical<R: BufRead, T: DeserializeOwned>(reader: R) -> Result<Vec<T>, CanonicalError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| CanonicalError::SchemaViolation {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

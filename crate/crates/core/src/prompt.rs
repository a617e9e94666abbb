//! Five-part prompt templates.
//!
//! A template is rendered as: context, requirement (plus an optional
//! assumptions block), positive scenarios, negative scenarios, output
//! format. Placeholders are written `{name}` and must be declared; literal
//! braces that do not form `{identifier}` pass through unchanged. Bound
//! values are inserted verbatim and never re-scanned, so document text may
//! contain braces.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::docmodel::LabelSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Ner,
    Synonym,
    Hypernym,
    Relation,
    OneStage,
}

impl TemplateKind {
    /// Kinds whose reply is one answer symbol.
    pub fn is_single_choice(self) -> bool {
        matches!(
            self,
            TemplateKind::Synonym | TemplateKind::Hypernym | TemplateKind::Relation
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Polarity {
    Positive,
    Negative,
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Polarity::Positive => "POSITIVE",
            Polarity::Negative => "NEGATIVE",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    pub polarity: Polarity,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_symbol: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation_binding: Option<String>,
    #[serde(default)]
    pub principle_tags: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FivePartTemplate {
    pub name: String,
    pub kind: TemplateKind,
    /// Usually just `{input}`.
    pub context: String,
    pub requirement: String,
    #[serde(default)]
    pub assumptions: Vec<String>,
    /// Line printed before the scenario list, e.g. `Conditions:`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario_header: Option<String>,
    #[serde(default)]
    pub positive_scenarios: Vec<Scenario>,
    #[serde(default)]
    pub negative_scenarios: Vec<Scenario>,
    pub output_format: String,
    pub placeholders: BTreeSet<String>,
    /// Removal history written by scenario refinement.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub audit: Vec<String>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("template {template}: no binding for placeholder {{{placeholder}}}")]
    MissingBinding { template: String, placeholder: String },
    #[error("template {template}: placeholder {{{placeholder}}} is not declared")]
    UndeclaredPlaceholder { template: String, placeholder: String },
    #[error("template {template}: unknown scenario {id:?}")]
    UnknownScenario { template: String, id: String },
    #[error("template {template}: {reason}")]
    Invalid { template: String, reason: String },
    #[error("template parse: {0}")]
    Parse(String),
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([A-Za-z_][A-Za-z0-9_]*)\}").expect("valid regex"))
}

/// Names of all `{placeholder}`s in `text`, in order of appearance.
pub fn placeholders_in(text: &str) -> Vec<String> {
    placeholder_re()
        .captures_iter(text)
        .map(|c| c[1].to_string())
        .collect()
}

impl FivePartTemplate {
    pub fn from_json(raw: &str) -> Result<Self, PromptError> {
        let template: Self = serde_json::from_str(raw).map_err(|e| PromptError::Parse(e.to_string()))?;
        template.validate()?;
        Ok(template)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("template serializes")
    }

    fn invalid(&self, reason: impl Into<String>) -> PromptError {
        PromptError::Invalid {
            template: self.name.clone(),
            reason: reason.into(),
        }
    }

    /// Structural checks. Content rules (scenario coverage, symbol style)
    /// belong to [`lint`].
    pub fn validate(&self) -> Result<(), PromptError> {
        for part in self.parts() {
            for name in placeholders_in(part) {
                if !self.placeholders.contains(&name) {
                    return Err(PromptError::UndeclaredPlaceholder {
                        template: self.name.clone(),
                        placeholder: name,
                    });
                }
            }
        }
        let mut ids = BTreeSet::new();
        for (expected, list) in [
            (Polarity::Positive, &self.positive_scenarios),
            (Polarity::Negative, &self.negative_scenarios),
        ] {
            for s in list {
                if s.polarity != expected {
                    return Err(self.invalid(format!("scenario {} listed under the wrong polarity", s.id)));
                }
                if !ids.insert(s.id.as_str()) {
                    return Err(self.invalid(format!("duplicate scenario id {}", s.id)));
                }
                if s.polarity == Polarity::Negative && s.relation_binding.is_some() {
                    return Err(self.invalid(format!("negative scenario {} has a relation binding", s.id)));
                }
                if let Some(sym) = &s.answer_symbol {
                    if sym.is_empty() || sym.chars().any(char::is_whitespace) {
                        return Err(self.invalid(format!("scenario {}: bad answer symbol {sym:?}", s.id)));
                    }
                }
                if s.principle_tags.iter().any(|p| !(1..=9).contains(p)) {
                    return Err(self.invalid(format!("scenario {}: principle tags must be 1-9", s.id)));
                }
            }
        }
        let pos = symbols(&self.positive_scenarios);
        let neg = symbols(&self.negative_scenarios);
        if let Some(shared) = pos.intersection(&neg).next() {
            return Err(self.invalid(format!(
                "symbol {shared:?} is used by both positive and negative scenarios"
            )));
        }
        Ok(())
    }

    fn parts(&self) -> impl Iterator<Item = &str> {
        [self.context.as_str(), self.requirement.as_str(), self.output_format.as_str()]
            .into_iter()
            .chain(self.assumptions.iter().map(String::as_str))
            .chain(self.scenario_header.iter().map(String::as_str))
            .chain(self.scenarios().map(|s| s.text.as_str()))
    }

    /// Positive then negative scenarios, each in declaration order.
    pub fn scenarios(&self) -> impl Iterator<Item = &Scenario> {
        self.positive_scenarios.iter().chain(&self.negative_scenarios)
    }

    pub fn scenario(&self, id: &str) -> Option<&Scenario> {
        self.scenarios().find(|s| s.id == id)
    }

    pub fn scenario_count(&self) -> usize {
        self.positive_scenarios.len() + self.negative_scenarios.len()
    }

    /// Copy of the template with scenario `id` removed.
    pub fn without_scenario(&self, id: &str) -> Result<Self, PromptError> {
        let mut out = self.clone();
        let before = out.scenario_count();
        out.positive_scenarios.retain(|s| s.id != id);
        out.negative_scenarios.retain(|s| s.id != id);
        if out.scenario_count() == before {
            return Err(PromptError::UnknownScenario {
                template: self.name.clone(),
                id: id.to_string(),
            });
        }
        Ok(out)
    }

    /// Answer symbols declared by the scenarios.
    pub fn answer_set(&self) -> AnswerSet {
        AnswerSet {
            positive_symbols: symbols(&self.positive_scenarios),
            negative_symbols: symbols(&self.negative_scenarios),
            unparseable_policy: UnparseablePolicy::TreatAsNegative,
        }
    }

    pub fn render(&self, bindings: &BTreeMap<String, String>) -> Result<String, PromptError> {
        render(self, bindings)
    }
}

fn symbols(list: &[Scenario]) -> BTreeSet<String> {
    list.iter().filter_map(|s| s.answer_symbol.clone()).collect()
}

fn substitute(
    template: &FivePartTemplate,
    text: &str,
    bindings: &BTreeMap<String, String>,
) -> Result<String, PromptError> {
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for caps in placeholder_re().captures_iter(text) {
        let whole = caps.get(0).expect("match");
        let name = &caps[1];
        if !template.placeholders.contains(name) {
            return Err(PromptError::UndeclaredPlaceholder {
                template: template.name.clone(),
                placeholder: name.to_string(),
            });
        }
        let value = bindings.get(name).ok_or_else(|| PromptError::MissingBinding {
            template: template.name.clone(),
            placeholder: name.to_string(),
        })?;
        out.push_str(&text[last..whole.start()]);
        out.push_str(value);
        last = whole.end();
    }
    out.push_str(&text[last..]);
    Ok(out)
}

fn render_scenario(
    template: &FivePartTemplate,
    label: &str,
    number: usize,
    scenario: &Scenario,
    bindings: &BTreeMap<String, String>,
) -> Result<String, PromptError> {
    let body = substitute(template, &scenario.text, bindings)?;
    Ok(match &scenario.answer_symbol {
        Some(sym) => format!("{label} {number}: {body}, answer '{sym}'."),
        None => format!("{label} {number}: {body}"),
    })
}

/// Renders the template. Every declared placeholder must be bound.
pub fn render(
    template: &FivePartTemplate,
    bindings: &BTreeMap<String, String>,
) -> Result<String, PromptError> {
    if let Some(missing) = template.placeholders.iter().find(|p| !bindings.contains_key(*p)) {
        return Err(PromptError::MissingBinding {
            template: template.name.clone(),
            placeholder: missing.clone(),
        });
    }
    let sub = |text: &str| substitute(template, text, bindings);

    let mut blocks: Vec<String> = Vec::new();
    if !template.context.is_empty() {
        blocks.push(sub(&template.context)?);
    }
    if !template.requirement.is_empty() {
        blocks.push(sub(&template.requirement)?);
    }
    if !template.assumptions.is_empty() {
        let mut block = String::from("Assumptions:");
        for (i, a) in template.assumptions.iter().enumerate() {
            block.push_str(&format!("\n1.{} {}", i + 1, sub(a)?));
        }
        blocks.push(block);
    }
    if template.scenario_count() > 0 {
        let mut lines: Vec<String> = Vec::new();
        if let Some(header) = &template.scenario_header {
            lines.push(sub(header)?);
        }
        for (i, s) in template.positive_scenarios.iter().enumerate() {
            lines.push(render_scenario(template, "Positive Scenario", i + 1, s, bindings)?);
        }
        for (i, s) in template.negative_scenarios.iter().enumerate() {
            lines.push(render_scenario(template, "Negative Scenario", i + 1, s, bindings)?);
        }
        blocks.push(lines.join("\n"));
    }
    if !template.output_format.is_empty() {
        blocks.push(sub(&template.output_format)?);
    }
    Ok(blocks.join("\n\n"))
}

// ---------------------------------------------------------------------------
// Answers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnparseablePolicy {
    #[default]
    TreatAsNegative,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSet {
    pub positive_symbols: BTreeSet<String>,
    pub negative_symbols: BTreeSet<String>,
    #[serde(default)]
    pub unparseable_policy: UnparseablePolicy,
}

impl AnswerSet {
    pub fn new(
        positive: impl IntoIterator<Item = impl Into<String>>,
        negative: impl IntoIterator<Item = impl Into<String>>,
    ) -> Result<Self, String> {
        let set = Self {
            positive_symbols: positive.into_iter().map(Into::into).collect(),
            negative_symbols: negative.into_iter().map(Into::into).collect(),
            unparseable_policy: UnparseablePolicy::TreatAsNegative,
        };
        set.validate()?;
        Ok(set)
    }

    /// `'$'` confirms, `'~'` denies.
    pub fn dollar_tilde() -> Self {
        Self::new(["$"], ["~"]).expect("valid answer set")
    }

    pub fn with_policy(mut self, policy: UnparseablePolicy) -> Self {
        self.unparseable_policy = policy;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.positive_symbols.is_empty() || self.negative_symbols.is_empty() {
            return Err("answer set needs at least one positive and one negative symbol".into());
        }
        if let Some(s) = self.positive_symbols.intersection(&self.negative_symbols).next() {
            return Err(format!("symbol {s:?} is both positive and negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Choice {
    Positive(String),
    Negative(String),
    Unparseable,
}

const WRAPPERS: &[char] = &[
    '\'', '"', '`', '(', ')', '[', ']', '{', '}', '*', '.', ',', ';', ':', '!', '?', '\u{2018}',
    '\u{2019}', '\u{201c}', '\u{201d}',
];

/// Finds the first whitespace-delimited token that equals an answer symbol,
/// possibly wrapped in quotes, brackets or trailing punctuation.
pub fn parse_single_choice(response: &str, answers: &AnswerSet) -> Choice {
    let classify = |candidate: &str| -> Option<Choice> {
        if answers.positive_symbols.contains(candidate) {
            Some(Choice::Positive(candidate.to_string()))
        } else if answers.negative_symbols.contains(candidate) {
            Some(Choice::Negative(candidate.to_string()))
        } else {
            None
        }
    };
    for token in response.split_whitespace() {
        let mut candidate = token;
        loop {
            if let Some(choice) = classify(candidate) {
                return choice;
            }
            let stripped = candidate
                .strip_prefix(WRAPPERS)
                .or_else(|| candidate.strip_suffix(WRAPPERS));
            match stripped {
                Some(next) if !next.is_empty() => candidate = next,
                _ => break,
            }
        }
    }
    Choice::Unparseable
}

// ---------------------------------------------------------------------------
// Lint
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Severity {
    Warn,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    /// Rule code such as `P2` or `P6-P9`.
    pub rule: String,
    pub severity: Severity,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warn => "WARN",
            Severity::Error => "ERROR",
        };
        write!(f, "{sev:5} {:6} {}", self.rule, self.message)
    }
}

fn finding(rule: &str, severity: Severity, message: impl Into<String>) -> Finding {
    Finding {
        rule: rule.to_string(),
        severity,
        message: message.into(),
    }
}

pub fn has_errors(findings: &[Finding]) -> bool {
    findings.iter().any(|f| f.severity == Severity::Error)
}

/// Checks a template against the scenario design principles.
///
/// `labels` and `label_universe` are only consulted for NER templates.
pub fn lint(
    template: &FivePartTemplate,
    labels: Option<&LabelSet>,
    label_universe: &[String],
) -> Vec<Finding> {
    let mut out = Vec::new();
    let single_choice = template.kind.is_single_choice();

    if single_choice {
        let instructions = format!("{}\n{}", template.requirement, template.output_format).to_lowercase();
        let demands_one = ["only", "single", "one of", "just one"]
            .iter()
            .any(|w| instructions.contains(w));
        if !demands_one {
            out.push(finding(
                "P1",
                Severity::Warn,
                "requirement does not demand a single-choice answer",
            ));
        }
        for s in template.scenarios() {
            if s.answer_symbol.is_none() {
                out.push(finding(
                    "P1",
                    Severity::Error,
                    format!("scenario {} has no answer symbol", s.id),
                ));
            }
        }
    }

    for s in template.scenarios() {
        if let Some(sym) = &s.answer_symbol {
            if sym.chars().any(char::is_alphabetic) {
                out.push(finding(
                    "P2",
                    Severity::Error,
                    format!(
                        "scenario {} answers {sym:?}; use numeric or symbol answers instead of words",
                        s.id
                    ),
                ));
            }
        }
    }

    if template.kind == TemplateKind::Ner {
        match labels {
            Some(labels) => {
                let missing: Vec<&String> = label_universe
                    .iter()
                    .filter(|u| labels.canonical(u).is_none())
                    .collect();
                if !missing.is_empty() {
                    out.push(finding(
                        "P3",
                        Severity::Warn,
                        format!(
                            "label list omits {} of the labels occurring in the corpus: {}",
                            missing.len(),
                            missing.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
                        ),
                    ));
                }
            }
            None => out.push(finding("P3", Severity::Warn, "no label set supplied for NER template")),
        }
    }

    if template.positive_scenarios.len() < 2 && template.kind != TemplateKind::Hypernym {
        out.push(finding(
            "P4-P5",
            Severity::Warn,
            format!(
                "{} positive scenario(s); expand keyword synonyms and verb forms",
                template.positive_scenarios.len()
            ),
        ));
    }
    if template.positive_scenarios.is_empty() && template.kind == TemplateKind::Relation {
        out.push(finding("P4-P5", Severity::Error, "relation template has no positive scenario"));
    }

    if template.negative_scenarios.is_empty() {
        out.push(finding(
            "P6-P9",
            Severity::Error,
            "no negative scenarios; add error-entity, antonym, head-tail swap or confusing-term cases",
        ));
    }

    if template.kind == TemplateKind::Relation {
        for s in template.scenarios() {
            let names = placeholders_in(&s.text);
            let has_head = names.iter().any(|n| n == "head");
            let has_tail = names.iter().any(|n| n == "tail");
            if !(has_head && has_tail) {
                out.push(finding(
                    "P6-P9",
                    Severity::Warn,
                    format!("scenario {} does not mention both {{head}} and {{tail}}", s.id),
                ));
            }
        }
        let swapped = template.negative_scenarios.iter().any(|s| {
            let names = placeholders_in(&s.text);
            let head = names.iter().position(|n| n == "head");
            let tail = names.iter().position(|n| n == "tail");
            matches!((head, tail), (Some(h), Some(t)) if t < h)
        });
        if !swapped {
            out.push(finding(
                "P8",
                Severity::Warn,
                "no negative scenario with {tail} before {head} (head-tail exchange)",
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(id: &str, polarity: Polarity, text: &str, sym: &str) -> Scenario {
        Scenario {
            id: id.into(),
            polarity,
            text: text.into(),
            answer_symbol: Some(sym.into()),
            relation_binding: None,
            principle_tags: vec![],
        }
    }

    fn bare(placeholders: &[&str]) -> FivePartTemplate {
        FivePartTemplate {
            name: "t".into(),
            kind: TemplateKind::Relation,
            context: String::new(),
            requirement: "Answer only '1' or '0'.".into(),
            assumptions: vec![],
            scenario_header: None,
            positive_scenarios: vec![],
            negative_scenarios: vec![],
            output_format: "No other text.".into(),
            placeholders: placeholders.iter().map(|s| s.to_string()).collect(),
            audit: vec![],
        }
    }

    fn bind(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn render_without_scenarios_is_requirement_and_format() {
        let t = bare(&[]);
        assert_eq!(render(&t, &BTreeMap::new()).unwrap(), "Answer only '1' or '0'.\n\nNo other text.");
    }

    #[test]
    fn render_errors() {
        let mut t = bare(&["head"]);
        t.requirement = "Is {head} related to {tail}?".into();
        assert!(matches!(
            render(&t, &bind(&[("head", "a"), ("tail", "b")])),
            Err(PromptError::UndeclaredPlaceholder { .. })
        ));
        let t = bare(&["head"]);
        assert!(matches!(render(&t, &BTreeMap::new()), Err(PromptError::MissingBinding { .. })));
    }

    #[test]
    fn bound_values_are_not_rescanned() {
        let mut t = bare(&["input"]);
        t.context = "{input}".into();
        let out = render(&t, &bind(&[("input", "text with {head} braces")])).unwrap();
        assert!(out.starts_with("text with {head} braces"));
    }

    #[test]
    fn validate_rejects_shared_symbols_and_bindings_on_negatives() {
        let mut t = bare(&[]);
        t.positive_scenarios.push(scenario("P1", Polarity::Positive, "x", "$"));
        t.negative_scenarios.push(scenario("N1", Polarity::Negative, "y", "$"));
        assert!(t.validate().is_err());
        t.negative_scenarios[0].answer_symbol = Some("~".into());
        assert!(t.validate().is_ok());
        t.negative_scenarios[0].relation_binding = Some("induced".into());
        assert!(t.validate().is_err());
        t.negative_scenarios[0].relation_binding = None;
        t.negative_scenarios[0].answer_symbol = Some("a b".into());
        assert!(t.validate().is_err());
    }

    #[test]
    fn without_scenario() {
        let mut t = bare(&[]);
        t.positive_scenarios.push(scenario("P1", Polarity::Positive, "x", "$"));
        t.negative_scenarios.push(scenario("N1", Polarity::Negative, "y", "~"));
        let ablated = t.without_scenario("N1").unwrap();
        assert_eq!(ablated.scenario_count(), 1);
        assert!(matches!(t.without_scenario("N9"), Err(PromptError::UnknownScenario { .. })));
    }

    #[test]
    fn single_choice_parsing() {
        let a = AnswerSet::dollar_tilde();
        assert_eq!(parse_single_choice("$", &a), Choice::Positive("$".into()));
        assert_eq!(parse_single_choice("~", &a), Choice::Negative("~".into()));
        assert_eq!(
            parse_single_choice("The answer is: $ because…", &a),
            Choice::Positive("$".into())
        );
        assert_eq!(parse_single_choice("maybe", &a), Choice::Unparseable);
        assert_eq!(parse_single_choice("  '~'.\n", &a), Choice::Negative("~".into()));
        assert_eq!(parse_single_choice("~ then $", &a), Choice::Negative("~".into()));
        assert_eq!(parse_single_choice("", &a), Choice::Unparseable);
        assert_eq!(parse_single_choice("$~", &a), Choice::Unparseable);

        let h = AnswerSet::new(["1", "2"], ["~"]).unwrap();
        assert_eq!(parse_single_choice("Answer: 2", &h), Choice::Positive("2".into()));
        assert_eq!(parse_single_choice("(1)", &h), Choice::Positive("1".into()));
        assert_eq!(parse_single_choice("12", &h), Choice::Unparseable);
    }

    #[test]
    fn answer_set_validation() {
        assert!(AnswerSet::new(["$"], ["$"]).is_err());
        assert!(AnswerSet::new(Vec::<String>::new(), ["~"]).is_err());
    }

    #[test]
    fn lint_flags_word_answers_and_missing_negatives() {
        let mut t = bare(&["head", "tail"]);
        t.positive_scenarios.push(scenario("P1", Polarity::Positive, "{head} causes {tail}", "YES"));
        let findings = lint(&t, None, &[]);
        assert!(findings.iter().any(|f| f.rule == "P2" && f.severity == Severity::Error));
        assert!(findings.iter().any(|f| f.rule == "P6-P9" && f.severity == Severity::Error));
        assert!(findings.iter().any(|f| f.rule == "P4-P5" && f.severity == Severity::Warn));
    }

    #[test]
    fn lint_head_tail_swap() {
        let mut t = bare(&["head", "tail"]);
        t.positive_scenarios.push(scenario("P1", Polarity::Positive, "{head} causes {tail}", "$"));
        t.positive_scenarios.push(scenario("P2", Polarity::Positive, "{tail} caused by {head}", "$"));
        t.negative_scenarios.push(scenario("N1", Polarity::Negative, "{head} and {tail} unrelated", "~"));
        assert!(lint(&t, None, &[]).iter().any(|f| f.rule == "P8"));
        t.negative_scenarios.push(scenario("N2", Polarity::Negative, "{tail} causes {head}", "~"));
        let findings = lint(&t, None, &[]);
        assert!(findings.is_empty(), "{findings:?}");
    }

    #[test]
    fn lint_label_coverage() {
        let mut t = bare(&["input", "labels"]);
        t.kind = TemplateKind::Ner;
        t.negative_scenarios.push(Scenario {
            answer_symbol: None,
            ..scenario("N1", Polarity::Negative, "skip generic words", "~")
        });
        let universe: Vec<String> = ["disease", "chemical", "treat", "physiology", "immune", "gene"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let narrow = LabelSet::new(vec!["Disease".into(), "Chemical".into()], vec![]).unwrap();
        let findings = lint(&t, Some(&narrow), &universe);
        assert!(findings.iter().any(|f| f.rule == "P3" && f.severity == Severity::Warn));
        let wide = LabelSet::new(universe.clone(), vec![]).unwrap();
        assert!(!lint(&t, Some(&wide), &universe).iter().any(|f| f.rule == "P3"));
    }

    #[test]
    fn lint_is_pure() {
        let t = bare(&[]);
        assert_eq!(lint(&t, None, &[]), lint(&t, None, &[]));
    }
}

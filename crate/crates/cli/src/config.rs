//! TOML run configuration. Relative paths resolve against the config
//! file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use relex_core::assets;
use relex_core::docmodel::LabelSet;
use relex_core::eval::{GroundingPolicy, MatchMode};
use relex_core::llmgateway::{Gateway, HttpFlavor, HttpProvider, Provider, ResponseCache, RetryPolicy, ScriptedProvider};
use relex_core::pipeline::PipelineConfig;
use relex_core::prompt::{AnswerSet, UnparseablePolicy};
use relex_core::stage2::{load_registry, OneStageSchema};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Openai,
    Ollama,
    Scripted,
}

fn default_model() -> String {
    "llama3.1:70b".into()
}
fn default_in_flight() -> usize {
    4
}
fn default_backoff() -> Vec<f64> {
    vec![1.0, 4.0, 16.0]
}
fn default_timeout() -> f64 {
    120.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    /// Seconds to wait before each retry.
    #[serde(default = "default_backoff")]
    pub backoff_secs: Vec<f64>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    /// Reply script for `kind = "scripted"`.
    #[serde(default)]
    pub script: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelsConfig {
    pub all: Vec<String>,
    #[serde(default)]
    pub target: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Canonical,
    Pubtator,
    Chemdisgene,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub format: DatasetFormat,
    /// Canonical: directory written by `ingest`. Otherwise the corpus file.
    pub path: PathBuf,
    /// ChemDisGene relation table.
    #[serde(default)]
    pub relations: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplatesConfig {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub ner: Option<String>,
    #[serde(default)]
    pub synonym: Option<String>,
    #[serde(default)]
    pub hypernym: Option<String>,
    #[serde(default)]
    pub one_stage: Option<String>,
    /// Extra placeholder values shared by every template.
    #[serde(default)]
    pub bindings: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswersConfig {
    pub positive: Vec<String>,
    pub negative: Vec<String>,
    #[serde(default)]
    pub unparseable: UnparseablePolicy,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_match_modes")]
    pub ner_match_modes: Vec<MatchMode>,
    #[serde(default)]
    pub grounding: GroundingPolicy,
}

fn default_match_modes() -> Vec<MatchMode> {
    vec![MatchMode::ExactSpan, MatchMode::TextRelaxed]
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ner_match_modes: default_match_modes(),
            grounding: GroundingPolicy::default(),
        }
    }
}

fn default_registry() -> String {
    "cdr".into()
}
fn default_cache_dir() -> PathBuf {
    PathBuf::from(".relex-cache")
}
fn default_repeats() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub provider: ProviderConfig,
    pub labels: LabelsConfig,
    #[serde(default)]
    pub dataset: Option<DatasetConfig>,
    #[serde(default)]
    pub templates: TemplatesConfig,
    /// `cdr`, `chemdisgene`, or a registry JSON file.
    #[serde(default = "default_registry")]
    pub registry: String,
    #[serde(default)]
    pub answers: Option<AnswersConfig>,
    #[serde(default = "default_cache_dir")]
    pub cache_dir: PathBuf,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn must_exist(p: &Path, what: &str) -> Result<()> {
    if !p.exists() {
        bail!("{what} {} does not exist", p.display());
    }
    Ok(())
}

impl RunConfig {
    pub fn parse(raw: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(raw).context("invalid configuration")?;
        if let Some(s) = cfg.provider.script.as_mut() {
            resolve(base, s);
        }
        if let Some(d) = cfg.dataset.as_mut() {
            resolve(base, &mut d.path);
            if let Some(r) = d.relations.as_mut() {
                resolve(base, r);
            }
        }
        if let Some(dir) = cfg.templates.dir.as_mut() {
            resolve(base, dir);
        }
        if !matches!(cfg.registry.as_str(), "cdr" | "chemdisgene") {
            let mut p = PathBuf::from(&cfg.registry);
            resolve(base, &mut p);
            cfg.registry = p.to_string_lossy().into_owned();
        }
        resolve(base, &mut cfg.cache_dir);
        if let Ok(endpoint) = std::env::var("RELEX_ENDPOINT") {
            cfg.provider.endpoint = Some(endpoint);
        }
        if let Ok(model) = std::env::var("RELEX_MODEL") {
            cfg.provider.model = model;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&raw, base).with_context(|| format!("in {}", path.display()))
    }

    fn validate(&self) -> Result<()> {
        let p = &self.provider;
        if !p.temperature.is_finite() || p.temperature < 0.0 {
            bail!("provider.temperature must be >= 0");
        }
        if p.max_in_flight == 0 {
            bail!("provider.max_in_flight must be at least 1");
        }
        if p.backoff_secs.iter().any(|s| !s.is_finite() || *s < 0.0) {
            bail!("provider.backoff_secs must be non-negative");
        }
        match p.kind {
            ProviderKind::Scripted => {
                let script = p.script.as_ref().context("provider.script is required for kind = \"scripted\"")?;
                must_exist(script, "script")?;
            }
            ProviderKind::Openai | ProviderKind::Ollama => {
                if p.endpoint.is_none() {
                    bail!("provider.endpoint is required (or set RELEX_ENDPOINT)");
                }
            }
        }
        if self.repeats == 0 {
            bail!("repeats must be at least 1");
        }
        self.label_set()?;
        if let Some(d) = &self.dataset {
            must_exist(&d.path, "dataset")?;
            if let Some(r) = &d.relations {
                must_exist(r, "relation table")?;
            }
        }
        if let Some(dir) = &self.templates.dir {
            must_exist(dir, "template directory")?;
        }
        if let Some(a) = &self.answers {
            AnswerSet::new(a.positive.clone(), a.negative.clone()).map_err(anyhow::Error::msg)?;
        }
        Ok(())
    }

    /// An omitted target list means every label is a target.
    pub fn label_set(&self) -> Result<LabelSet> {
        if self.labels.all.is_empty() {
            bail!("labels.all must not be empty");
        }
        let target = if self.labels.target.is_empty() { &self.labels.all } else { &self.labels.target };
        LabelSet::new(self.labels.all.clone(), target.clone()).map_err(anyhow::Error::msg)
    }

    pub fn registry_json(&self) -> Result<String> {
        Ok(match self.registry.as_str() {
            "cdr" => assets::REGISTRY_CDR.to_string(),
            "chemdisgene" => assets::REGISTRY_CHEMDISGENE.to_string(),
            path => std::fs::read_to_string(path).with_context(|| format!("reading registry {path}"))?,
        })
    }

    pub fn pipeline(&self) -> Result<PipelineConfig> {
        let labels = self.label_set()?;
        let templates = assets::load_templates(self.templates.dir.as_deref())?;
        let registry = load_registry(&self.registry_json()?, Some(&labels))?;
        let t = &self.templates;
        let cfg = PipelineConfig {
            labels,
            ner_template: t.ner.clone().unwrap_or_else(|| assets::NER_TEMPLATE.into()),
            synonym_template: t.synonym.clone().unwrap_or_else(|| assets::SYNONYM_TEMPLATE.into()),
            hypernym_template: t.hypernym.clone().unwrap_or_else(|| assets::HYPERNYM_TEMPLATE.into()),
            one_stage_template: t.one_stage.clone().unwrap_or_else(|| assets::ONE_STAGE_TEMPLATE.into()),
            registry,
            answers: self
                .answers
                .as_ref()
                .map(|a| {
                    AnswerSet::new(a.positive.clone(), a.negative.clone()).map(|s| s.with_policy(a.unparseable))
                })
                .transpose()
                .map_err(anyhow::Error::msg)?,
            bindings: t.bindings.clone(),
            one_stage: OneStageSchema::default(),
            grounding: self.eval.grounding,
            ner_match_modes: self.eval.ner_match_modes.clone(),
            templates,
        };
        for name in [&cfg.ner_template, &cfg.synonym_template, &cfg.hypernym_template, &cfg.one_stage_template]
            .into_iter()
            .chain(cfg.registry.iter().map(|s| &s.template_name))
        {
            if !cfg.templates.contains_key(name) {
                bail!("template {name:?} is neither shipped nor in the template directory");
            }
        }
        Ok(cfg)
    }

    pub fn provider_id(&self) -> String {
        match self.provider.kind {
            ProviderKind::Scripted => "scripted".into(),
            ProviderKind::Openai => format!("openai:{}", self.provider.endpoint.as_deref().unwrap_or("")),
            ProviderKind::Ollama => format!("ollama:{}", self.provider.endpoint.as_deref().unwrap_or("")),
        }
    }

    pub fn gateway(&self, max_in_flight: Option<usize>, cache_dir: Option<&Path>) -> Result<Gateway> {
        let p = &self.provider;
        let provider: Arc<dyn Provider> = match p.kind {
            ProviderKind::Scripted => {
                let path = p.script.as_ref().expect("validated");
                let raw = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                Arc::new(ScriptedProvider::from_json(&raw).map_err(anyhow::Error::msg)?)
            }
            ProviderKind::Openai | ProviderKind::Ollama => {
                let flavor = if p.kind == ProviderKind::Openai { HttpFlavor::OpenAi } else { HttpFlavor::Ollama };
                let key = std::env::var("RELEX_API_KEY").ok();
                Arc::new(HttpProvider::new(
                    flavor,
                    p.endpoint.as_deref().expect("validated"),
                    key,
                    Duration::from_secs_f64(p.timeout_secs),
                )?)
            }
        };
        let cache = ResponseCache::open(cache_dir.unwrap_or(&self.cache_dir))?;
        Ok(Gateway::new(provider, p.model.clone())
            .with_cache(cache)
            .with_retry(RetryPolicy {
                backoff: p.backoff_secs.iter().map(|s| Duration::from_secs_f64(*s)).collect(),
            })
            .with_max_in_flight(max_in_flight.unwrap_or(p.max_in_flight))
            .with_temperature(p.temperature))
    }
}

//! Templates and relation registries shipped with the crate.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::prompt::{FivePartTemplate, PromptError};

const TEMPLATES: &[(&str, &str)] = &[
    ("hypernym", include_str!("../assets/templates/hypernym.json")),
    ("ner", include_str!("../assets/templates/ner.json")),
    ("one_stage_cdr", include_str!("../assets/templates/one_stage_cdr.json")),
    ("re_cdg_chem_disease_marker_mechanism", include_str!("../assets/templates/re_cdg_chem_disease_marker_mechanism.json")),
    ("re_cdg_chem_disease_therapeutic", include_str!("../assets/templates/re_cdg_chem_disease_therapeutic.json")),
    ("re_cdg_chem_gene_affects_binding", include_str!("../assets/templates/re_cdg_chem_gene_affects_binding.json")),
    ("re_cdg_chem_gene_affects_expression", include_str!("../assets/templates/re_cdg_chem_gene_affects_expression.json")),
    ("re_cdg_chem_gene_affects_localization", include_str!("../assets/templates/re_cdg_chem_gene_affects_localization.json")),
    ("re_cdg_chem_gene_decreases_activity", include_str!("../assets/templates/re_cdg_chem_gene_decreases_activity.json")),
    ("re_cdg_chem_gene_decreases_expression", include_str!("../assets/templates/re_cdg_chem_gene_decreases_expression.json")),
    ("re_cdg_chem_gene_decreases_metabolic_processing", include_str!("../assets/templates/re_cdg_chem_gene_decreases_metabolic_processing.json")),
    ("re_cdg_chem_gene_increases_activity", include_str!("../assets/templates/re_cdg_chem_gene_increases_activity.json")),
    ("re_cdg_chem_gene_increases_expression", include_str!("../assets/templates/re_cdg_chem_gene_increases_expression.json")),
    ("re_cdg_chem_gene_increases_metabolic_processing", include_str!("../assets/templates/re_cdg_chem_gene_increases_metabolic_processing.json")),
    ("re_cdg_chem_gene_increases_transport", include_str!("../assets/templates/re_cdg_chem_gene_increases_transport.json")),
    ("re_cdg_gene_disease_marker_mechanism", include_str!("../assets/templates/re_cdg_gene_disease_marker_mechanism.json")),
    ("re_cdg_gene_disease_therapeutic", include_str!("../assets/templates/re_cdg_gene_disease_therapeutic.json")),
    ("re_cdr_induced", include_str!("../assets/templates/re_cdr_induced.json")),
    ("synonym", include_str!("../assets/templates/synonym.json")),
];

pub const REGISTRY_CDR: &str = include_str!("../assets/registry_cdr.json");
pub const REGISTRY_CHEMDISGENE: &str = include_str!("../assets/registry_chemdisgene.json");

pub const NER_TEMPLATE: &str = "ner";
pub const SYNONYM_TEMPLATE: &str = "synonym";
pub const HYPERNYM_TEMPLATE: &str = "hypernym";
pub const ONE_STAGE_TEMPLATE: &str = "one_stage_cdr";
pub const CDR_RE_TEMPLATE: &str = "re_cdr_induced";

/// Raw JSON of a shipped template.
pub fn builtin_template_json(name: &str) -> Option<&'static str> {
    TEMPLATES.iter().find(|(n, _)| *n == name).map(|(_, raw)| *raw)
}

pub fn builtin_template(name: &str) -> Option<FivePartTemplate> {
    builtin_template_json(name).map(|raw| FivePartTemplate::from_json(raw).expect("shipped template is valid"))
}

pub fn builtin_templates() -> BTreeMap<String, FivePartTemplate> {
    TEMPLATES
        .iter()
        .map(|(n, raw)| (n.to_string(), FivePartTemplate::from_json(raw).expect("shipped template is valid")))
        .collect()
}

/// Shipped templates overlaid with every `*.json` template in `dir`
/// (keyed by the template's own name).
pub fn load_templates(dir: Option<&Path>) -> Result<BTreeMap<String, FivePartTemplate>, PromptError> {
    let mut out = builtin_templates();
    let Some(dir) = dir else { return Ok(out) };
    let entries = fs::read_dir(dir).map_err(|e| PromptError::Parse(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    for path in paths {
        let raw = fs::read_to_string(&path).map_err(|e| PromptError::Parse(format!("{}: {e}", path.display())))?;
        let template = FivePartTemplate::from_json(&raw)?;
        out.insert(template.name.clone(), template);
    }
    Ok(out)
}

#![allow(dead_code)]

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::sync::Arc;

use relex_core::docmodel::{import_pubtator, ImportedDocument, LabelSet};
use relex_core::llmgateway::{Gateway, Matcher, NoMatchPolicy, RetryPolicy, ScriptedProvider};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn fig2() -> ImportedDocument {
    let file = File::open(fixture("cdr_3535719.pubtator")).unwrap();
    let mut docs = import_pubtator(BufReader::new(file)).unwrap();
    assert_eq!(docs.len(), 1);
    docs.remove(0)
}

pub fn fig2_script() -> Arc<ScriptedProvider> {
    let raw = std::fs::read_to_string(fixture("script_3535719.json")).unwrap();
    Arc::new(ScriptedProvider::from_json(&raw).unwrap())
}

pub fn cdr_labels() -> LabelSet {
    LabelSet::new(vec!["Chemical".into(), "Disease".into()], vec!["Chemical".into(), "Disease".into()]).unwrap()
}

pub fn gateway(provider: Arc<ScriptedProvider>) -> Gateway {
    Gateway::new(provider, "test-model").with_retry(RetryPolicy::none())
}

/// Scripted provider from `(substring, reply)` rules with a default reply.
pub fn scripted(rules: &[(&str, &str)], default: &str) -> Arc<ScriptedProvider> {
    Arc::new(ScriptedProvider::new(
        rules
            .iter()
            .map(|(m, r)| (Matcher::Contains(m.to_string()), r.to_string()))
            .collect(),
        NoMatchPolicy::Default(default.to_string()),
    ))
}

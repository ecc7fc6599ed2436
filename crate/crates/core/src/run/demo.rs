use crate::bundle::{parse_bundle, InputBundle};
use crate::invoke::ModelConfig;

const DEMO_BUNDLE: &str = include_str!("../../demo/bundle.json");
const DEMO_CONFIG: &str = include_str!("../../demo/config.json");

/// Stub replies written into `fixtures/` by `init`.
pub const DEMO_FIXTURES: [(&str, &str); 5] = [
    ("taxonomy_ok", include_str!("../../demo/fixtures/taxonomy_ok.txt")),
    ("taxonomy_unknown_id", include_str!("../../demo/fixtures/taxonomy_unknown_id.txt")),
    ("synthesis_ok", include_str!("../../demo/fixtures/synthesis_ok.txt")),
    ("synthesis_invented", include_str!("../../demo/fixtures/synthesis_invented.txt")),
    ("synthesis_no_checklist", include_str!("../../demo/fixtures/synthesis_no_checklist.txt")),
];

pub fn demo_bundle() -> InputBundle {
    parse_bundle(DEMO_BUNDLE.as_bytes()).expect("demo bundle is valid")
}

pub fn demo_config() -> ModelConfig {
    ModelConfig::from_json(DEMO_CONFIG.as_bytes()).expect("demo config is valid")
}

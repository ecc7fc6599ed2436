use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::InputBundle;
use crate::invoke::{Interface, ModelConfig};
use crate::provenance::{bundle_digest, Digest, RunId};

pub const SECTION_RUN_ID: &str = "Run ID";
pub const SECTION_TOPIC: &str = "Research Topic";
pub const SECTION_MODEL: &str = "Model Configuration";
pub const SECTION_ARTIFACTS: &str = "Artifacts Released";
pub const SECTION_INTENDED_USE: &str = "Intended Use";
pub const SECTION_OVERSIGHT: &str = "Human Oversight";
pub const SECTION_DISCLOSURE: &str = "Disclosure";
pub const SECTION_LIMITATIONS: &str = "Limitations";
pub const SECTION_REPRODUCIBILITY: &str = "Reproducibility Note";

pub const SECTIONS: [&str; 9] = [
    SECTION_RUN_ID,
    SECTION_TOPIC,
    SECTION_MODEL,
    SECTION_ARTIFACTS,
    SECTION_INTENDED_USE,
    SECTION_OVERSIGHT,
    SECTION_DISCLOSURE,
    SECTION_LIMITATIONS,
    SECTION_REPRODUCIBILITY,
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CardError {
    #[error("card section {0:?} is empty")]
    MissingSection(&'static str),
}

/// The parts of a card that only a person can write.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CardNarrative {
    pub intended_use: String,
    pub human_oversight: String,
    pub disclosure: String,
    pub limitations: String,
    pub reproducibility_note: String,
}

impl Default for CardNarrative {
    /// Starting text for `init`; meant to be edited before release.
    fn default() -> Self {
        CardNarrative {
            intended_use: "Drafting aid for a related-work section. The output is a starting \
                           point for the authors and is not a finished text."
                .into(),
            human_oversight: "The authors wrote the notes, reviewed every claim in the audit \
                              table and rewrote the draft before use."
                .into(),
            disclosure: "A generative language model produced the taxonomy and the first \
                         draft from author-written notes. This is stated in the manuscript."
                .into(),
            limitations: "The model may misread or overstate a source. Claims flagged for \
                          human checking were resolved by the authors; others were spot-checked."
                .into(),
            reproducibility_note: "Templates, notes, configuration and redacted logs are \
                                   released with this crate. Regenerating the text with the same \
                                   inputs may give different wording."
                .into(),
        }
    }
}

impl CardNarrative {
    pub fn from_json(raw: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(raw)
    }

    pub fn to_pretty_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("narrative is always encodable");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<(), CardError> {
        match self.first_empty() {
            Some(section) => Err(CardError::MissingSection(section)),
            None => Ok(()),
        }
    }

    fn first_empty(&self) -> Option<&'static str> {
        [
            (SECTION_INTENDED_USE, &self.intended_use),
            (SECTION_OVERSIGHT, &self.human_oversight),
            (SECTION_DISCLOSURE, &self.disclosure),
            (SECTION_LIMITATIONS, &self.limitations),
            (SECTION_REPRODUCIBILITY, &self.reproducibility_note),
        ]
        .into_iter()
        .find(|(_, text)| text.trim().is_empty())
        .map(|(name, _)| name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub interface: Interface,
    pub model_name: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub bundle_sha256: Digest,
}

impl ModelSummary {
    pub fn new(config: &ModelConfig, bundle_sha256: Digest) -> Self {
        ModelSummary {
            interface: config.interface,
            model_name: config.model_name.clone(),
            temperature: config.temperature,
            top_p: config.top_p,
            max_tokens: config.max_tokens,
            bundle_sha256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectionCard {
    pub run_id: RunId,
    pub research_topic: String,
    pub model_configuration: ModelSummary,
    pub artifacts_released: Vec<String>,
    pub intended_use: String,
    pub human_oversight: String,
    pub disclosure: String,
    pub limitations: String,
    pub reproducibility_note: String,
}

/// Artifact labels for a run that completed both model stages and the audit.
pub fn standard_artifacts() -> Vec<String> {
    [
        "Privatized interaction logs (taxonomy + synthesis)",
        "Taxonomy (JSON)",
        "Draft related-work section (Markdown)",
        "Audit table (CSV)",
        "Prompt templates",
        "Input note bundle (JSON)",
    ]
    .into_iter()
    .map(String::from)
    .collect()
}

pub fn build_card(
    run_id: &RunId,
    bundle: &InputBundle,
    config: &ModelConfig,
    narrative: &CardNarrative,
    artifacts: Vec<String>,
) -> Result<InspectionCard, CardError> {
    narrative.validate()?;
    if bundle.title.trim().is_empty() {
        return Err(CardError::MissingSection(SECTION_TOPIC));
    }
    if artifacts.iter().all(|a| a.trim().is_empty()) {
        return Err(CardError::MissingSection(SECTION_ARTIFACTS));
    }
    Ok(InspectionCard {
        run_id: run_id.clone(),
        research_topic: bundle.title.clone(),
        model_configuration: ModelSummary::new(config, bundle_digest(bundle)),
        artifacts_released: artifacts,
        intended_use: narrative.intended_use.clone(),
        human_oversight: narrative.human_oversight.clone(),
        disclosure: narrative.disclosure.clone(),
        limitations: narrative.limitations.clone(),
        reproducibility_note: narrative.reproducibility_note.clone(),
    })
}

fn fmt_number(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{x:.1}")
    } else {
        format!("{x}")
    }
}

impl InspectionCard {
    pub fn to_pretty_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("card is always encodable");
        s.push('\n');
        s
    }

    pub fn from_json(raw: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(raw)
    }

    /// Section names paired with their rendered bodies, in card order.
    pub fn sections(&self) -> Vec<(&'static str, String)> {
        let m = &self.model_configuration;
        let model = format!(
            "- Interface: {}\n- Model: {}\n- Temperature: {}\n- Top-p: {}\n- Max tokens: {}\n- Input bundle SHA-256: {}",
            m.interface.display_name(),
            m.model_name,
            fmt_number(m.temperature),
            fmt_number(m.top_p),
            m.max_tokens,
            m.bundle_sha256,
        );
        let artifacts = self
            .artifacts_released
            .iter()
            .map(|a| format!("- {a}"))
            .collect::<Vec<_>>()
            .join("\n");
        vec![
            (SECTION_RUN_ID, self.run_id.to_string()),
            (SECTION_TOPIC, self.research_topic.clone()),
            (SECTION_MODEL, model),
            (SECTION_ARTIFACTS, artifacts),
            (SECTION_INTENDED_USE, self.intended_use.clone()),
            (SECTION_OVERSIGHT, self.human_oversight.clone()),
            (SECTION_DISCLOSURE, self.disclosure.clone()),
            (SECTION_LIMITATIONS, self.limitations.clone()),
            (SECTION_REPRODUCIBILITY, self.reproducibility_note.clone()),
        ]
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("# AI Research Object Inspection Card\n");
        for (name, body) in self.sections() {
            let _ = write!(out, "\n## {name}\n\n{}\n", body.trim_end());
        }
        out
    }
}

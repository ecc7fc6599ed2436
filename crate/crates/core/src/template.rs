//! Prompt templates for the taxonomy and synthesis stages.
//!
//! A template file is UTF-8 text with a short front-matter header:
//!
//! ```text
//! ---
//! stage: synthesis
//! ---
//! ...body with {{TITLE}} and {{TARGET_WORDS}}...
//! Hard constraints (must follow):
//! - ...
//! ```
//!
//! Placeholders are uppercase double-brace tokens. Lowercase tokens such as
//! `{{citation}}` are literal text addressed to the model.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::{InputBundle, Taxonomy};

pub const DEFAULT_TAXONOMY_TEMPLATE: &str = include_str!("../templates/taxonomy.txt");
pub const DEFAULT_SYNTHESIS_TEMPLATE: &str = include_str!("../templates/synthesis.txt");

pub const DEFAULT_CONSTRAINTS_HEADING: &str = "Hard constraints (must follow):";
pub const DEFAULT_OUTPUT_HEADING: &str = "Output format:";

pub const PH_TITLE: &str = "TITLE";
pub const PH_TARGET_WORDS: &str = "TARGET_WORDS";
pub const PH_CONTRIBUTION: &str = "CONTRIBUTION";
pub const PH_TAXONOMY: &str = "TAXONOMY";
pub const PH_NOTES: &str = "NOTES";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Taxonomy,
    Synthesis,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Taxonomy => "taxonomy",
            Stage::Synthesis => "synthesis",
        }
    }

    /// Placeholders a template for this stage must contain.
    pub fn required_placeholders(self) -> &'static [&'static str] {
        match self {
            Stage::Taxonomy => &[PH_NOTES],
            Stage::Synthesis => &[PH_TITLE, PH_TARGET_WORDS, PH_CONTRIBUTION, PH_TAXONOMY, PH_NOTES],
        }
    }

    /// Placeholders the renderer can bind for this stage.
    pub fn known_placeholders(self) -> &'static [&'static str] {
        match self {
            Stage::Taxonomy => &[PH_TITLE, PH_CONTRIBUTION, PH_NOTES],
            Stage::Synthesis => &[PH_TITLE, PH_TARGET_WORDS, PH_CONTRIBUTION, PH_TAXONOMY, PH_NOTES],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "taxonomy" => Ok(Stage::Taxonomy),
            "synthesis" => Ok(Stage::Synthesis),
            other => Err(format!("unknown stage {other:?}")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template header: {0}")]
    Header(String),
    #[error("template invalid: {0}")]
    TemplateInvalid(String),
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{\{([A-Z][A-Z0-9_]*)\}\}").unwrap())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub stage: Stage,
    pub body: String,
    /// The hard-constraints paragraph, heading included. Empty when absent.
    pub constraint_block: String,
    pub output_spec: String,
}

impl PromptTemplate {
    /// Build a template from a body, locating its constraint and output
    /// sections by their headings.
    pub fn new(stage: Stage, body: impl Into<String>) -> Self {
        Self::with_headings(stage, body, DEFAULT_CONSTRAINTS_HEADING, DEFAULT_OUTPUT_HEADING)
    }

    pub fn with_headings(
        stage: Stage,
        body: impl Into<String>,
        constraints_heading: &str,
        output_heading: &str,
    ) -> Self {
        let body = body.into();
        let constraint_block = section(&body, constraints_heading).unwrap_or_default().to_owned();
        let output_spec = section(&body, output_heading).unwrap_or_default().to_owned();
        PromptTemplate {
            stage,
            body,
            constraint_block,
            output_spec,
        }
    }

    pub fn parse(text: &str) -> Result<Self, TemplateError> {
        let text = text.strip_prefix('\u{feff}').unwrap_or(text);
        let rest = text
            .strip_prefix("---\n")
            .ok_or_else(|| TemplateError::Header("missing front matter".into()))?;
        let end = rest
            .find("\n---\n")
            .ok_or_else(|| TemplateError::Header("unterminated front matter".into()))?;
        let (header, body) = (&rest[..end], &rest[end + 5..]);

        let mut fields = BTreeMap::new();
        for line in header.lines().filter(|l| !l.trim().is_empty()) {
            let (key, value) = line
                .split_once(':')
                .ok_or_else(|| TemplateError::Header(format!("bad header line {line:?}")))?;
            fields.insert(key.trim().to_owned(), value.trim().to_owned());
        }
        let stage: Stage = fields
            .get("stage")
            .ok_or_else(|| TemplateError::Header("missing `stage`".into()))?
            .parse()
            .map_err(TemplateError::Header)?;
        let constraints = fields
            .get("constraints_heading")
            .map(String::as_str)
            .unwrap_or(DEFAULT_CONSTRAINTS_HEADING);
        let output = fields
            .get("output_heading")
            .map(String::as_str)
            .unwrap_or(DEFAULT_OUTPUT_HEADING);
        Ok(Self::with_headings(stage, body, constraints, output))
    }

    pub fn default_for(stage: Stage) -> Self {
        let text = match stage {
            Stage::Taxonomy => DEFAULT_TAXONOMY_TEMPLATE,
            Stage::Synthesis => DEFAULT_SYNTHESIS_TEMPLATE,
        };
        Self::parse(text).expect("shipped template parses")
    }

    pub fn placeholders(&self) -> Vec<String> {
        placeholder_re()
            .captures_iter(&self.body)
            .map(|c| c[1].to_owned())
            .collect()
    }
}

/// The paragraph starting at a line equal to `heading`, up to the next blank line.
fn section<'a>(body: &'a str, heading: &str) -> Option<&'a str> {
    let mut offset = 0;
    let mut start = None;
    for line in body.split_inclusive('\n') {
        let trimmed = line.trim();
        match start {
            None if trimmed == heading.trim() => start = Some(offset),
            Some(s) if trimmed.is_empty() => return Some(body[s..offset].trim_end()),
            _ => {}
        }
        offset += line.len();
    }
    start.map(|s| body[s..].trim_end())
}

/// Whether a block spanning `span` (byte range) touches the first or last
/// quarter of `text`, measured in characters.
pub fn placement_ok(text: &str, span: Range<usize>) -> bool {
    let total = text.chars().count();
    if total == 0 {
        return false;
    }
    let start = text[..span.start].chars().count();
    let end = text[..span.end].chars().count();
    start * 4 <= total || end * 4 >= total * 3
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TemplateCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TemplateReport {
    pub stage: Stage,
    pub checks: Vec<TemplateCheck>,
}

impl TemplateReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &TemplateCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for TemplateReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let mark = if c.passed { "pass" } else { "FAIL" };
            writeln!(f, "[{mark}] {} ({}): {}", c.name, self.stage, c.detail)?;
        }
        Ok(())
    }
}

pub fn validate_template(t: &PromptTemplate) -> TemplateReport {
    let present = t.placeholders();
    let mut checks = Vec::new();

    let missing: Vec<&str> = t
        .stage
        .required_placeholders()
        .iter()
        .copied()
        .filter(|p| !present.iter().any(|q| q == p))
        .collect();
    checks.push(TemplateCheck {
        name: "missing placeholder",
        passed: missing.is_empty(),
        detail: if missing.is_empty() {
            "all required placeholders present".into()
        } else {
            format!("missing {}", missing.join(", "))
        },
    });

    let unknown: Vec<&String> = present
        .iter()
        .filter(|p| !t.stage.known_placeholders().contains(&p.as_str()))
        .collect();
    checks.push(TemplateCheck {
        name: "unknown placeholder",
        passed: unknown.is_empty(),
        detail: if unknown.is_empty() {
            "no unbindable placeholders".into()
        } else {
            format!(
                "cannot bind {}",
                unknown.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
            )
        },
    });

    let has_constraints = !t.constraint_block.trim().is_empty();
    checks.push(TemplateCheck {
        name: "constraint block",
        passed: has_constraints,
        detail: if has_constraints {
            "present".into()
        } else {
            "no hard-constraints section found".into()
        },
    });

    let placed = has_constraints
        && t.body
            .find(&t.constraint_block)
            .is_some_and(|s| placement_ok(&t.body, s..s + t.constraint_block.len()));
    checks.push(TemplateCheck {
        name: "constraint placement",
        passed: placed,
        detail: if placed {
            "constraints sit at the beginning or end".into()
        } else {
            "constraints must start in the first quarter or end in the last quarter".into()
        },
    });

    let has_output = !t.output_spec.trim().is_empty();
    checks.push(TemplateCheck {
        name: "output spec",
        passed: has_output,
        detail: if has_output {
            "present".into()
        } else {
            "no output-format section found".into()
        },
    });

    TemplateReport {
        stage: t.stage,
        checks,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Origin {
    Template,
    Data(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub origin: Origin,
    pub range: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub stage: Stage,
    pub text: String,
    pub placeholder_bindings: BTreeMap<String, String>,
    /// Byte spans of `text`, tagged by whether they came from the template or
    /// from bundle data.
    pub segments: Vec<Segment>,
}

impl RenderedPrompt {
    /// Placeholder tokens left in template-origin text. Data may legitimately
    /// contain placeholder-shaped strings.
    pub fn unsubstituted_placeholders(&self) -> Vec<String> {
        self.segments
            .iter()
            .filter(|s| s.origin == Origin::Template)
            .flat_map(|s| {
                placeholder_re()
                    .captures_iter(&self.text[s.range.clone()])
                    .map(|c| c[1].to_owned())
                    .collect::<Vec<_>>()
            })
            .collect()
    }
}

pub fn render_taxonomy_prompt(
    template: &PromptTemplate,
    bundle: &InputBundle,
) -> Result<RenderedPrompt, TemplateError> {
    if template.stage != Stage::Taxonomy {
        return Err(TemplateError::TemplateInvalid(format!(
            "expected a taxonomy template, got {}",
            template.stage
        )));
    }
    let mut bindings = BTreeMap::new();
    bindings.insert(PH_TITLE.to_owned(), bundle.title.clone());
    bindings.insert(PH_CONTRIBUTION.to_owned(), bundle.contribution.clone());
    bindings.insert(PH_NOTES.to_owned(), format_notes_brief(bundle));
    render(template, bindings)
}

pub fn render_synthesis_prompt(
    template: &PromptTemplate,
    bundle: &InputBundle,
    taxonomy: &Taxonomy,
) -> Result<RenderedPrompt, TemplateError> {
    if template.stage != Stage::Synthesis {
        return Err(TemplateError::TemplateInvalid(format!(
            "expected a synthesis template, got {}",
            template.stage
        )));
    }
    taxonomy
        .validate_against(bundle)
        .map_err(|e| TemplateError::TemplateInvalid(format!("taxonomy does not match bundle: {e}")))?;
    let mut bindings = BTreeMap::new();
    bindings.insert(PH_TITLE.to_owned(), bundle.title.clone());
    bindings.insert(PH_TARGET_WORDS.to_owned(), bundle.target_words.to_string());
    bindings.insert(PH_CONTRIBUTION.to_owned(), bundle.contribution.clone());
    bindings.insert(PH_TAXONOMY.to_owned(), format_taxonomy(taxonomy));
    bindings.insert(PH_NOTES.to_owned(), format_notes_full(bundle));
    render(template, bindings)
}

fn render(
    template: &PromptTemplate,
    mut bindings: BTreeMap<String, String>,
) -> Result<RenderedPrompt, TemplateError> {
    let report = validate_template(template);
    if !report.passed() {
        let reasons: Vec<String> = report
            .failures()
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect();
        return Err(TemplateError::TemplateInvalid(reasons.join("; ")));
    }

    let body = &template.body;
    let mut text = String::with_capacity(body.len() * 2);
    let mut segments = Vec::new();
    let mut cursor = 0;
    let mut push = |text: &mut String, origin: Origin, piece: &str| {
        if piece.is_empty() {
            return;
        }
        let start = text.len();
        text.push_str(piece);
        segments.push(Segment {
            origin,
            range: start..text.len(),
        });
    };
    for caps in placeholder_re().captures_iter(body) {
        let whole = caps.get(0).unwrap();
        let name = &caps[1];
        push(&mut text, Origin::Template, &body[cursor..whole.start()]);
        let value = bindings.get(name).ok_or_else(|| {
            TemplateError::TemplateInvalid(format!("no value for placeholder {name}"))
        })?;
        push(&mut text, Origin::Data(name.to_owned()), value);
        cursor = whole.end();
    }
    push(&mut text, Origin::Template, &body[cursor..]);

    let used = template.placeholders();
    bindings.retain(|k, _| used.contains(k));

    let placed = text
        .find(&template.constraint_block)
        .is_some_and(|s| placement_ok(&text, s..s + template.constraint_block.len()));
    if !placed {
        return Err(TemplateError::TemplateInvalid(
            "constraint placement: rendered prompt buries the constraints mid-text".into(),
        ));
    }

    let rendered = RenderedPrompt {
        stage: template.stage,
        text,
        placeholder_bindings: bindings,
        segments,
    };
    let leftover = rendered.unsubstituted_placeholders();
    if !leftover.is_empty() {
        return Err(TemplateError::TemplateInvalid(format!(
            "unsubstituted placeholders: {}",
            leftover.join(", ")
        )));
    }
    Ok(rendered)
}

fn or_none(s: &str) -> &str {
    if s.trim().is_empty() {
        "(none recorded)"
    } else {
        s
    }
}

fn format_notes_brief(bundle: &InputBundle) -> String {
    bundle
        .notes
        .iter()
        .map(|n| {
            format!(
                "[{}] {} (pid: {})\n  Summary: {}",
                n.id, n.citation, n.pid, n.summary
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn format_notes_full(bundle: &InputBundle) -> String {
    bundle
        .notes
        .iter()
        .map(|n| {
            format!(
                "[{}] {} (pid: {})\n  Summary: {}\n  Strengths: {}\n  Limitations: {}\n  Relation to contribution: {}",
                n.id,
                n.citation,
                n.pid,
                n.summary,
                or_none(&n.strengths),
                or_none(&n.limitations),
                or_none(&n.relation)
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn format_taxonomy(taxonomy: &Taxonomy) -> String {
    taxonomy
        .clusters
        .iter()
        .map(|c| {
            format!(
                "Cluster \"{}\": {}\n  Members: {}",
                c.name,
                or_none(&c.rationale),
                c.member_ids.join(", ")
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

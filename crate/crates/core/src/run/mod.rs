//! A run directory: inputs, stage outputs, logs and the state file that
//! orders the stages.

mod demo;

use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::audit::{
    audit_draft, inline_findings, parse_draft, resolve_claim, write_audit_csv,
    write_audit_markdown, AuditError, AuditRow, AuditStatus, DraftError, InlineFinding,
    Resolution,
};
use crate::bundle::{parse_bundle, parse_taxonomy, BundleError, InputBundle, Taxonomy};
use crate::canonical::to_canonical_bytes;
use crate::invoke::{
    run_synthesis_stage, run_taxonomy_stage, BackendContext, BackendRegistry, ConfigError,
    Invocation, ModelClient, ModelConfig, StageError,
};
use crate::provenance::{
    local_host_id, new_run, now, record_invocation, rfc3339_secs, Digest, InteractionLog,
    ProvenanceError, RunId,
};
use crate::redact::{
    check_redaction, default_patterns, redact, source_patterns, RedactedLog, RedactionPolicy,
    Tier,
};
use crate::rocrate::{
    self, build_card, standard_artifacts, ActionSpec, CardError, CardNarrative, CratePayload,
    InspectionCard, Instrument, PackError, PayloadFile, Role,
};
use crate::template::{validate_template, PromptTemplate, Stage, TemplateError};

pub use demo::{demo_bundle, demo_config, DEMO_FIXTURES};

pub const STATE_FILE: &str = "run.json";
pub const CONFIG_FILE: &str = "config.json";
pub const BUNDLE_FILE: &str = "bundle.json";
pub const NARRATIVE_FILE: &str = "card_narrative.json";
pub const TAXONOMY_TEMPLATE_FILE: &str = "templates/taxonomy.txt";
pub const SYNTHESIS_TEMPLATE_FILE: &str = "templates/synthesis.txt";
pub const FIXTURES_DIR: &str = "fixtures";
pub const TAXONOMY_FILE: &str = "outputs/taxonomy.json";
pub const DRAFT_FILE: &str = "outputs/draft.md";
pub const AUDIT_CSV_FILE: &str = "outputs/audit.csv";
pub const AUDIT_MD_FILE: &str = "outputs/audit.md";
pub const CARD_JSON_FILE: &str = "outputs/card.json";
pub const CARD_MD_FILE: &str = "outputs/card.md";
pub const LOG_FILE: &str = "logs/interaction_log.json";
pub const RESOLUTIONS_FILE: &str = "logs/audit_resolutions.jsonl";
pub const CRATES_DIR: &str = "crates";
pub const LOCK_FILE: &str = ".airo.lock";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Step {
    Taxonomy,
    Draft,
    Audit,
    Card,
}

impl Step {
    pub fn as_str(self) -> &'static str {
        match self {
            Step::Taxonomy => "taxonomy",
            Step::Draft => "draft",
            Step::Audit => "audit",
            Step::Card => "card",
        }
    }

    /// Steps whose outputs are stale once this one reruns.
    fn invalidates(self) -> &'static [Step] {
        match self {
            Step::Taxonomy => &[Step::Draft, Step::Audit, Step::Card],
            Step::Draft => &[Step::Audit, Step::Card],
            Step::Audit | Step::Card => &[],
        }
    }

    fn outputs(self) -> &'static [&'static str] {
        match self {
            Step::Taxonomy => &[TAXONOMY_FILE],
            Step::Draft => &[DRAFT_FILE],
            Step::Audit => &[AUDIT_CSV_FILE, AUDIT_MD_FILE],
            Step::Card => &[CARD_JSON_FILE, CARD_MD_FILE],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunState {
    pub run_id: RunId,
    #[serde(with = "rfc3339_secs")]
    pub created_at: DateTime<Utc>,
    pub completed: Vec<Step>,
    /// Canonical digest of the config used by the latest model stage.
    pub config_sha256: Digest,
    /// Log record behind `outputs/taxonomy.json`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taxonomy_record: Option<usize>,
    /// Log record behind `outputs/draft.md`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthesis_record: Option<usize>,
    #[serde(default)]
    pub redacted: Vec<Tier>,
}

impl RunState {
    pub fn is_complete(&self, step: Step) -> bool {
        self.completed.contains(&step)
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0} already exists and is not empty")]
    PathExists(PathBuf),
    #[error("{0} is not a run directory (no {STATE_FILE})")]
    NotARunDir(PathBuf),
    #[error("run directory is locked by another process ({0} exists)")]
    Locked(PathBuf),
    #[error("cannot run {step} before {missing} has completed")]
    StageOrder { step: &'static str, missing: &'static str },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}: template not found")]
    TemplateNotFound(PathBuf),
    #[error("{STATE_FILE}: {0}")]
    State(String),
    #[error("{BUNDLE_FILE}: {0}")]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Stage(#[from] StageError),
    #[error("{DRAFT_FILE}: {0}")]
    Draft(#[from] DraftError),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error("interaction log: {0}")]
    Provenance(#[from] ProvenanceError),
    #[error(transparent)]
    Card(#[from] CardError),
    #[error(transparent)]
    Pack(#[from] PackError),
    #[error("redacted log still holds local material: {0}")]
    RedactionIncomplete(String),
}

/// How a failure should be reported to a calling process.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad input or a failed check.
    Failure,
    /// Wrong invocation: order, paths, locks.
    Usage,
    /// The model endpoint could not be reached or kept failing.
    Transport,
}

impl RunError {
    pub fn class(&self) -> ErrorClass {
        match self {
            RunError::PathExists(_)
            | RunError::NotARunDir(_)
            | RunError::Locked(_)
            | RunError::StageOrder { .. } => ErrorClass::Usage,
            RunError::Stage(StageError::Invoke(e)) if e.is_transport() => ErrorClass::Transport,
            _ => ErrorClass::Failure,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Removes the lock file when dropped.
pub struct RunLock {
    path: PathBuf,
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationItem {
    pub subject: String,
    pub problems: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub items: Vec<ValidationItem>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.items.iter().all(|i| i.problems.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageSummary {
    pub output: PathBuf,
    pub attempts: usize,
    pub budget_exceeded: bool,
    /// Set when a synthesis reply does not have the expected structure.
    pub draft_problem: Option<DraftError>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditSummary {
    pub rows: Vec<AuditRow>,
    pub findings: Vec<InlineFinding>,
    pub reapplied_notes: usize,
}

impl AuditSummary {
    pub fn count(&self, status: AuditStatus) -> usize {
        self.rows.iter().filter(|r| r.status == status).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackSummary {
    pub path: PathBuf,
    pub members: usize,
    pub sha256: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ResolutionEntry {
    #[serde(flatten)]
    resolution: Resolution,
    #[serde(with = "rfc3339_secs")]
    resolved_at: DateTime<Utc>,
}

pub fn redacted_log_file(tier: Tier) -> String {
    format!("logs/interaction_log.{tier}.redacted.json")
}

pub struct RunDir {
    root: PathBuf,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn config_digest(config: &ModelConfig) -> Digest {
    Digest::of(&to_canonical_bytes(config).expect("config is always encodable"))
}

impl RunDir {
    /// Scaffold a new run with demo inputs, default templates and fixtures.
    pub fn init(path: &Path, label: &str) -> Result<RunDir, RunError> {
        let run_id = new_run(label)?;
        if path.exists() {
            let empty = path.is_dir()
                && fs::read_dir(path)
                    .map_err(io_err(path))?
                    .next()
                    .is_none();
            if !empty {
                return Err(RunError::PathExists(path.to_owned()));
            }
        }
        let dir = RunDir {
            root: path.to_owned(),
        };
        let config = demo_config();
        let mut config_json = serde_json::to_string_pretty(&config).expect("encodable");
        config_json.push('\n');
        dir.write(CONFIG_FILE, config_json.as_bytes())?;
        dir.write(BUNDLE_FILE, demo_bundle().to_pretty_json().as_bytes())?;
        dir.write(NARRATIVE_FILE, CardNarrative::default().to_pretty_json().as_bytes())?;
        dir.write(
            TAXONOMY_TEMPLATE_FILE,
            crate::template::DEFAULT_TAXONOMY_TEMPLATE.as_bytes(),
        )?;
        dir.write(
            SYNTHESIS_TEMPLATE_FILE,
            crate::template::DEFAULT_SYNTHESIS_TEMPLATE.as_bytes(),
        )?;
        for (name, text) in DEMO_FIXTURES {
            dir.write(&format!("{FIXTURES_DIR}/{name}.txt"), text.as_bytes())?;
        }
        let state = RunState {
            run_id,
            created_at: now(),
            completed: vec![],
            config_sha256: config_digest(&config),
            taxonomy_record: None,
            synthesis_record: None,
            redacted: vec![],
        };
        dir.save_state(&state)?;
        Ok(dir)
    }

    pub fn open(path: &Path) -> Result<RunDir, RunError> {
        if !path.join(STATE_FILE).is_file() {
            return Err(RunError::NotARunDir(path.to_owned()));
        }
        let dir = RunDir {
            root: path.to_owned(),
        };
        dir.state()?;
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn read(&self, rel: &str) -> Result<Vec<u8>, RunError> {
        let p = self.path(rel);
        fs::read(&p).map_err(io_err(&p))
    }

    fn read_text(&self, rel: &str) -> Result<String, RunError> {
        let p = self.path(rel);
        fs::read_to_string(&p).map_err(io_err(&p))
    }

    fn write(&self, rel: &str, bytes: &[u8]) -> Result<(), RunError> {
        write_atomic(&self.path(rel), bytes)
    }

    fn remove(&self, rel: &str) -> Result<(), RunError> {
        let p = self.path(rel);
        match fs::remove_file(&p) {
            Err(e) if e.kind() != io::ErrorKind::NotFound => Err(io_err(&p)(e)),
            _ => Ok(()),
        }
    }

    pub fn lock(&self) -> Result<RunLock, RunError> {
        let path = self.path(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(RunError::Locked(path)),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    pub fn state(&self) -> Result<RunState, RunError> {
        serde_json::from_slice(&self.read(STATE_FILE)?).map_err(|e| RunError::State(e.to_string()))
    }

    fn save_state(&self, state: &RunState) -> Result<(), RunError> {
        let mut s = serde_json::to_string_pretty(state).expect("state is always encodable");
        s.push('\n');
        self.write(STATE_FILE, s.as_bytes())
    }

    fn require(&self, state: &RunState, step: &'static str, needed: Step) -> Result<(), RunError> {
        if state.is_complete(needed) {
            Ok(())
        } else {
            Err(RunError::StageOrder {
                step,
                missing: needed.as_str(),
            })
        }
    }

    /// Mark `step` done after dropping every later step's outputs.
    fn complete(&self, state: &mut RunState, step: Step) -> Result<(), RunError> {
        for later in step.invalidates() {
            for out in later.outputs() {
                self.remove(out)?;
            }
        }
        state
            .completed
            .retain(|s| *s != step && !step.invalidates().contains(s));
        state.completed.push(step);
        Ok(())
    }

    fn drop_redactions(&self, state: &mut RunState) -> Result<(), RunError> {
        for tier in std::mem::take(&mut state.redacted) {
            self.remove(&redacted_log_file(tier))?;
        }
        Ok(())
    }

    pub fn bundle(&self) -> Result<InputBundle, RunError> {
        Ok(parse_bundle(&self.read(BUNDLE_FILE)?)?)
    }

    pub fn template(&self, stage: Stage) -> Result<PromptTemplate, RunError> {
        let rel = match stage {
            Stage::Taxonomy => TAXONOMY_TEMPLATE_FILE,
            Stage::Synthesis => SYNTHESIS_TEMPLATE_FILE,
        };
        let p = self.path(rel);
        let text = match fs::read_to_string(&p) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(RunError::TemplateNotFound(p)),
            Err(e) => return Err(io_err(&p)(e)),
        };
        let template = PromptTemplate::parse(&text)?;
        if template.stage != stage {
            return Err(RunError::Template(TemplateError::TemplateInvalid(format!(
                "{rel} declares stage {}, expected {}",
                template.stage.as_str(),
                stage.as_str()
            ))));
        }
        Ok(template)
    }

    /// The run's `config.json`, or `override_path` when given.
    pub fn config(&self, override_path: Option<&Path>) -> Result<ModelConfig, RunError> {
        let raw = match override_path {
            Some(p) => fs::read(p).map_err(io_err(p))?,
            None => self.read(CONFIG_FILE)?,
        };
        Ok(ModelConfig::from_json(&raw)?)
    }

    pub fn narrative(&self) -> Result<CardNarrative, RunError> {
        CardNarrative::from_json(&self.read(NARRATIVE_FILE)?)
            .map_err(|e| RunError::State(format!("{NARRATIVE_FILE}: {e}")))
    }

    /// A client whose offline stub reads this run's `fixtures/`.
    pub fn client(&self) -> ModelClient {
        ModelClient::new(
            BackendRegistry::with_defaults(),
            BackendContext::from_env().with_fixtures_dir(self.path(FIXTURES_DIR)),
        )
    }

    pub fn log(&self) -> Result<InteractionLog, RunError> {
        let p = self.path(LOG_FILE);
        if !p.exists() {
            return Ok(InteractionLog::new(self.state()?.run_id));
        }
        Ok(InteractionLog::from_json(&self.read(LOG_FILE)?)?)
    }

    fn append_attempts(
        &self,
        attempts: &[Invocation],
        bundle: &InputBundle,
        template_rel: &str,
    ) -> Result<Option<usize>, RunError> {
        if attempts.is_empty() {
            return Ok(None);
        }
        let mut log = self.log()?;
        let sources = [
            self.path(BUNDLE_FILE).display().to_string(),
            self.path(template_rel).display().to_string(),
        ];
        let host = local_host_id();
        for inv in attempts {
            log.append(record_invocation(inv, bundle, &sources, &host))?;
        }
        self.write(LOG_FILE, log.to_pretty_json().as_bytes())?;
        Ok(Some(log.records.len() - 1))
    }

    pub fn validate(&self) -> ValidationReport {
        let mut items = Vec::new();
        let mut item = |subject: &str, problems: Vec<String>| {
            items.push(ValidationItem {
                subject: subject.to_owned(),
                problems,
            })
        };
        item(
            BUNDLE_FILE,
            self.bundle().err().map(|e| e.to_string()).into_iter().collect(),
        );
        for (stage, rel) in [
            (Stage::Taxonomy, TAXONOMY_TEMPLATE_FILE),
            (Stage::Synthesis, SYNTHESIS_TEMPLATE_FILE),
        ] {
            let problems = match self.template(stage) {
                Ok(t) => validate_template(&t)
                    .failures()
                    .map(|c| format!("{}: {}", c.name, c.detail))
                    .collect(),
                Err(e) => vec![e.to_string()],
            };
            item(rel, problems);
        }
        item(
            CONFIG_FILE,
            self.config(None).err().map(|e| e.to_string()).into_iter().collect(),
        );
        let narrative = match self.narrative() {
            Ok(n) => n.validate().err().map(|e| e.to_string()).into_iter().collect(),
            Err(e) => vec![e.to_string()],
        };
        item(NARRATIVE_FILE, narrative);
        ValidationReport { items }
    }

    /// Stage 1: group the notes. `config` is the effective configuration.
    pub fn run_taxonomy(
        &self,
        client: &ModelClient,
        config: &ModelConfig,
    ) -> Result<StageSummary, RunError> {
        let _lock = self.lock()?;
        let mut state = self.state()?;
        let bundle = self.bundle()?;
        let template = self.template(Stage::Taxonomy)?;
        let (taxonomy, completion) = match run_taxonomy_stage(client, &template, &bundle, config) {
            Ok(ok) => ok,
            Err(e) => {
                self.append_attempts(e.recorded_attempts(), &bundle, TAXONOMY_TEMPLATE_FILE)?;
                return Err(e.into());
            }
        };
        let record = self.append_attempts(&completion.attempts, &bundle, TAXONOMY_TEMPLATE_FILE)?;
        self.write(TAXONOMY_FILE, taxonomy.to_pretty_json().as_bytes())?;
        self.complete(&mut state, Step::Taxonomy)?;
        self.drop_redactions(&mut state)?;
        state.taxonomy_record = record;
        state.synthesis_record = None;
        state.config_sha256 = config_digest(config);
        self.save_state(&state)?;
        Ok(StageSummary {
            output: self.path(TAXONOMY_FILE),
            attempts: completion.attempts.len(),
            budget_exceeded: completion.invocation().budget_exceeded(),
            draft_problem: None,
        })
    }

    pub fn taxonomy(&self) -> Result<Taxonomy, RunError> {
        let bundle = self.bundle()?;
        parse_taxonomy(&self.read(TAXONOMY_FILE)?, &bundle)
            .map_err(|e| RunError::State(format!("{TAXONOMY_FILE}: {e}")))
    }

    /// Stage 2: write the draft from notes and taxonomy.
    pub fn run_draft(
        &self,
        client: &ModelClient,
        config: &ModelConfig,
    ) -> Result<StageSummary, RunError> {
        let _lock = self.lock()?;
        let mut state = self.state()?;
        self.require(&state, "draft", Step::Taxonomy)?;
        let bundle = self.bundle()?;
        let taxonomy = self.taxonomy()?;
        let template = self.template(Stage::Synthesis)?;
        let (text, completion) =
            match run_synthesis_stage(client, &template, &bundle, &taxonomy, config) {
                Ok(ok) => ok,
                Err(e) => {
                    self.append_attempts(e.recorded_attempts(), &bundle, SYNTHESIS_TEMPLATE_FILE)?;
                    return Err(e.into());
                }
            };
        let record = self.append_attempts(&completion.attempts, &bundle, SYNTHESIS_TEMPLATE_FILE)?;
        self.write(DRAFT_FILE, text.as_bytes())?;
        self.complete(&mut state, Step::Draft)?;
        self.drop_redactions(&mut state)?;
        state.synthesis_record = record;
        state.config_sha256 = config_digest(config);
        self.save_state(&state)?;
        Ok(StageSummary {
            output: self.path(DRAFT_FILE),
            attempts: completion.attempts.len(),
            budget_exceeded: completion.invocation().budget_exceeded(),
            draft_problem: parse_draft(&text).err(),
        })
    }

    fn resolutions(&self) -> Result<Vec<ResolutionEntry>, RunError> {
        let p = self.path(RESOLUTIONS_FILE);
        if !p.exists() {
            return Ok(vec![]);
        }
        self.read_text(RESOLUTIONS_FILE)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                serde_json::from_str(l)
                    .map_err(|e| RunError::State(format!("{RESOLUTIONS_FILE}: {e}")))
            })
            .collect()
    }

    /// Audit rows from the draft, with the latest resolver notes applied
    /// where the claim text is unchanged.
    fn audit_rows(&self) -> Result<(Vec<AuditRow>, Vec<InlineFinding>, usize), RunError> {
        let bundle = self.bundle()?;
        let draft = parse_draft(&self.read_text(DRAFT_FILE)?)?;
        let mut rows = audit_draft(&draft, &bundle);
        let mut applied = 0;
        for entry in self.resolutions()? {
            let r = &entry.resolution;
            if let Some(row) = rows.get_mut(r.row) {
                if row.claim == r.claim && row.status != AuditStatus::Supported {
                    row.resolver_note = Some(r.note.clone());
                    applied += 1;
                }
            }
        }
        Ok((rows, inline_findings(&draft, &bundle), applied))
    }

    fn write_audit(&self, rows: &[AuditRow], findings: &[InlineFinding]) -> Result<(), RunError> {
        self.write(AUDIT_CSV_FILE, &write_audit_csv(rows))?;
        self.write(AUDIT_MD_FILE, write_audit_markdown(rows, findings).as_bytes())
    }

    pub fn audit(&self) -> Result<AuditSummary, RunError> {
        let _lock = self.lock()?;
        let mut state = self.state()?;
        self.require(&state, "audit", Step::Draft)?;
        let (rows, findings, reapplied_notes) = self.audit_rows()?;
        self.write_audit(&rows, &findings)?;
        self.complete(&mut state, Step::Audit)?;
        self.save_state(&state)?;
        Ok(AuditSummary {
            rows,
            findings,
            reapplied_notes,
        })
    }

    /// Attach a note to audit row `row` (1-based, as shown in `audit.md`).
    pub fn resolve(&self, row: usize, note: &str) -> Result<Resolution, RunError> {
        let _lock = self.lock()?;
        let state = self.state()?;
        self.require(&state, "resolve", Step::Audit)?;
        let (mut rows, findings, _) = self.audit_rows()?;
        let index = row.checked_sub(1).ok_or(AuditError::IndexOutOfRange {
            index: 0,
            len: rows.len(),
        })?;
        let resolution = resolve_claim(&mut rows, index, note)?;
        let entry = ResolutionEntry {
            resolution: resolution.clone(),
            resolved_at: now(),
        };
        let mut history = if self.path(RESOLUTIONS_FILE).exists() {
            self.read(RESOLUTIONS_FILE)?
        } else {
            Vec::new()
        };
        history.extend(serde_json::to_vec(&entry).expect("encodable"));
        history.push(b'\n');
        self.write(RESOLUTIONS_FILE, &history)?;
        self.write_audit(&rows, &findings)?;
        Ok(resolution)
    }

    pub fn redact(&self, tier: Tier) -> Result<RedactedLog, RunError> {
        let _lock = self.lock()?;
        let mut state = self.state()?;
        self.require(&state, "redact", Step::Draft)?;
        let log = self.log()?;
        let policy = RedactionPolicy::for_tier(tier);
        let redacted = redact(&log, &policy);
        let mut scanned = redacted.clone();
        for r in &mut scanned.records {
            r.prompt_text = None;
            r.response_text = None;
        }
        let mut patterns = default_patterns();
        patterns.extend(source_patterns(&log));
        let findings = check_redaction(&scanned, &patterns);
        if let Some(f) = findings.first() {
            return Err(RunError::RedactionIncomplete(f.to_string()));
        }
        self.write(&redacted_log_file(tier), redacted.to_pretty_json().as_bytes())?;
        if !state.redacted.contains(&tier) {
            state.redacted.push(tier);
            state.redacted.sort();
        }
        self.save_state(&state)?;
        Ok(redacted)
    }

    pub fn card(&self) -> Result<InspectionCard, RunError> {
        let _lock = self.lock()?;
        let mut state = self.state()?;
        self.require(&state, "card", Step::Audit)?;
        let log = self.log()?;
        let record = state
            .synthesis_record
            .and_then(|i| log.records.get(i))
            .ok_or_else(|| RunError::State("no synthesis record in the interaction log".into()))?;
        let card = build_card(
            &state.run_id,
            &self.bundle()?,
            &record.config,
            &self.narrative()?,
            standard_artifacts(),
        )?;
        self.write(CARD_JSON_FILE, card.to_pretty_json().as_bytes())?;
        self.write(CARD_MD_FILE, card.to_markdown().as_bytes())?;
        self.complete(&mut state, Step::Card)?;
        self.save_state(&state)?;
        Ok(card)
    }

    /// Everything that goes into a crate at `tier`, read from this directory.
    pub fn payload(&self, tier: Tier) -> Result<CratePayload, RunError> {
        let state = self.state()?;
        self.require(&state, "pack", Step::Card)?;
        if !state.redacted.contains(&tier) {
            return Err(PackError::UnredactedLeak(format!(
                "no log redacted at the {tier} tier; only the unredacted log exists (run redact --tier {tier})"
            ))
            .into());
        }
        let (taxonomy_record, synthesis_record) = match (state.taxonomy_record, state.synthesis_record) {
            (Some(t), Some(s)) => (t, s),
            _ => return Err(RunError::State("stage log records are not recorded".into())),
        };
        let file = |member: &str, rel: &str, role, description: &str| -> Result<PayloadFile, RunError> {
            Ok(PayloadFile::new(member, self.read(rel)?, role, description))
        };
        let files = vec![
            file(rocrate::TAXONOMY_TEMPLATE_PATH, TAXONOMY_TEMPLATE_FILE, Role::Code, "Prompt template for the taxonomy stage")?,
            file(rocrate::SYNTHESIS_TEMPLATE_PATH, SYNTHESIS_TEMPLATE_FILE, Role::Code, "Prompt template for the synthesis stage")?,
            PayloadFile::new(rocrate::WORKFLOW_PATH, workflow_description(), Role::Code, "Stage sequence and tool version"),
            file(rocrate::BUNDLE_PATH, BUNDLE_FILE, Role::Data, "Human-authored note bundle")?,
            file(rocrate::TAXONOMY_PATH, TAXONOMY_FILE, Role::Data, "Taxonomy produced by the model")?,
            file(rocrate::DRAFT_PATH, DRAFT_FILE, Role::Data, "Draft related-work section produced by the model")?,
            file(rocrate::AUDIT_CSV_PATH, AUDIT_CSV_FILE, Role::Data, "Claim audit table")?,
            file(rocrate::AUDIT_MD_PATH, AUDIT_MD_FILE, Role::Data, "Claim audit report")?,
            file(rocrate::REDACTED_LOG_PATH, &redacted_log_file(tier), Role::Provenance, "Redacted interaction log")?,
            file(rocrate::CARD_JSON_PATH, CARD_JSON_FILE, Role::Provenance, "Inspection card (structured)")?,
            file(rocrate::CARD_MD_PATH, CARD_MD_FILE, Role::Provenance, "Inspection card")?,
        ];
        let s = String::from;
        let actions = vec![
            ActionSpec {
                id: "#action-taxonomy".into(),
                name: "Taxonomy stage".into(),
                object: vec![s(rocrate::BUNDLE_PATH), s(rocrate::TAXONOMY_TEMPLATE_PATH)],
                result: vec![s(rocrate::TAXONOMY_PATH)],
                instrument: Instrument::Model { record: taxonomy_record },
            },
            ActionSpec {
                id: "#action-synthesis".into(),
                name: "Synthesis stage".into(),
                object: vec![
                    s(rocrate::BUNDLE_PATH),
                    s(rocrate::TAXONOMY_PATH),
                    s(rocrate::SYNTHESIS_TEMPLATE_PATH),
                ],
                result: vec![s(rocrate::DRAFT_PATH)],
                instrument: Instrument::Model { record: synthesis_record },
            },
            ActionSpec {
                id: "#action-audit".into(),
                name: "Claim audit".into(),
                object: vec![s(rocrate::DRAFT_PATH), s(rocrate::BUNDLE_PATH)],
                result: vec![s(rocrate::AUDIT_CSV_PATH), s(rocrate::AUDIT_MD_PATH)],
                instrument: Instrument::Tool,
            },
            ActionSpec {
                id: "#action-card".into(),
                name: "Inspection card".into(),
                object: vec![s(rocrate::BUNDLE_PATH), s(rocrate::REDACTED_LOG_PATH)],
                result: vec![s(rocrate::CARD_JSON_PATH), s(rocrate::CARD_MD_PATH)],
                instrument: Instrument::Tool,
            },
        ];
        let title = self.bundle()?.title;
        Ok(CratePayload {
            run_id: state.run_id.clone(),
            name: format!("{}: {title}", state.run_id),
            description: format!("Model-assisted drafting run, released at the {tier} tier"),
            files,
            actions,
        })
    }

    pub fn default_crate_path(&self, tier: Tier) -> Result<PathBuf, RunError> {
        let state = self.state()?;
        Ok(self.path(&format!("{CRATES_DIR}/{}-{tier}.zip", state.run_id)))
    }

    pub fn pack(&self, tier: Tier, out: Option<&Path>) -> Result<PackSummary, RunError> {
        let _lock = self.lock()?;
        let payload = self.payload(tier)?;
        let archive = rocrate::pack(&payload, &RedactionPolicy::for_tier(tier))?;
        let bytes = archive
            .to_zip_bytes()
            .map_err(|e| RunError::State(format!("writing archive: {e}")))?;
        let path = match out {
            Some(p) => p.to_owned(),
            None => self.default_crate_path(tier)?,
        };
        write_atomic(&path, &bytes)?;
        Ok(PackSummary {
            path,
            members: archive.len(),
            sha256: Digest::of(&bytes),
        })
    }
}

fn workflow_description() -> Vec<u8> {
    let doc = json!({
        "tool": "airo",
        "version": env!("CARGO_PKG_VERSION"),
        "steps": [
            {"step": "taxonomy", "command": "airo taxonomy", "template": rocrate::TAXONOMY_TEMPLATE_PATH, "output": rocrate::TAXONOMY_PATH},
            {"step": "draft", "command": "airo draft", "template": rocrate::SYNTHESIS_TEMPLATE_PATH, "output": rocrate::DRAFT_PATH},
            {"step": "audit", "command": "airo audit", "output": rocrate::AUDIT_CSV_PATH},
            {"step": "redact", "command": "airo redact --tier <tier>", "output": rocrate::REDACTED_LOG_PATH},
            {"step": "card", "command": "airo card", "output": rocrate::CARD_MD_PATH},
            {"step": "pack", "command": "airo pack --tier <tier>"},
            {"step": "verify", "command": "airo verify <crate>"}
        ]
    });
    let mut bytes = serde_json::to_vec_pretty(&doc).expect("encodable");
    bytes.push(b'\n');
    bytes
}

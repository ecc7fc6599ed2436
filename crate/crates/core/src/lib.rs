//! Tooling for model-assisted drafting runs that stay inspectable: a
//! human-authored note bundle bounds what the model sees, every invocation is
//! hashed into a provenance log, drafts are audited against the bundle, logs
//! are redacted for review, and the run is packaged and verified as an
//! RO-Crate.

pub mod audit;
pub mod bundle;
pub mod canonical;
pub mod invoke;
pub mod provenance;
pub mod redact;
pub mod rocrate;
pub mod run;
pub mod template;
pub mod verify;

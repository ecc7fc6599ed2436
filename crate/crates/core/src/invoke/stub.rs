use std::collections::BTreeMap;
use std::path::PathBuf;

use super::backend::{BackendFailure, BackendReply, ChatRequest, ModelBackend};
use super::ModelConfig;

pub const FIXTURE_EXTENSION: &str = "txt";

enum Source {
    Dir(PathBuf),
    Map(BTreeMap<String, String>),
}

/// Replays recorded responses by fixture name (`<dir>/<name>.txt`).
///
/// Tokens are approximated by whitespace-separated words; a fixture longer
/// than `max_tokens` words is cut there and reported as budget-limited.
pub struct StubBackend {
    source: Source,
}

impl StubBackend {
    pub fn from_dir(dir: impl Into<PathBuf>) -> Self {
        StubBackend {
            source: Source::Dir(dir.into()),
        }
    }

    pub fn from_map(fixtures: BTreeMap<String, String>) -> Self {
        StubBackend {
            source: Source::Map(fixtures),
        }
    }

    fn lookup(&self, name: &str) -> Result<String, BackendFailure> {
        let valid = !name.is_empty()
            && name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
        if !valid {
            return Err(BackendFailure::Fatal(format!("invalid fixture name {name:?}")));
        }
        match &self.source {
            Source::Map(map) => map
                .get(name)
                .cloned()
                .ok_or_else(|| BackendFailure::Fatal(format!("fixture {name:?} not found"))),
            Source::Dir(dir) => {
                let path = dir.join(format!("{name}.{FIXTURE_EXTENSION}"));
                std::fs::read_to_string(&path).map_err(|e| {
                    BackendFailure::Fatal(format!("fixture {name:?} ({}): {e}", path.display()))
                })
            }
        }
    }
}

/// Prefix of `text` holding at most `limit` words, or `None` if it fits.
fn truncate_words(text: &str, limit: usize) -> Option<&str> {
    let mut words = 0;
    let mut in_word = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            in_word = false;
        } else if !in_word {
            in_word = true;
            words += 1;
            if words > limit {
                return Some(text[..i].trim_end());
            }
        }
    }
    None
}

impl ModelBackend for StubBackend {
    fn name(&self) -> &str {
        "offline-stub"
    }

    fn send(
        &self,
        _request: &ChatRequest,
        config: &ModelConfig,
    ) -> Result<BackendReply, BackendFailure> {
        let name = config
            .fixture
            .as_deref()
            .ok_or_else(|| BackendFailure::Fatal("offline stub needs a fixture name".into()))?;
        let text = self.lookup(name)?;
        Ok(match truncate_words(&text, config.max_tokens as usize) {
            Some(cut) => BackendReply {
                text: cut.to_owned(),
                finish_reason: Some("length".into()),
            },
            None => BackendReply {
                text,
                finish_reason: Some("stop".into()),
            },
        })
    }
}

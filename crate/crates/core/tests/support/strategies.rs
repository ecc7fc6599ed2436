//! Generators shared by the property tests and the acceptance suite.
#![allow(dead_code)]

use std::collections::BTreeSet;

use airo_core::audit::{AuditRow, AuditStatus, CitedSource, ClaimEntry, DraftArtifact};
use airo_core::bundle::{InputBundle, NoteId, NoteRecord};
use airo_core::invoke::{Interface, ModelConfig, Outcome};
use airo_core::provenance::{Digest, InteractionLog, InvocationRecord, RunId};
use airo_core::redact::Tier;
use airo_core::template::Stage;
use chrono::{TimeZone, Utc};
use proptest::prelude::*;

pub fn text() -> impl Strategy<Value = String> {
    "[A-Za-z][^\u{0}-\u{1f}]{0,40}"
}

pub fn note_ids() -> impl Strategy<Value = BTreeSet<String>> {
    prop::collection::btree_set("[A-Z][A-Za-z0-9]{0,4}", 1..8)
}

prop_compose! {
    pub fn note(id: String)(
        pid in "10\\.[0-9]{4}/[a-z0-9.]{1,12}",
        citation in text(),
        summary in text(),
        strengths in "[^\u{0}-\u{1f}]{0,30}",
        limitations in "[^\u{0}-\u{1f}]{0,30}",
        relation in "\\PC{0,30}",
    ) -> NoteRecord {
        NoteRecord {
            id: NoteId::parse(&id).unwrap(),
            pid, citation, summary, strengths, limitations, relation,
        }
    }
}

pub fn bundle() -> impl Strategy<Value = InputBundle> {
    (text(), text(), 50u64..5000, note_ids()).prop_flat_map(|(title, contribution, target, ids)| {
        let notes: Vec<_> = ids.into_iter().map(note).collect();
        notes.prop_map(move |notes| InputBundle {
            title: title.clone(),
            contribution: contribution.clone(),
            target_words: target,
            notes,
        })
    })
}

pub fn words(n: std::ops::Range<usize>) -> impl Strategy<Value = String> {
    prop::collection::vec("[a-z]{1,9}", n).prop_map(|w| w.join(" "))
}

pub fn paragraph() -> impl Strategy<Value = (String, usize)> {
    (
        words(1..12),
        prop::option::of(("[A-Z][a-z]{2,8}", 1990u32..2030, 1u8..10)),
        words(0..6),
    )
        .prop_map(|(head, cite, tail)| match cite {
            Some((author, year, n)) => (
                format!("Prior work {head} ({author} {year}; P{n}) {tail}").trim_end().to_owned(),
                1,
            ),
            None => (format!("Prior work {head} {tail}").trim_end().to_owned(), 0),
        })
}

pub fn claim() -> impl Strategy<Value = ClaimEntry> {
    (
        words(1..10),
        prop::collection::btree_set(1u8..10, 0..4),
        any::<bool>(),
    )
        .prop_map(|(claim, ids, needs_human_check)| ClaimEntry {
            claim,
            supporting_ids: ids.into_iter().map(|n| format!("P{n}")).collect(),
            needs_human_check,
        })
}

pub fn draft() -> impl Strategy<Value = (Vec<String>, usize, Vec<ClaimEntry>)> {
    (
        prop::collection::vec(paragraph(), 1..5),
        prop::collection::vec(claim(), 1..8),
    )
        .prop_map(|(paras, checklist)| {
            let cites = paras.iter().map(|(_, c)| c).sum();
            (paras.into_iter().map(|(p, _)| p).collect(), cites, checklist)
        })
}

pub fn render(body: &[String], checklist: &[ClaimEntry]) -> String {
    DraftArtifact {
        header: String::new(),
        body: body.to_vec(),
        checklist: checklist.to_vec(),
        citations: vec![],
        body_markers: vec![],
    }
    .to_text()
}

pub fn status() -> impl Strategy<Value = AuditStatus> {
    prop_oneof![
        Just(AuditStatus::Supported),
        Just(AuditStatus::NeedsHumanCheck),
        Just(AuditStatus::Unsupported),
        Just(AuditStatus::InventedCitation),
    ]
}

pub fn audit_row() -> impl Strategy<Value = AuditRow> {
    (
        "[^\u{0}]{0,40}",
        prop::collection::vec("[A-Z][A-Za-z0-9]{0,4}|10\\.[0-9]{4}/[a-z0-9]{1,6}", 0..4),
        status(),
        prop::option::of("[^\u{0}]{1,30}"),
    )
        .prop_map(|(claim, ids, status, note)| AuditRow {
            claim,
            cited: ids
                .into_iter()
                .map(|id| CitedSource {
                    id,
                    citation: None,
                    pid: None,
                })
                .collect(),
            status,
            resolver_note: note,
        })
}

pub fn stage() -> impl Strategy<Value = Stage> {
    prop_oneof![Just(Stage::Taxonomy), Just(Stage::Synthesis)]
}

pub fn outcome() -> impl Strategy<Value = Outcome> {
    prop_oneof![
        Just(Outcome::Completed),
        Just(Outcome::BudgetExceeded),
        Just(Outcome::MalformedReply),
        (400u16..600).prop_map(|status| Outcome::HttpError { status }),
    ]
}

pub fn endpoint() -> impl Strategy<Value = String> {
    prop_oneof![
        ("[a-z]{3,8}", "[a-z]{3,8}", "(org|com|net|co\\.uk)", 1000u16..9999)
            .prop_map(|(h, d, tld, port)| format!("https://{h}.{d}.{tld}:{port}/v1")),
        ((1u8..255), (0u8..255), (0u8..255), (1u8..255))
            .prop_map(|(a, b, c, d)| format!("http://{a}.{b}.{c}.{d}:8000/v1")),
        Just("http://localhost:8000/v1".to_owned()),
    ]
}

/// Raw text with embedded local paths and timestamps.
pub fn raw_text() -> impl Strategy<Value = String> {
    (
        "[A-Z ]{8,40}",
        "[a-z]{3,8}",
        prop::option::of((2000u32..2030, 1u32..13, 1u32..29)),
        "[A-Z ]{0,20}",
    )
        .prop_map(|(a, user, date, b)| match date {
            Some((y, m, d)) => format!("{a} /home/{user}/notes/p.json {y:04}-{m:02}-{d:02}T10:11:12Z {b}"),
            None => format!("{a} {b}"),
        })
}

prop_compose! {
    pub fn record(second: u32)(
        stage in stage(),
        outcome in outcome(),
        prompt in raw_text(),
        response in raw_text(),
        endpoint in endpoint(),
        user in "[a-z]{3,8}",
        machine in "ws-[0-9]{3}",
        attempt in 1u32..4,
    ) -> InvocationRecord {
        let t = Utc.with_ymd_and_hms(2025, 6, 1, 12, 0, 0).unwrap() + chrono::Duration::seconds(second.into());
        InvocationRecord {
            stage,
            config: ModelConfig {
                interface: Interface::OpenAiCompatible,
                model_name: "llama-3.1-8b-instruct".into(),
                temperature: 0.2,
                top_p: 1.0,
                max_tokens: 1200,
                endpoint,
                seed: None,
                fixture: None,
            },
            outcome,
            attempt,
            prompt_sha256: Digest::of(prompt.as_bytes()),
            response_sha256: Digest::of(response.as_bytes()),
            bundle_sha256: Digest::of(b"bundle"),
            started_at: t,
            ended_at: t,
            prompt_text: Some(prompt),
            response_text: Some(response),
            source_paths: Some(vec![format!("/home/{user}/run/bundle.json")]),
            host_id: Some(format!("{user}@{machine}")),
        }
    }
}

pub fn log() -> impl Strategy<Value = InteractionLog> {
    (1usize..6).prop_flat_map(|n| {
        (0..n as u32)
            .map(|i| record(i * 7))
            .collect::<Vec<_>>()
            .prop_map(|records| InteractionLog {
                run_id: RunId::parse("ro-prop").unwrap(),
                created_at: Utc.with_ymd_and_hms(2025, 6, 1, 11, 0, 0).unwrap(),
                records,
            })
    })
}

pub fn tier() -> impl Strategy<Value = Tier> {
    prop_oneof![Just(Tier::Public), Just(Tier::Reviewer), Just(Tier::Auditor)]
}

pub fn windows(s: &str, n: usize) -> impl Iterator<Item = &str> {
    let idx: Vec<usize> = s.char_indices().map(|(i, _)| i).chain([s.len()]).collect();
    (0..idx.len().saturating_sub(n)).map(move |i| &s[idx[i]..idx[i + n]])
}

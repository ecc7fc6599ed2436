//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

#[path = "../../core/tests/support/strategies.rs"]
mod strategies;

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use airo_core::audit::{parse_draft, read_audit_csv, write_audit_csv, AuditCsvRow, AuditStatus};
use airo_core::bundle::parse_bundle;
use airo_core::provenance::sha256_hex;
use airo_core::redact::{redact, RedactionPolicy, Tier, TIMESTAMP_PATTERN};
use airo_core::rocrate::{
    read_manifest, CrateArchive, ManifestError, Role, MANIFEST_PATH, SECTIONS,
};
use airo_core::run::RunDir;
use airo_core::verify::{verify_crate, CheckName, CheckStatus};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use regex::Regex;
use tempfile::TempDir;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

// ---------------------------------------------------------------- helpers

fn airo(run_dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_airo"))
        .arg("--run-dir")
        .arg(run_dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stub_config(dir: &RunDir, fixture: &str) -> airo_core::invoke::ModelConfig {
    dir.config(None).unwrap().stubbed(fixture)
}

/// Demo run taken through card, with the synthesis reply from `fixture`.
fn completed_run(root: &Path, fixture: &str, tier: Tier) -> RunDir {
    let dir = RunDir::init(root, "acceptance").unwrap();
    let client = dir.client();
    dir.run_taxonomy(&client, &stub_config(&dir, "taxonomy_ok")).unwrap();
    dir.run_draft(&client, &stub_config(&dir, fixture)).unwrap();
    dir.audit().unwrap();
    dir.redact(tier).unwrap();
    dir.card().unwrap();
    dir
}

fn packed(root: &Path, fixture: &str, tier: Tier) -> (RunDir, CrateArchive) {
    let dir = completed_run(root, fixture, tier);
    let summary = dir.pack(tier, None).unwrap();
    let archive = CrateArchive::read_from(&summary.path).unwrap();
    (dir, archive)
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            fs::copy(entry.path(), target).unwrap();
        }
    }
}

// ------------------------------------------------------------ criterion 1

fn end_to_end() -> Outcome {
    let tmp = TempDir::new().unwrap();
    let run = tmp.path().join("run");
    let out = tmp.path().join("demo.zip");
    let start = Instant::now();
    let steps: Vec<Vec<&str>> = vec![
        vec!["init", "background"],
        vec!["validate"],
        vec!["--stub", "taxonomy_ok", "taxonomy"],
        vec!["--stub", "synthesis_ok", "draft"],
        vec!["audit"],
        vec!["redact", "--tier", "reviewer"],
        vec!["card"],
        vec!["pack", "--tier", "reviewer", "--out", out.to_str().unwrap()],
    ];
    for step in &steps {
        let o = airo(&run, step);
        ensure(
            o.status.success(),
            format!("`{}` exited {:?}: {}", step.join(" "), o.status.code(), String::from_utf8_lossy(&o.stderr)),
        )?;
    }
    let o = airo(&run, &["verify", out.to_str().unwrap(), "--json"]);
    let elapsed = start.elapsed();
    ensure(o.status.success(), format!("verify exited {:?}", o.status.code()))?;
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).map_err(|e| e.to_string())?;
    let checks = report["checks"].as_array().ok_or("no checks in report")?;
    let passes = checks.iter().filter(|c| c["status"] == "Pass").count();
    ensure(checks.len() == 5 && passes == 5, format!("{passes} of {} checks pass", checks.len()))?;
    ensure(elapsed < Duration::from_secs(10), format!("took {elapsed:?}"))?;
    Ok(format!("9 CLI steps in {:.2}s, 5/5 Pass", elapsed.as_secs_f64()))
}

// ------------------------------------------------------------ criterion 2

/// Plain FIPS 180-4 SHA-256, written out for comparison only.
fn reference_sha256(msg: &[u8]) -> String {
    const K: [u32; 64] = [
        0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4,
        0xab1c5ed5, 0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe,
        0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f,
        0x4a7484aa, 0x5cb0a9dc, 0x76f988da, 0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7,
        0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc,
        0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b,
        0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070, 0x19a4c116,
        0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
        0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7,
        0xc67178f2,
    ];
    let mut h: [u32; 8] = [
        0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a, 0x510e527f, 0x9b05688c, 0x1f83d9ab,
        0x5be0cd19,
    ];
    let mut data = msg.to_vec();
    data.push(0x80);
    while data.len() % 64 != 56 {
        data.push(0);
    }
    data.extend_from_slice(&((msg.len() as u64) * 8).to_be_bytes());
    for block in data.chunks(64) {
        let mut w = [0u32; 64];
        for i in 0..16 {
            w[i] = u32::from_be_bytes(block[i * 4..i * 4 + 4].try_into().unwrap());
        }
        for i in 16..64 {
            let s0 = w[i - 15].rotate_right(7) ^ w[i - 15].rotate_right(18) ^ (w[i - 15] >> 3);
            let s1 = w[i - 2].rotate_right(17) ^ w[i - 2].rotate_right(19) ^ (w[i - 2] >> 10);
            w[i] = w[i - 16]
                .wrapping_add(s0)
                .wrapping_add(w[i - 7])
                .wrapping_add(s1);
        }
        let [mut a, mut b, mut c, mut d, mut e, mut f, mut g, mut hh] = h;
        for i in 0..64 {
            let s1 = e.rotate_right(6) ^ e.rotate_right(11) ^ e.rotate_right(25);
            let ch = (e & f) ^ (!e & g);
            let t1 = hh
                .wrapping_add(s1)
                .wrapping_add(ch)
                .wrapping_add(K[i])
                .wrapping_add(w[i]);
            let s0 = a.rotate_right(2) ^ a.rotate_right(13) ^ a.rotate_right(22);
            let maj = (a & b) ^ (a & c) ^ (b & c);
            let t2 = s0.wrapping_add(maj);
            hh = g;
            g = f;
            f = e;
            e = d.wrapping_add(t1);
            d = c;
            c = b;
            b = a;
            a = t1.wrapping_add(t2);
        }
        for (x, y) in h.iter_mut().zip([a, b, c, d, e, f, g, hh]) {
            *x = x.wrapping_add(y);
        }
    }
    h.iter().map(|x| format!("{x:08x}")).collect()
}

fn hash_oracle() -> Outcome {
    // Published digests pin the reference implementation itself.
    let published: [(&[u8], &str); 3] = [
        (b"", "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"),
        (b"abc", "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"),
        (
            b"abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq",
            "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1",
        ),
    ];
    for (msg, hex) in published {
        ensure(reference_sha256(msg) == hex, "reference implementation is wrong")?;
    }
    let million_a = vec![b'a'; 1_000_000];
    ensure(
        reference_sha256(&million_a)
            == "cdc76e5c9914fb9281a1c7e284d73e67f1809a48a497200e046d39ccc7112cd0",
        "reference implementation is wrong on 10^6 'a'",
    )?;

    let mut vectors: Vec<Vec<u8>> = published.iter().map(|(m, _)| m.to_vec()).collect();
    vectors.push(million_a);
    vectors.push("provenance digest \u{1f512} ünïcödé".as_bytes().to_vec());
    for len in [1, 55, 56, 63, 64, 65, 119, 120, 127, 128, 1000] {
        vectors.push((0..len).map(|i| (i * 31 + 7) as u8).collect());
    }
    for v in &vectors {
        let ours = sha256_hex(v);
        ensure(
            ours.hex() == reference_sha256(v),
            format!("mismatch on {}-byte input", v.len()),
        )?;
    }
    Ok(format!("{} vectors bit-exact, empty input included", vectors.len()))
}

// ------------------------------------------------------------ criterion 3

fn tamper_detection() -> Outcome {
    let tmp = TempDir::new().unwrap();
    let (_, archive) = packed(&tmp.path().join("run"), "synthesis_ok", Tier::Reviewer);
    let manifest = read_manifest(&archive).map_err(|e| e.to_string())?;
    let targets: Vec<String> = manifest
        .entities
        .iter()
        .filter(|e| matches!(e.role, Role::Data | Role::Provenance))
        .map(|e| e.id.clone())
        .collect();
    ensure(!targets.is_empty(), "no data/provenance members")?;
    let baseline = verify_crate(&archive);
    ensure(baseline.passed(), "untampered crate does not verify")?;

    let cases = 240;
    let strategy = (0..targets.len(), any::<prop::sample::Index>(), 1u8..=255);
    runner(cases)
        .run(&strategy, |(member, pos, mask)| {
            let mut tampered = archive.clone();
            let bytes = tampered.get_mut(&targets[member]).unwrap();
            let at = pos.index(bytes.len());
            bytes[at] ^= mask;
            let report = verify_crate(&tampered);
            prop_assert_eq!(
                report.status(CheckName::HashIntegrity),
                CheckStatus::Fail,
                "{} byte {} ^ {:#04x} went unnoticed",
                targets[member],
                at,
                mask
            );
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("{cases} flips over {} members, 0 missed", targets.len()))
}

// ------------------------------------------------------------ criterion 4

fn generated_invented_draft() -> impl Strategy<Value = (String, String)> {
    let known = prop::collection::vec(
        (strategies::words(2..8), prop::collection::btree_set(1u8..=5, 1..3)),
        1..5,
    );
    let outside = prop_oneof![
        (6u8..100).prop_map(|n| format!("P{n}")),
        "[A-OQ-Z][0-9]{1,3}",
    ];
    (known, outside, strategies::words(2..8), any::<prop::sample::Index>()).prop_map(
        |(known, outside, claim, at)| {
            let mut lines: Vec<String> = known
                .into_iter()
                .map(|(c, ids)| {
                    let ids: Vec<String> = ids.into_iter().map(|n| format!("P{n}")).collect();
                    format!("- Prior work {c} ({})", ids.join(", "))
                })
                .collect();
            let i = at.index(lines.len() + 1);
            lines.insert(i, format!("- Prior work {claim} ({outside})"));
            let text = format!(
                "RELATED WORK (DRAFT)\n\nPrior work on provenance is summarized here (Author 2020; P1).\n\nCLAIM CHECKLIST\n{}\n",
                lines.join("\n")
            );
            (text, outside)
        },
    )
}

fn citation_closure() -> Outcome {
    let tmp = TempDir::new().unwrap();
    let base = tmp.path().join("base");
    let dir = RunDir::init(&base, "closure").unwrap();
    dir.run_taxonomy(&dir.client(), &stub_config(&dir, "taxonomy_ok")).unwrap();

    let cases = 20;
    let counter = std::cell::Cell::new(0u32);
    runner(cases)
        .run(&generated_invented_draft(), |(text, outside)| {
            counter.set(counter.get() + 1);
            let root = tmp.path().join(format!("case{}", counter.get()));
            copy_dir(&base, &root);
            let dir = RunDir::open(&root).unwrap();
            fs::write(root.join("fixtures/generated.txt"), &text).unwrap();
            let fail = |e: String| TestCaseError::fail(e);
            dir.run_draft(&dir.client(), &stub_config(&dir, "generated"))
                .map_err(|e| fail(e.to_string()))?;
            let audit = dir.audit().map_err(|e| fail(e.to_string()))?;
            prop_assert!(
                audit.rows.iter().any(|r| r.status == AuditStatus::InventedCitation
                    && r.cited_ids().contains(&outside)),
                "no InventedCitation row for {}",
                outside
            );
            dir.redact(Tier::Reviewer).map_err(|e| fail(e.to_string()))?;
            dir.card().map_err(|e| fail(e.to_string()))?;
            let summary = dir.pack(Tier::Reviewer, None).map_err(|e| fail(e.to_string()))?;
            let archive = CrateArchive::read_from(&summary.path).unwrap();
            let report = verify_crate(&archive);
            prop_assert_eq!(report.status(CheckName::ClaimMapping), CheckStatus::Fail);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("{cases} generated drafts, each flagged and failing ClaimMapping"))
}

// ------------------------------------------------------------ criterion 5

fn redaction_completeness() -> Outcome {
    let timestamp = Regex::new(TIMESTAMP_PATTERN).unwrap();
    let cases = 64;
    runner(cases)
        .run(&strategies::log(), |log| {
            let out = redact(&log, &RedactionPolicy::for_tier(Tier::Reviewer));
            let json = out.to_pretty_json();
            for src in &log.records {
                for raw in [&src.prompt_text, &src.response_text].into_iter().flatten() {
                    prop_assert!(!json.contains(raw.as_str()));
                    for w in strategies::windows(raw, 8).filter(|w| !w.trim().is_empty()) {
                        prop_assert!(!json.contains(w), "{:?} survived", w);
                    }
                }
                for p in src.source_paths.iter().flatten() {
                    prop_assert!(!json.contains(p.as_str()), "path {} survived", p);
                }
                let host = src.host_id.as_deref().unwrap();
                prop_assert!(!json.contains(host));
                prop_assert!(!json.contains(host.split_once('@').unwrap().1));
            }
            prop_assert!(!timestamp.is_match(&json), "timestamp survived");
            prop_assert_eq!(out.records.len(), log.records.len());
            for (r, src) in out.records.iter().zip(&log.records) {
                prop_assert_eq!(r.digest_triple(), src.digest_triple());
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("{cases} randomized logs clean at the reviewer tier, digests intact"))
}

// ------------------------------------------------------------ criterion 6

fn packing_determinism() -> Outcome {
    let tmp = TempDir::new().unwrap();
    let original = completed_run(&tmp.path().join("run"), "synthesis_ok", Tier::Reviewer);
    let first = original.pack(Tier::Reviewer, None).unwrap().sha256;
    for rep in 0..5 {
        let mut hashes = Vec::new();
        for side in ["a", "b"] {
            let copy = tmp.path().join(format!("rep{rep}{side}"));
            copy_dir(original.root(), &copy);
            let out = tmp.path().join(format!("rep{rep}{side}.zip"));
            hashes.push(RunDir::open(&copy).unwrap().pack(Tier::Reviewer, Some(&out)).unwrap().sha256);
        }
        ensure(
            hashes[0] == hashes[1] && hashes[0] == first,
            format!("repetition {rep}: {} vs {}", hashes[0], hashes[1]),
        )?;
    }
    Ok(format!("5 repetitions, all {}", &first.hex()[..16]))
}

// ------------------------------------------------------------ criterion 7

fn round_trips() -> Outcome {
    let cases = 256;
    runner(cases)
        .run(&strategies::bundle(), |b| {
            prop_assert_eq!(parse_bundle(b.to_pretty_json().as_bytes()).unwrap(), b);
            Ok(())
        })
        .map_err(|e| format!("bundle: {e}"))?;
    runner(cases)
        .run(&strategies::draft(), |(body, _, checklist)| {
            let text = strategies::render(&body, &checklist);
            let parsed = parse_draft(&text).unwrap();
            prop_assert_eq!(&parsed.body, &body);
            prop_assert_eq!(&parsed.checklist, &checklist);
            prop_assert_eq!(parsed.to_text(), text);
            Ok(())
        })
        .map_err(|e| format!("draft: {e}"))?;
    runner(cases)
        .run(&prop::collection::vec(strategies::audit_row(), 0..8), |rows| {
            let back = read_audit_csv(&write_audit_csv(&rows)).unwrap();
            prop_assert_eq!(back, rows.iter().map(AuditCsvRow::from).collect::<Vec<_>>());
            Ok(())
        })
        .map_err(|e| format!("audit csv: {e}"))?;
    Ok(format!("bundle, draft and audit CSV: {cases} cases each"))
}

// ------------------------------------------------------------ criterion 8

fn card_completeness() -> Outcome {
    let tmp = TempDir::new().unwrap();
    let dir = completed_run(&tmp.path().join("run"), "synthesis_ok", Tier::Reviewer);
    let card = dir.card().map_err(|e| e.to_string())?;
    let names: Vec<&str> = card.sections().into_iter().map(|(n, _)| n).collect();
    ensure(names == SECTIONS, format!("sections {names:?}"))?;
    ensure(
        card.sections().iter().all(|(_, body)| !body.trim().is_empty()),
        "a section is empty",
    )?;
    let md = card.to_markdown();
    for want in ["- Temperature: 0.2\n", "- Top-p: 1.0\n", "- Max tokens: 1200\n"] {
        ensure(md.contains(want), format!("card lacks {want:?}"))?;
    }
    Ok("9 sections, temperature 0.2, top-p 1.0, max tokens 1200".into())
}

// ------------------------------------------------------------ criterion 9

fn manifest_conformance() -> Outcome {
    let tmp = TempDir::new().unwrap();
    let mut crates = 0;
    let mut deletions = 0;
    for fixture in ["synthesis_ok", "synthesis_invented"] {
        for tier in [Tier::Public, Tier::Reviewer, Tier::Auditor] {
            let root = tmp.path().join(format!("{fixture}-{tier}"));
            let (_, archive) = packed(&root, fixture, tier);
            let manifest = read_manifest(&archive).map_err(|e| format!("{fixture}/{tier}: {e}"))?;
            let mut described: Vec<&str> = manifest.entities.iter().map(|e| e.id.as_str()).collect();
            described.sort_unstable();
            let members: Vec<&str> = archive.paths().filter(|p| *p != MANIFEST_PATH).collect();
            ensure(described == members, format!("{fixture}/{tier}: entities != members"))?;
            ensure(
                manifest
                    .entities
                    .iter()
                    .all(|e| matches!(e.role, Role::Code | Role::Data | Role::Provenance)),
                "role missing",
            )?;
            for member in &members {
                let mut cut = archive.clone();
                cut.remove(member);
                match read_manifest(&cut) {
                    Err(ManifestError::DanglingEntity(p)) if p == *member => {}
                    other => return Err(format!("deleting {member}: {other:?}")),
                }
                deletions += 1;
            }
            crates += 1;
        }
    }
    Ok(format!("{crates} crates bijective, {deletions} deletions all DanglingEntity"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("end-to-end stubbed run", end_to_end),
        ("hash oracle agreement", hash_oracle),
        ("tamper detection", tamper_detection),
        ("citation closure", citation_closure),
        ("redaction completeness", redaction_completeness),
        ("packing determinism", packing_determinism),
        ("parser round trips", round_trips),
        ("card completeness", card_completeness),
        ("manifest conformance", manifest_conformance),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

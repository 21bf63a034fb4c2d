//! Revisioned on-disk snapshots: `<dir>/rev-NNNNNN/{model.txt, bank.txt,
//! state.json, manifest.txt}` plus a `CURRENT` pointer file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{HistoryEntry, MonitorSettings, MonitorState};
use crate::cluster::ClusterReport;
use crate::data::SampleRecord;
use crate::detector::{parse_bank, render_bank, DetectionMetrics};
use crate::error::{Error, Result};
use crate::nn::{parse_model, render_model};
use crate::textdoc::{hex_digest, DocReader, DocWriter};

const MANIFEST: &str = "weldwatch-revision";
const FILES: [&str; 3] = ["model.txt", "bank.txt", "state.json"];

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateDoc {
    revision: u64,
    known: Vec<SampleRecord>,
    flagged_pool: Vec<SampleRecord>,
    cluster_report: Option<ClusterReport>,
    similarity: BTreeMap<String, Vec<f64>>,
    history: BTreeMap<String, Vec<HistoryEntry>>,
    metrics: Option<DetectionMetrics>,
    settings: MonitorSettings,
}

fn revision_dir(dir: &Path, revision: u64) -> PathBuf {
    dir.join(format!("rev-{revision:06}"))
}

fn render(state: &MonitorState) -> [(&'static str, String); 4] {
    let doc = StateDoc {
        revision: state.revision,
        known: state.known.clone(),
        flagged_pool: state.flagged_pool.clone(),
        cluster_report: state.cluster_report.clone(),
        similarity: state.similarity.clone(),
        history: state.history.clone(),
        metrics: state.metrics.clone(),
        settings: state.settings.clone(),
    };
    let files = [
        render_model(&state.model),
        render_bank(&state.bank),
        serde_json::to_string_pretty(&doc).expect("state serializes"),
    ];
    let mut m = DocWriter::new(MANIFEST, 1);
    m.int("revision", state.revision);
    for (name, body) in FILES.iter().zip(&files) {
        m.line("file", &[name, &hex_digest(body)]);
    }
    let [model, bank, json] = files;
    [
        ("model.txt", model),
        ("bank.txt", bank),
        ("state.json", json),
        ("manifest.txt", m.finish()),
    ]
}

/// Writes `state` as its own revision directory and points `CURRENT` at it.
/// An existing revision is never overwritten; writing identical content
/// again is a no-op.
pub fn persist(state: &MonitorState, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let target = revision_dir(dir, state.revision);
    let files = render(state);
    if target.exists() {
        let same = files
            .iter()
            .all(|(name, body)| fs::read_to_string(target.join(name)).is_ok_and(|b| &b == body));
        if !same {
            return Err(Error::Restore {
                path: target,
                reason: "revision already exists with different content".into(),
            });
        }
    } else {
        let staging = dir.join(format!(".staging-{:06}-{}", state.revision, std::process::id()));
        let _ = fs::remove_dir_all(&staging);
        fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        for (name, body) in &files {
            let p = staging.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        fs::rename(&staging, &target).map_err(|e| Error::io(&target, e))?;
    }
    let pointer = dir.join("CURRENT");
    let tmp = dir.join(".CURRENT.tmp");
    let name = format!("rev-{:06}\n", state.revision);
    fs::write(&tmp, name).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, &pointer).map_err(|e| Error::io(&pointer, e))?;
    Ok(target)
}

/// Revisions present under `dir`, ascending.
pub fn list_revisions(dir: &Path) -> Result<Vec<u64>> {
    let mut out: Vec<u64> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str()?.strip_prefix("rev-")?.parse().ok())
        .collect();
    out.sort_unstable();
    Ok(out)
}

/// The revision `CURRENT` points at.
pub fn latest_revision(dir: &Path) -> Result<u64> {
    let p = dir.join("CURRENT");
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    text.trim()
        .strip_prefix("rev-")
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| Error::Restore {
            path: p,
            reason: format!("unreadable revision pointer `{}`", text.trim()),
        })
}

pub fn restore_latest(dir: &Path) -> Result<MonitorState> {
    restore(dir, latest_revision(dir)?)
}

/// Loads one revision, verifying every file against the manifest.
pub fn restore(dir: &Path, revision: u64) -> Result<MonitorState> {
    let rdir = revision_dir(dir, revision);
    let read = |name: &str| {
        let p = rdir.join(name);
        fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
    };
    let corrupt = |name: &str, reason: String| Error::Restore {
        path: rdir.join(name),
        reason,
    };
    let manifest = read("manifest.txt")?;
    let mut m = DocReader::open(&manifest, MANIFEST, 1).map_err(|e| corrupt("manifest.txt", e.to_string()))?;
    let listed: u64 = m.int("revision").map_err(|e| corrupt("manifest.txt", e.to_string()))?;
    if listed != revision {
        return Err(corrupt("manifest.txt", format!("manifest is for revision {listed}")));
    }
    let mut bodies = Vec::with_capacity(FILES.len());
    for name in FILES {
        let (_, vals) = m.expect("file").map_err(|e| corrupt("manifest.txt", e.to_string()))?;
        if vals.len() != 2 || vals[0] != name {
            return Err(corrupt("manifest.txt", format!("expected an entry for {name}")));
        }
        let body = read(name)?;
        if hex_digest(&body) != vals[1] {
            return Err(corrupt(name, "checksum mismatch (file corrupt or truncated)".into()));
        }
        bodies.push(body);
    }
    m.finish().map_err(|e| corrupt("manifest.txt", e.to_string()))?;
    let model = parse_model(&bodies[0]).map_err(|e| corrupt("model.txt", e.to_string()))?;
    let bank = parse_bank(&bodies[1]).map_err(|e| corrupt("bank.txt", e.to_string()))?;
    let doc: StateDoc = serde_json::from_str(&bodies[2]).map_err(|e| corrupt("state.json", e.to_string()))?;
    if doc.revision != revision {
        return Err(corrupt("state.json", format!("state is for revision {}", doc.revision)));
    }
    let state = MonitorState {
        model,
        bank,
        known: doc.known,
        flagged_pool: doc.flagged_pool,
        cluster_report: doc.cluster_report,
        similarity: doc.similarity,
        history: doc.history,
        metrics: doc.metrics,
        revision: doc.revision,
        settings: doc.settings,
    };
    state.check().map_err(|e| corrupt("state.json", e.to_string()))?;
    Ok(state)
}

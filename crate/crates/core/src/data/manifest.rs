//! Tab-separated label manifest: `slide_id, time, event, bag_path` per line,
//! `#` starts a comment line.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.tsv";

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub slide_id: String,
    /// Follow-up time in days.
    pub time: f64,
    pub event: bool,
    /// Relative to the manifest's directory.
    pub bag_path: PathBuf,
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRecord>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |detail: String| Error::Parse { line, detail };
        if raw.starts_with('#') || raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 4 {
            return Err(err(format!("expected 4 tab-separated fields, found {}", fields.len())));
        }
        let slide_id = fields[0].trim();
        if slide_id.is_empty() {
            return Err(err("empty slide id".into()));
        }
        if !seen.insert(slide_id.to_string()) {
            return Err(err(format!("duplicate slide id {slide_id:?}")));
        }
        let time: f64 = fields[1]
            .trim()
            .parse()
            .map_err(|_| err(format!("time {:?} is not a number", fields[1])))?;
        if !time.is_finite() || time < 0.0 {
            return Err(err(format!("time {time} must be finite and non-negative")));
        }
        let event = match fields[2].trim() {
            "0" => false,
            "1" => true,
            other => return Err(err(format!("event must be 0 or 1, got {other:?}"))),
        };
        let bag = fields[3].trim();
        if bag.is_empty() {
            return Err(err("empty bag path".into()));
        }
        out.push(ManifestRecord { slide_id: slide_id.to_string(), time, event, bag_path: PathBuf::from(bag) });
    }
    Ok(out)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text).map_err(|e| Error::in_file(path, e))
}

pub fn format_manifest(records: &[ManifestRecord]) -> String {
    let mut s = String::from("# slide_id\ttime\tevent\tbag_path\n");
    for r in records {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}",
            r.slide_id,
            r.time,
            u8::from(r.event),
            r.bag_path.to_string_lossy().replace('\\', "/")
        );
    }
    s
}

pub fn write_manifest(records: &[ManifestRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_manifest(records)).map_err(|e| Error::io(path, e))
}

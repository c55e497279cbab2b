//! Append-only annotation log. Every submission is one JSON line; the current
//! label of a (cell, rater) pair is its latest line.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use log::warn;
use serde::{Deserialize, Serialize};
use vitatlas::agreement::{cell_item_id, AnnotationMatrix};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationEvent {
    pub atlas_id: String,
    pub i: usize,
    pub j: usize,
    pub rater: String,
    pub label: String,
    pub timestamp_ms: u64,
    pub seq: u64,
}

#[derive(Debug)]
pub struct AnnotationStore {
    path: PathBuf,
    file: File,
    events: Vec<AnnotationEvent>,
}

impl AnnotationStore {
    /// Opens or creates the log at `path`, replaying existing events. An
    /// unterminated final line (from a crash mid-write) is cut off with a
    /// warning so later appends start on a fresh line.
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(CliError::io(path, e)),
        };
        let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
        let mut events = Vec::new();
        for (n, line) in bytes[..complete].split(|&b| b == b'\n').enumerate() {
            if line.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            let ev = serde_json::from_slice(line)
                .map_err(|e| CliError::Invalid(format!("{}:{}: {e}", path.display(), n + 1)))?;
            events.push(ev);
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| CliError::io(path, e))?;
        if complete < bytes.len() {
            warn!("{}: dropping unterminated last line", path.display());
            file.set_len(complete as u64).map_err(|e| CliError::io(path, e))?;
        }
        Ok(Self {
            path: path.to_path_buf(),
            file,
            events,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn events(&self) -> &[AnnotationEvent] {
        &self.events
    }

    /// Appends and syncs one event. Labels must be validated by the caller.
    pub fn append(&mut self, atlas_id: &str, i: usize, j: usize, rater: &str, label: &str) -> Result<AnnotationEvent> {
        let timestamp_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_millis() as u64);
        let event = AnnotationEvent {
            atlas_id: atlas_id.to_string(),
            i,
            j,
            rater: rater.to_string(),
            label: label.to_string(),
            timestamp_ms,
            seq: self.events.last().map_or(0, |e| e.seq + 1),
        };
        let mut line = serde_json::to_vec(&event)?;
        line.push(b'\n');
        self.file.write_all(&line).map_err(|e| CliError::io(&self.path, e))?;
        self.file.sync_data().map_err(|e| CliError::io(&self.path, e))?;
        self.events.push(event.clone());
        Ok(event)
    }

    /// Latest label per (cell, rater) for one atlas, ordered by cell then rater.
    pub fn current(&self, atlas_id: &str) -> Vec<AnnotationEvent> {
        let mut latest: BTreeMap<(usize, usize, &str), &AnnotationEvent> = BTreeMap::new();
        for e in self.events.iter().filter(|e| e.atlas_id == atlas_id) {
            latest.insert((e.i, e.j, e.rater.as_str()), e);
        }
        latest.into_values().cloned().collect()
    }

    /// Current labels as a matrix: items are annotated cells in grid order,
    /// raters sorted by id.
    pub fn to_matrix(&self, atlas_id: &str, vocabulary: Vec<String>) -> Result<AnnotationMatrix> {
        let current = self.current(atlas_id);
        let cells: BTreeSet<(usize, usize)> = current.iter().map(|e| (e.i, e.j)).collect();
        let raters: BTreeSet<&str> = current.iter().map(|e| e.rater.as_str()).collect();
        let cell_idx: BTreeMap<(usize, usize), usize> = cells.iter().enumerate().map(|(k, c)| (*c, k)).collect();
        let rater_idx: BTreeMap<&str, usize> = raters.iter().enumerate().map(|(k, r)| (*r, k)).collect();
        let mut grid = vec![vec![None; raters.len()]; cells.len()];
        for e in &current {
            grid[cell_idx[&(e.i, e.j)]][rater_idx[e.rater.as_str()]] = Some(e.label.clone());
        }
        Ok(AnnotationMatrix::new(
            cells.iter().map(|&(i, j)| cell_item_id(i, j)).collect(),
            raters.iter().map(|r| r.to_string()).collect(),
            vocabulary,
            grid,
        )?)
    }

    pub fn export_csv<W: Write>(&self, atlas_id: &str, vocabulary: Vec<String>, out: W) -> Result<()> {
        self.to_matrix(atlas_id, vocabulary)?.write_csv(out)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vec<String> {
        vec!["A".into(), "B".into()]
    }

    #[test]
    fn last_write_wins_and_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        {
            let mut s = AnnotationStore::open(&path).unwrap();
            s.append("x", 0, 1, "r1", "A").unwrap();
            s.append("x", 0, 1, "r1", "B").unwrap();
            s.append("x", 0, 0, "r2", "???").unwrap();
            s.append("other", 0, 0, "r2", "A").unwrap();
        }
        let s = AnnotationStore::open(&path).unwrap();
        assert_eq!(s.events().len(), 4);
        let cur = s.current("x");
        assert_eq!(cur.len(), 2);
        assert_eq!((cur[1].i, cur[1].j, cur[1].label.as_str()), (0, 1, "B"));
        let mut out = Vec::new();
        s.export_csv("x", vocab(), &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "item_id,rater_id,label\ncell_0_0,r2,???\ncell_0_1,r1,B\n"
        );
    }

    #[test]
    fn truncated_tail_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        {
            let mut s = AnnotationStore::open(&path).unwrap();
            s.append("x", 1, 1, "r", "A").unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"atlas_id\":\"x\",\"i\":").unwrap();
        let mut s = AnnotationStore::open(&path).unwrap();
        assert_eq!(s.events().len(), 1);
        assert_eq!(s.append("x", 2, 2, "r", "B").unwrap().seq, 1);
        drop(s);
        assert_eq!(AnnotationStore::open(&path).unwrap().events().len(), 2);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        std::fs::write(&path, "garbage\n{\"atlas_id\":\"x\",\"i\":0,\"j\":0,\"rater\":\"r\",\"label\":\"A\",\"timestamp_ms\":0,\"seq\":0}\n").unwrap();
        assert!(AnnotationStore::open(&path).is_err());
    }
}

//! Newline-delimited annotation records (`*.ndrec`).
//!
//! One JSON object per line, fields in [`AnnotationRecord`] order, absent
//! optional fields written as `null`. The file is append-only; a single
//! [`AnnotationStore`] holds an exclusive lock on it while readers may scan
//! it concurrently. A torn final line (no terminating newline) is ignored by
//! readers and cut off when a writer next opens the file.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::{AnnotationRecord, DatasetError};

/// Records read back from a store, plus lines that failed to decode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Replay {
    pub records: Vec<AnnotationRecord>,
    /// `(line number, reason)` for undecodable or invalid lines.
    pub rejected: Vec<(usize, String)>,
}

pub struct AnnotationStore {
    path: PathBuf,
    writer: Mutex<File>,
}

impl std::fmt::Debug for AnnotationStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnnotationStore")
            .field("path", &self.path)
            .finish()
    }
}

impl AnnotationStore {
    /// Open (creating if needed) the store for appending. Fails if another
    /// writer holds the file.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, DatasetError> {
        let path = path.into();
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(&path)
            .map_err(|e| DatasetError::io(&path, e))?;
        file.try_lock().map_err(|_| DatasetError::Io {
            path: path.display().to_string(),
            message: "store is locked by another writer".into(),
        })?;
        truncate_torn_tail(&mut file).map_err(|e| DatasetError::io(&path, e))?;
        file.seek(SeekFrom::End(0))
            .map_err(|e| DatasetError::io(&path, e))?;
        Ok(Self {
            path,
            writer: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Append one record as a single write, then sync.
    pub fn append(&self, record: &AnnotationRecord) -> Result<(), DatasetError> {
        record.validate()?;
        let mut line = serde_json::to_vec(record).expect("records always serialize");
        line.push(b'\n');
        let mut file = self.writer.lock().unwrap_or_else(|p| p.into_inner());
        file.write_all(&line)
            .map_err(|e| DatasetError::io(&self.path, e))?;
        file.sync_data()
            .map_err(|e| DatasetError::io(&self.path, e))
    }

    pub fn replay(&self) -> Result<Replay, DatasetError> {
        read_records(&self.path)
    }
}

fn truncate_torn_tail(file: &mut File) -> std::io::Result<()> {
    let mut buf = Vec::new();
    file.seek(SeekFrom::Start(0))?;
    file.read_to_end(&mut buf)?;
    if buf.is_empty() || buf.ends_with(b"\n") {
        return Ok(());
    }
    let keep = buf.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    file.set_len(keep as u64)
}

/// Decode every complete line of an `.ndrec` file.
pub fn read_records(path: &Path) -> Result<Replay, DatasetError> {
    let text = fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    Ok(decode_records(&text))
}

pub fn decode_records(text: &str) -> Replay {
    let mut out = Replay::default();
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    for (idx, line) in complete.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<AnnotationRecord>(line) {
            Ok(rec) => match rec.validate() {
                Ok(()) => out.records.push(rec),
                Err(e) => out.rejected.push((idx + 1, e.to_string())),
            },
            Err(e) => out.rejected.push((idx + 1, e.to_string())),
        }
    }
    out
}

pub fn encode_records(records: &[AnnotationRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("records always serialize"));
        s.push('\n');
    }
    s
}

/// Write a complete record file atomically (temp file + rename).
pub fn write_records(path: &Path, records: &[AnnotationRecord]) -> Result<(), DatasetError> {
    let tmp = path.with_extension("ndrec.tmp");
    fs::write(&tmp, encode_records(records)).map_err(|e| DatasetError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| DatasetError::io(path, e))
}

/// Keep only the last record per `(image_id, box_index)`, in order of first
/// appearance. Returns the number of records removed.
pub fn compact(path: &Path) -> Result<usize, DatasetError> {
    let replay = read_records(path)?;
    let before = replay.records.len();
    let mut slot: HashMap<(String, u32), usize> = HashMap::new();
    let mut latest: Vec<AnnotationRecord> = Vec::new();
    for rec in replay.records {
        let key = (rec.image_id.clone(), rec.box_index);
        match slot.get(&key) {
            Some(&i) => latest[i] = rec,
            None => {
                slot.insert(key, latest.len());
                latest.push(rec);
            }
        }
    }
    write_records(path, &latest)?;
    Ok(before - latest.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::BoundingBox;
    use crate::photogrammetry::{GroundSampling, PixelPoint};
    use crate::solar::{GeoLocation, UtcInstant};
    use chrono::NaiveDate;

    fn rec(box_index: u32, h: Option<f64>) -> AnnotationRecord {
        let mut r = AnnotationRecord::unannotated(
            "tile_7",
            box_index,
            BoundingBox::new(0, 0.25, 0.5, 0.1, 0.2).unwrap(),
            GroundSampling::patch_default(),
            GeoLocation::new(31.23, 121.47).unwrap(),
            NaiveDate::from_ymd_opt(2015, 6, 1).unwrap(),
        );
        r.gt_height_m = h;
        r.shadow_start_px = Some(PixelPoint::new(1.0 / 3.0, 2.0));
        r.shadow_end_px = Some(PixelPoint::new(7.125, 9.0));
        r.capture_time = Some(UtcInstant::from_ymd_hms(2015, 6, 1, 2, 3, 4).unwrap());
        r
    }

    #[test]
    fn null_tokens_and_field_order() {
        let line = serde_json::to_string(&rec(0, None)).unwrap();
        let fields = [
            "image_id",
            "box_index",
            "bbox",
            "shadow_start_px",
            "shadow_end_px",
            "vertical_edge_px",
            "gsd_m_per_px",
            "loc",
            "capture_date",
            "capture_time",
            "gt_height_m",
            "gt_floors",
        ];
        let mut last = 0;
        for f in fields {
            let pos = line
                .find(&format!("\"{f}\""))
                .unwrap_or_else(|| panic!("{f} missing"));
            assert!(pos >= last, "{f} out of order");
            last = pos;
        }
        assert!(line.contains("\"vertical_edge_px\":null"));
        assert!(line.contains("\"gt_height_m\":null"));
    }

    #[test]
    fn append_then_replay_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ndrec");
        let records = vec![rec(0, Some(12.0)), rec(1, None), rec(0, Some(15.0))];
        {
            let store = AnnotationStore::open(&path).unwrap();
            for r in &records {
                store.append(r).unwrap();
            }
        }
        let store = AnnotationStore::open(&path).unwrap();
        assert_eq!(store.replay().unwrap().records, records);
    }

    #[test]
    fn second_writer_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ndrec");
        let _first = AnnotationStore::open(&path).unwrap();
        assert!(AnnotationStore::open(&path).is_err());
    }

    #[test]
    fn torn_tail_is_ignored_then_cut() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ndrec");
        let mut text = encode_records(&[rec(0, Some(3.0))]);
        text.push_str("{\"image_id\":\"tile_7\",\"box");
        fs::write(&path, &text).unwrap();
        assert_eq!(read_records(&path).unwrap().records.len(), 1);
        let store = AnnotationStore::open(&path).unwrap();
        store.append(&rec(1, Some(6.0))).unwrap();
        let replay = store.replay().unwrap();
        assert_eq!(replay.records.len(), 2);
        assert!(replay.rejected.is_empty());
    }

    #[test]
    fn invalid_lines_are_rejected_not_fatal() {
        let mut bad = rec(3, Some(3.0));
        bad.shadow_end_px = None;
        let mut text = encode_records(&[rec(0, Some(3.0))]);
        text.push_str(&serde_json::to_string(&bad).unwrap());
        text.push_str("\nnot json\n");
        let replay = decode_records(&text);
        assert_eq!(replay.records.len(), 1);
        assert_eq!(
            replay.rejected.iter().map(|r| r.0).collect::<Vec<_>>(),
            vec![2, 3]
        );
    }

    #[test]
    fn compaction_keeps_latest_per_box() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ndrec");
        write_records(
            &path,
            &[rec(0, Some(3.0)), rec(1, Some(6.0)), rec(0, Some(9.0))],
        )
        .unwrap();
        assert_eq!(compact(&path).unwrap(), 1);
        let left = read_records(&path).unwrap().records;
        assert_eq!(left, vec![rec(0, Some(9.0)), rec(1, Some(6.0))]);
    }
}

//! Line-oriented ROI manifests.
//!
//! One tab-separated record per ROI: relative path, class id, source index
//! (phantom field or input cube), and the blob's inclusive bounding box.
//! Unknown values are written as `-`; lines starting with `#` are comments.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::segment::BBox;

pub const HEADER: &str = "# path\tclass_id\tsource\tx0\ty0\tx1\ty1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub path: String,
    pub class_id: Option<usize>,
    pub source_index: Option<usize>,
    pub bbox: BBox,
}

fn opt(v: Option<usize>) -> String {
    v.map_or_else(|| "-".to_string(), |v| v.to_string())
}

pub fn format_manifest(records: &[ManifestRecord]) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for r in records {
        let b = r.bbox;
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.path,
            opt(r.class_id),
            opt(r.source_index),
            b.x0,
            b.y0,
            b.x1,
            b.y1
        )
        .unwrap();
    }
    out
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRecord>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |what: &str| Error::MalformedFile(format!("manifest line {}: {what}", n + 1));
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 7 {
            return Err(bad("expected 7 tab-separated fields"));
        }
        let opt = |s: &str| -> Result<Option<usize>> {
            if s == "-" {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad("bad integer"))
            }
        };
        let int = |s: &str| -> Result<usize> { s.parse().map_err(|_| bad("bad integer")) };
        out.push(ManifestRecord {
            path: fields[0].to_string(),
            class_id: opt(fields[1])?,
            source_index: opt(fields[2])?,
            bbox: BBox {
                x0: int(fields[3])?,
                y0: int(fields[4])?,
                x1: int(fields[5])?,
                y1: int(fields[6])?,
            },
        });
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    fs::write(path, format_manifest(records)).map_err(|e| Error::from(e).at(path))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::from(e).at(path))?;
    parse_manifest(&text).map_err(|e| e.at(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_round_trip() {
        let recs = vec![
            ManifestRecord {
                path: "rois/a.samscube".into(),
                class_id: Some(3),
                source_index: Some(12),
                bbox: BBox { x0: 1, y0: 2, x1: 30, y1: 40 },
            },
            ManifestRecord {
                path: "rois/b.samscube".into(),
                class_id: None,
                source_index: None,
                bbox: BBox { x0: 0, y0: 0, x1: 0, y1: 0 },
            },
        ];
        let text = format_manifest(&recs);
        assert!(text.contains("rois/b.samscube\t-\t-\t0\t0\t0\t0\n"));
        assert_eq!(parse_manifest(&text).unwrap(), recs);
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(parse_manifest("a\t1\t2\n").is_err());
        assert!(parse_manifest("a\tx\t2\t0\t0\t0\t0\n").is_err());
    }
}

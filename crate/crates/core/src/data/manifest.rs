//! JSON dataset manifests:
//!
//! ```json
//! {"images": [{"path": "a.pgm", "points": [[r, c], ...], "scene": "S1", "roi": [[r, c], ...]}]}
//! ```
//!
//! Paths are relative to the manifest's directory. `scene`, `roi` and the
//! top-level `split` are optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groundtruth::{AnnotatedImage, Point};
use crate::io::{self, pgm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireEntry {
    path: String,
    points: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scene: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    roi: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireManifest {
    images: Vec<WireEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: String,
    pub points: Vec<Point>,
    pub scene: Option<String>,
    pub roi: Option<Vec<Point>>,
}

impl ManifestEntry {
    pub fn count(&self) -> usize {
        self.points.len()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub split: Option<Split>,
    /// Directory that entry paths are resolved against.
    pub base_dir: PathBuf,
}

fn to_points(raw: Vec<[f64; 2]>) -> Vec<Point> {
    raw.into_iter().map(|[r, c]| Point::new(r, c)).collect()
}

fn from_points(pts: &[Point]) -> Vec<[f64; 2]> {
    pts.iter().map(|p| [p.row, p.col]).collect()
}

/// Parse manifest text and check everything that does not need the images.
pub fn parse_manifest(text: &str) -> Result<DatasetManifest> {
    let wire: WireManifest = serde_json::from_str(text).map_err(|e| Error::Manifest {
        line: e.line(),
        column: e.column(),
        reason: e.to_string(),
    })?;
    let entries = wire
        .images
        .into_iter()
        .map(|w| ManifestEntry {
            path: w.path,
            points: to_points(w.points),
            scene: w.scene,
            roi: w.roi.map(to_points),
        })
        .collect::<Vec<_>>();
    for e in &entries {
        if e.path.is_empty() {
            return Err(Error::invalid("manifest entry with an empty path"));
        }
        if let Some(roi) = &e.roi {
            if roi.len() < 3 {
                return Err(Error::invalid(format!(
                    "entry {}: ROI polygon needs at least 3 vertices",
                    e.path
                )));
            }
        }
    }
    Ok(DatasetManifest {
        entries,
        split: wire.split,
        base_dir: PathBuf::new(),
    })
}

impl DatasetManifest {
    pub fn to_json(&self) -> String {
        let wire = WireManifest {
            images: self
                .entries
                .iter()
                .map(|e| WireEntry {
                    path: e.path.clone(),
                    points: from_points(&e.points),
                    scene: e.scene.clone(),
                    roi: e.roi.as_deref().map(from_points),
                })
                .collect(),
            split: self.split,
        };
        let mut s = serde_json::to_string_pretty(&wire).expect("manifest serialises");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_file(path, self.to_json().as_bytes())
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.base_dir.join(&entry.path)
    }

    pub fn counts(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.count() as f64).collect()
    }

    pub fn total_count(&self) -> usize {
        self.entries.iter().map(ManifestEntry::count).sum()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// A manifest over a subset of entries, sharing the base directory.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            entries: indices.iter().map(|&i| self.entries[i].clone()).collect(),
            split: self.split,
            base_dir: self.base_dir.clone(),
        }
    }

    pub fn load_image(&self, entry: &ManifestEntry) -> Result<AnnotatedImage> {
        let pixels = pgm::read(&self.resolve(entry))?.to_grid();
        AnnotatedImage::new(entry.path.clone(), pixels, entry.points.clone())
    }

    pub fn load_images(&self) -> Result<Vec<AnnotatedImage>> {
        self.entries.iter().map(|e| self.load_image(e)).collect()
    }
}

/// Read, parse and validate a manifest against the images it names.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let bytes = io::read_file(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::Manifest {
        line: 1 + bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count(),
        column: 0,
        reason: "manifest is not valid UTF-8".into(),
    })?;
    let mut m = parse_manifest(text)?;
    m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    for e in &m.entries {
        let (h, w) = pgm::read_dims(&m.resolve(e))?;
        // ROI vertices may sit on the far image edge; annotations may not
        let roi_outside = |p: &&Point| !(p.row >= 0.0 && p.col >= 0.0 && p.row <= h as f64 && p.col <= w as f64);
        let outside = e
            .points
            .iter()
            .find(|p| !p.inside(h, w))
            .or_else(|| e.roi.iter().flatten().find(roi_outside));
        if let Some(p) = outside {
            return Err(Error::PointOutOfBounds {
                id: e.path.clone(),
                row: p.row,
                col: p.col,
                height: h,
                width: w,
            });
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_optional_fields_and_duplicates() {
        let m = parse_manifest(
            r#"{"images":[{"path":"a.pgm","points":[]},
                {"path":"b.pgm","points":[[1,2],[1,2]],"scene":"S2","roi":[[0,0],[0,5],[5,5]]}],
                "split":"test"}"#,
        )
        .unwrap();
        assert_eq!(m.entries[0].count(), 0);
        assert_eq!(m.entries[1].count(), 2);
        assert_eq!(m.entries[1].scene.as_deref(), Some("S2"));
        assert_eq!(m.split, Some(Split::Test));
        assert_eq!(m.total_count(), 2);
    }

    #[test]
    fn malformed_reports_line() {
        let err = parse_manifest("{\n\"images\": [\n{\"path\": \"a\", \"points\": [[1]]}\n]}").unwrap_err();
        match err {
            Error::Manifest { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_manifest(r#"{"images":[{"path":"a","points":[],"roi":[[0,0],[1,1]]}]}"#).is_err());
        assert!(parse_manifest(r#"{"images":[],"extra":1}"#).is_err());
    }

    #[test]
    fn serialised_form_is_stable() {
        let text = r#"{"images":[{"path":"x.pgm","points":[[1.5,2],[3,4]],"roi":[[0,0],[0,9],[9,9]]}]}"#;
        let once = parse_manifest(text).unwrap().to_json();
        let twice = parse_manifest(&once).unwrap().to_json();
        assert_eq!(once, twice);
    }
}

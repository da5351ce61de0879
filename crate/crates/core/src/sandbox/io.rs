//! On-disk dataset layout: `manifest.json` plus three little-endian `f32`
//! files per sample (`<id>_f1.f32`, `<id>_f2.f32`, `<id>_flow.f32`), each a
//! row-major `rows×3` array.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cloud::{FlowField, Mechanism, PointCloud, SceneMeta, ScenePair};
use crate::error::{Error, Result};

pub const FORMAT_NAME: &str = "sceneflow-sandbox";
pub const FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const ROW_BYTES: u64 = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub frame1: String,
    pub frame2: String,
    pub flow: String,
    /// Frame-1 point count.
    pub n: usize,
    /// Frame-2 point count.
    pub m: usize,
    pub mechanism: Mechanism,
    pub seed: u64,
    pub n_objects: usize,
    pub object_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub sample_count: usize,
    pub samples: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Malformed {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        if manifest.format != FORMAT_NAME || manifest.version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                expected: format!("{FORMAT_NAME} v{FORMAT_VERSION}"),
                found: format!("{} v{}", manifest.format, manifest.version),
            });
        }
        if manifest.sample_count != manifest.samples.len() {
            return Err(Error::Inconsistent(format!(
                "manifest declares {} samples but lists {}",
                manifest.sample_count,
                manifest.samples.len()
            )));
        }
        Ok(manifest)
    }
}

fn encode(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a `rows×3` array, checking the byte length against the manifest.
fn read_array(path: &Path, rows: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let len = bytes.len() as u64;
    if len % ROW_BYTES != 0 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            len,
        });
    }
    if len / ROW_BYTES != rows as u64 {
        return Err(Error::Inconsistent(format!(
            "{} holds {} points but the manifest says {rows}",
            path.display(),
            len / ROW_BYTES
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn write_dataset(pairs: &[ScenePair<f32>], dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut samples = Vec::with_capacity(pairs.len());
    for (i, pair) in pairs.iter().enumerate() {
        let id = format!("{i:06}");
        let record = SampleRecord {
            frame1: format!("{id}_f1.f32"),
            frame2: format!("{id}_f2.f32"),
            flow: format!("{id}_flow.f32"),
            id,
            n: pair.frame1.len(),
            m: pair.frame2.len(),
            mechanism: pair.meta.mechanism,
            seed: pair.meta.seed,
            n_objects: pair.meta.n_objects,
            object_sizes: pair.meta.object_sizes.clone(),
        };
        write_file(&dir.join(&record.frame1), &encode(&pair.frame1.flat()))?;
        write_file(&dir.join(&record.frame2), &encode(&pair.frame2.flat()))?;
        write_file(&dir.join(&record.flow), &encode(&pair.gt_flow.flat()))?;
        samples.push(record);
    }
    let manifest = DatasetManifest {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        sample_count: samples.len(),
        samples,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    write_file(&dir.join(MANIFEST), text.as_bytes())?;
    Ok(manifest)
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Vec<ScenePair<f32>>> {
    let dir = dir.as_ref();
    let manifest = DatasetManifest::load(dir)?;
    manifest
        .samples
        .iter()
        .map(|s| {
            let file = |name: &str| -> PathBuf { dir.join(name) };
            if s.object_sizes.iter().sum::<usize>() != s.n {
                return Err(Error::Inconsistent(format!(
                    "sample {}: object sizes do not add up to {}",
                    s.id, s.n
                )));
            }
            let frame1 = PointCloud::from_flat(&read_array(&file(&s.frame1), s.n)?)?;
            let frame2 = PointCloud::from_flat(&read_array(&file(&s.frame2), s.m)?)?;
            let flow = FlowField::from_flat(&read_array(&file(&s.flow), s.n)?)?;
            ScenePair::new(
                frame1,
                frame2,
                flow,
                SceneMeta {
                    mechanism: s.mechanism,
                    n_objects: s.n_objects,
                    seed: s.seed,
                    object_sizes: s.object_sizes.clone(),
                },
            )
            .map_err(|e| Error::Inconsistent(format!("sample {}: {e}", s.id)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sandbox::{generate_dataset, SceneSpec};

    fn small() -> Vec<ScenePair<f32>> {
        let spec = SceneSpec {
            points_per_cloud: 32,
            n_objects: 2,
            object_scale: (0.3, 0.6),
            ..SceneSpec::default()
        };
        generate_dataset(&spec, 3, 5, 0).unwrap()
    }

    fn raw_bytes(pairs: &[ScenePair<f32>]) -> Vec<Vec<u32>> {
        pairs
            .iter()
            .map(|p| {
                p.frame1
                    .flat()
                    .into_iter()
                    .chain(p.frame2.flat())
                    .chain(p.gt_flow.flat())
                    .map(f32::to_bits)
                    .collect()
            })
            .collect()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = small();
        write_dataset(&pairs, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(raw_bytes(&pairs), raw_bytes(&back));
        assert_eq!(pairs, back);
    }

    #[test]
    fn empty_dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_dataset(&[], dir.path()).unwrap();
        assert_eq!(m.sample_count, 0);
        assert!(read_dataset(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn short_file_is_inconsistent() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = small();
        write_dataset(&pairs, dir.path()).unwrap();
        let path = dir.path().join("000001_f1.f32");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 12]).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Inconsistent(_))));
        fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Truncated { .. })));
    }

    #[test]
    fn version_mismatch_detected() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&small(), dir.path()).unwrap();
        let path = dir.path().join(MANIFEST);
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, text.replace("\"version\": 1", "\"version\": 7")).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::VersionMismatch { .. })));
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&small(), dir.path()).unwrap();
        fs::remove_file(dir.path().join("000000_flow.f32")).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Io { .. })));
    }
}

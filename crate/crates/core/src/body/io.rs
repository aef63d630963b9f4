//! Dataset on disk: `manifest.json` plus one directory of blobs per sample.
//!
//! Blob layout: `b"LMTS"`, version `u32`, rows `u32`, cols `u32` (all
//! little-endian), then `rows × cols` little-endian `f32` values, row-major.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::sample::{EvalOnly, SampleConfig, TrainingSample};
use crate::error::{Error, Result};
use crate::render::CameraParams;
use crate::tensor::Tensor;

pub const BLOB_MAGIC: &[u8; 4] = b"LMTS";
pub const BLOB_VERSION: u32 = 1;
pub const MANIFEST_VERSION: u32 = 1;

pub fn encode_blob(rows: usize, cols: usize, data: &[f32]) -> Result<Vec<u8>> {
    if rows * cols != data.len() {
        return Err(Error::dim("blob", rows * cols, data.len()));
    }
    let mut out = Vec::with_capacity(16 + 4 * data.len());
    out.extend_from_slice(BLOB_MAGIC);
    out.extend_from_slice(&BLOB_VERSION.to_le_bytes());
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for x in data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_blob(bytes: &[u8], name: &str) -> Result<(usize, usize, Vec<f32>)> {
    if bytes.len() < 16 || &bytes[..4] != BLOB_MAGIC {
        return Err(Error::format(name, "missing LMTS header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let (version, rows, cols) = (word(4), word(8) as usize, word(12) as usize);
    if version != BLOB_VERSION {
        return Err(Error::format(name, format!("unsupported blob version {version}")));
    }
    if bytes.len() != 16 + 4 * rows * cols {
        return Err(Error::format(name, format!("expected {rows}x{cols} floats, got {} bytes", bytes.len() - 16)));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((rows, cols, data))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFiles {
    pub input_channels: String,
    pub gt_joints_2d: String,
    pub gt_joints_3d: String,
    pub gt_part_masks: String,
    pub gt_mesh: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub index: usize,
    pub camera_gt: CameraParams<f32>,
    pub files: SampleFiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub height: usize,
    pub width: usize,
    pub joints: usize,
    pub parts: usize,
    pub vertices: usize,
    pub seed: u64,
    pub template_seed: u64,
    pub sample_config: SampleConfig,
    pub samples: Vec<SampleEntry>,
}

fn flat2(points: &[[f32; 2]]) -> Vec<f32> {
    points.iter().flatten().copied().collect()
}

fn flat3(points: &[[f32; 3]]) -> Vec<f32> {
    points.iter().flatten().copied().collect()
}

pub fn write_dataset(
    dir: &Path,
    samples: &[TrainingSample<f32>],
    seed: u64,
    template_seed: u64,
    config: &SampleConfig,
) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir)?;
    let first = samples.first().ok_or_else(|| Error::Invalid("empty dataset".into()))?;
    let (h, w) = (first.height(), first.width());
    let k = first.gt_joints_3d.len();
    let z = first.gt_part_masks.shape()[2];
    let mut entries = Vec::with_capacity(samples.len());
    for (index, s) in samples.iter().enumerate() {
        let stem = format!("sample_{index:05}");
        let files = SampleFiles {
            input_channels: format!("{stem}/input_channels.bin"),
            gt_joints_2d: format!("{stem}/gt_joints_2d.bin"),
            gt_joints_3d: format!("{stem}/gt_joints_3d.bin"),
            gt_part_masks: format!("{stem}/gt_part_masks.bin"),
            gt_mesh: format!("{stem}/gt_mesh.bin"),
        };
        std::fs::create_dir_all(dir.join(&stem))?;
        let mesh = s.gt_mesh.reveal();
        let blobs = [
            (&files.input_channels, h * w, k + z, s.input_channels.data().to_vec()),
            (&files.gt_joints_2d, k, 2, flat2(&s.gt_joints_2d)),
            (&files.gt_joints_3d, k, 3, flat3(&s.gt_joints_3d)),
            (&files.gt_part_masks, h * w, z, s.gt_part_masks.data().to_vec()),
            (&files.gt_mesh, mesh.len(), 3, flat3(mesh)),
        ];
        for (name, rows, cols, data) in blobs {
            std::fs::write(dir.join(name), encode_blob(rows, cols, &data)?)?;
        }
        entries.push(SampleEntry {
            index,
            camera_gt: s.camera_gt,
            files,
        });
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        height: h,
        width: w,
        joints: k,
        parts: z,
        vertices: first.gt_mesh.reveal().len(),
        seed,
        template_seed,
        sample_config: *config,
        samples: entries,
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join("manifest.json");
    let manifest: DatasetManifest = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::format(path.display().to_string(), format!("unsupported manifest version {}", manifest.version)));
    }
    Ok(manifest)
}

fn load_blob(dir: &Path, name: &str, rows: usize, cols: usize) -> Result<Vec<f32>> {
    let path = dir.join(name);
    let label = path.display().to_string();
    let (r, c, data) = decode_blob(&std::fs::read(&path)?, &label)?;
    if (r, c) != (rows, cols) {
        return Err(Error::format(label, format!("expected {rows}x{cols}, found {r}x{c}")));
    }
    Ok(data)
}

pub fn read_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<TrainingSample<f32>>)> {
    let m = read_manifest(dir)?;
    let (h, w, k, z, n) = (m.height, m.width, m.joints, m.parts, m.vertices);
    let samples = m
        .samples
        .iter()
        .map(|e| {
            let j2 = load_blob(dir, &e.files.gt_joints_2d, k, 2)?;
            let j3 = load_blob(dir, &e.files.gt_joints_3d, k, 3)?;
            let mesh = load_blob(dir, &e.files.gt_mesh, n, 3)?;
            Ok(TrainingSample {
                input_channels: Tensor::from_vec(&[h, w, k + z], load_blob(dir, &e.files.input_channels, h * w, k + z)?)?,
                gt_joints_2d: j2.chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
                gt_joints_3d: j3.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
                gt_part_masks: Tensor::from_vec(&[h, w, z], load_blob(dir, &e.files.gt_part_masks, h * w, z)?)?,
                gt_mesh: EvalOnly::new(mesh.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()),
                camera_gt: e.camera_gt,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((m, samples))
}

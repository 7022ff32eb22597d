//! Dataset container and feature plumbing.
//!
//! A dataset is a JSON manifest next to a flat little-endian f32 blob; the
//! manifest indexes per-video feature matrices by byte offset and carries a
//! CRC32 per blob slice. Annotations (segments, tokens, scene frames) live
//! inline in the manifest.

pub mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::postproc::SceneFrame;

pub const DATASET_VERSION: u32 = 1;
pub const CLIP_SECONDS: f64 = 0.5;
/// Category vocabulary of the full task; synthetic configs may use fewer.
pub const FULL_CATEGORY_COUNT: usize = 82;

/// Row-major f32 feature matrix (rows = time steps).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl FeatMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<FeatMatrix> {
        if rows * cols != data.len() {
            return Err(Error::Input(format!(
                "feature matrix {rows}x{cols} expects {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(FeatMatrix { rows, cols, data })
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

/// One annotated ground-truth segment, in seconds. The first label id is the
/// segment's primary category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtSegment {
    pub start_s: f64,
    pub end_s: f64,
    pub label_ids: Vec<u32>,
}

/// One video worth of features and annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    pub duration_s: f64,
    pub video_feats: FeatMatrix,
    pub audio_feats: FeatMatrix,
    pub token_ids: Vec<u32>,
    pub text_vecs: Option<FeatMatrix>,
    pub scene_frames: Vec<SceneFrame>,
    pub gt_segments: Vec<GtSegment>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BlobRef {
    offset: u64,
    rows: usize,
    cols: usize,
    crc32: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RecordMeta {
    id: String,
    duration_s: f64,
    video: BlobRef,
    audio: BlobRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text_vecs: Option<BlobRef>,
    token_ids: Vec<u32>,
    scene_frames: Vec<SceneFrame>,
    gt_segments: Vec<GtSegment>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetManifest {
    version: u32,
    vocab_size: usize,
    d_v: usize,
    d_a: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    d_text: Option<usize>,
    n_categories: usize,
    clip_seconds: f64,
    blob: String,
    records: Vec<RecordMeta>,
}

/// In-memory dataset: manifest-level facts plus all records.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab_size: usize,
    pub d_v: usize,
    pub d_a: usize,
    pub d_text: Option<usize>,
    pub n_categories: usize,
    pub clip_seconds: f64,
    pub records: Vec<VideoRecord>,
}

/// Number of 0.5 s clips covering a duration; the last clip may be short.
pub fn clip_count(duration_s: f64, clip_s: f64) -> usize {
    ((duration_s / clip_s) - 1e-9).ceil().max(1.0) as usize
}

fn crc32(data: &[u8]) -> u32 {
    // IEEE 802.3 reflected CRC32.
    let mut table = [0u32; 256];
    for (i, slot) in table.iter_mut().enumerate() {
        let mut c = i as u32;
        for _ in 0..8 {
            c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
        }
        *slot = c;
    }
    let mut crc = 0xFFFF_FFFFu32;
    for &b in data {
        crc = table[((crc ^ b as u32) & 0xFF) as usize] ^ (crc >> 8);
    }
    crc ^ 0xFFFF_FFFF
}

fn blob_path_for(manifest_path: &Path, blob_name: &str) -> PathBuf {
    manifest_path
        .parent()
        .map(|d| d.join(blob_name))
        .unwrap_or_else(|| PathBuf::from(blob_name))
}

impl Dataset {
    /// Writes `<path>` (JSON manifest) and the blob file it names.
    /// Validation happens on load, not here.
    pub fn save(&self, path: &Path) -> Result<()> {
        let blob_name = path
            .file_stem()
            .map(|s| format!("{}.bin", s.to_string_lossy()))
            .unwrap_or_else(|| "features.bin".to_string());
        let mut blob: Vec<u8> = Vec::new();
        let mut push = |m: &FeatMatrix| -> BlobRef {
            let offset = blob.len() as u64;
            let start = blob.len();
            for v in &m.data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            BlobRef {
                offset,
                rows: m.rows,
                cols: m.cols,
                crc32: crc32(&blob[start..]),
            }
        };
        let mut records = Vec::with_capacity(self.records.len());
        for r in &self.records {
            let video = push(&r.video_feats);
            let audio = push(&r.audio_feats);
            let text_vecs = r.text_vecs.as_ref().map(&mut push);
            records.push(RecordMeta {
                id: r.id.clone(),
                duration_s: r.duration_s,
                video,
                audio,
                text_vecs,
                token_ids: r.token_ids.clone(),
                scene_frames: r.scene_frames.clone(),
                gt_segments: r.gt_segments.clone(),
            });
        }
        let manifest = DatasetManifest {
            version: DATASET_VERSION,
            vocab_size: self.vocab_size,
            d_v: self.d_v,
            d_a: self.d_a,
            d_text: self.d_text,
            n_categories: self.n_categories,
            clip_seconds: self.clip_seconds,
            blob: blob_name.clone(),
            records,
        };
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        fs::write(path, serde_json::to_vec_pretty(&manifest)?)?;
        fs::write(blob_path_for(path, &blob_name), blob)?;
        Ok(())
    }

    /// Loads and validates a dataset; any invariant violation is an error
    /// naming the offending video.
    pub fn load(path: &Path) -> Result<Dataset> {
        let manifest: DatasetManifest = serde_json::from_slice(&fs::read(path).map_err(|e| {
            Error::Dataset(format!("cannot read {}: {e}", path.display()))
        })?)?;
        if manifest.version != DATASET_VERSION {
            return Err(Error::Dataset(format!(
                "unsupported dataset version {}",
                manifest.version
            )));
        }
        let blob = fs::read(blob_path_for(path, &manifest.blob))?;
        let slice = |r: &BlobRef, id: &str| -> Result<FeatMatrix> {
            let start = r.offset as usize;
            let nbytes = r.rows * r.cols * 4;
            if start + nbytes > blob.len() {
                return Err(Error::Dataset(format!(
                    "video {id}: blob slice out of range"
                )));
            }
            let bytes = &blob[start..start + nbytes];
            if crc32(bytes) != r.crc32 {
                return Err(Error::Dataset(format!(
                    "video {id}: feature blob checksum mismatch"
                )));
            }
            let data: Vec<f32> = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            FeatMatrix::new(r.rows, r.cols, data)
        };
        let mut records = Vec::with_capacity(manifest.records.len());
        for m in &manifest.records {
            let rec = VideoRecord {
                id: m.id.clone(),
                duration_s: m.duration_s,
                video_feats: slice(&m.video, &m.id)?,
                audio_feats: slice(&m.audio, &m.id)?,
                token_ids: m.token_ids.clone(),
                text_vecs: m.text_vecs.as_ref().map(|r| slice(r, &m.id)).transpose()?,
                scene_frames: m.scene_frames.clone(),
                gt_segments: m.gt_segments.clone(),
            };
            validate_record(&rec, manifest.vocab_size, manifest.n_categories)?;
            records.push(rec);
        }
        Ok(Dataset {
            vocab_size: manifest.vocab_size,
            d_v: manifest.d_v,
            d_a: manifest.d_a,
            d_text: manifest.d_text,
            n_categories: manifest.n_categories,
            clip_seconds: manifest.clip_seconds,
            records,
        })
    }
}

const TILING_TOLERANCE: f64 = 1e-6;

/// Checks the per-record invariants: segments sorted, non-overlapping and
/// tiling [0, duration]; labels present and in range; features finite.
pub fn validate_record(r: &VideoRecord, vocab_size: usize, n_categories: usize) -> Result<()> {
    let fail = |msg: String| Err(Error::Dataset(format!("video {}: {msg}", r.id)));
    if !(r.duration_s > 0.0) {
        return fail(format!("non-positive duration {}", r.duration_s));
    }
    if r.gt_segments.is_empty() {
        return fail("no ground-truth segments".into());
    }
    let mut cursor = 0.0;
    for (k, seg) in r.gt_segments.iter().enumerate() {
        if !(seg.start_s < seg.end_s) {
            return fail(format!("segment {k} is degenerate ({}..{})", seg.start_s, seg.end_s));
        }
        if (seg.start_s - cursor).abs() > TILING_TOLERANCE {
            return fail(format!(
                "gap or overlap at {:.3}s: segment {k} starts at {:.3}s",
                cursor, seg.start_s
            ));
        }
        if seg.label_ids.is_empty() {
            return fail(format!("segment {k} has no labels"));
        }
        if let Some(&bad) = seg.label_ids.iter().find(|&&l| l as usize >= n_categories)
        {
            return fail(format!("segment {k} label {bad} out of range"));
        }
        cursor = seg.end_s;
    }
    if (cursor - r.duration_s).abs() > TILING_TOLERANCE {
        return fail(format!(
            "segments end at {:.3}s but duration is {:.3}s",
            cursor, r.duration_s
        ));
    }
    if let Some(&bad) = r.token_ids.iter().find(|&&t| t as usize >= vocab_size) {
        return fail(format!("token id {bad} out of range"));
    }
    for f in &r.scene_frames {
        if !(0.0..=r.duration_s).contains(&f.time) || !(0.0..=1.0).contains(&f.prob) {
            return fail(format!("scene frame ({}, {}) out of range", f.time, f.prob));
        }
    }
    for (name, m) in [("video", &r.video_feats), ("audio", &r.audio_feats)] {
        if m.rows == 0 {
            return fail(format!("{name} features are empty"));
        }
        if m.data.iter().any(|v| !v.is_finite()) {
            return fail(format!("{name} features contain non-finite values"));
        }
    }
    Ok(())
}

/// Linear interpolation along the time axis (endpoints preserved); the 1-D
/// case of resampling both streams onto the common clip grid.
pub fn resample_features(data: &[f64], m0: usize, d: usize, m: usize) -> Result<Vec<f64>> {
    if m0 == 0 {
        return Err(Error::Input("resample_features: empty input".into()));
    }
    if data.len() != m0 * d {
        return Err(Error::Input(format!(
            "resample_features: {} values for {m0}x{d}",
            data.len()
        )));
    }
    if m == 0 {
        return Err(Error::Input("resample_features: empty target".into()));
    }
    if m == m0 {
        return Ok(data.to_vec());
    }
    let mut out = vec![0.0; m * d];
    for i in 0..m {
        let pos = if m == 1 {
            (m0 - 1) as f64 / 2.0
        } else {
            i as f64 * (m0 - 1) as f64 / (m - 1) as f64
        };
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(m0 - 1);
        let frac = pos - lo as f64;
        for c in 0..d {
            out[i * d + c] = (1.0 - frac) * data[lo * d + c] + frac * data[hi * d + c];
        }
    }
    Ok(out)
}

impl VideoRecord {
    /// Clip count on the common grid for this record.
    pub fn clips(&self, clip_s: f64) -> usize {
        clip_count(self.duration_s, clip_s)
    }

    /// Video and audio features resampled to the clip grid, as f64.
    pub fn resampled(&self, clip_s: f64) -> Result<(usize, Vec<f64>, Vec<f64>)> {
        let m = self.clips(clip_s);
        let v = resample_features(
            &self.video_feats.to_f64(),
            self.video_feats.rows,
            self.video_feats.cols,
            m,
        )?;
        let a = resample_features(
            &self.audio_feats.to_f64(),
            self.audio_feats.rows,
            self.audio_feats.cols,
            m,
        )?;
        Ok((m, v, a))
    }

    /// Internal ground-truth boundaries (segment joins), in seconds.
    pub fn internal_boundaries(&self) -> Vec<f64> {
        self.gt_segments
            .iter()
            .take(self.gt_segments.len().saturating_sub(1))
            .map(|s| s.end_s)
            .collect()
    }
}

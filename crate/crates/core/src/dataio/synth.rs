//! Synthetic feature datasets: class-conditioned Gaussian features on the
//! clip grid, category token pools for captions, scene frames at true
//! boundaries, and a linear-probe self-test guarding separability.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::postproc::SceneFrame;

use super::{clip_count, Dataset, FeatMatrix, GtSegment, VideoRecord, CLIP_SECONDS};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_videos: usize,
    /// Clips per video (0.5 s each).
    pub clips: usize,
    pub categories: usize,
    pub d_v: usize,
    pub d_a: usize,
    pub vocab_size: usize,
    pub seed: u64,
    /// Per-dimension noise around the class means.
    pub video_noise: f64,
    pub audio_noise: f64,
    pub mean_scale: f64,
    /// Scale of a per-video constant offset added to every frame of both
    /// streams. Constant across each boundary, so segmentation is
    /// unaffected, but classifiers must cancel it from global context.
    pub context_shift: f64,
    /// Scene frames sit at true boundaries plus up to this jitter. Kept
    /// under a quarter clip so snapping aligned boundaries back to the grid
    /// recovers the original clips.
    pub scene_jitter_s: f64,
    pub distractor_frames: usize,
    /// Chance a segment carries the deterministic partner label too.
    pub secondary_label_prob: f64,
    pub min_segment_clips: usize,
    pub max_segments: usize,
    /// Native hop of the audio stream; the loader resamples to the clip grid.
    pub audio_hop_s: f64,
    pub tokens_per_segment: usize,
    pub eval_fraction: f64,
    /// Also emit per-token text vectors for the precomputed text mode.
    pub emit_text_vecs: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_videos: 200,
            clips: 64,
            categories: 8,
            d_v: 16,
            d_a: 16,
            vocab_size: 128,
            seed: 42,
            video_noise: 0.5,
            audio_noise: 0.35,
            mean_scale: 1.5,
            context_shift: 0.0,
            scene_jitter_s: 0.2,
            distractor_frames: 3,
            secondary_label_prob: 0.15,
            min_segment_clips: 4,
            max_segments: 5,
            audio_hop_s: 0.8,
            tokens_per_segment: 3,
            eval_fraction: 0.2,
            emit_text_vecs: false,
        }
    }
}

pub struct SynthOutput {
    pub train: Dataset,
    pub eval: Dataset,
}

const TEXT_VEC_DIM: usize = 8;

fn partner_category(cat: usize, n: usize) -> usize {
    (cat + (n / 2).max(1)) % n
}

/// Deterministic per-token vector for the precomputed text mode.
fn token_vector(seed: u64, token: u32) -> Vec<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ (0x7e47 + token as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let normal = Normal::new(0.0, 1.0).unwrap();
    (0..TEXT_VEC_DIM).map(|_| normal.sample(&mut rng)).collect()
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    if cfg.n_videos == 0 {
        return Err(Error::Config("generator needs at least one video".into()));
    }
    if cfg.categories == 0 || cfg.categories > super::FULL_CATEGORY_COUNT {
        return Err(Error::Config(format!(
            "generator categories must be in 1..={}",
            super::FULL_CATEGORY_COUNT
        )));
    }
    if cfg.clips < cfg.max_segments * cfg.min_segment_clips {
        return Err(Error::Config(format!(
            "{} clips cannot hold {} segments of at least {} clips",
            cfg.clips, cfg.max_segments, cfg.min_segment_clips
        )));
    }
    let tokens_per_cat = (cfg.vocab_size / (2 * cfg.categories)).max(1);
    if cfg.vocab_size < cfg.categories * tokens_per_cat {
        return Err(Error::Config("vocabulary too small for the category token pools".into()));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1.0).unwrap();

    // Class means first, so train and eval share them.
    let mean_v: Vec<Vec<f64>> = (0..cfg.categories)
        .map(|_| (0..cfg.d_v).map(|_| cfg.mean_scale * normal.sample(&mut rng)).collect())
        .collect();
    let mean_a: Vec<Vec<f64>> = (0..cfg.categories)
        .map(|_| (0..cfg.d_a).map(|_| cfg.mean_scale * normal.sample(&mut rng)).collect())
        .collect();

    let duration = cfg.clips as f64 * CLIP_SECONDS;
    let mut records = Vec::with_capacity(cfg.n_videos);
    for vid in 0..cfg.n_videos {
        let n_segs = rng.gen_range(1..=cfg.max_segments);
        // Segment lengths: minimum floor plus randomly distributed slack.
        let mut lens = vec![cfg.min_segment_clips; n_segs];
        let slack = cfg.clips - n_segs * cfg.min_segment_clips;
        for _ in 0..slack {
            lens[rng.gen_range(0..n_segs)] += 1;
        }
        let mut categories = Vec::with_capacity(n_segs);
        for k in 0..n_segs {
            loop {
                let c = rng.gen_range(0..cfg.categories);
                if k == 0 || c != categories[k - 1] {
                    categories.push(c);
                    break;
                }
            }
        }
        let mut gt_segments = Vec::with_capacity(n_segs);
        let mut clip_cat = Vec::with_capacity(cfg.clips);
        let mut start_clip = 0usize;
        for (k, (&len, &cat)) in lens.iter().zip(&categories).enumerate() {
            let end_clip = start_clip + len;
            let mut label_ids = vec![cat as u32];
            if cfg.categories > 1 && rng.gen_bool(cfg.secondary_label_prob) {
                label_ids.push(partner_category(cat, cfg.categories) as u32);
            }
            gt_segments.push(GtSegment {
                start_s: start_clip as f64 * CLIP_SECONDS,
                end_s: if k + 1 == n_segs {
                    duration
                } else {
                    end_clip as f64 * CLIP_SECONDS
                },
                label_ids,
            });
            clip_cat.extend(std::iter::repeat(cat).take(len));
            start_clip = end_clip;
        }

        // Per-video constant shift, shared by every frame of a stream.
        let shift_v: Vec<f64> = (0..cfg.d_v)
            .map(|_| cfg.context_shift * normal.sample(&mut rng))
            .collect();
        let shift_a: Vec<f64> = (0..cfg.d_a)
            .map(|_| cfg.context_shift * normal.sample(&mut rng))
            .collect();

        // Video stream: one frame per clip.
        let mut vdata = Vec::with_capacity(cfg.clips * cfg.d_v);
        for &cat in &clip_cat {
            for d in 0..cfg.d_v {
                vdata.push(
                    (mean_v[cat][d] + shift_v[d] + cfg.video_noise * normal.sample(&mut rng))
                        as f32,
                );
            }
        }
        // Audio stream at its own hop; resampled by the loader.
        let m_audio = clip_count(duration, cfg.audio_hop_s);
        let mut adata = Vec::with_capacity(m_audio * cfg.d_a);
        for f in 0..m_audio {
            let center = ((f as f64 + 0.5) * cfg.audio_hop_s).min(duration - 1e-9);
            let clip = ((center / CLIP_SECONDS) as usize).min(cfg.clips - 1);
            let cat = clip_cat[clip];
            for d in 0..cfg.d_a {
                adata.push(
                    (mean_a[cat][d] + shift_a[d] + cfg.audio_noise * normal.sample(&mut rng))
                        as f32,
                );
            }
        }

        // Caption: a few pool tokens per segment, in order.
        let mut token_ids: Vec<u32> = Vec::new();
        for &cat in &categories {
            for _ in 0..cfg.tokens_per_segment {
                let pool_start = cat * tokens_per_cat;
                token_ids.push((pool_start + rng.gen_range(0..tokens_per_cat)) as u32);
            }
            if rng.gen_bool(0.2) {
                token_ids.push(rng.gen_range(0..cfg.vocab_size) as u32);
            }
        }
        token_ids.truncate(64);

        // Scene frames: jittered true boundaries plus weak distractors.
        let mut scene_frames = Vec::new();
        for k in 0..n_segs.saturating_sub(1) {
            let b = gt_segments[k].end_s;
            let jitter = rng.gen_range(-cfg.scene_jitter_s..=cfg.scene_jitter_s);
            scene_frames.push(SceneFrame {
                time: (b + jitter).clamp(0.05, duration - 0.05),
                prob: rng.gen_range(0.3..=1.0),
            });
        }
        for _ in 0..cfg.distractor_frames {
            scene_frames.push(SceneFrame {
                time: rng.gen_range(0.0..duration),
                prob: rng.gen_range(0.01..=0.1),
            });
        }
        scene_frames.sort_by(|a, b| a.time.total_cmp(&b.time));

        let text_vecs = cfg.emit_text_vecs.then(|| {
            let mut data = Vec::with_capacity(token_ids.len() * TEXT_VEC_DIM);
            for &t in &token_ids {
                data.extend(token_vector(cfg.seed, t).into_iter().map(|v| v as f32));
            }
            FeatMatrix::new(token_ids.len().max(1), TEXT_VEC_DIM, {
                if token_ids.is_empty() {
                    vec![0.0; TEXT_VEC_DIM]
                } else {
                    data
                }
            })
            .expect("text vec matrix")
        });

        records.push(VideoRecord {
            id: format!("synth-{vid:05}"),
            duration_s: duration,
            video_feats: FeatMatrix::new(cfg.clips, cfg.d_v, vdata)?,
            audio_feats: FeatMatrix::new(m_audio, cfg.d_a, adata)?,
            token_ids,
            text_vecs,
            scene_frames,
            gt_segments,
        });
    }

    let n_train = ((cfg.n_videos as f64) * (1.0 - cfg.eval_fraction)).round() as usize;
    let n_train = n_train.clamp(1, cfg.n_videos);
    let eval_records = records.split_off(n_train);
    let make = |records: Vec<VideoRecord>| Dataset {
        vocab_size: cfg.vocab_size,
        d_v: cfg.d_v,
        d_a: cfg.d_a,
        d_text: cfg.emit_text_vecs.then_some(TEXT_VEC_DIM),
        n_categories: cfg.categories,
        clip_seconds: CLIP_SECONDS,
        records,
    };
    Ok(SynthOutput {
        train: make(records),
        eval: make(eval_records),
    })
}

/// Ridge-regression linear probe on raw clip features (video and audio
/// resampled to the clip grid, concatenated, plus a bias column) against the
/// primary category of the segment owning each clip. Returns accuracy.
pub fn linear_probe_accuracy(ds: &Dataset) -> Result<f64> {
    let d = ds.d_v + ds.d_a + 1;
    let n_cat = ds.n_categories;
    let mut xtx = vec![0.0f64; d * d];
    let mut xty = vec![0.0f64; d * n_cat];
    let mut samples: Vec<(Vec<f64>, usize)> = Vec::new();
    for rec in &ds.records {
        let (m, v, a) = rec.resampled(ds.clip_seconds)?;
        for clip in 0..m {
            let center = (clip as f64 + 0.5) * ds.clip_seconds;
            let seg = rec
                .gt_segments
                .iter()
                .find(|s| center < s.end_s || (s.end_s - rec.duration_s).abs() < 1e-9)
                .ok_or_else(|| Error::Dataset(format!("video {}: clip outside segments", rec.id)))?;
            let label = seg.label_ids[0] as usize;
            let mut x = Vec::with_capacity(d);
            x.extend_from_slice(&v[clip * ds.d_v..(clip + 1) * ds.d_v]);
            x.extend_from_slice(&a[clip * ds.d_a..(clip + 1) * ds.d_a]);
            x.push(1.0);
            for i in 0..d {
                for j in 0..d {
                    xtx[i * d + j] += x[i] * x[j];
                }
                xty[i * n_cat + label] += x[i];
            }
            samples.push((x, label));
        }
    }
    let lambda = 1e-3;
    for i in 0..d {
        xtx[i * d + i] += lambda;
    }
    let w = solve_multi(&mut xtx, &mut xty, d, n_cat)?;
    let mut correct = 0usize;
    for (x, label) in &samples {
        let mut best = 0usize;
        let mut best_v = f64::NEG_INFINITY;
        for c in 0..n_cat {
            let mut s = 0.0;
            for i in 0..d {
                s += x[i] * w[i * n_cat + c];
            }
            if s > best_v {
                best_v = s;
                best = c;
            }
        }
        if best == *label {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Gaussian elimination with partial pivoting for A (d x d) * W = B (d x k).
fn solve_multi(a: &mut [f64], b: &mut [f64], d: usize, k: usize) -> Result<Vec<f64>> {
    for col in 0..d {
        let mut pivot = col;
        for r in col + 1..d {
            if a[r * d + col].abs() > a[pivot * d + col].abs() {
                pivot = r;
            }
        }
        if a[pivot * d + col].abs() < 1e-12 {
            return Err(Error::Train("probe: singular normal equations".into()));
        }
        if pivot != col {
            for c in 0..d {
                a.swap(col * d + c, pivot * d + c);
            }
            for c in 0..k {
                b.swap(col * k + c, pivot * k + c);
            }
        }
        let diag = a[col * d + col];
        for r in 0..d {
            if r == col {
                continue;
            }
            let factor = a[r * d + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for c in col..d {
                a[r * d + c] -= factor * a[col * d + c];
            }
            for c in 0..k {
                b[r * k + c] -= factor * b[col * k + c];
            }
        }
    }
    let mut w = vec![0.0; d * k];
    for r in 0..d {
        let diag = a[r * d + r];
        for c in 0..k {
            w[r * k + c] = b[r * k + c] / diag;
        }
    }
    Ok(w)
}

//! Temporal segmentation: the per-clip boundary head (TEM), the span
//! confidence head (PEM) built on boundary-matching sampling, their training
//! losses, and the fused proposal score used at inference.

use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderInput, MultiModalEncoder};
use crate::error::{Error, Result};
use crate::nncore::layers::{Conv1d, Linear, TransformerBlock};
use crate::nncore::ops::{self, SpanSampler};
use crate::nncore::{HasParams, Parameter, Tensor};

/// Weight of the boundary loss inside the combined segmenter loss.
pub const DEFAULT_TEM_LOSS_WEIGHT: f64 = 5.0;
/// Cells with a ground-truth overlap above this are classification positives.
pub const PEM_POSITIVE_IOU: f64 = 0.9;

/// How the per-span confidence is read out of the two-channel map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CofMode {
    /// cls * reg
    Product,
    Cls,
    Reg,
}

// ---------------------------------------------------------------------------
// TEM

pub struct TemConfig {
    pub width: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub layers: usize,
}

/// Three 1-D convolutions, a small transformer, and a sigmoid head giving
/// one boundary probability per clip.
pub struct Tem {
    convs: Vec<Conv1d>,
    blocks: Vec<TransformerBlock>,
    out: Linear,
}

impl Tem {
    pub fn new(prefix: &str, cfg: &TemConfig, rng: &mut ChaCha12Rng) -> Result<Tem> {
        let convs = (0..3)
            .map(|i| Conv1d::new(&format!("{prefix}.conv{i}"), cfg.width, cfg.width, 3, rng))
            .collect::<Result<Vec<_>>>()?;
        let blocks = (0..cfg.layers)
            .map(|i| {
                TransformerBlock::new(
                    &format!("{prefix}.block{i}"),
                    cfg.width,
                    cfg.heads,
                    cfg.ffn_hidden,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Tem {
            convs,
            blocks,
            out: Linear::new(&format!("{prefix}.out"), cfg.width, 1, rng),
        })
    }

    /// h is (m x D); returns boundary probabilities of shape [m].
    pub fn forward(&self, h: &Tensor) -> Result<Tensor> {
        let mut x = ops::transpose(h)?;
        for conv in &self.convs {
            x = ops::relu(&conv.forward(&x)?);
        }
        let mut seq = ops::transpose(&x)?;
        for blk in &self.blocks {
            seq = blk.forward(&seq, None)?;
        }
        let logits = self.out.forward(&seq)?;
        Ok(ops::sigmoid(&ops::reshape(&logits, &[h.rows()])?))
    }
}

impl HasParams for Tem {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        for c in &self.convs {
            c.visit(f);
        }
        for b in &self.blocks {
            b.visit(f);
        }
        self.out.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        for c in &mut self.convs {
            c.visit_mut(f);
        }
        for b in &mut self.blocks {
            b.visit_mut(f);
        }
        self.out.visit_mut(f);
    }
}

// ---------------------------------------------------------------------------
// Boundary-matching sampling

/// Candidate spans laid out as (duration, start) cells plus the shared
/// interpolation taps that sample each span at uniform fractional positions.
pub struct BmSampler {
    pub m: usize,
    pub d_max: usize,
    pub n_samples: usize,
    /// (duration_clips, start_clip) per cell, duration-major.
    pub cells: Vec<(usize, usize)>,
    /// Cell index offsets per duration, for O(1) lookup.
    offsets: Vec<usize>,
    pub op: Arc<SpanSampler>,
}

impl BmSampler {
    pub fn build(m: usize, d_max: usize, n_samples: usize) -> Result<Arc<BmSampler>> {
        if m == 0 || d_max == 0 || d_max > m {
            return Err(Error::Config(format!(
                "boundary-matching sampler: bad sizes m={m}, d_max={d_max}"
            )));
        }
        if n_samples < 2 {
            return Err(Error::Config(
                "boundary-matching sampler needs at least 2 samples per span".into(),
            ));
        }
        let mut cells = Vec::new();
        let mut offsets = vec![0usize; d_max + 2];
        for d in 1..=d_max {
            offsets[d] = cells.len();
            for t in 0..=(m - d) {
                cells.push((d, t));
            }
        }
        offsets[d_max + 1] = cells.len();
        let mut taps = Vec::with_capacity(cells.len() * n_samples);
        for &(d, t) in &cells {
            for s in 0..n_samples {
                let pos = t as f64 + (d - 1) as f64 * s as f64 / (n_samples - 1) as f64;
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(m - 1);
                let frac = pos - lo as f64;
                taps.push((lo, 1.0 - frac, hi, frac));
            }
        }
        let n_spans = cells.len();
        Ok(Arc::new(BmSampler {
            m,
            d_max,
            n_samples,
            cells,
            offsets,
            op: Arc::new(SpanSampler {
                seq_len: m,
                samples_per_span: n_samples,
                taps,
                n_spans,
            }),
        }))
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// Flat index of cell (duration d clips, start t), if the span is valid.
    pub fn cell_index(&self, d: usize, t: usize) -> Option<usize> {
        if d == 0 || d > self.d_max || t + d > self.m {
            return None;
        }
        Some(self.offsets[d] + t)
    }
}

// ---------------------------------------------------------------------------
// Confidence map

/// Plain-value view of the PEM output, indexed by (duration, start).
/// Cells outside the valid triangle (start + duration > m) are masked.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfidenceMap {
    pub d_max: usize,
    pub m: usize,
    /// (d_max x m), row d-1 holds spans of duration d.
    pub cls: Vec<f64>,
    pub reg: Vec<f64>,
    pub valid: Vec<bool>,
}

impl ConfidenceMap {
    fn idx(&self, d: usize, t: usize) -> Option<usize> {
        if d == 0 || d > self.d_max || t >= self.m {
            return None;
        }
        let i = (d - 1) * self.m + t;
        self.valid[i].then_some(i)
    }

    /// Confidence of the span with clips i..=j. Masked or uncovered spans
    /// (longer than d_max) read as 0.
    pub fn confidence(&self, i: usize, j: usize, mode: CofMode) -> f64 {
        let d = j - i + 1;
        match self.idx(d, i) {
            None => 0.0,
            Some(k) => match mode {
                CofMode::Product => self.cls[k] * self.reg[k],
                CofMode::Cls => self.cls[k],
                CofMode::Reg => self.reg[k],
            },
        }
    }
}

// ---------------------------------------------------------------------------
// PEM

pub struct PemConfig {
    pub width: usize,
    pub reduce_channels: usize,
    pub hidden: usize,
    pub mid: usize,
    pub n_samples: usize,
    /// Longest proposal duration in clips; `None` allows all durations.
    pub d_max: Option<usize>,
}

/// Span confidence head: reduce channels, gather interpolated samples for
/// every candidate span, then a per-cell MLP down to the two-channel map.
pub struct Pem {
    reduce: Conv1d,
    w1: Parameter,
    b1: Parameter,
    w2: Parameter,
    b2: Parameter,
    w3: Parameter,
    b3: Parameter,
    pub n_samples: usize,
    pub d_max: Option<usize>,
    samplers: Mutex<Vec<Arc<BmSampler>>>,
}

pub struct PemOutput {
    /// [n_cells] classification channel.
    pub cls: Tensor,
    /// [n_cells] regression channel.
    pub reg: Tensor,
    pub sampler: Arc<BmSampler>,
}

impl Pem {
    pub fn new(prefix: &str, cfg: &PemConfig, rng: &mut ChaCha12Rng) -> Result<Pem> {
        let cr = cfg.reduce_channels;
        let ch = cfg.hidden;
        let cm = cfg.mid;
        let n = cfg.n_samples;
        Ok(Pem {
            reduce: Conv1d::new(&format!("{prefix}.reduce"), cfg.width, cr, 3, rng)?,
            w1: Parameter::xavier(format!("{prefix}.w1"), &[ch, cr * n], cr * n, ch, rng),
            b1: Parameter::zeros(format!("{prefix}.b1"), &[ch]),
            w2: Parameter::xavier(format!("{prefix}.w2"), &[cm, ch], ch, cm, rng),
            b2: Parameter::zeros(format!("{prefix}.b2"), &[cm]),
            w3: Parameter::xavier(format!("{prefix}.w3"), &[2, cm], cm, 2, rng),
            b3: Parameter::zeros(format!("{prefix}.b3"), &[2]),
            n_samples: n,
            d_max: cfg.d_max,
            samplers: Mutex::new(Vec::new()),
        })
    }

    pub fn sampler_for(&self, m: usize) -> Result<Arc<BmSampler>> {
        let d_max = self.d_max.map_or(m, |cap| cap.min(m));
        let mut cache = self.samplers.lock().expect("sampler cache poisoned");
        if let Some(s) = cache
            .iter()
            .find(|s| s.m == m && s.d_max == d_max && s.n_samples == self.n_samples)
        {
            return Ok(Arc::clone(s));
        }
        let s = BmSampler::build(m, d_max, self.n_samples)?;
        cache.push(Arc::clone(&s));
        Ok(s)
    }

    /// h is (m x D); produces the two per-cell channels.
    pub fn forward(&self, h: &Tensor) -> Result<PemOutput> {
        let m = h.rows();
        let sampler = self.sampler_for(m)?;
        let x = ops::relu(&self.reduce.forward(&ops::transpose(h)?)?);
        let gathered = ops::span_gather(&x, &sampler.op)?;
        let h1 = ops::relu(&ops::add_col_vector(
            &ops::matmul(&self.w1.tensor, &gathered)?,
            &self.b1.tensor,
        )?);
        let h2 = ops::relu(&ops::add_col_vector(
            &ops::matmul(&self.w2.tensor, &h1)?,
            &self.b2.tensor,
        )?);
        let out = ops::sigmoid(&ops::add_col_vector(
            &ops::matmul(&self.w3.tensor, &h2)?,
            &self.b3.tensor,
        )?);
        let k = sampler.n_cells();
        let cls = ops::reshape(&ops::slice_rows(&out, 0, 1)?, &[k])?;
        let reg = ops::reshape(&ops::slice_rows(&out, 1, 2)?, &[k])?;
        Ok(PemOutput { cls, reg, sampler })
    }
}

impl PemOutput {
    /// Extracts plain values into the dense (duration x start) map.
    pub fn confidence_map(&self) -> ConfidenceMap {
        let s = &self.sampler;
        let size = s.d_max * s.m;
        let mut map = ConfidenceMap {
            d_max: s.d_max,
            m: s.m,
            cls: vec![0.0; size],
            reg: vec![0.0; size],
            valid: vec![false; size],
        };
        let (cd, rd) = (self.cls.data(), self.reg.data());
        for (k, &(d, t)) in s.cells.iter().enumerate() {
            let i = (d - 1) * s.m + t;
            map.cls[i] = cd[k];
            map.reg[i] = rd[k];
            map.valid[i] = true;
        }
        map
    }
}

impl HasParams for Pem {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        self.reduce.visit(f);
        for p in [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3] {
            f(p);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.reduce.visit_mut(f);
        f(&mut self.w1);
        f(&mut self.b1);
        f(&mut self.w2);
        f(&mut self.b2);
        f(&mut self.w3);
        f(&mut self.b3);
    }
}

// ---------------------------------------------------------------------------
// Labels and losses

/// Per-clip 0/1 boundary labels. A transition at time b maps to the clip
/// whose edge it touches, t = floor(b / clip + 1/2), and marks both adjacent
/// clips: t starts the next segment and t-1 ends the previous one. That
/// keeps one shared probability sequence consistent with reading a span's
/// start probability at clip i and its end probability at clip j. The video
/// edges are segment boundaries by construction and are always marked.
pub fn boundary_labels(internal_bounds_s: &[f64], m: usize, clip_s: f64) -> Vec<f64> {
    let mut y = vec![0.0; m];
    if m > 0 {
        y[0] = 1.0;
        y[m - 1] = 1.0;
    }
    for &b in internal_bounds_s {
        let t = ((b / clip_s + 0.5).floor().max(0.0) as usize).min(m.saturating_sub(1));
        y[t] = 1.0;
        if t > 0 {
            y[t - 1] = 1.0;
        }
    }
    y
}

/// Mean binary cross entropy between per-clip boundary probabilities and
/// labels.
pub fn tem_loss(probs: &Tensor, labels: &[f64]) -> Result<Tensor> {
    if probs.numel() != labels.len() {
        return Err(Error::Input(format!(
            "tem_loss: {} probabilities vs {} labels",
            probs.numel(),
            labels.len()
        )));
    }
    ops::bce_loss(probs, labels, &vec![1.0; labels.len()])
}

/// IoU (in clip units) between the inclusive clip spans [i0, j0] and [i1, j1].
pub fn clip_span_iou(a: (usize, usize), b: (usize, usize)) -> f64 {
    let inter_lo = a.0.max(b.0);
    let inter_hi = a.1.min(b.1);
    if inter_lo > inter_hi {
        return 0.0;
    }
    let inter = (inter_hi - inter_lo + 1) as f64;
    let union = (a.1.max(b.1) - a.0.min(b.0) + 1) as f64;
    inter / union
}

/// Per-cell regression targets: max IoU of each candidate span against the
/// ground-truth spans.
pub fn iou_labels(sampler: &BmSampler, gt_spans: &[(usize, usize)]) -> Vec<f64> {
    sampler
        .cells
        .iter()
        .map(|&(d, t)| {
            gt_spans
                .iter()
                .map(|&g| clip_span_iou((t, t + d - 1), g))
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Balanced PEM loss: binary CE on the cls channel (positives are cells with
/// label > 0.9, negatives sampled 1:1) plus MSE on the reg channel (all
/// overlapping cells plus an equal count of zero-label cells).
pub fn pem_loss(out: &PemOutput, labels: &[f64], rng: &mut ChaCha12Rng) -> Result<Tensor> {
    let k = out.sampler.n_cells();
    if labels.len() != k {
        return Err(Error::Input(format!(
            "pem_loss: {} labels for {k} cells",
            labels.len()
        )));
    }
    if k == 0 {
        return Err(Error::Train("pem_loss: no valid cells".into()));
    }
    let positives: Vec<usize> = (0..k).filter(|&i| labels[i] > PEM_POSITIVE_IOU).collect();
    if positives.is_empty() {
        return Err(Error::Train(
            "pem_loss: no positive cells; is the duration cap shorter than every segment?".into(),
        ));
    }
    let mut negatives: Vec<usize> = (0..k).filter(|&i| labels[i] <= PEM_POSITIVE_IOU).collect();
    negatives.shuffle(rng);
    negatives.truncate(positives.len());

    let mut cls_w = vec![0.0; k];
    let mut cls_y = vec![0.0; k];
    for &i in &positives {
        cls_w[i] = 1.0;
        cls_y[i] = 1.0;
    }
    for &i in &negatives {
        cls_w[i] = 1.0;
    }
    let l_cls = ops::bce_loss(&out.cls, &cls_y, &cls_w)?;

    let mut reg_w = vec![0.0; k];
    let mut zeros: Vec<usize> = Vec::new();
    let mut n_overlap = 0usize;
    for i in 0..k {
        if labels[i] > 0.0 {
            reg_w[i] = 1.0;
            n_overlap += 1;
        } else {
            zeros.push(i);
        }
    }
    zeros.shuffle(rng);
    for &i in zeros.iter().take(n_overlap) {
        reg_w[i] = 1.0;
    }
    let l_reg = ops::mse_loss(&out.reg, labels, &reg_w)?;
    ops::add(&l_cls, &l_reg)
}

/// Combined segmenter loss: weight * tem + pem.
pub fn bmn_loss(tem: &Tensor, pem: &Tensor, tem_weight: f64) -> Result<Tensor> {
    ops::add(&ops::scale(tem, tem_weight), pem)
}

// ---------------------------------------------------------------------------
// Fused proposal scoring

/// A candidate span with every factor of its fused score.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoredProposal {
    /// Inclusive clip span.
    pub start_clip: usize,
    pub end_clip: usize,
    /// Boundary probability at each end.
    pub start_prob: f64,
    pub end_prob: f64,
    /// Per-span confidence from the map.
    pub confidence: f64,
    /// min over interior clips of (1 - boundary probability); 1 for an
    /// empty interior.
    pub interior_term: f64,
    /// Product of the four factors above.
    pub score: f64,
}

/// Fuses boundary probabilities and span confidence into the proposal score:
/// p_i * p_j * confidence * min over strictly interior clips of (1 - p_k).
pub fn fuse_score(
    boundary_probs: &[f64],
    map: &ConfidenceMap,
    i: usize,
    j: usize,
    mode: CofMode,
) -> Result<ScoredProposal> {
    let m = boundary_probs.len();
    if i > j || j >= m {
        return Err(Error::Input(format!(
            "fuse_score: span ({i}, {j}) out of range for {m} clips"
        )));
    }
    let mut interior = 1.0f64;
    for k in (i + 1)..j {
        interior = interior.min(1.0 - boundary_probs[k]);
    }
    let confidence = map.confidence(i, j, mode);
    let score = boundary_probs[i] * boundary_probs[j] * confidence * interior;
    Ok(ScoredProposal {
        start_clip: i,
        end_clip: j,
        start_prob: boundary_probs[i],
        end_prob: boundary_probs[j],
        confidence,
        interior_term: interior,
        score,
    })
}

/// Scores every valid cell of the map.
pub fn score_all_proposals(
    boundary_probs: &[f64],
    map: &ConfidenceMap,
    mode: CofMode,
) -> Vec<ScoredProposal> {
    let m = boundary_probs.len();
    let mut out = Vec::new();
    for i in 0..m {
        let mut interior = 1.0f64;
        for j in i..m.min(i + map.d_max) {
            if j >= i + 2 {
                interior = interior.min(1.0 - boundary_probs[j - 1]);
            }
            let confidence = map.confidence(i, j, mode);
            out.push(ScoredProposal {
                start_clip: i,
                end_clip: j,
                start_prob: boundary_probs[i],
                end_prob: boundary_probs[j],
                confidence,
                interior_term: interior,
                score: boundary_probs[i] * boundary_probs[j] * confidence * interior,
            });
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Whole segmenter model

pub struct SegmenterModel {
    pub encoder: MultiModalEncoder,
    pub tem: Tem,
    pub pem: Pem,
}

impl SegmenterModel {
    /// Boundary probabilities plus the raw PEM output for one video.
    pub fn forward(&self, input: &EncoderInput) -> Result<(Tensor, PemOutput)> {
        let h = self.encoder.encode(input, None)?.va_states;
        Ok((self.tem.forward(&h)?, self.pem.forward(&h)?))
    }
}

impl HasParams for SegmenterModel {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        self.encoder.visit(f);
        self.tem.visit(f);
        self.pem.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.encoder.visit_mut(f);
        self.tem.visit_mut(f);
        self.pem.visit_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn map_with(d_max: usize, m: usize, cls: f64, reg: f64) -> ConfidenceMap {
        let mut map = ConfidenceMap {
            d_max,
            m,
            cls: vec![cls; d_max * m],
            reg: vec![reg; d_max * m],
            valid: vec![false; d_max * m],
        };
        for d in 1..=d_max {
            for t in 0..=(m - d) {
                map.valid[(d - 1) * m + t] = true;
            }
        }
        map
    }

    #[test]
    fn tem_loss_hand_case() {
        let p = Tensor::new(&[3], vec![0.9, 0.1, 0.8]).unwrap();
        let y = [1.0, 0.0, 1.0];
        let loss = tem_loss(&p, &y).unwrap().item();
        let expect = -((0.9f64).ln() + (0.9f64).ln() + (0.8f64).ln()) / 3.0;
        assert!((loss - expect).abs() < 1e-12);
        assert!((loss - 0.1446).abs() < 1e-4);
    }

    #[test]
    fn tem_loss_at_half_is_ln2() {
        let p = Tensor::new(&[5], vec![0.5; 5]).unwrap();
        let y = [1.0, 0.0, 1.0, 0.0, 1.0];
        let loss = tem_loss(&p, &y).unwrap().item();
        assert!((loss - (2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn tem_loss_perfect_prediction_is_near_zero() {
        let p = Tensor::new(&[4], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let y = [1.0, 0.0, 1.0, 0.0];
        let loss = tem_loss(&p, &y).unwrap().item();
        assert!(loss >= 0.0 && loss < 1e-10);
    }

    #[test]
    fn tem_loss_length_mismatch() {
        let p = Tensor::new(&[3], vec![0.5; 3]).unwrap();
        assert!(tem_loss(&p, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn boundary_labels_mark_both_sides_of_a_transition() {
        // A boundary at 4.0 s on a 0.5 s grid separates clips 7 and 8.
        let y = boundary_labels(&[4.0], 16, 0.5);
        for (t, &v) in y.iter().enumerate() {
            let expect = matches!(t, 0 | 7 | 8 | 15);
            assert_eq!(v, if expect { 1.0 } else { 0.0 }, "clip {t}");
        }
        // 4.3 s rounds to the clip edge at 4.5 s (clips 8 and 9).
        let y = boundary_labels(&[4.3], 16, 0.5);
        assert_eq!(y[9], 1.0);
        assert_eq!(y[8], 1.0);
        assert_eq!(y[7], 0.0);
    }

    #[test]
    fn iou_labels_hand_case() {
        // One ground-truth span over clips [2, 5] on m = 8.
        let sampler = BmSampler::build(8, 8, 2).unwrap();
        let labels = iou_labels(&sampler, &[(2, 5)]);
        let exact = sampler.cell_index(4, 2).unwrap();
        assert!((labels[exact] - 1.0).abs() < 1e-12);
        let shifted = sampler.cell_index(4, 0).unwrap();
        assert!((labels[shifted] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn iou_labels_match_continuous_interval_iou_on_a_10_clip_instance() {
        let sampler = BmSampler::build(10, 10, 2).unwrap();
        let gt = [(1usize, 4usize), (5, 9)];
        let labels = iou_labels(&sampler, &gt);
        for (k, &(d, t)) in sampler.cells.iter().enumerate() {
            assert!((0.0..=1.0).contains(&labels[k]));
            // Continuous-time IoU of [t, t+d) x 0.5s against each span.
            let a = (t as f64 * 0.5, (t + d) as f64 * 0.5);
            let expect = gt
                .iter()
                .map(|&(i, j)| {
                    let b = (i as f64 * 0.5, (j + 1) as f64 * 0.5);
                    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
                    let union = (a.1.max(b.1) - a.0.min(b.0)).max(inter);
                    inter / union
                })
                .fold(0.0, f64::max);
            assert!(
                (labels[k] - expect).abs() < 1e-12,
                "cell ({d}, {t}): {} vs {expect}",
                labels[k]
            );
        }
    }

    #[test]
    fn bm_sampler_taps_sum_to_one_and_cover_constant_input() {
        let sampler = BmSampler::build(10, 10, 8).unwrap();
        for &(_, w0, _, w1) in &sampler.op.taps {
            assert!((w0 + w1 - 1.0).abs() < 1e-12);
        }
        let x = Tensor::new(&[3, 10], vec![2.5; 30]).unwrap();
        let g = ops::span_gather(&x, &sampler.op).unwrap();
        assert!(g.data().iter().all(|&v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn fuse_score_hand_case() {
        // p_i=0.8, p_j=0.9, cof=0.5, interior probs {0.2, 0.4}.
        let probs = vec![0.8, 0.2, 0.4, 0.9];
        let map = map_with(4, 4, 0.5, 1.0);
        let sp = fuse_score(&probs, &map, 0, 3, CofMode::Product).unwrap();
        assert!((sp.interior_term - 0.6).abs() < 1e-12);
        assert!((sp.score - 0.216).abs() < 1e-12);
    }

    #[test]
    fn fuse_score_empty_interior_is_one() {
        let probs = vec![1.0, 1.0, 0.3];
        let map = map_with(3, 3, 1.0, 1.0);
        let sp = fuse_score(&probs, &map, 0, 1, CofMode::Product).unwrap();
        assert_eq!(sp.interior_term, 1.0);
        assert!((sp.score - 1.0).abs() < 1e-12);
        let single = fuse_score(&probs, &map, 2, 2, CofMode::Product).unwrap();
        assert_eq!(single.interior_term, 1.0);
    }

    #[test]
    fn fuse_score_interior_boundary_annihilates() {
        let probs = vec![0.9, 1.0, 0.9];
        let map = map_with(3, 3, 1.0, 1.0);
        let sp = fuse_score(&probs, &map, 0, 2, CofMode::Product).unwrap();
        assert_eq!(sp.score, 0.0);
    }

    #[test]
    fn fuse_score_range_checks() {
        let probs = vec![0.5; 4];
        let map = map_with(4, 4, 1.0, 1.0);
        assert!(fuse_score(&probs, &map, 2, 1, CofMode::Product).is_err());
        assert!(fuse_score(&probs, &map, 0, 4, CofMode::Product).is_err());
    }

    #[test]
    fn score_all_matches_fuse_score() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        use rand::Rng;
        let m = 9;
        let probs: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut map = map_with(m, m, 0.0, 0.0);
        for v in map.cls.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        for v in map.reg.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        let all = score_all_proposals(&probs, &map, CofMode::Product);
        assert_eq!(all.len(), m * (m + 1) / 2);
        for sp in &all {
            let direct =
                fuse_score(&probs, &map, sp.start_clip, sp.end_clip, CofMode::Product).unwrap();
            assert!((sp.score - direct.score).abs() < 1e-15);
        }
    }

    #[test]
    fn bmn_loss_is_weighted_sum() {
        let t = Tensor::scalar(0.2);
        let p = Tensor::scalar(0.3);
        let l = bmn_loss(&t, &p, DEFAULT_TEM_LOSS_WEIGHT).unwrap();
        assert!((l.item() - 1.3).abs() < 1e-12);
        let z = bmn_loss(&Tensor::scalar(0.0), &Tensor::scalar(0.0), 5.0).unwrap();
        assert_eq!(z.item(), 0.0);
    }

    #[test]
    fn pem_loss_is_small_for_perfect_outputs() {
        let sampler = BmSampler::build(6, 6, 2).unwrap();
        let labels = iou_labels(&sampler, &[(0, 2), (3, 5)]);
        let cls: Vec<f64> = labels
            .iter()
            .map(|&v| if v > PEM_POSITIVE_IOU { 1.0 } else { 0.0 })
            .collect();
        let out = PemOutput {
            cls: Tensor::new(&[sampler.n_cells()], cls).unwrap(),
            reg: Tensor::new(&[sampler.n_cells()], labels.clone()).unwrap(),
            sampler: Arc::clone(&sampler),
        };
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let loss = pem_loss(&out, &labels, &mut rng).unwrap().item();
        assert!(loss >= 0.0 && loss < 1e-9, "loss {loss}");
    }

    proptest::proptest! {
        #[test]
        fn fused_score_bounded_by_factors(
            pi in 0.0f64..1.0, pj in 0.0f64..1.0, cof in 0.0f64..1.0,
            interior in proptest::collection::vec(0.0f64..1.0, 0..6)
        ) {
            let mut probs = vec![pi];
            probs.extend(&interior);
            probs.push(pj);
            let m = probs.len();
            let map = map_with(m, m, cof, 1.0);
            let sp = fuse_score(&probs, &map, 0, m - 1, CofMode::Cls).unwrap();
            proptest::prop_assert!(sp.score <= pi.min(pj).min(cof) + 1e-15);
        }

        #[test]
        fn fused_score_monotone_in_interior(
            base in 0.1f64..0.9,
            k in 0usize..4,
            bump in 0.0f64..0.09
        ) {
            let mut probs = vec![0.9, base, base, base, base, 0.8];
            let map = map_with(6, 6, 0.7, 1.0);
            let before = fuse_score(&probs, &map, 0, 5, CofMode::Cls).unwrap().score;
            probs[1 + k] += bump;
            let after = fuse_score(&probs, &map, 0, 5, CofMode::Cls).unwrap().score;
            proptest::prop_assert!(after <= before + 1e-15);
        }
    }
}

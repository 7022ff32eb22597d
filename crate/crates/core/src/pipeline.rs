//! End-to-end orchestration: dataset preparation, the two training loops,
//! retrieval index construction, full inference, and evaluation.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataio::{Dataset, GtSegment};
use crate::encoder::{EncoderConfig, EncoderInput, MultiModalEncoder, TextMode};
use crate::error::{Error, Result};
use crate::metrics::{self, Detection, EvalReport, LabeledSpan, Span};
use crate::nncore::{backward, checkpoint, no_grad, AdamW, AdamWConfig, Tensor};
use crate::postproc::{
    nms_nonoverlap, scene_guided_align, snap_to_clips, to_segmentation, SceneFrame, Segmentation,
};
use crate::retrieval::{ensemble, ClassifierMode, IndexEntry, RetrievalIndex, RETRIEVAL_K};
use crate::segmenter::{
    bmn_loss, boundary_labels, fuse_score, iou_labels, pem_loss, score_all_proposals, tem_loss,
    ConfidenceMap, Pem, PemConfig, ScoredProposal, SegmenterModel, Tem, TemConfig,
};
use crate::tagger::{final_category_score, top_k_categories, TaggerModel, MAX_LABELS_PER_PROPOSAL, TAG_MATCH_IOU};

/// Dataset-level facts a checkpoint needs to rebuild its models.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataMeta {
    pub d_v: usize,
    pub d_a: usize,
    pub vocab_size: usize,
    pub d_text: Option<usize>,
    pub n_categories: usize,
    pub clip_seconds: f64,
}

impl DataMeta {
    pub fn of(ds: &Dataset) -> DataMeta {
        DataMeta {
            d_v: ds.d_v,
            d_a: ds.d_a,
            vocab_size: ds.vocab_size,
            d_text: ds.d_text,
            n_categories: ds.n_categories,
            clip_seconds: ds.clip_seconds,
        }
    }
}

/// One video, resampled onto the clip grid with ablation masking applied.
pub struct PreparedVideo {
    pub id: String,
    pub duration_s: f64,
    pub m: usize,
    /// Clip length from the dataset manifest; the last clip may be short.
    pub clip_s: f64,
    pub video: Tensor,
    pub audio: Tensor,
    pub tokens: Vec<usize>,
    pub text_vecs: Option<Tensor>,
    pub scenes: Vec<SceneFrame>,
    pub gt: Vec<GtSegment>,
    pub gt_clip_spans: Vec<(usize, usize)>,
    pub boundary_targets: Vec<f64>,
    pub internal_bounds: Vec<f64>,
}

impl PreparedVideo {
    pub fn encoder_input(&self) -> EncoderInput {
        EncoderInput {
            video: self.video.clone(),
            audio: self.audio.clone(),
            tokens: self.tokens.clone(),
            text_vecs: self.text_vecs.clone(),
        }
    }
}

pub fn prepare_dataset(ds: &Dataset, run: &RunConfig) -> Result<Vec<PreparedVideo>> {
    let abl = &run.ablation;
    let mut out = Vec::with_capacity(ds.records.len());
    for rec in &ds.records {
        let (m, v64, a64) = rec.resampled(ds.clip_seconds)?;
        let video = if abl.use_video {
            Tensor::new(&[m, ds.d_v], v64)?
        } else {
            Tensor::zeros(&[m, ds.d_v])
        };
        let audio = if abl.use_audio {
            Tensor::new(&[m, ds.d_a], a64)?
        } else {
            Tensor::zeros(&[m, ds.d_a])
        };
        let tokens: Vec<usize> = if abl.use_text {
            rec.token_ids.iter().map(|&t| t as usize).collect()
        } else {
            Vec::new()
        };
        let text_vecs = if abl.use_text && run.model.text_mode == TextMode::Precomputed {
            match &rec.text_vecs {
                Some(tv) => Some(Tensor::new(&[tv.rows, tv.cols], tv.to_f64())?),
                None => None,
            }
        } else {
            None
        };
        let internal_bounds = rec.internal_boundaries();
        let gt_clip_spans: Vec<(usize, usize)> = rec
            .gt_segments
            .iter()
            .map(|s| snap_to_clips(s.start_s, s.end_s, ds.clip_seconds, m))
            .collect();
        out.push(PreparedVideo {
            id: rec.id.clone(),
            duration_s: rec.duration_s,
            m,
            clip_s: ds.clip_seconds,
            video,
            audio,
            tokens,
            text_vecs,
            scenes: rec.scene_frames.clone(),
            gt: rec.gt_segments.clone(),
            gt_clip_spans,
            boundary_targets: boundary_labels(&internal_bounds, m, ds.clip_seconds),
            internal_bounds,
        });
    }
    Ok(out)
}

fn derive_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(
        seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(stream.wrapping_mul(0xA076_1D64_78BD_642F)),
    )
}

fn encoder_config(run: &RunConfig, meta: &DataMeta) -> EncoderConfig {
    EncoderConfig {
        d_v: meta.d_v,
        d_a: meta.d_a,
        vocab_size: meta.vocab_size,
        d_text: meta.d_text,
        width: run.model.width,
        heads: run.model.heads,
        ffn_hidden: run.model.width * run.model.ffn_mult,
        text_layers: run.model.text_layers,
        xmodal_layers: run.model.xmodal_layers,
        max_text_len: run.model.max_text_len,
        max_clips: run.model.max_clips,
        text_mode: run.model.text_mode,
        ple_enabled: run.model.ple_enabled,
    }
}

pub fn build_segmenter(run: &RunConfig, meta: &DataMeta, seed: u64) -> Result<SegmenterModel> {
    let mut rng = derive_rng(seed, 1);
    let encoder = MultiModalEncoder::new("seg.encoder", encoder_config(run, meta), &mut rng)?;
    let tem = Tem::new(
        "seg.tem",
        &TemConfig {
            width: run.model.width,
            heads: run.model.heads,
            ffn_hidden: run.model.width * run.model.ffn_mult,
            layers: run.model.tem_layers,
        },
        &mut rng,
    )?;
    let pem = Pem::new(
        "seg.pem",
        &PemConfig {
            width: run.model.width,
            reduce_channels: run.model.pem_reduce,
            hidden: run.model.pem_hidden,
            mid: run.model.pem_mid,
            n_samples: run.model.bm_samples,
            d_max: run.model.d_max,
        },
        &mut rng,
    )?;
    Ok(SegmenterModel { encoder, tem, pem })
}

pub fn build_tagger(run: &RunConfig, meta: &DataMeta, seed: u64) -> Result<TaggerModel> {
    let mut rng = derive_rng(seed, 2);
    let encoder = MultiModalEncoder::new("tag.encoder", encoder_config(run, meta), &mut rng)?;
    Ok(TaggerModel::new("tag", encoder, meta.n_categories, &mut rng))
}

fn adamw_config(run: &RunConfig) -> AdamWConfig {
    AdamWConfig {
        lr: run.train.lr,
        beta1: run.train.beta1,
        beta2: run.train.beta2,
        eps: run.train.eps,
        weight_decay: run.train.weight_decay,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegEpochLog {
    pub epoch: usize,
    pub tem_loss: f64,
    pub pem_loss: f64,
    pub total_loss: f64,
}

/// Trains encoder + TEM + PEM with the combined loss, one optimizer step per
/// video. A non-finite loss aborts with an error; the CLI keeps the last
/// per-epoch checkpoint in that case.
pub fn train_segmenter(
    videos: &[PreparedVideo],
    run: &RunConfig,
    meta: &DataMeta,
    seed: u64,
    mut on_epoch: impl FnMut(&SegEpochLog),
) -> Result<(SegmenterModel, Vec<SegEpochLog>)> {
    if videos.is_empty() {
        return Err(Error::Train("no training videos".into()));
    }
    let mut model = build_segmenter(run, meta, seed)?;
    let mut opt = AdamW::new(adamw_config(run));
    let tem_weight = run.train.tem_loss_weight;

    // Per-video regression targets depend only on the sampler geometry.
    let mut iou_targets = Vec::with_capacity(videos.len());
    for v in videos {
        let sampler = model.pem.sampler_for(v.m)?;
        iou_targets.push(iou_labels(&sampler, &v.gt_clip_spans));
    }

    let mut logs = Vec::with_capacity(run.train.epochs);
    for epoch in 1..=run.train.epochs {
        let mut rng = derive_rng(seed, 100 + epoch as u64);
        let mut order: Vec<usize> = (0..videos.len()).collect();
        order.shuffle(&mut rng);
        let (mut sum_tem, mut sum_pem, mut sum_total) = (0.0, 0.0, 0.0);
        for &idx in &order {
            let v = &videos[idx];
            let input = v.encoder_input();
            let h = model.encoder.encode(&input, None)?.va_states;
            let pem_out = model.pem.forward(&h)?;
            let l_pem = pem_loss(&pem_out, &iou_targets[idx], &mut rng)?;
            // With a zero boundary weight the TEM head stays out of the
            // graph entirely, so its parameters receive no updates.
            let (loss, tem_value) = if tem_weight != 0.0 {
                let probs = model.tem.forward(&h)?;
                let l_tem = tem_loss(&probs, &v.boundary_targets)?;
                let total = bmn_loss(&l_tem, &l_pem, tem_weight)?;
                (total, l_tem.item())
            } else {
                (l_pem.clone(), 0.0)
            };
            let total_value = loss.item();
            if !total_value.is_finite() {
                return Err(Error::Train(format!(
                    "non-finite loss on video {} in epoch {epoch}",
                    v.id
                )));
            }
            let grads = backward(&loss)?;
            opt.step(&mut model, &grads)?;
            sum_tem += tem_value;
            sum_pem += l_pem.item();
            sum_total += total_value;
        }
        let n = videos.len() as f64;
        let log = SegEpochLog {
            epoch,
            tem_loss: sum_tem / n,
            pem_loss: sum_pem / n,
            total_loss: sum_total / n,
        };
        on_epoch(&log);
        logs.push(log);
    }
    Ok((model, logs))
}

/// Per-video segmentation output, clip domain plus final seconds.
pub struct VideoSegmentation {
    pub boundary_probs: Vec<f64>,
    pub map: ConfidenceMap,
    /// Every scored candidate span.
    pub candidates: Vec<ScoredProposal>,
    /// Final non-overlapping segmentation in seconds (aligned when SGA on).
    pub segmentation: Segmentation,
    /// Snapped clip span per final segment.
    pub spans: Vec<(usize, usize)>,
    /// Fused score recomputed on each snapped span.
    pub span_scores: Vec<f64>,
}

pub fn segment_video(
    model: &SegmenterModel,
    video: &PreparedVideo,
    run: &RunConfig,
) -> Result<VideoSegmentation> {
    no_grad(|| {
        let abl = &run.ablation;
        let input = video.encoder_input();
        let (probs_t, pem_out) = model.forward(&input)?;
        let probs = probs_t.data().to_vec();
        let map = pem_out.confidence_map();
        let candidates = score_all_proposals(&probs, &map, abl.cof_mode);
        let rescore = |i: usize, j: usize| {
            fuse_score(&probs, &map, i, j, abl.cof_mode).expect("span within video")
        };
        let kept = nms_nonoverlap(&candidates, video.m, abl.gap_mode, &rescore);
        let mut segmentation = to_segmentation(&kept, video.clip_s, video.duration_s);
        if abl.sga {
            segmentation = scene_guided_align(&segmentation, &video.scenes);
        }
        let clip_s = video.clip_s;
        let mut spans = Vec::with_capacity(segmentation.segments.len());
        let mut span_scores = Vec::with_capacity(segmentation.segments.len());
        for seg in &segmentation.segments {
            let (i, j) = snap_to_clips(seg.start_s, seg.end_s, clip_s, video.m);
            let sp = fuse_score(&probs, &map, i, j, abl.cof_mode)?;
            spans.push((i, j));
            span_scores.push(sp.score);
        }
        Ok(VideoSegmentation {
            boundary_probs: probs,
            map,
            candidates,
            segmentation,
            spans,
            span_scores,
        })
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TagEpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub pairs: usize,
}

struct TagPair {
    video_idx: usize,
    span: (usize, usize),
    labels: Vec<f64>,
    use_labels: bool,
    iou_target: f64,
}

fn multi_hot(labels: &[u32], n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    for &l in labels {
        if (l as usize) < n {
            v[l as usize] = 1.0;
        }
    }
    v
}

fn seconds_span(video: &PreparedVideo, span: (usize, usize)) -> Span {
    let clip_s = video.clip_s;
    Span {
        start_s: span.0 as f64 * clip_s,
        end_s: ((span.1 + 1) as f64 * clip_s).min(video.duration_s),
    }
}

/// Training pairs: every ground-truth segment (target IoU 1, its labels)
/// plus the trained segmenter's proposals. Proposals matching a ground-truth
/// segment at IoU >= 0.5 take that segment's labels; weaker ones train only
/// the IoU head. Proposals whose span equals a ground-truth span are dropped
/// as duplicates.
fn build_tag_pairs(
    videos: &[PreparedVideo],
    seg_model: &SegmenterModel,
    run: &RunConfig,
    n_categories: usize,
) -> Result<Vec<TagPair>> {
    let mut pairs = Vec::new();
    for (vi, video) in videos.iter().enumerate() {
        for (si, &span) in video.gt_clip_spans.iter().enumerate() {
            pairs.push(TagPair {
                video_idx: vi,
                span,
                labels: multi_hot(&video.gt[si].label_ids, n_categories),
                use_labels: true,
                iou_target: 1.0,
            });
        }
        let seg = segment_video(seg_model, video, run)?;
        for &span in &seg.spans {
            if video.gt_clip_spans.contains(&span) {
                continue;
            }
            let pspan = seconds_span(video, span);
            let mut best = 0.0f64;
            let mut best_idx = 0usize;
            for (gi, g) in video.gt.iter().enumerate() {
                let iou = metrics::interval_iou(
                    pspan,
                    Span {
                        start_s: g.start_s,
                        end_s: g.end_s,
                    },
                )?;
                if iou > best {
                    best = iou;
                    best_idx = gi;
                }
            }
            let matched = best >= TAG_MATCH_IOU;
            pairs.push(TagPair {
                video_idx: vi,
                span,
                labels: if matched {
                    multi_hot(&video.gt[best_idx].label_ids, n_categories)
                } else {
                    vec![0.0; n_categories]
                },
                use_labels: matched,
                iou_target: best,
            });
        }
    }
    Ok(pairs)
}

/// Trains the tagging model (encoder with span marking, classifier head,
/// IoU head) on ground-truth segments plus segmenter proposals.
pub fn train_tagger(
    videos: &[PreparedVideo],
    seg_model: &SegmenterModel,
    run: &RunConfig,
    meta: &DataMeta,
    seed: u64,
    mut on_epoch: impl FnMut(&TagEpochLog),
) -> Result<(TaggerModel, Vec<TagEpochLog>)> {
    if videos.is_empty() {
        return Err(Error::Train("no training videos".into()));
    }
    let mut model = build_tagger(run, meta, seed)?;
    let mut opt = AdamW::new(adamw_config(run));
    let pairs = build_tag_pairs(videos, seg_model, run, meta.n_categories)?;
    if pairs.is_empty() {
        return Err(Error::Train("no tagger training pairs".into()));
    }
    let mut logs = Vec::with_capacity(run.train.epochs);
    for epoch in 1..=run.train.epochs {
        let mut rng = derive_rng(seed, 5_000 + epoch as u64);
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for &pi in &order {
            let pair = &pairs[pi];
            let video = &videos[pair.video_idx];
            let input = video.encoder_input();
            let loss = model.loss(
                &input,
                pair.span,
                &pair.labels,
                pair.use_labels,
                pair.iou_target,
            )?;
            let value = loss.item();
            if !value.is_finite() {
                return Err(Error::Train(format!(
                    "non-finite tagger loss on video {} in epoch {epoch}",
                    video.id
                )));
            }
            let grads = backward(&loss)?;
            opt.step(&mut model, &grads)?;
            sum += value;
        }
        let log = TagEpochLog {
            epoch,
            loss: sum / pairs.len() as f64,
            pairs: pairs.len(),
        };
        on_epoch(&log);
        logs.push(log);
    }
    Ok((model, logs))
}

/// Pools every ground-truth segment of the training split through the
/// tagging encoder and stores (vector, labels) entries. Returns the index
/// and the number of skipped (zero/non-finite) vectors.
pub fn build_index(
    videos: &[PreparedVideo],
    tagger: &TaggerModel,
    n_categories: usize,
) -> Result<(RetrievalIndex, usize)> {
    let dim = tagger.encoder.cfg.width;
    let mut entries = Vec::new();
    no_grad(|| -> Result<()> {
        for video in videos {
            let input = video.encoder_input();
            for (si, &span) in video.gt_clip_spans.iter().enumerate() {
                let (v, _, _) = tagger.forward(&input, span)?;
                entries.push(IndexEntry {
                    vector: v.data().to_vec(),
                    labels: multi_hot(&video.gt[si].label_ids, n_categories),
                    video_id: video.id.clone(),
                    start_clip: span.0,
                    end_clip: span.1,
                });
            }
        }
        Ok(())
    })?;
    Ok(RetrievalIndex::build(dim, n_categories, entries))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategoryScore {
    pub id: u32,
    pub p_cat: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProposalPrediction {
    pub start_s: f64,
    pub end_s: f64,
    pub p_prop: f64,
    pub p_iou: f64,
    pub categories: Vec<CategoryScore>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VideoPrediction {
    pub id: String,
    pub duration_s: f64,
    pub proposals: Vec<ProposalPrediction>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Predictions {
    pub videos: Vec<VideoPrediction>,
}

/// Per-video dump of the segmenter internals (debugging interface).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VideoDump {
    pub id: String,
    pub boundary_probs: Vec<f64>,
    pub map_cells: Vec<MapCellDump>,
    pub candidates: Vec<ScoredProposal>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapCellDump {
    pub duration: usize,
    pub start: usize,
    pub cls: f64,
    pub reg: f64,
}

fn dump_of(id: &str, seg: &VideoSegmentation) -> VideoDump {
    let mut map_cells = Vec::new();
    for d in 1..=seg.map.d_max {
        for t in 0..seg.map.m {
            let i = (d - 1) * seg.map.m + t;
            if seg.map.valid[i] {
                map_cells.push(MapCellDump {
                    duration: d,
                    start: t,
                    cls: seg.map.cls[i],
                    reg: seg.map.reg[i],
                });
            }
        }
    }
    VideoDump {
        id: id.to_string(),
        boundary_probs: seg.boundary_probs.clone(),
        map_cells,
        candidates: seg.candidates.clone(),
    }
}

/// Tags one segmented video: re-encodes per proposal with the span marked,
/// applies the classifier/retrieval ensemble, multiplies in the IoU and
/// fused proposal scores, and keeps the top 20 categories.
pub fn tag_video(
    tagger: &TaggerModel,
    index: Option<&RetrievalIndex>,
    video: &PreparedVideo,
    seg: &VideoSegmentation,
    mode: ClassifierMode,
) -> Result<VideoPrediction> {
    no_grad(|| {
        let input = video.encoder_input();
        let mut proposals = Vec::with_capacity(seg.spans.len());
        for (k, &span) in seg.spans.iter().enumerate() {
            let (v, p_cls_t, p_iou_t) = tagger.forward(&input, span)?;
            let p_cls = p_cls_t.data().to_vec();
            let p_iou = p_iou_t.item();
            let p_star = match mode {
                ClassifierMode::Cls => p_cls,
                _ => {
                    let idx = index.ok_or_else(|| {
                        Error::Config("retrieval classifier requested without an index".into())
                    })?;
                    let p_ret = if v.data().iter().all(|&x| x == 0.0) {
                        vec![0.0; tagger.n_categories]
                    } else {
                        idx.classify(v.data(), RETRIEVAL_K, Some(video.id.as_str()))?
                    };
                    ensemble(&p_cls, &p_ret, mode)?
                }
            };
            let p_prop = seg.span_scores[k];
            let p_cat = final_category_score(&p_star, p_iou, p_prop);
            let categories = top_k_categories(&p_cat, MAX_LABELS_PER_PROPOSAL)
                .into_iter()
                .map(|(id, p_cat)| CategoryScore {
                    id: id as u32,
                    p_cat,
                })
                .collect();
            let seg_times = &seg.segmentation.segments[k];
            proposals.push(ProposalPrediction {
                start_s: seg_times.start_s,
                end_s: seg_times.end_s,
                p_prop,
                p_iou,
                categories,
            });
        }
        Ok(VideoPrediction {
            id: video.id.clone(),
            duration_s: video.duration_s,
            proposals,
        })
    })
}

/// Full inference over a prepared split. Returns predictions in dataset
/// order and, when requested, the per-video segmenter dumps.
pub fn infer(
    videos: &[PreparedVideo],
    seg_model: &SegmenterModel,
    tagger: &TaggerModel,
    index: Option<&RetrievalIndex>,
    run: &RunConfig,
    with_dump: bool,
) -> Result<(Predictions, Option<Vec<VideoDump>>)> {
    let mode = run.ablation.classifier;
    let per_video = |video: &PreparedVideo| -> Result<(VideoPrediction, Option<VideoDump>)> {
        let seg = segment_video(seg_model, video, run)?;
        let pred = tag_video(tagger, index, video, &seg, mode)?;
        let dump = with_dump.then(|| dump_of(&video.id, &seg));
        Ok((pred, dump))
    };
    let results: Vec<(VideoPrediction, Option<VideoDump>)> = if run.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(run.threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| videos.par_iter().map(per_video).collect::<Result<Vec<_>>>())?
    } else {
        videos.iter().map(per_video).collect::<Result<Vec<_>>>()?
    };
    let mut predictions = Vec::with_capacity(results.len());
    let mut dumps = with_dump.then(Vec::new);
    for (pred, dump) in results {
        predictions.push(pred);
        if let (Some(ds), Some(d)) = (&mut dumps, dump) {
            ds.push(d);
        }
    }
    Ok((Predictions { videos: predictions }, dumps))
}

/// Scores predictions against a dataset. Prediction ids must match the
/// dataset exactly.
pub fn evaluate(preds: &Predictions, ds: &Dataset) -> Result<EvalReport> {
    let mut by_id: std::collections::HashMap<&str, &VideoPrediction> =
        preds.videos.iter().map(|v| (v.id.as_str(), v)).collect();
    let mut seg_preds = Vec::with_capacity(ds.records.len());
    let mut seg_gts = Vec::with_capacity(ds.records.len());
    let mut bound_preds = Vec::with_capacity(ds.records.len());
    let mut bound_gts = Vec::with_capacity(ds.records.len());
    let mut det_preds = Vec::with_capacity(ds.records.len());
    let mut det_gts = Vec::with_capacity(ds.records.len());
    let mut missing = Vec::new();
    for rec in &ds.records {
        let Some(pv) = by_id.remove(rec.id.as_str()) else {
            missing.push(rec.id.clone());
            continue;
        };
        let spans: Vec<Span> = pv
            .proposals
            .iter()
            .map(|p| Span {
                start_s: p.start_s,
                end_s: p.end_s,
            })
            .collect();
        bound_preds.push(metrics::internal_boundaries(&spans));
        seg_preds.push(spans);
        let gt_spans: Vec<Span> = rec
            .gt_segments
            .iter()
            .map(|g| Span {
                start_s: g.start_s,
                end_s: g.end_s,
            })
            .collect();
        bound_gts.push(metrics::internal_boundaries(&gt_spans));
        seg_gts.push(gt_spans);
        det_preds.push(
            pv.proposals
                .iter()
                .flat_map(|p| {
                    p.categories.iter().map(|c| Detection {
                        span: Span {
                            start_s: p.start_s,
                            end_s: p.end_s,
                        },
                        category: c.id,
                        score: c.p_cat,
                    })
                })
                .collect::<Vec<_>>(),
        );
        det_gts.push(
            rec.gt_segments
                .iter()
                .map(|g| LabeledSpan {
                    span: Span {
                        start_s: g.start_s,
                        end_s: g.end_s,
                    },
                    labels: g.label_ids.clone(),
                })
                .collect::<Vec<_>>(),
        );
    }
    if !missing.is_empty() {
        return Err(Error::Input(format!(
            "predictions are missing videos: {}",
            missing.join(", ")
        )));
    }
    if let Some(stray) = by_id.keys().next() {
        let mut ids: Vec<&str> = by_id.keys().copied().collect();
        ids.sort_unstable();
        return Err(Error::Input(format!(
            "predictions contain unknown video ids ({} total): {}",
            ids.len(),
            stray
        )));
    }
    let auc = metrics::segmentation_auc(&seg_preds, &seg_gts)?;
    let f1 = metrics::boundary_f1(&bound_preds, &bound_gts)?;
    let map = metrics::detection_map(&det_preds, &det_gts)?;
    Ok(EvalReport::assemble(auc, f1, map))
}

// ---------------------------------------------------------------------------
// Checkpoint wrappers

fn checkpoint_meta(kind: &str, run: &RunConfig, meta: &DataMeta) -> serde_json::Value {
    serde_json::json!({
        "kind": kind,
        "run": run,
        "data": meta,
    })
}

pub fn save_segmenter(
    model: &SegmenterModel,
    stem: &Path,
    run: &RunConfig,
    meta: &DataMeta,
) -> Result<()> {
    checkpoint::save(stem, model, &checkpoint_meta("segmenter", run, meta))
}

pub fn save_tagger(
    model: &TaggerModel,
    stem: &Path,
    run: &RunConfig,
    meta: &DataMeta,
) -> Result<()> {
    checkpoint::save(stem, model, &checkpoint_meta("tagger", run, meta))
}

fn meta_of_checkpoint(
    loaded: &checkpoint::LoadedCheckpoint,
    kind: &str,
) -> Result<(RunConfig, DataMeta)> {
    if loaded.meta["kind"] != kind {
        return Err(Error::Checkpoint(format!(
            "expected a {kind} checkpoint, found {}",
            loaded.meta["kind"]
        )));
    }
    let run: RunConfig = serde_json::from_value(loaded.meta["run"].clone())?;
    let meta: DataMeta = serde_json::from_value(loaded.meta["data"].clone())?;
    Ok((run, meta))
}

pub fn load_segmenter(stem: &Path) -> Result<(SegmenterModel, RunConfig, DataMeta)> {
    let loaded = checkpoint::load(stem)?;
    let (run, meta) = meta_of_checkpoint(&loaded, "segmenter")?;
    let mut model = build_segmenter(&run, &meta, 0)?;
    checkpoint::apply(&mut model, loaded)?;
    Ok((model, run, meta))
}

pub fn load_tagger(stem: &Path) -> Result<(TaggerModel, RunConfig, DataMeta)> {
    let loaded = checkpoint::load(stem)?;
    let (run, meta) = meta_of_checkpoint(&loaded, "tagger")?;
    let mut model = build_tagger(&run, &meta, 0)?;
    checkpoint::apply(&mut model, loaded)?;
    Ok((model, run, meta))
}

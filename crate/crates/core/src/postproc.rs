//! Turning scored candidates into a non-overlapping segmentation, and
//! snapping its boundaries to scene-change frames.

use serde::{Deserialize, Serialize};

use crate::segmenter::ScoredProposal;

/// Scene frames below this probability are discarded on ingestion.
pub const SCENE_PROB_MIN: f64 = 0.1;
/// A boundary moves to its nearest scene frame only when strictly closer
/// than this.
pub const SGA_MAX_SHIFT_S: f64 = 0.5;
/// Alignment moves that would leave a segment shorter than this are
/// cancelled.
pub const MIN_SEGMENT_S: f64 = 0.1;

/// A scene-change frame with its detector probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneFrame {
    pub time: f64,
    pub prob: f64,
}

/// What to do with clip ranges left uncovered after greedy selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum GapMode {
    /// Each uncovered maximal gap becomes a proposal of its own, rescored
    /// from the stored network outputs.
    Fill,
    /// Each gap is absorbed into the higher-scoring neighbor.
    Merge,
}

/// One segment of the final segmentation, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedSegment {
    pub start_s: f64,
    pub end_s: f64,
    pub score: f64,
}

/// Ordered, non-overlapping segments covering the whole video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    pub segments: Vec<TimedSegment>,
}

fn spans_overlap(a: &ScoredProposal, b: &ScoredProposal) -> bool {
    a.start_clip <= b.end_clip && b.start_clip <= a.end_clip
}

/// Greedy zero-overlap selection by descending fused score, then gap
/// handling so the result tiles the clip range [0, m). An empty candidate
/// list falls back to a single whole-video proposal.
///
/// `rescore` recomputes the fused score for a clip span; it is used for the
/// whole-video fallback and for gap proposals.
pub fn nms_nonoverlap(
    candidates: &[ScoredProposal],
    m: usize,
    gap_mode: GapMode,
    rescore: &dyn Fn(usize, usize) -> ScoredProposal,
) -> Vec<ScoredProposal> {
    assert!(m > 0, "nms over an empty clip range");
    if candidates.is_empty() {
        return vec![rescore(0, m - 1)];
    }
    let mut order: Vec<&ScoredProposal> = candidates.iter().collect();
    order.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.start_clip.cmp(&b.start_clip))
            .then(a.end_clip.cmp(&b.end_clip))
    });
    let mut kept: Vec<ScoredProposal> = Vec::new();
    for cand in order {
        if cand.end_clip >= m {
            continue;
        }
        if kept.iter().all(|k| !spans_overlap(k, cand)) {
            kept.push(cand.clone());
        }
    }
    kept.sort_by_key(|p| p.start_clip);

    // Uncovered maximal gaps.
    let mut gaps: Vec<(usize, usize)> = Vec::new();
    let mut cursor = 0usize;
    for k in &kept {
        if k.start_clip > cursor {
            gaps.push((cursor, k.start_clip - 1));
        }
        cursor = k.end_clip + 1;
    }
    if cursor < m {
        gaps.push((cursor, m - 1));
    }

    match gap_mode {
        GapMode::Fill => {
            for &(lo, hi) in &gaps {
                kept.push(rescore(lo, hi));
            }
            kept.sort_by_key(|p| p.start_clip);
        }
        GapMode::Merge => {
            for &(lo, hi) in &gaps {
                // Pick the higher-scoring neighbor; a gap at either edge has
                // only one.
                let left = kept
                    .iter()
                    .position(|p| p.end_clip + 1 == lo)
                    .filter(|_| lo > 0);
                let right = kept.iter().position(|p| p.start_clip == hi + 1);
                let target = match (left, right) {
                    (Some(l), Some(r)) => {
                        if kept[l].score >= kept[r].score {
                            l
                        } else {
                            r
                        }
                    }
                    (Some(l), None) => l,
                    (None, Some(r)) => r,
                    (None, None) => {
                        kept.push(rescore(lo, hi));
                        kept.len() - 1
                    }
                };
                kept[target].start_clip = kept[target].start_clip.min(lo);
                kept[target].end_clip = kept[target].end_clip.max(hi);
            }
            kept.sort_by_key(|p| p.start_clip);
        }
    }
    kept
}

/// True when the proposals are sorted, pairwise non-overlapping, and cover
/// every clip of [0, m).
pub fn tiles_clip_range(props: &[ScoredProposal], m: usize) -> bool {
    let mut cursor = 0usize;
    for p in props {
        if p.start_clip != cursor || p.end_clip < p.start_clip {
            return false;
        }
        cursor = p.end_clip + 1;
    }
    cursor == m
}

/// Converts clip-domain proposals to seconds; the last segment is clamped to
/// the true duration.
pub fn to_segmentation(props: &[ScoredProposal], clip_s: f64, duration_s: f64) -> Segmentation {
    let segments = props
        .iter()
        .map(|p| TimedSegment {
            start_s: p.start_clip as f64 * clip_s,
            end_s: ((p.end_clip + 1) as f64 * clip_s).min(duration_s),
            score: p.score,
        })
        .collect();
    Segmentation { segments }
}

/// Keeps frames above the probability floor, sorted by time, deduplicated.
pub fn usable_scene_frames(frames: &[SceneFrame]) -> Vec<SceneFrame> {
    let mut out: Vec<SceneFrame> = frames.iter().copied().filter(|f| f.prob > SCENE_PROB_MIN).collect();
    out.sort_by(|a, b| a.time.total_cmp(&b.time).then(b.prob.total_cmp(&a.prob)));
    out.dedup_by(|a, b| a.time == b.time);
    out
}

/// Nearest frame time to `t`; on an exact distance tie the earlier frame
/// wins. `frames` must be sorted by time.
fn nearest_frame(frames: &[SceneFrame], t: f64) -> Option<f64> {
    if frames.is_empty() {
        return None;
    }
    let idx = frames.partition_point(|f| f.time < t);
    let mut best: Option<f64> = None;
    if idx > 0 {
        best = Some(frames[idx - 1].time);
    }
    if idx < frames.len() {
        let cand = frames[idx].time;
        best = match best {
            None => Some(cand),
            // Strict improvement required, so the earlier frame keeps ties.
            Some(prev) => {
                if (cand - t).abs() < (prev - t).abs() {
                    Some(cand)
                } else {
                    Some(prev)
                }
            }
        };
    }
    best
}

/// Moves each internal boundary to its nearest scene frame when that frame
/// is strictly within [SGA_MAX_SHIFT_S]. The video start and end never move.
/// Boundaries are resolved left to right; a move that would create a segment
/// shorter than [MIN_SEGMENT_S] is cancelled.
pub fn scene_guided_align(seg: &Segmentation, scenes: &[SceneFrame]) -> Segmentation {
    if seg.segments.len() < 2 {
        return seg.clone();
    }
    let frames = usable_scene_frames(scenes);
    if frames.is_empty() {
        return seg.clone();
    }
    let mut out = seg.clone();
    for k in 0..out.segments.len() - 1 {
        let boundary = out.segments[k].end_s;
        let Some(target) = nearest_frame(&frames, boundary) else {
            continue;
        };
        if (target - boundary).abs() >= SGA_MAX_SHIFT_S {
            continue;
        }
        let left_start = out.segments[k].start_s;
        let right_end = out.segments[k + 1].end_s;
        if target - left_start < MIN_SEGMENT_S || right_end - target < MIN_SEGMENT_S {
            continue;
        }
        out.segments[k].end_s = target;
        out.segments[k + 1].start_s = target;
    }
    out
}

/// Snaps a second-domain span back onto inclusive clip indices.
pub fn snap_to_clips(start_s: f64, end_s: f64, clip_s: f64, m: usize) -> (usize, usize) {
    let i = (start_s / clip_s).round().max(0.0) as usize;
    let i = i.min(m - 1);
    let j_edge = (end_s / clip_s).round() as usize;
    let j = j_edge.saturating_sub(1).clamp(i, m - 1);
    (i, j)
}

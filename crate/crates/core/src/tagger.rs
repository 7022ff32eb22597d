//! Proposal tagging: span-conditioned encoding, mean pooling, the
//! multi-label classifier, the IoU re-ranking head, and the final
//! per-category score.

use rand_chacha::ChaCha12Rng;

use crate::encoder::{EncoderInput, MultiModalEncoder};
use crate::error::Result;
use crate::nncore::layers::Linear;
use crate::nncore::{ops, HasParams, Parameter, Tensor};

/// Hard cap on the number of category labels emitted per proposal.
pub const MAX_LABELS_PER_PROPOSAL: usize = 20;
/// Weight of the IoU head loss inside the multi-task tagger loss.
pub const IOU_LOSS_WEIGHT: f64 = 1.0;
/// A generated proposal contributes classification targets only when it
/// overlaps some ground-truth segment at least this much.
pub const TAG_MATCH_IOU: f64 = 0.5;

/// Mean of the clip-aligned states over the proposal span (inclusive).
pub fn pool_proposal(h: &Tensor, start_clip: usize, end_clip: usize) -> Result<Tensor> {
    ops::mean_rows_range(h, start_clip, end_clip)
}

/// Scores, per category, for one proposal.
#[derive(Debug, Clone)]
pub struct TagPrediction {
    pub p_cls: Vec<f64>,
    pub p_iou: f64,
    pub p_prop: f64,
    pub p_cat: Vec<f64>,
}

/// Final per-category score: classifier/retrieval probability times the
/// re-ranking IoU times the fused proposal score.
pub fn final_category_score(p_star: &[f64], p_iou: f64, p_prop: f64) -> Vec<f64> {
    p_star.iter().map(|p| p * p_iou * p_prop).collect()
}

/// Top "k" categories by score, descending; ties break toward the smaller
/// category id.
pub fn top_k_categories(p_cat: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut idx: Vec<usize> = (0..p_cat.len()).collect();
    idx.sort_by(|&a, &b| p_cat[b].total_cmp(&p_cat[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.into_iter().map(|i| (i, p_cat[i])).collect()
}

/// Tagging model: its own encoder copy (with the span embeddings active), a
/// sigmoid classifier over categories, and a sigmoid IoU head.
pub struct TaggerModel {
    pub encoder: MultiModalEncoder,
    pub cls_head: Linear,
    pub iou_head: Linear,
    pub n_categories: usize,
}

impl TaggerModel {
    pub fn new(
        prefix: &str,
        encoder: MultiModalEncoder,
        n_categories: usize,
        rng: &mut ChaCha12Rng,
    ) -> TaggerModel {
        let width = encoder.cfg.width;
        TaggerModel {
            encoder,
            cls_head: Linear::new(&format!("{prefix}.cls"), width, n_categories, rng),
            iou_head: Linear::new(&format!("{prefix}.iou"), width, 1, rng),
            n_categories,
        }
    }

    /// Pooled proposal vector plus both head outputs:
    /// (vector [D], p_cls [C], p_iou [1]).
    ///
    /// The whole video is always encoded; with span embeddings enabled the
    /// span is marked in the input, otherwise the encoding is
    /// span-independent and only the pooling selects the proposal.
    pub fn forward(
        &self,
        input: &EncoderInput,
        span: (usize, usize),
    ) -> Result<(Tensor, Tensor, Tensor)> {
        let h = self.encoder.encode(input, Some(span))?.va_states;
        let v = pool_proposal(&h, span.0, span.1)?;
        let p_cls = self.classify(&v)?;
        let p_iou = self.rerank_iou(&v)?;
        Ok((v, p_cls, p_iou))
    }

    /// Independent per-category probabilities for a pooled proposal vector.
    pub fn classify(&self, v: &Tensor) -> Result<Tensor> {
        let row = ops::reshape(v, &[1, v.numel()])?;
        Ok(ops::sigmoid(&ops::reshape(
            &self.cls_head.forward(&row)?,
            &[self.n_categories],
        )?))
    }

    /// Predicted overlap of the proposal with its best ground-truth match.
    pub fn rerank_iou(&self, v: &Tensor) -> Result<Tensor> {
        let row = ops::reshape(v, &[1, v.numel()])?;
        Ok(ops::sigmoid(&ops::reshape(&self.iou_head.forward(&row)?, &[1])?))
    }

    /// Multi-task loss for one training pair. `labels` is the multi-hot
    /// category target (ignored when `use_labels` is false, for proposals
    /// that match no ground truth); `iou_target` is the soft re-ranking
    /// target in [0, 1].
    pub fn loss(
        &self,
        input: &EncoderInput,
        span: (usize, usize),
        labels: &[f64],
        use_labels: bool,
        iou_target: f64,
    ) -> Result<Tensor> {
        let (_, p_cls, p_iou) = self.forward(input, span)?;
        let l_iou = ops::scale(
            &ops::bce_loss(&p_iou, &[iou_target], &[1.0])?,
            IOU_LOSS_WEIGHT,
        );
        if !use_labels {
            return Ok(l_iou);
        }
        let l_cls = ops::bce_loss(&p_cls, labels, &vec![1.0; labels.len()])?;
        ops::add(&l_cls, &l_iou)
    }
}

impl HasParams for TaggerModel {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        self.encoder.visit(f);
        self.cls_head.visit(f);
        self.iou_head.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.encoder.visit_mut(f);
        self.cls_head.visit_mut(f);
        self.iou_head.visit_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{EncoderConfig, TextMode};
    use rand::SeedableRng;

    #[test]
    fn pool_single_row_is_that_row() {
        let h = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let v = pool_proposal(&h, 1, 1).unwrap();
        assert_eq!(v.data(), &[3.0, 4.0]);
    }

    #[test]
    fn pool_constant_rows_is_the_constant() {
        let h = Tensor::from_rows(&vec![vec![2.0, -1.0]; 5]).unwrap();
        for (i, j) in [(0, 4), (1, 3), (2, 2)] {
            let v = pool_proposal(&h, i, j).unwrap();
            assert_eq!(v.data(), &[2.0, -1.0]);
        }
    }

    #[test]
    fn pool_hand_case() {
        let h = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let v = pool_proposal(&h, 0, 2).unwrap();
        assert_eq!(v.data(), &[3.0, 4.0]);
    }

    #[test]
    fn pool_out_of_range_is_an_error() {
        let h = Tensor::from_rows(&vec![vec![0.0; 2]; 3]).unwrap();
        assert!(pool_proposal(&h, 2, 3).is_err());
        assert!(pool_proposal(&h, 2, 1).is_err());
    }

    #[test]
    fn final_score_identity_and_annihilation() {
        let p = vec![0.8, 0.2];
        assert_eq!(final_category_score(&p, 1.0, 1.0), p);
        assert_eq!(final_category_score(&p, 0.7, 0.0), vec![0.0, 0.0]);
        let scaled = final_category_score(&p, 0.5, 0.5);
        assert!((scaled[0] - 0.2).abs() < 1e-15);
        assert!((scaled[1] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn ranking_by_p_cat_matches_ranking_by_p_star() {
        let pred = TagPrediction {
            p_cls: vec![0.1, 0.9, 0.3, 0.6],
            p_iou: 0.37,
            p_prop: 0.21,
            p_cat: final_category_score(&[0.1, 0.9, 0.3, 0.6], 0.37, 0.21),
        };
        let by_cat = top_k_categories(&pred.p_cat, 4);
        let by_star = top_k_categories(&pred.p_cls, 4);
        let order_cat: Vec<usize> = by_cat.iter().map(|&(i, _)| i).collect();
        let order_star: Vec<usize> = by_star.iter().map(|&(i, _)| i).collect();
        assert_eq!(order_cat, order_star);
    }

    #[test]
    fn top_k_caps_the_label_count() {
        let p: Vec<f64> = (0..82).map(|i| (i as f64) / 100.0).collect();
        let top = top_k_categories(&p, MAX_LABELS_PER_PROPOSAL);
        assert_eq!(top.len(), 20);
        assert_eq!(top[0].0, 81);
    }

    fn tiny_tagger(ple_enabled: bool, seed: u64) -> TaggerModel {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let enc = MultiModalEncoder::new(
            "tag.encoder",
            EncoderConfig {
                d_v: 2,
                d_a: 2,
                vocab_size: 8,
                d_text: None,
                width: 8,
                heads: 2,
                ffn_hidden: 16,
                text_layers: 1,
                xmodal_layers: 1,
                max_text_len: 8,
                max_clips: 16,
                text_mode: TextMode::Learned,
                ple_enabled,
            },
            &mut rng,
        )
        .unwrap();
        TaggerModel::new("tag", enc, 82, &mut rng)
    }

    #[test]
    fn classifier_emits_82_probabilities_and_half_at_zero_weights() {
        let mut tagger = tiny_tagger(true, 101);
        let n = tagger.cls_head.w.tensor.numel();
        tagger.cls_head.w.set_data(vec![0.0; n]).unwrap();
        tagger.cls_head.b.set_data(vec![0.0; 82]).unwrap();
        let input = EncoderInput {
            video: Tensor::new(&[4, 2], vec![0.3; 8]).unwrap(),
            audio: Tensor::new(&[4, 2], vec![-0.2; 8]).unwrap(),
            tokens: vec![1, 2],
            text_vecs: None,
        };
        let (_, p_cls, _) = tagger.forward(&input, (1, 2)).unwrap();
        assert_eq!(p_cls.numel(), 82);
        assert!(p_cls.data().iter().all(|&p| (p - 0.5).abs() < 1e-12));
    }

    #[test]
    fn iou_head_zero_weights_is_half() {
        let mut tagger = tiny_tagger(true, 102);
        let n = tagger.iou_head.w.tensor.numel();
        tagger.iou_head.w.set_data(vec![0.0; n]).unwrap();
        let input = EncoderInput {
            video: Tensor::new(&[4, 2], vec![0.1; 8]).unwrap(),
            audio: Tensor::new(&[4, 2], vec![0.4; 8]).unwrap(),
            tokens: vec![],
            text_vecs: None,
        };
        let (_, _, p_iou) = tagger.forward(&input, (0, 3)).unwrap();
        assert!((p_iou.item() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zeroed_span_embeddings_make_pooling_span_blind() {
        // With the span embeddings zeroed (and frozen for the purpose of
        // this check) and clip positions zeroed, constant features produce
        // identical interior rows, so every interior span pools to the same
        // vector: the embeddings are the only span signal besides position.
        let mut tagger = tiny_tagger(true, 103);
        let params = tagger.parameters();
        let pos_idx = params.iter().position(|p| p.name == "tag.encoder.va.pos").unwrap();
        let pos_len = params[pos_idx].tensor.numel();
        let in_idx = params.iter().position(|p| p.name == "tag.encoder.ple.inside").unwrap();
        let out_idx = params.iter().position(|p| p.name == "tag.encoder.ple.outside").unwrap();
        drop(params);
        tagger.set_param_data(pos_idx, vec![0.0; pos_len]).unwrap();
        tagger.set_param_data(in_idx, vec![0.0; 4]).unwrap();
        tagger.set_param_data(out_idx, vec![0.0; 4]).unwrap();
        let input = EncoderInput {
            video: Tensor::new(&[16, 2], vec![0.7; 32]).unwrap(),
            audio: Tensor::new(&[16, 2], vec![-0.3; 32]).unwrap(),
            tokens: vec![],
            text_vecs: None,
        };
        // Interior spans, away from the convolution edge effects.
        let (va, _, _) = tagger.forward(&input, (6, 8)).unwrap();
        let (vb, _, _) = tagger.forward(&input, (7, 10)).unwrap();
        for (a, b) in va.data().iter().zip(vb.data()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        // Restoring nonzero span embeddings separates the spans again.
        let mut marked = tiny_tagger(true, 103);
        marked.set_param_data(pos_idx, vec![0.0; pos_len]).unwrap();
        let (va, _, _) = marked.forward(&input, (6, 8)).unwrap();
        let (vb, _, _) = marked.forward(&input, (7, 10)).unwrap();
        let diff: f64 = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 1e-9);
    }

}

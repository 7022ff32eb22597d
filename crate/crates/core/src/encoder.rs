//! Multi-modal encoder: a text branch, a video-audio branch built from 1-D
//! Inception modules, and a transformer that lets the two modalities attend
//! to each other. Output rows aligned with the clip grid feed the segmenter
//! and the tagger.

use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::layers::{Conv1d, Embedding, Linear, TransformerBlock};
use crate::nncore::{ops, HasParams, Parameter, Tensor};

/// Where per-token text vectors come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TextMode {
    /// Trainable token embedding lookup.
    Learned,
    /// Per-token vectors ingested from the feature file, linearly projected.
    Precomputed,
}

#[derive(Debug, Clone)]
pub struct EncoderConfig {
    pub d_v: usize,
    pub d_a: usize,
    pub vocab_size: usize,
    /// Dimension of precomputed text vectors, when that mode is active.
    pub d_text: Option<usize>,
    pub width: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub text_layers: usize,
    pub xmodal_layers: usize,
    pub max_text_len: usize,
    pub max_clips: usize,
    pub text_mode: TextMode,
    pub ple_enabled: bool,
}

/// Per-video encoder input, already resampled onto the clip grid and with
/// disabled modalities zeroed out by the caller.
pub struct EncoderInput {
    /// m x d_v
    pub video: Tensor,
    /// m x d_a
    pub audio: Tensor,
    pub tokens: Vec<usize>,
    /// n x d_text, only in precomputed text mode.
    pub text_vecs: Option<Tensor>,
}

impl EncoderInput {
    pub fn clips(&self) -> usize {
        self.video.rows()
    }
}

pub struct MultiModalOutput {
    /// n x D states for the text positions; `None` for an empty caption.
    pub text_states: Option<Tensor>,
    /// m x D states aligned with the video clips.
    pub va_states: Tensor,
}

/// The pair of additive embeddings that mark clips as inside/outside the
/// proposal being tagged. Both live in the raw video-audio feature space.
pub struct PleEmbeddings {
    pub inside: Parameter,
    pub outside: Parameter,
    pub enabled: bool,
}

impl HasParams for PleEmbeddings {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        f(&self.inside);
        f(&self.outside);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.inside);
        f(&mut self.outside);
    }
}

/// Four-branch Inception block over (channels x time): 1-kernel, 1->3,
/// 1->5, and maxpool->1, each producing out/4 channels.
pub struct Inception1d {
    b1: Conv1d,
    b2a: Conv1d,
    b2b: Conv1d,
    b3a: Conv1d,
    b3b: Conv1d,
    b4: Conv1d,
}

impl Inception1d {
    pub fn new(name: &str, c_in: usize, c_out: usize, rng: &mut ChaCha12Rng) -> Result<Self> {
        if c_out % 4 != 0 {
            return Err(Error::Config(format!(
                "inception {name}: output channels {c_out} not divisible by 4 branches"
            )));
        }
        let cb = c_out / 4;
        Ok(Inception1d {
            b1: Conv1d::new(&format!("{name}.b1"), c_in, cb, 1, rng)?,
            b2a: Conv1d::new(&format!("{name}.b2a"), c_in, cb, 1, rng)?,
            b2b: Conv1d::new(&format!("{name}.b2b"), cb, cb, 3, rng)?,
            b3a: Conv1d::new(&format!("{name}.b3a"), c_in, cb, 1, rng)?,
            b3b: Conv1d::new(&format!("{name}.b3b"), cb, cb, 5, rng)?,
            b4: Conv1d::new(&format!("{name}.b4"), c_in, cb, 1, rng)?,
        })
    }

    /// x is (C_in x T) -> (C_out x T).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let r1 = ops::relu(&self.b1.forward(x)?);
        let r2 = ops::relu(&self.b2b.forward(&ops::relu(&self.b2a.forward(x)?))?);
        let r3 = ops::relu(&self.b3b.forward(&ops::relu(&self.b3a.forward(x)?))?);
        let pooled = ops::maxpool1d_same(x, 3)?;
        let r4 = ops::relu(&self.b4.forward(&pooled)?);
        let top = ops::concat_rows(&r1, &r2)?;
        let bottom = ops::concat_rows(&r3, &r4)?;
        ops::concat_rows(&top, &bottom)
    }
}

impl HasParams for Inception1d {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        for c in [&self.b1, &self.b2a, &self.b2b, &self.b3a, &self.b3b, &self.b4] {
            c.visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.b1.visit_mut(f);
        self.b2a.visit_mut(f);
        self.b2b.visit_mut(f);
        self.b3a.visit_mut(f);
        self.b3b.visit_mut(f);
        self.b4.visit_mut(f);
    }
}

enum TextBranch {
    Learned {
        tokens: Embedding,
    },
    Precomputed {
        proj: Linear,
    },
}

/// Full encoder. Produces H (clip-aligned multi-modal states) and the text
/// states; downstream heads consume only H.
pub struct MultiModalEncoder {
    pub cfg: EncoderConfig,
    text: TextBranch,
    text_pos: Parameter,
    text_blocks: Vec<TransformerBlock>,
    pub ple: PleEmbeddings,
    inception1: Inception1d,
    inception2: Inception1d,
    va_pos: Parameter,
    type_emb: Parameter,
    xmodal_blocks: Vec<TransformerBlock>,
}

impl MultiModalEncoder {
    pub fn new(prefix: &str, cfg: EncoderConfig, rng: &mut ChaCha12Rng) -> Result<Self> {
        if cfg.width == 0 || cfg.width % cfg.heads != 0 {
            return Err(Error::Config(format!(
                "encoder width {} not divisible by {} heads",
                cfg.width, cfg.heads
            )));
        }
        let d_ya = cfg.d_v + cfg.d_a;
        if d_ya == 0 {
            return Err(Error::Config("encoder needs d_v + d_a > 0".into()));
        }
        let text = match cfg.text_mode {
            TextMode::Learned => TextBranch::Learned {
                tokens: Embedding::new(&format!("{prefix}.text.tok"), cfg.vocab_size, cfg.width, rng),
            },
            TextMode::Precomputed => {
                let d_text = cfg.d_text.ok_or_else(|| {
                    Error::Config("precomputed text mode needs d_text".into())
                })?;
                TextBranch::Precomputed {
                    proj: Linear::new(&format!("{prefix}.text.proj"), d_text, cfg.width, rng),
                }
            }
        };
        let text_blocks = (0..cfg.text_layers)
            .map(|i| {
                TransformerBlock::new(
                    &format!("{prefix}.text.block{i}"),
                    cfg.width,
                    cfg.heads,
                    cfg.ffn_hidden,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let xmodal_blocks = (0..cfg.xmodal_layers)
            .map(|i| {
                TransformerBlock::new(
                    &format!("{prefix}.xmodal.block{i}"),
                    cfg.width,
                    cfg.heads,
                    cfg.ffn_hidden,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MultiModalEncoder {
            text,
            text_pos: Parameter::normal(
                format!("{prefix}.text.pos"),
                &[cfg.max_text_len, cfg.width],
                0.02,
                rng,
            ),
            text_blocks,
            ple: PleEmbeddings {
                inside: Parameter::normal(format!("{prefix}.ple.inside"), &[d_ya], 0.02, rng),
                outside: Parameter::normal(format!("{prefix}.ple.outside"), &[d_ya], 0.02, rng),
                enabled: cfg.ple_enabled,
            },
            inception1: Inception1d::new(&format!("{prefix}.va.inception1"), d_ya, cfg.width, rng)?,
            inception2: Inception1d::new(&format!("{prefix}.va.inception2"), cfg.width, cfg.width, rng)?,
            va_pos: Parameter::normal(
                format!("{prefix}.va.pos"),
                &[cfg.max_clips, cfg.width],
                0.02,
                rng,
            ),
            type_emb: Parameter::normal(format!("{prefix}.type"), &[2, cfg.width], 0.02, rng),
            xmodal_blocks,
            cfg,
        })
    }

    /// Raw video-audio input for the Inception stack: per-clip channel
    /// concatenation, plus the in-span / out-span embedding when a proposal
    /// span is given.
    pub fn build_va_input(
        &self,
        video: &Tensor,
        audio: &Tensor,
        ple_span: Option<(usize, usize)>,
    ) -> Result<Tensor> {
        if video.rank() != 2 || audio.rank() != 2 || video.rows() != audio.rows() {
            return Err(Error::shape("build_va_input", video.shape(), audio.shape()));
        }
        let m = video.rows();
        let y = ops::concat_cols(video, audio)?;
        let Some((i, j)) = ple_span else {
            return Ok(y);
        };
        if i > j || j >= m {
            return Err(Error::Input(format!(
                "proposal span ({i}, {j}) out of range for {m} clips"
            )));
        }
        let d = self.cfg.d_v + self.cfg.d_a;
        let outside = ops::reshape(&self.ple.outside.tensor, &[1, d])?;
        let inside = ops::reshape(&self.ple.inside.tensor, &[1, d])?;
        let table = ops::concat_rows(&outside, &inside)?;
        let ids: Vec<usize> = (0..m).map(|k| usize::from(k >= i && k <= j)).collect();
        let marks = ops::embedding(&table, &ids)?;
        ops::add(&y, &marks)
    }

    /// Video-audio branch: Inception stack plus learned clip positions.
    pub fn encode_video_audio(
        &self,
        video: &Tensor,
        audio: &Tensor,
        ple_span: Option<(usize, usize)>,
    ) -> Result<Tensor> {
        let span = if self.ple.enabled { ple_span } else { None };
        let y = self.build_va_input(video, audio, span)?;
        let m = y.rows();
        if m > self.cfg.max_clips {
            return Err(Error::Input(format!(
                "{m} clips exceed the configured maximum of {}",
                self.cfg.max_clips
            )));
        }
        let x = ops::transpose(&y)?;
        let h = self.inception2.forward(&self.inception1.forward(&x)?)?;
        let h = ops::transpose(&h)?;
        let pos = ops::slice_rows(&self.va_pos.tensor, 0, m)?;
        ops::add(&h, &pos)
    }

    /// Text branch; `None` for an empty caption.
    pub fn encode_text(&self, input: &EncoderInput) -> Result<Option<Tensor>> {
        let mut h = match &self.text {
            TextBranch::Learned { tokens } => {
                if input.tokens.is_empty() {
                    return Ok(None);
                }
                if input.tokens.len() > self.cfg.max_text_len {
                    return Err(Error::Input(format!(
                        "caption of {} tokens exceeds maximum {}",
                        input.tokens.len(),
                        self.cfg.max_text_len
                    )));
                }
                tokens.forward(&input.tokens)?
            }
            TextBranch::Precomputed { proj } => {
                let Some(vecs) = &input.text_vecs else {
                    return Ok(None);
                };
                if vecs.rows() > self.cfg.max_text_len {
                    return Err(Error::Input(format!(
                        "caption of {} tokens exceeds maximum {}",
                        vecs.rows(),
                        self.cfg.max_text_len
                    )));
                }
                proj.forward(vecs)?
            }
        };
        let n = h.rows();
        let pos = ops::slice_rows(&self.text_pos.tensor, 0, n)?;
        h = ops::add(&h, &pos)?;
        for blk in &self.text_blocks {
            h = blk.forward(&h, None)?;
        }
        Ok(Some(h))
    }

    /// Adds modality type embeddings, concatenates text and video-audio
    /// states along the sequence axis, and runs the cross-modality
    /// transformer. Splits the result back into the two modality ranges.
    pub fn cross_modal_encode(
        &self,
        text_states: Option<&Tensor>,
        va_states: &Tensor,
    ) -> Result<MultiModalOutput> {
        Ok(self.cross_modal_encode_attn(text_states, va_states)?.0)
    }

    /// Same as `cross_modal_encode`, also returning the first layer's
    /// per-head attention matrices over the joint sequence.
    pub fn cross_modal_encode_attn(
        &self,
        text_states: Option<&Tensor>,
        va_states: &Tensor,
    ) -> Result<(MultiModalOutput, Vec<Tensor>)> {
        let d = self.cfg.width;
        if va_states.cols() != d {
            return Err(Error::Config(format!(
                "cross-modal width mismatch: va states have {} columns, model width is {d}",
                va_states.cols()
            )));
        }
        let type_text = ops::reshape(&ops::slice_rows(&self.type_emb.tensor, 0, 1)?, &[d])?;
        let type_va = ops::reshape(&ops::slice_rows(&self.type_emb.tensor, 1, 2)?, &[d])?;
        let hy = ops::add_row_vector(va_states, &type_va)?;
        let n = text_states.map(|t| t.rows()).unwrap_or(0);
        let joint = match text_states {
            Some(hx) => {
                if hx.cols() != d {
                    return Err(Error::Config(format!(
                        "cross-modal width mismatch: text states have {} columns, model width is {d}",
                        hx.cols()
                    )));
                }
                let hx = ops::add_row_vector(hx, &type_text)?;
                ops::concat_rows(&hx, &hy)?
            }
            None => hy,
        };
        let mut h = joint;
        let mut first_attn = Vec::new();
        for (li, blk) in self.xmodal_blocks.iter().enumerate() {
            let (next, maps) = blk.forward_attn(&h, None)?;
            if li == 0 {
                first_attn = maps;
            }
            h = next;
        }
        let m = va_states.rows();
        let out = if n > 0 {
            MultiModalOutput {
                text_states: Some(ops::slice_rows(&h, 0, n)?),
                va_states: ops::slice_rows(&h, n, n + m)?,
            }
        } else {
            MultiModalOutput {
                text_states: None,
                va_states: h,
            }
        };
        Ok((out, first_attn))
    }

    /// Full pass: both branches plus the cross-modality encoder.
    pub fn encode(
        &self,
        input: &EncoderInput,
        ple_span: Option<(usize, usize)>,
    ) -> Result<MultiModalOutput> {
        let hx = self.encode_text(input)?;
        let hy = self.encode_video_audio(&input.video, &input.audio, ple_span)?;
        self.cross_modal_encode(hx.as_ref(), &hy)
    }
}

impl HasParams for MultiModalEncoder {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        match &self.text {
            TextBranch::Learned { tokens } => tokens.visit(f),
            TextBranch::Precomputed { proj } => proj.visit(f),
        }
        f(&self.text_pos);
        for b in &self.text_blocks {
            b.visit(f);
        }
        self.ple.visit(f);
        self.inception1.visit(f);
        self.inception2.visit(f);
        f(&self.va_pos);
        f(&self.type_emb);
        for b in &self.xmodal_blocks {
            b.visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        match &mut self.text {
            TextBranch::Learned { tokens } => tokens.visit_mut(f),
            TextBranch::Precomputed { proj } => proj.visit_mut(f),
        }
        f(&mut self.text_pos);
        for b in &mut self.text_blocks {
            b.visit_mut(f);
        }
        self.ple.visit_mut(f);
        self.inception1.visit_mut(f);
        self.inception2.visit_mut(f);
        f(&mut self.va_pos);
        f(&mut self.type_emb);
        for b in &mut self.xmodal_blocks {
            b.visit_mut(f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn cfg(m_max: usize) -> EncoderConfig {
        EncoderConfig {
            d_v: 2,
            d_a: 2,
            vocab_size: 16,
            d_text: None,
            width: 8,
            heads: 2,
            ffn_hidden: 16,
            text_layers: 1,
            xmodal_layers: 2,
            max_text_len: 8,
            max_clips: m_max,
            text_mode: TextMode::Learned,
            ple_enabled: true,
        }
    }

    fn encoder(seed: u64, m_max: usize) -> MultiModalEncoder {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        MultiModalEncoder::new("enc", cfg(m_max), &mut rng).unwrap()
    }

    fn rand_input(rng: &mut ChaCha12Rng, m: usize, tokens: Vec<usize>) -> EncoderInput {
        use rand::Rng;
        let video = Tensor::new(&[m, 2], (0..m * 2).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let audio = Tensor::new(&[m, 2], (0..m * 2).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        EncoderInput {
            video,
            audio,
            tokens,
            text_vecs: None,
        }
    }

    #[test]
    fn shapes_contract() {
        let enc = encoder(3, 8);
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let input = rand_input(&mut rng, 4, vec![1, 2, 3]);
        let out = enc.encode(&input, None).unwrap();
        assert_eq!(out.va_states.shape(), &[4, 8]);
        assert_eq!(out.text_states.unwrap().shape(), &[3, 8]);
    }

    #[test]
    fn empty_caption_runs_on_video_audio_alone() {
        let enc = encoder(3, 8);
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let input = rand_input(&mut rng, 5, vec![]);
        let out = enc.encode(&input, None).unwrap();
        assert!(out.text_states.is_none());
        assert_eq!(out.va_states.shape(), &[5, 8]);
    }

    #[test]
    fn single_token_caption_shape() {
        let enc = encoder(3, 8);
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let input = rand_input(&mut rng, 4, vec![7]);
        let hx = enc.encode_text(&input).unwrap().unwrap();
        assert_eq!(hx.shape(), &[1, 8]);
    }

    #[test]
    fn distinct_token_sequences_give_distinct_states() {
        let enc = encoder(3, 8);
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let a = rand_input(&mut rng, 4, vec![1, 2]);
        let b = EncoderInput {
            tokens: vec![3, 4],
            ..rand_input(&mut rng, 4, vec![])
        };
        let ha = enc.encode_text(&a).unwrap().unwrap();
        let hb = enc.encode_text(&b).unwrap().unwrap();
        assert_ne!(ha.data(), hb.data());
    }

    #[test]
    fn out_of_range_token_is_an_input_error() {
        let enc = encoder(3, 8);
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let input = rand_input(&mut rng, 4, vec![99]);
        assert!(enc.encode_text(&input).is_err());
    }

    #[test]
    fn ple_span_changes_activations() {
        let enc = encoder(9, 8);
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let input = rand_input(&mut rng, 6, vec![]);
        let off = enc.encode_video_audio(&input.video, &input.audio, None).unwrap();
        let on = enc
            .encode_video_audio(&input.video, &input.audio, Some((0, 5)))
            .unwrap();
        assert_ne!(off.data(), on.data());
    }

    #[test]
    fn ple_span_out_of_range_is_an_input_error() {
        let enc = encoder(9, 8);
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let input = rand_input(&mut rng, 6, vec![]);
        assert!(enc
            .build_va_input(&input.video, &input.audio, Some((2, 6)))
            .is_err());
        assert!(enc
            .build_va_input(&input.video, &input.audio, Some((3, 2)))
            .is_err());
    }

    #[test]
    fn swapping_ple_embeddings_mirrors_full_vs_empty_span() {
        // A full-span input with swapped in/out embeddings equals adding the
        // original outside embedding everywhere.
        let mut enc = encoder(12, 8);
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let input = rand_input(&mut rng, 5, vec![]);
        let inside = enc.ple.inside.data().to_vec();
        let outside = enc.ple.outside.data().to_vec();
        let full = enc
            .build_va_input(&input.video, &input.audio, Some((0, 4)))
            .unwrap();
        // Manual Y + inside everywhere.
        let y = ops::concat_cols(&input.video, &input.audio).unwrap();
        let mark = Tensor::new(&[4], inside.clone()).unwrap();
        let manual = ops::add_row_vector(&y, &mark).unwrap();
        for (a, b) in full.data().iter().zip(manual.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        // Swap the two embeddings: the full span now adds the old outside.
        enc.ple.inside.set_data(outside.clone()).unwrap();
        enc.ple.outside.set_data(inside).unwrap();
        let swapped = enc
            .build_va_input(&input.video, &input.audio, Some((0, 4)))
            .unwrap();
        let mark2 = Tensor::new(&[4], outside).unwrap();
        let manual2 = ops::add_row_vector(&y, &mark2).unwrap();
        for (a, b) in swapped.data().iter().zip(manual2.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn no_span_ignores_ple_values() {
        let mut enc = encoder(13, 8);
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let input = rand_input(&mut rng, 6, vec![]);
        let before = enc
            .encode_video_audio(&input.video, &input.audio, None)
            .unwrap();
        enc.ple.inside.set_data(vec![123.0; 4]).unwrap();
        enc.ple.outside.set_data(vec![-55.0; 4]).unwrap();
        let after = enc
            .encode_video_audio(&input.video, &input.audio, None)
            .unwrap();
        assert_eq!(before.data(), after.data());
    }

    #[test]
    fn cross_modal_sequence_length_is_n_plus_m() {
        let enc = encoder(14, 8);
        let mut rng = ChaCha12Rng::seed_from_u64(14);
        let input = rand_input(&mut rng, 5, vec![2, 3, 4]);
        let hx = enc.encode_text(&input).unwrap();
        let hy = enc
            .encode_video_audio(&input.video, &input.audio, None)
            .unwrap();
        let (out, attn) = enc.cross_modal_encode_attn(hx.as_ref(), &hy).unwrap();
        assert_eq!(out.text_states.unwrap().rows() + out.va_states.rows(), 8);
        assert_eq!(attn[0].shape(), &[8, 8]);
    }

    #[test]
    fn cross_modal_attention_reaches_across_modalities() {
        let enc = encoder(15, 8);
        let mut rng = ChaCha12Rng::seed_from_u64(15);
        let input = rand_input(&mut rng, 5, vec![2, 3, 4]);
        let hx = enc.encode_text(&input).unwrap();
        let hy = enc
            .encode_video_audio(&input.video, &input.audio, None)
            .unwrap();
        let (_, attn) = enc.cross_modal_encode_attn(hx.as_ref(), &hy).unwrap();
        // Row of a video-audio position, column of a text position.
        let p = attn[0].get2(4, 0);
        assert!(p > 0.0, "va->text attention weight is {p}");
    }

    #[test]
    fn zeroing_type_embeddings_changes_output() {
        let mut enc = encoder(16, 8);
        let mut rng = ChaCha12Rng::seed_from_u64(16);
        let input = rand_input(&mut rng, 5, vec![1, 2]);
        let a = enc.encode(&input, None).unwrap().va_states;
        enc.set_param_data(
            enc.parameters().iter().position(|p| p.name == "enc.type").unwrap(),
            vec![0.0; 16],
        )
        .unwrap();
        let b = enc.encode(&input, None).unwrap().va_states;
        assert_ne!(a.data(), b.data());
    }

    #[test]
    fn precomputed_text_vectors_feed_the_text_branch() {
        let mut rng = ChaCha12Rng::seed_from_u64(19);
        let enc = MultiModalEncoder::new(
            "enc",
            EncoderConfig {
                d_text: Some(3),
                text_mode: TextMode::Precomputed,
                ..cfg(8)
            },
            &mut rng,
        )
        .unwrap();
        let mut input = rand_input(&mut rng, 4, vec![]);
        input.text_vecs =
            Some(Tensor::new(&[2, 3], vec![0.1, -0.4, 0.9, 0.3, 0.0, -1.1]).unwrap());
        let hx = enc.encode_text(&input).unwrap().unwrap();
        assert_eq!(hx.shape(), &[2, 8]);
        let out = enc.encode(&input, None).unwrap();
        assert_eq!(out.text_states.unwrap().rows(), 2);
        // Without vectors the branch degrades to video-audio only.
        input.text_vecs = None;
        assert!(enc.encode_text(&input).unwrap().is_none());
        // Configuration without d_text is rejected up front.
        assert!(MultiModalEncoder::new(
            "bad",
            EncoderConfig {
                text_mode: TextMode::Precomputed,
                ..cfg(8)
            },
            &mut rng,
        )
        .is_err());
    }

    #[test]
    fn inception_branch_channels_sum_to_output() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let inc = Inception1d::new("inc", 6, 8, &mut rng).unwrap();
        let x = Tensor::new(&[6, 1], vec![0.5; 6]).unwrap();
        let out = inc.forward(&x).unwrap();
        assert_eq!(out.shape(), &[8, 1]);
        let x9 = Tensor::new(&[6, 9], (0..54).map(|i| (i as f64).cos()).collect()).unwrap();
        assert_eq!(inc.forward(&x9).unwrap().shape(), &[8, 9]);
    }
}

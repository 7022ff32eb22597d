//! Network building blocks shared by the encoder and the two heads.

use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};

use super::init::{HasParams, Parameter};
use super::ops;
use super::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// x (L x in) -> x W + b, W is (in x out).
pub struct Linear {
    pub w: Parameter,
    pub b: Parameter,
}

impl Linear {
    pub fn new(name: &str, dim_in: usize, dim_out: usize, rng: &mut ChaCha12Rng) -> Linear {
        Linear {
            w: Parameter::xavier(format!("{name}.w"), &[dim_in, dim_out], dim_in, dim_out, rng),
            b: Parameter::zeros(format!("{name}.b"), &[dim_out]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        ops::add_row_vector(&ops::matmul(x, &self.w.tensor)?, &self.b.tensor)
    }
}

impl HasParams for Linear {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        f(&self.w);
        f(&self.b);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.w);
        f(&mut self.b);
    }
}

pub struct Embedding {
    pub table: Parameter,
}

impl Embedding {
    pub fn new(name: &str, vocab: usize, dim: usize, rng: &mut ChaCha12Rng) -> Embedding {
        Embedding {
            table: Parameter::normal(format!("{name}.table"), &[vocab, dim], 0.02, rng),
        }
    }

    pub fn forward(&self, ids: &[usize]) -> Result<Tensor> {
        ops::embedding(&self.table.tensor, ids)
    }

    pub fn vocab(&self) -> usize {
        self.table.shape()[0]
    }
}

impl HasParams for Embedding {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        f(&self.table);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.table);
    }
}

pub struct LayerNorm {
    pub gamma: Parameter,
    pub beta: Parameter,
}

impl LayerNorm {
    pub fn new(name: &str, dim: usize) -> LayerNorm {
        LayerNorm {
            gamma: Parameter::ones(format!("{name}.gamma"), &[dim]),
            beta: Parameter::zeros(format!("{name}.beta"), &[dim]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        ops::layer_norm(x, &self.gamma.tensor, &self.beta.tensor, LAYER_NORM_EPS)
    }
}

impl HasParams for LayerNorm {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        f(&self.gamma);
        f(&self.beta);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }
}

/// 1-D convolution layer, "same" padding, odd kernel.
pub struct Conv1d {
    pub w: Parameter,
    pub b: Parameter,
    pub kernel: usize,
}

impl Conv1d {
    pub fn new(
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        rng: &mut ChaCha12Rng,
    ) -> Result<Conv1d> {
        if kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "conv layer {name}: kernel size {kernel} is even"
            )));
        }
        Ok(Conv1d {
            w: Parameter::xavier(
                format!("{name}.w"),
                &[c_out, c_in, kernel],
                c_in * kernel,
                c_out * kernel,
                rng,
            ),
            b: Parameter::zeros(format!("{name}.b"), &[c_out]),
            kernel,
        })
    }

    /// x is (C_in x T); output (C_out x T).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        ops::conv1d(x, &self.w.tensor, &self.b.tensor, self.kernel)
    }
}

impl HasParams for Conv1d {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        f(&self.w);
        f(&self.b);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.w);
        f(&mut self.b);
    }
}

/// Scaled dot-product attention over `heads` slices of the model width.
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
    dim: usize,
}

impl MultiHeadAttention {
    pub fn new(name: &str, dim: usize, heads: usize, rng: &mut ChaCha12Rng) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "attention {name}: width {dim} not divisible by {heads} heads"
            )));
        }
        Ok(MultiHeadAttention {
            wq: Linear::new(&format!("{name}.wq"), dim, dim, rng),
            wk: Linear::new(&format!("{name}.wk"), dim, dim, rng),
            wv: Linear::new(&format!("{name}.wv"), dim, dim, rng),
            wo: Linear::new(&format!("{name}.wo"), dim, dim, rng),
            heads,
            dim,
        })
    }

    pub fn forward(&self, x: &Tensor, mask: Option<&[bool]>) -> Result<Tensor> {
        Ok(self.forward_attn(x, mask)?.0)
    }

    /// Also returns the per-head attention matrices (L x L, row-stochastic).
    pub fn forward_attn(
        &self,
        x: &Tensor,
        mask: Option<&[bool]>,
    ) -> Result<(Tensor, Vec<Tensor>)> {
        if x.rank() != 2 || x.cols() != self.dim {
            return Err(Error::shape("attention", x.shape(), &[self.dim]));
        }
        let len = x.rows();
        if let Some(m) = mask {
            if m.len() != len {
                return Err(Error::Input(format!(
                    "attention mask length {} does not match sequence length {len}",
                    m.len()
                )));
            }
        }
        let dh = self.dim / self.heads;
        let q = self.wq.forward(x)?;
        let k = self.wk.forward(x)?;
        let v = self.wv.forward(x)?;

        // Additive mask: blocked keys get a large negative logit.
        let mask_tensor = mask.map(|m| {
            let mut row = vec![0.0; len];
            for (i, &keep) in m.iter().enumerate() {
                if !keep {
                    row[i] = -1e30;
                }
            }
            let data: Vec<f64> = std::iter::repeat(row).take(len).flatten().collect();
            Tensor::new(&[len, len], data).expect("mask tensor")
        });

        let scale = 1.0 / (dh as f64).sqrt();
        let mut head_outs: Option<Tensor> = None;
        let mut attn_maps = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qs = ops::slice_cols(&q, h * dh, (h + 1) * dh)?;
            let ks = ops::slice_cols(&k, h * dh, (h + 1) * dh)?;
            let vs = ops::slice_cols(&v, h * dh, (h + 1) * dh)?;
            let mut logits = ops::scale(&ops::matmul(&qs, &ops::transpose(&ks)?)?, scale);
            if let Some(mt) = &mask_tensor {
                logits = ops::add(&logits, mt)?;
            }
            let probs = ops::softmax_rows(&logits)?;
            let ctx = ops::matmul(&probs, &vs)?;
            attn_maps.push(probs);
            head_outs = Some(match head_outs {
                None => ctx,
                Some(acc) => ops::concat_cols(&acc, &ctx)?,
            });
        }
        let out = self.wo.forward(&head_outs.expect("at least one head"))?;
        Ok((out, attn_maps))
    }
}

impl HasParams for MultiHeadAttention {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        self.wq.visit(f);
        self.wk.visit(f);
        self.wv.visit(f);
        self.wo.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.wq.visit_mut(f);
        self.wk.visit_mut(f);
        self.wv.visit_mut(f);
        self.wo.visit_mut(f);
    }
}

/// Post-norm transformer block: LN(x + attn(x)), then LN(x + ffn(x)).
pub struct TransformerBlock {
    pub attn: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub ln2: LayerNorm,
}

impl TransformerBlock {
    pub fn new(
        name: &str,
        dim: usize,
        heads: usize,
        ffn_hidden: usize,
        rng: &mut ChaCha12Rng,
    ) -> Result<Self> {
        Ok(TransformerBlock {
            attn: MultiHeadAttention::new(&format!("{name}.attn"), dim, heads, rng)?,
            ln1: LayerNorm::new(&format!("{name}.ln1"), dim),
            ff1: Linear::new(&format!("{name}.ff1"), dim, ffn_hidden, rng),
            ff2: Linear::new(&format!("{name}.ff2"), ffn_hidden, dim, rng),
            ln2: LayerNorm::new(&format!("{name}.ln2"), dim),
        })
    }

    pub fn forward(&self, x: &Tensor, mask: Option<&[bool]>) -> Result<Tensor> {
        Ok(self.forward_attn(x, mask)?.0)
    }

    pub fn forward_attn(
        &self,
        x: &Tensor,
        mask: Option<&[bool]>,
    ) -> Result<(Tensor, Vec<Tensor>)> {
        let (att, maps) = self.attn.forward_attn(x, mask)?;
        let x1 = self.ln1.forward(&ops::add(x, &att)?)?;
        let h = ops::relu(&self.ff1.forward(&x1)?);
        let x2 = self.ln2.forward(&ops::add(&x1, &self.ff2.forward(&h)?)?)?;
        Ok((x2, maps))
    }
}

impl HasParams for TransformerBlock {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
        self.attn.visit(f);
        self.ln1.visit(f);
        self.ff1.visit(f);
        self.ff2.visit(f);
        self.ln2.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.attn.visit_mut(f);
        self.ln1.visit_mut(f);
        self.ff1.visit_mut(f);
        self.ff2.visit_mut(f);
        self.ln2.visit_mut(f);
    }
}

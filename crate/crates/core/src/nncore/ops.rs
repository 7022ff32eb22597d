//! Differentiable tensor operations.
//!
//! Every op validates shapes up front, computes the forward value, and (when
//! recording) attaches a backward closure mapping the output gradient to the
//! parents' gradients. All math is f64.

use std::sync::Arc;

use crate::error::{Error, Result};

use super::autograd::emit;
use super::tensor::Tensor;

/// Probabilities are clamped to [PROB_CLAMP, 1 - PROB_CLAMP] inside the log
/// losses.
pub const PROB_CLAMP: f64 = 1e-12;

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Ok(emit(a.shape().to_vec(), data, &[a, b], || {
        Box::new(|_, g| vec![Some(g.to_vec()), Some(g.to_vec())])
    }))
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("sub", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    Ok(emit(a.shape().to_vec(), data, &[a, b], || {
        Box::new(|_, g| {
            vec![
                Some(g.to_vec()),
                Some(g.iter().map(|v| -v).collect()),
            ]
        })
    }))
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("mul", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    let (ac, bc) = (a.clone(), b.clone());
    Ok(emit(a.shape().to_vec(), data, &[a, b], move || {
        Box::new(move |_, g| {
            let da = g.iter().zip(bc.data()).map(|(g, y)| g * y).collect();
            let db = g.iter().zip(ac.data()).map(|(g, x)| g * x).collect();
            vec![Some(da), Some(db)]
        })
    }))
}

pub fn scale(a: &Tensor, c: f64) -> Tensor {
    let data = a.data().iter().map(|x| x * c).collect();
    emit(a.shape().to_vec(), data, &[a], || {
        Box::new(move |_, g| vec![Some(g.iter().map(|v| v * c).collect())])
    })
}

pub fn add_scalar(a: &Tensor, c: f64) -> Tensor {
    let data = a.data().iter().map(|x| x + c).collect();
    emit(a.shape().to_vec(), data, &[a], || {
        Box::new(|_, g| vec![Some(g.to_vec())])
    })
}

pub fn neg(a: &Tensor) -> Tensor {
    scale(a, -1.0)
}

/// x (R x C) + v (C), v broadcast over rows.
pub fn add_row_vector(x: &Tensor, v: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 || v.rank() != 1 || v.shape()[0] != x.cols() {
        return Err(Error::shape("add_row_vector", x.shape(), v.shape()));
    }
    let (r, c) = (x.rows(), x.cols());
    let vd = v.data();
    let mut data = x.data().to_vec();
    for row in 0..r {
        for col in 0..c {
            data[row * c + col] += vd[col];
        }
    }
    Ok(emit(vec![r, c], data, &[x, v], || {
        Box::new(move |_, g| {
            let mut dv = vec![0.0; c];
            for row in 0..r {
                for col in 0..c {
                    dv[col] += g[row * c + col];
                }
            }
            vec![Some(g.to_vec()), Some(dv)]
        })
    }))
}

/// x (R x C) + v (R), v broadcast over columns.
pub fn add_col_vector(x: &Tensor, v: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 || v.rank() != 1 || v.shape()[0] != x.rows() {
        return Err(Error::shape("add_col_vector", x.shape(), v.shape()));
    }
    let (r, c) = (x.rows(), x.cols());
    let vd = v.data();
    let mut data = x.data().to_vec();
    for row in 0..r {
        for col in 0..c {
            data[row * c + col] += vd[row];
        }
    }
    Ok(emit(vec![r, c], data, &[x, v], || {
        Box::new(move |_, g| {
            let mut dv = vec![0.0; r];
            for row in 0..r {
                let mut s = 0.0;
                for col in 0..c {
                    s += g[row * c + col];
                }
                dv[row] = s;
            }
            vec![Some(g.to_vec()), Some(dv)]
        })
    }))
}

pub(crate) fn matmul_nn(a: &[f64], b: &[f64], p: usize, q: usize, r: usize) -> Vec<f64> {
    let mut out = vec![0.0; p * r];
    for i in 0..p {
        let orow = &mut out[i * r..(i + 1) * r];
        for k in 0..q {
            let aik = a[i * q + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[k * r..(k + 1) * r];
            for j in 0..r {
                orow[j] += aik * brow[j];
            }
        }
    }
    out
}

// dA = G (p x r) * B^T (r x q): dA[i,k] = sum_j G[i,j] B[k,j]
fn matmul_nt(g: &[f64], b: &[f64], p: usize, q: usize, r: usize) -> Vec<f64> {
    let mut out = vec![0.0; p * q];
    for i in 0..p {
        let grow = &g[i * r..(i + 1) * r];
        for k in 0..q {
            let brow = &b[k * r..(k + 1) * r];
            let mut s = 0.0;
            for j in 0..r {
                s += grow[j] * brow[j];
            }
            out[i * q + k] = s;
        }
    }
    out
}

// dB = A^T (q x p) * G (p x r): dB[k,j] = sum_i A[i,k] G[i,j]
fn matmul_tn(a: &[f64], g: &[f64], p: usize, q: usize, r: usize) -> Vec<f64> {
    let mut out = vec![0.0; q * r];
    for i in 0..p {
        let grow = &g[i * r..(i + 1) * r];
        for k in 0..q {
            let aik = a[i * q + k];
            if aik == 0.0 {
                continue;
            }
            let orow = &mut out[k * r..(k + 1) * r];
            for j in 0..r {
                orow[j] += aik * grow[j];
            }
        }
    }
    out
}

/// Matrix product of two rank-2 tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows() {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let (p, q, r) = (a.rows(), a.cols(), b.cols());
    let data = matmul_nn(a.data(), b.data(), p, q, r);
    let (ac, bc) = (a.clone(), b.clone());
    Ok(emit(vec![p, r], data, &[a, b], move || {
        Box::new(move |_, g| {
            let da = matmul_nt(g, bc.data(), p, q, r);
            let db = matmul_tn(ac.data(), g, p, q, r);
            vec![Some(da), Some(db)]
        })
    }))
}

pub fn transpose(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 {
        return Err(Error::shape("transpose", x.shape(), &[]));
    }
    let (r, c) = (x.rows(), x.cols());
    let xd = x.data();
    let mut data = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            data[j * r + i] = xd[i * c + j];
        }
    }
    Ok(emit(vec![c, r], data, &[x], || {
        Box::new(move |_, g| {
            let mut dx = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    dx[i * c + j] = g[j * r + i];
                }
            }
            vec![Some(dx)]
        })
    }))
}

pub fn reshape(x: &Tensor, shape: &[usize]) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    if n != x.numel() || shape.iter().any(|&d| d == 0) {
        return Err(Error::shape("reshape", x.shape(), shape));
    }
    Ok(emit(shape.to_vec(), x.data().to_vec(), &[x], || {
        Box::new(|_, g| vec![Some(g.to_vec())])
    }))
}

pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|v| v.max(0.0)).collect();
    let xc = x.clone();
    emit(x.shape().to_vec(), data, &[x], move || {
        Box::new(move |_, g| {
            let dx = g
                .iter()
                .zip(xc.data())
                .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                .collect();
            vec![Some(dx)]
        })
    })
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    let data: Vec<f64> = x
        .data()
        .iter()
        .map(|&v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        })
        .collect();
    emit(x.shape().to_vec(), data, &[x], || {
        Box::new(|out, g| {
            let dx = g
                .iter()
                .zip(out.data())
                .map(|(g, s)| g * s * (1.0 - s))
                .collect();
            vec![Some(dx)]
        })
    })
}

/// Row-wise softmax of a rank-2 tensor.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 {
        return Err(Error::shape("softmax_rows", x.shape(), &[]));
    }
    let (r, c) = (x.rows(), x.cols());
    let xd = x.data();
    let mut data = vec![0.0; r * c];
    for i in 0..r {
        let row = &xd[i * c..(i + 1) * c];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for j in 0..c {
            let e = (row[j] - m).exp();
            data[i * c + j] = e;
            sum += e;
        }
        for j in 0..c {
            data[i * c + j] /= sum;
        }
    }
    Ok(emit(vec![r, c], data, &[x], || {
        Box::new(move |out, g| {
            let s = out.data();
            let mut dx = vec![0.0; r * c];
            for i in 0..r {
                let srow = &s[i * c..(i + 1) * c];
                let grow = &g[i * c..(i + 1) * c];
                let dot: f64 = srow.iter().zip(grow).map(|(s, g)| s * g).sum();
                for j in 0..c {
                    dx[i * c + j] = srow[j] * (grow[j] - dot);
                }
            }
            vec![Some(dx)]
        })
    }))
}

/// Per-row layer normalization with affine parameters.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    if x.rank() != 2 || gamma.shape() != [x.cols()] || beta.shape() != [x.cols()] {
        return Err(Error::shape("layer_norm", x.shape(), gamma.shape()));
    }
    let (r, c) = (x.rows(), x.cols());
    let (xd, gd, bd) = (x.data(), gamma.data(), beta.data());
    let mut data = vec![0.0; r * c];
    for i in 0..r {
        let row = &xd[i * c..(i + 1) * c];
        let mu: f64 = row.iter().sum::<f64>() / c as f64;
        let var: f64 = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
        let s = (var + eps).sqrt();
        for j in 0..c {
            data[i * c + j] = (row[j] - mu) / s * gd[j] + bd[j];
        }
    }
    let (xc, gc) = (x.clone(), gamma.clone());
    Ok(emit(vec![r, c], data, &[x, gamma, beta], move || {
        Box::new(move |_, g| {
            let xd = xc.data();
            let gd = gc.data();
            let mut dx = vec![0.0; r * c];
            let mut dgamma = vec![0.0; c];
            let mut dbeta = vec![0.0; c];
            for i in 0..r {
                let row = &xd[i * c..(i + 1) * c];
                let grow = &g[i * c..(i + 1) * c];
                let mu: f64 = row.iter().sum::<f64>() / c as f64;
                let var: f64 = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
                let s = (var + eps).sqrt();
                let xhat: Vec<f64> = row.iter().map(|v| (v - mu) / s).collect();
                let dxhat: Vec<f64> = grow.iter().zip(gd).map(|(g, gm)| g * gm).collect();
                let mean_dxhat: f64 = dxhat.iter().sum::<f64>() / c as f64;
                let mean_dxhat_xhat: f64 =
                    dxhat.iter().zip(&xhat).map(|(d, h)| d * h).sum::<f64>() / c as f64;
                for j in 0..c {
                    dx[i * c + j] = (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat) / s;
                    dgamma[j] += grow[j] * xhat[j];
                    dbeta[j] += grow[j];
                }
            }
            vec![Some(dx), Some(dgamma), Some(dbeta)]
        })
    }))
}

/// 1-D convolution with zero "same" padding. x is (C_in x T), w is
/// (C_out x C_in x k), b is (C_out). The output keeps temporal length T.
pub fn conv1d(x: &Tensor, w: &Tensor, b: &Tensor, kernel: usize) -> Result<Tensor> {
    if kernel % 2 == 0 {
        return Err(Error::Config(format!(
            "conv1d kernel size {kernel} is even; same padding requires an odd kernel"
        )));
    }
    if x.rank() != 2 || w.rank() != 3 {
        return Err(Error::shape("conv1d", x.shape(), w.shape()));
    }
    let (c_in, t) = (x.shape()[0], x.shape()[1]);
    let (c_out, w_cin, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    if w_cin != c_in || k != kernel || b.shape() != [c_out] {
        return Err(Error::shape("conv1d", x.shape(), w.shape()));
    }
    let pad = kernel / 2;
    let (xd, wd, bd) = (x.data(), w.data(), b.data());
    let mut data = vec![0.0; c_out * t];
    for o in 0..c_out {
        let orow = &mut data[o * t..(o + 1) * t];
        orow.iter_mut().for_each(|v| *v = bd[o]);
        for c in 0..c_in {
            let xrow = &xd[c * t..(c + 1) * t];
            let wrow = &wd[(o * c_in + c) * k..(o * c_in + c + 1) * k];
            for (i, &wi) in wrow.iter().enumerate() {
                if wi == 0.0 {
                    continue;
                }
                // out[tt] += wi * x[tt + i - pad]
                let lo = pad.saturating_sub(i);
                let hi = (t + pad).saturating_sub(i).min(t);
                for tt in lo..hi {
                    orow[tt] += wi * xrow[tt + i - pad];
                }
            }
        }
    }
    let (xc, wc) = (x.clone(), w.clone());
    Ok(emit(vec![c_out, t], data, &[x, w, b], move || {
        Box::new(move |_, g| {
            let xd = xc.data();
            let wd = wc.data();
            let mut dx = vec![0.0; c_in * t];
            let mut dw = vec![0.0; c_out * c_in * k];
            let mut db = vec![0.0; c_out];
            for o in 0..c_out {
                let grow = &g[o * t..(o + 1) * t];
                db[o] += grow.iter().sum::<f64>();
                for c in 0..c_in {
                    let xrow = &xd[c * t..(c + 1) * t];
                    let dwrow = &mut dw[(o * c_in + c) * k..(o * c_in + c + 1) * k];
                    for i in 0..k {
                        let lo = pad.saturating_sub(i);
                        let hi = (t + pad).saturating_sub(i).min(t);
                        let mut acc = 0.0;
                        for tt in lo..hi {
                            acc += grow[tt] * xrow[tt + i - pad];
                        }
                        dwrow[i] += acc;
                    }
                }
            }
            for c in 0..c_in {
                let dxrow = &mut dx[c * t..(c + 1) * t];
                for o in 0..c_out {
                    let grow = &g[o * t..(o + 1) * t];
                    let wrow = &wd[(o * c_in + c) * k..(o * c_in + c + 1) * k];
                    for (i, &wi) in wrow.iter().enumerate() {
                        if wi == 0.0 {
                            continue;
                        }
                        let lo = pad.saturating_sub(i);
                        let hi = (t + pad).saturating_sub(i).min(t);
                        for tt in lo..hi {
                            dxrow[tt + i - pad] += wi * grow[tt];
                        }
                    }
                }
            }
            vec![Some(dx), Some(dw), Some(db)]
        })
    }))
}

/// Max pooling over a centered window; positions near the edges use the
/// in-range part of the window, so temporal length is preserved.
pub fn maxpool1d_same(x: &Tensor, kernel: usize) -> Result<Tensor> {
    if kernel % 2 == 0 {
        return Err(Error::Config(format!(
            "maxpool1d kernel size {kernel} is even; same padding requires an odd kernel"
        )));
    }
    if x.rank() != 2 {
        return Err(Error::shape("maxpool1d_same", x.shape(), &[]));
    }
    let (c, t) = (x.shape()[0], x.shape()[1]);
    let pad = kernel / 2;
    let xd = x.data();
    let mut data = vec![0.0; c * t];
    let mut argmax = vec![0usize; c * t];
    for ch in 0..c {
        let xrow = &xd[ch * t..(ch + 1) * t];
        for tt in 0..t {
            let lo = tt.saturating_sub(pad);
            let hi = (tt + pad + 1).min(t);
            let mut best = lo;
            for u in lo + 1..hi {
                if xrow[u] > xrow[best] {
                    best = u;
                }
            }
            data[ch * t + tt] = xrow[best];
            argmax[ch * t + tt] = ch * t + best;
        }
    }
    Ok(emit(vec![c, t], data, &[x], move || {
        Box::new(move |_, g| {
            let mut dx = vec![0.0; c * t];
            for (i, &src) in argmax.iter().enumerate() {
                dx[src] += g[i];
            }
            vec![Some(dx)]
        })
    }))
}

/// Row lookup: out[i] = table[ids[i]].
pub fn embedding(table: &Tensor, ids: &[usize]) -> Result<Tensor> {
    if table.rank() != 2 {
        return Err(Error::shape("embedding", table.shape(), &[]));
    }
    if ids.is_empty() {
        return Err(Error::Input("embedding: empty id list".into()));
    }
    let (v, d) = (table.rows(), table.cols());
    if let Some(&bad) = ids.iter().find(|&&id| id >= v) {
        return Err(Error::Input(format!(
            "embedding: id {bad} out of range for table of {v} rows"
        )));
    }
    let td = table.data();
    let mut data = vec![0.0; ids.len() * d];
    for (i, &id) in ids.iter().enumerate() {
        data[i * d..(i + 1) * d].copy_from_slice(&td[id * d..(id + 1) * d]);
    }
    let ids_owned: Vec<usize> = ids.to_vec();
    let n = ids.len();
    Ok(emit(vec![n, d], data, &[table], move || {
        Box::new(move |_, g| {
            let mut dt = vec![0.0; v * d];
            for (i, &id) in ids_owned.iter().enumerate() {
                for j in 0..d {
                    dt[id * d + j] += g[i * d + j];
                }
            }
            vec![Some(dt)]
        })
    }))
}

pub fn concat_rows(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols() {
        return Err(Error::shape("concat_rows", a.shape(), b.shape()));
    }
    let (ra, rb, c) = (a.rows(), b.rows(), a.cols());
    let mut data = Vec::with_capacity((ra + rb) * c);
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Ok(emit(vec![ra + rb, c], data, &[a, b], || {
        Box::new(move |_, g| {
            vec![
                Some(g[..ra * c].to_vec()),
                Some(g[ra * c..].to_vec()),
            ]
        })
    }))
}

pub fn concat_cols(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows() {
        return Err(Error::shape("concat_cols", a.shape(), b.shape()));
    }
    let (r, ca, cb) = (a.rows(), a.cols(), b.cols());
    let (ad, bd) = (a.data(), b.data());
    let mut data = vec![0.0; r * (ca + cb)];
    for i in 0..r {
        data[i * (ca + cb)..i * (ca + cb) + ca].copy_from_slice(&ad[i * ca..(i + 1) * ca]);
        data[i * (ca + cb) + ca..(i + 1) * (ca + cb)].copy_from_slice(&bd[i * cb..(i + 1) * cb]);
    }
    Ok(emit(vec![r, ca + cb], data, &[a, b], || {
        Box::new(move |_, g| {
            let mut da = vec![0.0; r * ca];
            let mut db = vec![0.0; r * cb];
            for i in 0..r {
                da[i * ca..(i + 1) * ca].copy_from_slice(&g[i * (ca + cb)..i * (ca + cb) + ca]);
                db[i * cb..(i + 1) * cb]
                    .copy_from_slice(&g[i * (ca + cb) + ca..(i + 1) * (ca + cb)]);
            }
            vec![Some(da), Some(db)]
        })
    }))
}

/// Rows r0..r1 (half-open).
pub fn slice_rows(x: &Tensor, r0: usize, r1: usize) -> Result<Tensor> {
    if x.rank() != 2 || r0 >= r1 || r1 > x.rows() {
        return Err(Error::Input(format!(
            "slice_rows: range {r0}..{r1} invalid for {} rows",
            if x.rank() == 2 { x.rows() } else { 0 }
        )));
    }
    let (r, c) = (x.rows(), x.cols());
    let data = x.data()[r0 * c..r1 * c].to_vec();
    Ok(emit(vec![r1 - r0, c], data, &[x], || {
        Box::new(move |_, g| {
            let mut dx = vec![0.0; r * c];
            dx[r0 * c..r1 * c].copy_from_slice(g);
            vec![Some(dx)]
        })
    }))
}

/// Columns c0..c1 (half-open).
pub fn slice_cols(x: &Tensor, c0: usize, c1: usize) -> Result<Tensor> {
    if x.rank() != 2 || c0 >= c1 || c1 > x.cols() {
        return Err(Error::Input(format!(
            "slice_cols: range {c0}..{c1} invalid for {} cols",
            if x.rank() == 2 { x.cols() } else { 0 }
        )));
    }
    let (r, c) = (x.rows(), x.cols());
    let w = c1 - c0;
    let xd = x.data();
    let mut data = vec![0.0; r * w];
    for i in 0..r {
        data[i * w..(i + 1) * w].copy_from_slice(&xd[i * c + c0..i * c + c1]);
    }
    Ok(emit(vec![r, w], data, &[x], || {
        Box::new(move |_, g| {
            let mut dx = vec![0.0; r * c];
            for i in 0..r {
                dx[i * c + c0..i * c + c1].copy_from_slice(&g[i * w..(i + 1) * w]);
            }
            vec![Some(dx)]
        })
    }))
}

/// Mean of rows i..=j of a rank-2 tensor, as a rank-1 vector.
pub fn mean_rows_range(x: &Tensor, i: usize, j: usize) -> Result<Tensor> {
    if x.rank() != 2 || i > j || j >= x.rows() {
        return Err(Error::Input(format!(
            "mean_rows_range: span ({i}, {j}) out of range for {} rows",
            if x.rank() == 2 { x.rows() } else { 0 }
        )));
    }
    let (r, c) = (x.rows(), x.cols());
    let xd = x.data();
    let n = (j - i + 1) as f64;
    let mut data = vec![0.0; c];
    for row in i..=j {
        for col in 0..c {
            data[col] += xd[row * c + col];
        }
    }
    data.iter_mut().for_each(|v| *v /= n);
    Ok(emit(vec![c], data, &[x], || {
        Box::new(move |_, g| {
            let mut dx = vec![0.0; r * c];
            for row in i..=j {
                for col in 0..c {
                    dx[row * c + col] = g[col] / n;
                }
            }
            vec![Some(dx)]
        })
    }))
}

pub fn sum_all(x: &Tensor) -> Tensor {
    let s: f64 = x.data().iter().sum();
    let n = x.numel();
    emit(vec![1], vec![s], &[x], || {
        Box::new(move |_, g| vec![Some(vec![g[0]; n])])
    })
}

pub fn mean_all(x: &Tensor) -> Tensor {
    let n = x.numel();
    let s: f64 = x.data().iter().sum::<f64>() / n as f64;
    emit(vec![1], vec![s], &[x], || {
        Box::new(move |_, g| vec![Some(vec![g[0] / n as f64; n])])
    })
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Weighted binary cross entropy over probabilities:
/// sum_i w_i * ce(p_i, y_i) / sum_i w_i.
pub fn bce_loss(p: &Tensor, targets: &[f64], weights: &[f64]) -> Result<Tensor> {
    if targets.len() != p.numel() || weights.len() != p.numel() {
        return Err(Error::Input(format!(
            "bce_loss: {} probabilities, {} targets, {} weights",
            p.numel(),
            targets.len(),
            weights.len()
        )));
    }
    let wsum: f64 = weights.iter().sum();
    if wsum <= 0.0 {
        return Err(Error::Input("bce_loss: no positively weighted elements".into()));
    }
    let mut loss = 0.0;
    for ((&pi, &yi), &wi) in p.data().iter().zip(targets).zip(weights) {
        if wi == 0.0 {
            continue;
        }
        let pc = clamp_prob(pi);
        loss -= wi * (yi * pc.ln() + (1.0 - yi) * (1.0 - pc).ln());
    }
    loss /= wsum;
    let (t_owned, w_owned) = (targets.to_vec(), weights.to_vec());
    let pc = p.clone();
    Ok(emit(vec![1], vec![loss], &[p], move || {
        Box::new(move |_, g| {
            let g0 = g[0];
            let dp = pc
                .data()
                .iter()
                .zip(&t_owned)
                .zip(&w_owned)
                .map(|((&pi, &yi), &wi)| {
                    if wi == 0.0 {
                        return 0.0;
                    }
                    let pcl = clamp_prob(pi);
                    g0 * wi * (pcl - yi) / (pcl * (1.0 - pcl)) / wsum
                })
                .collect();
            vec![Some(dp)]
        })
    }))
}

/// Weighted mean squared error: sum_i w_i (p_i - t_i)^2 / sum_i w_i.
pub fn mse_loss(pred: &Tensor, targets: &[f64], weights: &[f64]) -> Result<Tensor> {
    if targets.len() != pred.numel() || weights.len() != pred.numel() {
        return Err(Error::Input(format!(
            "mse_loss: {} predictions, {} targets, {} weights",
            pred.numel(),
            targets.len(),
            weights.len()
        )));
    }
    let wsum: f64 = weights.iter().sum();
    if wsum <= 0.0 {
        return Err(Error::Input("mse_loss: no positively weighted elements".into()));
    }
    let mut loss = 0.0;
    for ((&pi, &ti), &wi) in pred.data().iter().zip(targets).zip(weights) {
        loss += wi * (pi - ti) * (pi - ti);
    }
    loss /= wsum;
    let (t_owned, w_owned) = (targets.to_vec(), weights.to_vec());
    let pc = pred.clone();
    Ok(emit(vec![1], vec![loss], &[pred], move || {
        Box::new(move |_, g| {
            let g0 = g[0];
            let dp = pc
                .data()
                .iter()
                .zip(&t_owned)
                .zip(&w_owned)
                .map(|((&pi, &ti), &wi)| g0 * 2.0 * wi * (pi - ti) / wsum)
                .collect();
            vec![Some(dp)]
        })
    }))
}

/// Interpolation taps for sampling fixed fractional positions out of a
/// (C x T) sequence; shared across channels. Each sampled point mixes at most
/// two adjacent time steps and its weights sum to 1.
pub struct SpanSampler {
    pub seq_len: usize,
    pub samples_per_span: usize,
    /// (index0, w0, index1, w1) per (span, sample); index1 repeats index0
    /// with w1 = 0 when the position is integral.
    pub taps: Vec<(usize, f64, usize, f64)>,
    pub n_spans: usize,
}

/// Gathers interpolated span samples: x (C x T) -> (C * N) x n_spans, where
/// row c*N + n holds sample n of every span for channel c.
pub fn span_gather(x: &Tensor, sampler: &Arc<SpanSampler>) -> Result<Tensor> {
    if x.rank() != 2 || x.shape()[1] != sampler.seq_len {
        return Err(Error::shape(
            "span_gather",
            x.shape(),
            &[sampler.seq_len],
        ));
    }
    let (c, t) = (x.shape()[0], x.shape()[1]);
    let n = sampler.samples_per_span;
    let k = sampler.n_spans;
    debug_assert_eq!(sampler.taps.len(), n * k);
    let xd = x.data();
    let mut data = vec![0.0; c * n * k];
    for ch in 0..c {
        let xrow = &xd[ch * t..(ch + 1) * t];
        for (span, chunk) in sampler.taps.chunks_exact(n).enumerate() {
            for (s, &(i0, w0, i1, w1)) in chunk.iter().enumerate() {
                data[(ch * n + s) * k + span] = w0 * xrow[i0] + w1 * xrow[i1];
            }
        }
    }
    let sm = Arc::clone(sampler);
    Ok(emit(vec![c * n, k], data, &[x], move || {
        Box::new(move |_, g| {
            let n = sm.samples_per_span;
            let k = sm.n_spans;
            let t = sm.seq_len;
            let mut dx = vec![0.0; c * t];
            for ch in 0..c {
                let dxrow = &mut dx[ch * t..(ch + 1) * t];
                for (span, chunk) in sm.taps.chunks_exact(n).enumerate() {
                    for (s, &(i0, w0, i1, w1)) in chunk.iter().enumerate() {
                        let go = g[(ch * n + s) * k + span];
                        dxrow[i0] += w0 * go;
                        dxrow[i1] += w1 * go;
                    }
                }
            }
            vec![Some(dx)]
        })
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::autograd::{backward, no_grad};

    fn t2(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let eye = t2(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ]);
        let m = t2(&[
            vec![2.0, -1.0, 0.5],
            vec![4.0, 3.0, 9.0],
            vec![-7.0, 0.0, 1.0],
        ]);
        let out = matmul(&eye, &m).unwrap();
        assert_eq!(out.data(), m.data());
    }

    #[test]
    fn matmul_hand_case() {
        let a = t2(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let b = t2(&[vec![1.0], vec![1.0]]);
        let out = matmul(&a, &b).unwrap();
        assert_eq!(out.shape(), &[2, 1]);
        assert_eq!(out.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = t2(&[vec![1.0, 2.0]]);
        let b = t2(&[vec![1.0, 2.0]]);
        let err = matmul(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 2]"), "{msg}");
    }

    #[test]
    fn conv1d_pointwise_identity() {
        let x = t2(&[vec![1.0, -2.0, 3.0, 0.5]]);
        let w = Tensor::new(&[1, 1, 1], vec![1.0]).unwrap();
        let b = Tensor::new(&[1], vec![0.0]).unwrap();
        let out = conv1d(&x, &w, &b, 1).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn conv1d_center_tap_identity() {
        let x = t2(&[vec![1.0, -2.0, 3.0, 0.5, 7.0]]);
        let w = Tensor::new(&[1, 1, 3], vec![0.0, 1.0, 0.0]).unwrap();
        let b = Tensor::new(&[1], vec![0.0]).unwrap();
        let out = conv1d(&x, &w, &b, 3).unwrap();
        assert_eq!(out.data(), x.data());
        assert_eq!(out.shape(), x.shape());
    }

    #[test]
    fn conv1d_rejects_even_kernel() {
        let x = t2(&[vec![1.0, 2.0]]);
        let w = Tensor::new(&[1, 1, 2], vec![1.0, 1.0]).unwrap();
        let b = Tensor::new(&[1], vec![0.0]).unwrap();
        assert!(matches!(conv1d(&x, &w, &b, 2), Err(Error::Config(_))));
    }

    #[test]
    fn sigmoid_stays_inside_the_open_unit_interval() {
        let x = Tensor::new(&[7], vec![-30.0, -4.0, -0.5, 0.0, 0.5, 4.0, 30.0]).unwrap();
        for &v in sigmoid(&x).data() {
            assert!(v > 0.0 && v < 1.0, "{v}");
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = t2(&[vec![1.0, 2.0, 3.0], vec![-5.0, 0.0, 5.0]]);
        let s = softmax_rows(&x).unwrap();
        for i in 0..2 {
            let sum: f64 = (0..3).map(|j| s.get2(i, j)).sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_of_constant_row_is_beta() {
        let x = t2(&[vec![3.0, 3.0, 3.0, 3.0]]);
        let gamma = Tensor::new(&[4], vec![1.0; 4]).unwrap();
        let beta = Tensor::new(&[4], vec![0.0; 4]).unwrap();
        let out = layer_norm(&x, &gamma, &beta, 1e-5).unwrap();
        for &v in out.data() {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn mean_rows_range_hand_case() {
        let h = t2(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        let v = mean_rows_range(&h, 0, 2).unwrap();
        assert_eq!(v.data(), &[3.0, 4.0]);
        let single = mean_rows_range(&h, 1, 1).unwrap();
        assert_eq!(single.data(), &[3.0, 4.0]);
    }

    #[test]
    fn bce_loss_at_half_is_ln2() {
        let p = Tensor::new(&[4], vec![0.5; 4]).unwrap();
        let y = vec![1.0, 0.0, 1.0, 0.0];
        let w = vec![1.0; 4];
        let loss = bce_loss(&p, &y, &w).unwrap();
        assert!((loss.item() - (2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn slice_concat_roundtrip() {
        let x = t2(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        let a = slice_cols(&x, 0, 1).unwrap();
        let b = slice_cols(&x, 1, 3).unwrap();
        let back = concat_cols(&a, &b).unwrap();
        assert_eq!(back.data(), x.data());
    }

    // Small central-difference probe used for spot checks; the full gradient
    // suite lives in the integration tests.
    fn fd_grad(f: impl Fn(&[f64]) -> f64, x0: &[f64], h: f64) -> Vec<f64> {
        let mut g = vec![0.0; x0.len()];
        let mut x = x0.to_vec();
        for i in 0..x.len() {
            x[i] = x0[i] + h;
            let fp = f(&x);
            x[i] = x0[i] - h;
            let fm = f(&x);
            x[i] = x0[i];
            g[i] = (fp - fm) / (2.0 * h);
        }
        g
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let a0 = vec![0.3, -1.2, 0.7, 2.0, -0.5, 0.1];
        let b0 = vec![1.5, -0.4, 0.9, 0.2, -2.0, 0.6];
        let a = Tensor::var(&[2, 3], a0.clone()).unwrap();
        let b = Tensor::var(&[3, 2], b0.clone()).unwrap();
        let loss = sum_all(&matmul(&a, &b).unwrap());
        let grads = backward(&loss).unwrap();
        let ga = grads.get(&a).unwrap().to_vec();
        let fd = fd_grad(
            |av| {
                no_grad(|| {
                    let at = Tensor::new(&[2, 3], av.to_vec()).unwrap();
                    let bt = Tensor::new(&[3, 2], b0.clone()).unwrap();
                    sum_all(&matmul(&at, &bt).unwrap()).item()
                })
            },
            &a0,
            1e-5,
        );
        for (g, f) in ga.iter().zip(&fd) {
            assert!((g - f).abs() < 1e-6, "{g} vs {f}");
        }
    }

    #[test]
    fn span_gather_weights_sum_to_one_and_identity_on_constant() {
        // 3 spans over length 4, 2 samples each
        let sampler = Arc::new(SpanSampler {
            seq_len: 4,
            samples_per_span: 2,
            taps: vec![
                (0, 1.0, 0, 0.0),
                (1, 0.5, 2, 0.5),
                (1, 1.0, 1, 0.0),
                (2, 0.25, 3, 0.75),
                (0, 1.0, 0, 0.0),
                (3, 1.0, 3, 0.0),
            ],
            n_spans: 3,
        });
        for &(_, w0, _, w1) in &sampler.taps {
            assert!((w0 + w1 - 1.0).abs() < 1e-12);
        }
        let x = t2(&[vec![7.0; 4], vec![-2.0; 4]]);
        let out = span_gather(&x, &sampler).unwrap();
        assert_eq!(out.shape(), &[4, 3]);
        for s in 0..3 {
            for n in 0..2 {
                assert_eq!(out.get2(n, s), 7.0);
                assert_eq!(out.get2(2 + n, s), -2.0);
            }
        }
    }
}

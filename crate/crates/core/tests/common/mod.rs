//! Shared helpers for the integration suites: the central-difference
//! gradient oracle and brute-force metric twins. Everything here is written
//! independently of the library's own computation paths.

use adstruct::nncore::{backward, no_grad, HasParams, Tensor};

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

/// Relative error with a floor so near-zero gradients compare on absolute
/// terms.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// Deterministic coordinate sample: all of them when small, else an evenly
/// strided subset.
pub fn sample_coords(n: usize, limit: usize) -> Vec<usize> {
    if n <= limit {
        (0..n).collect()
    } else {
        let stride = n / limit;
        (0..limit).map(|k| k * stride).collect()
    }
}

/// Checks analytic input gradients of `loss` against central differences.
/// `loss` must build the same scalar from plain leaf tensors each call.
pub fn fd_check_inputs(
    name: &str,
    shapes: &[Vec<usize>],
    inputs: &[Vec<f64>],
    coords_per_input: usize,
    loss: &dyn Fn(&[Tensor]) -> Tensor,
) {
    // Analytic pass over trainable leaves.
    let vars: Vec<Tensor> = shapes
        .iter()
        .zip(inputs)
        .map(|(s, d)| Tensor::var(s, d.clone()).unwrap())
        .collect();
    let l = loss(&vars);
    assert_eq!(l.numel(), 1, "{name}: loss must be scalar");
    let grads = backward(&l).unwrap();

    let eval = |datas: &[Vec<f64>]| -> f64 {
        no_grad(|| {
            let leaves: Vec<Tensor> = shapes
                .iter()
                .zip(datas)
                .map(|(s, d)| Tensor::new(s, d.clone()).unwrap())
                .collect();
            loss(&leaves).item()
        })
    };

    for (k, data) in inputs.iter().enumerate() {
        let analytic: Vec<f64> = match grads.get(&vars[k]) {
            Some(g) => g.to_vec(),
            None => vec![0.0; data.len()],
        };
        for c in sample_coords(data.len(), coords_per_input) {
            let mut plus = inputs.to_vec();
            plus[k][c] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k][c] -= FD_STEP;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            let re = rel_err(analytic[c], fd);
            assert!(
                re < GRAD_TOL,
                "{name}: input {k} coord {c}: analytic {} vs fd {} (rel {re:.2e})",
                analytic[c],
                fd
            );
        }
    }
}

/// Checks analytic parameter gradients of a model against central
/// differences, sampling a few coordinates per parameter.
pub fn fd_check_params<M: HasParams>(
    name: &str,
    model: &mut M,
    coords_per_param: usize,
    loss: &dyn Fn(&M) -> Tensor,
) {
    let l = loss(model);
    assert_eq!(l.numel(), 1, "{name}: loss must be scalar");
    let grads = backward(&l).unwrap();
    let snapshot: Vec<(String, Vec<f64>, Option<Vec<f64>>)> = model
        .parameters()
        .iter()
        .map(|p| {
            (
                p.name.clone(),
                p.data().to_vec(),
                grads.get(&p.tensor).map(<[f64]>::to_vec),
            )
        })
        .collect();
    for (idx, (pname, data, grad)) in snapshot.iter().enumerate() {
        for c in sample_coords(data.len(), coords_per_param) {
            let mut plus = data.clone();
            plus[c] += FD_STEP;
            model.set_param_data(idx, plus).unwrap();
            let lp = no_grad(|| loss(model).item());
            let mut minus = data.clone();
            minus[c] -= FD_STEP;
            model.set_param_data(idx, minus).unwrap();
            let lm = no_grad(|| loss(model).item());
            model.set_param_data(idx, data.clone()).unwrap();
            let fd = (lp - lm) / (2.0 * FD_STEP);
            let analytic = grad.as_ref().map_or(0.0, |g| g[c]);
            let re = rel_err(analytic, fd);
            assert!(
                re < GRAD_TOL,
                "{name}: param {pname} coord {c}: analytic {analytic} vs fd {fd} (rel {re:.2e})"
            );
        }
    }
}

// ---------------------------------------------------------------------------
// Brute-force metric twins

/// Greedy one-to-one matching by repeatedly scanning for the best remaining
/// pair; counts ground-truth segments matched at IoU >= t.
pub fn oracle_recall_at(preds: &[(f64, f64)], gts: &[(f64, f64)], t: f64) -> usize {
    fn iou(a: (f64, f64), b: (f64, f64)) -> f64 {
        let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
        let union = (a.1.max(b.1) - a.0.min(b.0)).max(inter);
        if union == 0.0 {
            0.0
        } else {
            inter / union
        }
    }
    let mut used_p = vec![false; preds.len()];
    let mut used_g = vec![false; gts.len()];
    let mut matched = 0;
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for (pi, p) in preds.iter().enumerate() {
            if used_p[pi] {
                continue;
            }
            for (gi, g) in gts.iter().enumerate() {
                if used_g[gi] {
                    continue;
                }
                let v = iou(*p, *g);
                let better = match best {
                    None => true,
                    Some((bv, bp, bg)) => {
                        v > bv || (v == bv && (pi, gi) < (bp, bg))
                    }
                };
                if better {
                    best = Some((v, pi, gi));
                }
            }
        }
        match best {
            Some((v, pi, gi)) if v >= t => {
                used_p[pi] = true;
                used_g[gi] = true;
                matched += 1;
            }
            _ => break,
        }
    }
    matched
}

/// Brute-force boundary matching: repeatedly pick the globally smallest
/// |error| pair within tolerance. Returns the true-positive count.
pub fn oracle_boundary_tp(preds: &[f64], gts: &[f64], tol: f64) -> usize {
    let mut used_p = vec![false; preds.len()];
    let mut used_g = vec![false; gts.len()];
    let mut tp = 0;
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for (pi, &p) in preds.iter().enumerate() {
            if used_p[pi] {
                continue;
            }
            for (gi, &g) in gts.iter().enumerate() {
                if used_g[gi] {
                    continue;
                }
                let err = (p - g).abs();
                if err > tol {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((be, bp, bg)) => err < be || (err == be && (pi, gi) < (bp, bg)),
                };
                if better {
                    best = Some((err, pi, gi));
                }
            }
        }
        match best {
            Some((_, pi, gi)) => {
                used_p[pi] = true;
                used_g[gi] = true;
                tp += 1;
            }
            None => break,
        }
    }
    tp
}

/// One detection row for the brute-force AP oracle.
#[derive(Clone)]
pub struct OracleDet {
    pub video: usize,
    pub span: (f64, f64),
    pub category: u32,
    pub score: f64,
}

#[derive(Clone)]
pub struct OracleGt {
    pub video: usize,
    pub span: (f64, f64),
    pub labels: Vec<u32>,
}

/// Brute-force mAP: explicit rank walk per (category, threshold), average
/// precision as sum over hit ranks of the best precision at or after that
/// rank, scaled by 1/n_gt increments.
pub fn oracle_map(dets: &[OracleDet], gts: &[OracleGt], thresholds: &[f64]) -> f64 {
    fn iou(a: (f64, f64), b: (f64, f64)) -> f64 {
        let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
        let union = (a.1.max(b.1) - a.0.min(b.0)).max(inter);
        if union == 0.0 {
            0.0
        } else {
            inter / union
        }
    }
    let mut cats: Vec<u32> = gts.iter().flat_map(|g| g.labels.clone()).collect();
    cats.sort_unstable();
    cats.dedup();
    if cats.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for &t in thresholds {
        let mut ap_sum = 0.0;
        for &cat in &cats {
            let mut rows: Vec<&OracleDet> =
                dets.iter().filter(|d| d.category == cat).collect();
            rows.sort_by(|a, b| {
                b.score
                    .total_cmp(&a.score)
                    .then(a.span.0.total_cmp(&b.span.0))
                    .then(a.span.1.total_cmp(&b.span.1))
            });
            let eligible: Vec<usize> = gts
                .iter()
                .enumerate()
                .filter(|(_, g)| g.labels.contains(&cat))
                .map(|(i, _)| i)
                .collect();
            let n_gt = eligible.len();
            if n_gt == 0 {
                continue;
            }
            let mut taken = vec![false; gts.len()];
            let mut hits = Vec::with_capacity(rows.len());
            for d in &rows {
                let mut best: Option<(f64, usize)> = None;
                for &gi in &eligible {
                    if taken[gi] || gts[gi].video != d.video {
                        continue;
                    }
                    let v = iou(d.span, gts[gi].span);
                    if v >= t && best.map_or(true, |(bv, _)| v > bv) {
                        best = Some((v, gi));
                    }
                }
                if let Some((_, gi)) = best {
                    taken[gi] = true;
                    hits.push(true);
                } else {
                    hits.push(false);
                }
            }
            // Rank walk: each hit contributes (1/n_gt) * best precision at
            // any rank >= its own.
            let mut ap = 0.0;
            let mut tp_before = 0usize;
            for (k, &h) in hits.iter().enumerate() {
                if !h {
                    continue;
                }
                tp_before += 1;
                let mut best_prec = 0.0f64;
                let mut tp = tp_before;
                for k2 in k..hits.len() {
                    if k2 > k && hits[k2] {
                        tp += 1;
                    }
                    best_prec = best_prec.max(tp as f64 / (k2 + 1) as f64);
                }
                ap += best_prec / n_gt as f64;
            }
            ap_sum += ap;
        }
        total += ap_sum / cats.len() as f64;
    }
    total / thresholds.len() as f64
}

//! The distillation, confidence and balance losses, with analytic gradients
//! with respect to the four soft-assignment matrices.

use crate::error::{dim_err, param_err, Result};
use crate::matrix::ProbMatrix;

/// Added to every column norm before taking cluster-column cosines.
pub const COLUMN_EPS: f64 = 1e-12;
/// Floor on `sum_i p_i . q_i` in the confidence loss.
pub const CON_EPS: f64 = 1e-12;

/// Soft assignments for one batch: images, sampled image neighbors,
/// counterparts and sampled counterpart neighbors.
#[derive(Clone, Debug)]
pub struct AssignmentBatch {
    pub p: ProbMatrix,
    pub p_n: ProbMatrix,
    pub q: ProbMatrix,
    pub q_n: ProbMatrix,
}

impl AssignmentBatch {
    pub fn new(p: ProbMatrix, p_n: ProbMatrix, q: ProbMatrix, q_n: ProbMatrix) -> Result<Self> {
        let shape = (p.rows(), p.cols());
        for m in [&p_n, &q, &q_n] {
            if (m.rows(), m.cols()) != shape {
                return Err(dim_err(format!(
                    "assignment matrices disagree: {}x{} vs {}x{}",
                    shape.0,
                    shape.1,
                    m.rows(),
                    m.cols()
                )));
            }
        }
        for m in [&p, &p_n, &q, &q_n] {
            m.validate(1e-5)?;
        }
        Ok(Self { p, p_n, q, q_n })
    }

    pub fn n(&self) -> usize {
        self.p.rows()
    }

    pub fn k(&self) -> usize {
        self.p.cols()
    }
}

/// Which loss terms contribute to the objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossTerms {
    pub dis: bool,
    pub con: bool,
    pub bal: bool,
}

impl Default for LossTerms {
    fn default() -> Self {
        Self {
            dis: true,
            con: true,
            bal: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub tau_hat: f64,
    pub alpha: f64,
    pub terms: LossTerms,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau_hat: 0.5,
            alpha: 5.0,
            terms: LossTerms::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_hat > 0.0 && self.tau_hat.is_finite()) {
            return Err(param_err(format!(
                "tau_hat must be positive, got {}",
                self.tau_hat
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(param_err(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Disabled terms report 0.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub dis: f64,
    pub con: f64,
    pub bal: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.dis.is_finite()
            && self.con.is_finite()
            && self.bal.is_finite()
            && self.total.is_finite()
    }
}

/// Gradients of the objective with respect to `P, P_N, Q, Q_N`, row-major.
#[derive(Clone, Debug)]
pub struct BatchGrads {
    pub p: Vec<f64>,
    pub p_n: Vec<f64>,
    pub q: Vec<f64>,
    pub q_n: Vec<f64>,
}

impl BatchGrads {
    fn zeros(len: usize) -> Self {
        Self {
            p: vec![0.0; len],
            p_n: vec![0.0; len],
            q: vec![0.0; len],
            q_n: vec![0.0; len],
        }
    }
}

/// Column-normalized copy of a row-major `n x k` matrix plus its column norms.
fn unit_columns(a: &[f64], n: usize, k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut norms = vec![0.0; k];
    for s in 0..n {
        for (c, &x) in a[s * k..(s + 1) * k].iter().enumerate() {
            norms[c] += x * x;
        }
    }
    for r in norms.iter_mut() {
        *r = r.sqrt();
    }
    let mut u = a.to_vec();
    for s in 0..n {
        for c in 0..k {
            u[s * k + c] /= norms[c] + COLUMN_EPS;
        }
    }
    (u, norms)
}

/// Backprop through `u = a / (|a| + eps)` column by column.
fn unit_columns_backward(
    a: &[f64],
    norms: &[f64],
    gu: &[f64],
    n: usize,
    k: usize,
    out: &mut [f64],
) {
    let mut proj = vec![0.0; k];
    for s in 0..n {
        for c in 0..k {
            proj[c] += a[s * k + c] * gu[s * k + c];
        }
    }
    for s in 0..n {
        for c in 0..k {
            let r = norms[c];
            let mut g = gu[s * k + c] / (r + COLUMN_EPS);
            if r > 0.0 {
                g -= a[s * k + c] * proj[c] / (r * (r + COLUMN_EPS) * (r + COLUMN_EPS));
            }
            out[s * k + c] += g;
        }
    }
}

/// `sum_i -log softmax_j(cos(a_i, b_j) / tau)[i]` over cluster columns of `a`
/// against those of `b`. Accumulates gradients into `grads` when given.
fn column_contrast(
    a: &[f64],
    b: &[f64],
    n: usize,
    k: usize,
    tau: f64,
    grads: Option<(&mut [f64], &mut [f64])>,
) -> f64 {
    let (ua, ra) = unit_columns(a, n, k);
    let (ub, rb) = unit_columns(b, n, k);
    let mut sim = vec![0.0; k * k];
    for s in 0..n {
        let ar = &ua[s * k..(s + 1) * k];
        let br = &ub[s * k..(s + 1) * k];
        for i in 0..k {
            for j in 0..k {
                sim[i * k + j] += ar[i] * br[j];
            }
        }
    }
    let mut loss = 0.0;
    let mut dsim = vec![0.0; k * k];
    for i in 0..k {
        let row = &sim[i * k..(i + 1) * k];
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x / tau));
        let lse = max + row.iter().map(|&x| (x / tau - max).exp()).sum::<f64>().ln();
        loss += lse - row[i] / tau;
        for j in 0..k {
            let soft = (row[j] / tau - lse).exp();
            dsim[i * k + j] = (soft - if i == j { 1.0 } else { 0.0 }) / tau;
        }
    }
    if let Some((ga, gb)) = grads {
        let mut gua = vec![0.0; n * k];
        let mut gub = vec![0.0; n * k];
        for s in 0..n {
            let ar = &ua[s * k..(s + 1) * k];
            let br = &ub[s * k..(s + 1) * k];
            for i in 0..k {
                for j in 0..k {
                    let g = dsim[i * k + j];
                    gua[s * k + i] += g * br[j];
                    gub[s * k + j] += g * ar[i];
                }
            }
        }
        unit_columns_backward(a, &ra, &gua, n, k, ga);
        unit_columns_backward(b, &rb, &gub, n, k, gb);
    }
    loss
}

fn check_pair(a: &ProbMatrix, b: &ProbMatrix) -> Result<()> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(dim_err(format!(
            "assignment shapes differ: {}x{} vs {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(())
}

/// Cross-modal distillation over cluster columns: `Q` against `P_N` plus `P`
/// against `Q_N`.
pub fn loss_dis(batch: &AssignmentBatch, tau_hat: f64) -> Result<f64> {
    if !(tau_hat > 0.0) {
        return Err(param_err(format!(
            "tau_hat must be positive, got {tau_hat}"
        )));
    }
    let (n, k) = (batch.n(), batch.k());
    Ok(
        column_contrast(batch.q.data(), batch.p_n.data(), n, k, tau_hat, None)
            + column_contrast(batch.p.data(), batch.q_n.data(), n, k, tau_hat, None),
    )
}

fn con_value(p: &[f64], q: &[f64]) -> (f64, f64) {
    let agree: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
    (-agree.max(CON_EPS).ln(), agree)
}

/// `-log sum_i p_i . q_i`, floored at `-log(CON_EPS)`.
pub fn loss_con(p: &ProbMatrix, q: &ProbMatrix) -> Result<f64> {
    check_pair(p, q)?;
    Ok(con_value(p.data(), q.data()).0)
}

fn entropy(dist: &[f64]) -> f64 {
    dist.iter()
        .filter(|&&x| x > 0.0)
        .fold(0.0, |acc, &x| acc - x * x.ln())
}

/// Entropy of the mean image assignment plus that of the mean counterpart
/// assignment.
pub fn loss_bal(p: &ProbMatrix, q: &ProbMatrix) -> Result<f64> {
    check_pair(p, q)?;
    Ok(entropy(&p.column_means()) + entropy(&q.column_means()))
}

/// Gradient of `H(mean rows)` w.r.t. each entry: `-(log mean_c + 1) / n`.
fn bal_backward(m: &ProbMatrix, scale: f64, out: &mut [f64]) {
    let n = m.rows() as f64;
    let k = m.cols();
    let means = m.column_means();
    let col: Vec<f64> = means
        .iter()
        .map(|&x| {
            if x > 0.0 {
                -scale * (x.ln() + 1.0) / n
            } else {
                0.0
            }
        })
        .collect();
    for (s, g) in out.iter_mut().enumerate() {
        *g += col[s % k];
    }
}

pub fn loss_total(batch: &AssignmentBatch, cfg: &LossConfig) -> Result<LossBreakdown> {
    cfg.validate()?;
    Ok(evaluate(batch, cfg, false).0)
}

/// Loss and its gradient with respect to the four assignment matrices.
pub fn loss_total_with_grads(
    batch: &AssignmentBatch,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, BatchGrads)> {
    cfg.validate()?;
    let (loss, grads) = evaluate(batch, cfg, true);
    Ok((loss, grads.expect("gradients requested")))
}

fn evaluate(
    batch: &AssignmentBatch,
    cfg: &LossConfig,
    with_grads: bool,
) -> (LossBreakdown, Option<BatchGrads>) {
    let (n, k) = (batch.n(), batch.k());
    let mut g = with_grads.then(|| BatchGrads::zeros(n * k));
    let mut out = LossBreakdown::default();

    if cfg.terms.dis {
        out.dis = match g.as_mut() {
            Some(g) => {
                column_contrast(
                    batch.q.data(),
                    batch.p_n.data(),
                    n,
                    k,
                    cfg.tau_hat,
                    Some((&mut g.q, &mut g.p_n)),
                ) + column_contrast(
                    batch.p.data(),
                    batch.q_n.data(),
                    n,
                    k,
                    cfg.tau_hat,
                    Some((&mut g.p, &mut g.q_n)),
                )
            }
            None => {
                column_contrast(batch.q.data(), batch.p_n.data(), n, k, cfg.tau_hat, None)
                    + column_contrast(batch.p.data(), batch.q_n.data(), n, k, cfg.tau_hat, None)
            }
        };
    }
    if cfg.terms.con {
        let (value, agree) = con_value(batch.p.data(), batch.q.data());
        out.con = value;
        if let Some(g) = g.as_mut() {
            if agree > CON_EPS {
                for (s, (a, b)) in batch.p.data().iter().zip(batch.q.data()).enumerate() {
                    g.p[s] -= b / agree;
                    g.q[s] -= a / agree;
                }
            }
        }
    }
    if cfg.terms.bal {
        out.bal = entropy(&batch.p.column_means()) + entropy(&batch.q.column_means());
        if let Some(g) = g.as_mut() {
            bal_backward(&batch.p, -cfg.alpha, &mut g.p);
            bal_backward(&batch.q, -cfg.alpha, &mut g.q);
        }
    }
    out.total = out.dis + out.con - cfg.alpha * out.bal;
    (out, g)
}

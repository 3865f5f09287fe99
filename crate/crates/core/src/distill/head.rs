//! Two-layer cluster head: `softmax(W2^T act(W1^T x + b1) + b2)`.

use crate::error::{dim_err, Result};
use crate::math::RngState;
use crate::matrix::{EmbeddingMatrix, ProbMatrix};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative given the pre-activation and the activation output.
    #[inline]
    fn derivative(self, pre: f64, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - out * out,
        }
    }
}

/// Parameters of one cluster head. `w1` is `input_dim x hidden` and `w2` is
/// `hidden x k`, both row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterHead {
    pub input_dim: usize,
    pub hidden: usize,
    pub k: usize,
    pub activation: Activation,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Gradients with the same layout as [`ClusterHead`]'s tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl HeadGrads {
    pub fn zeros_like(head: &ClusterHead) -> Self {
        Self {
            w1: vec![0.0; head.w1.len()],
            b1: vec![0.0; head.b1.len()],
            w2: vec![0.0; head.w2.len()],
            b2: vec![0.0; head.b2.len()],
        }
    }

    pub fn tensors(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn add_assign(&mut self, other: &HeadGrads) {
        for (dst, src) in [
            (&mut self.w1, &other.w1),
            (&mut self.b1, &other.b1),
            (&mut self.w2, &other.w2),
            (&mut self.b2, &other.b2),
        ] {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|x| x.is_finite()))
    }
}

/// Cached intermediate values of a forward pass, needed for backprop.
#[derive(Clone, Debug)]
pub struct HeadForward {
    pub n: usize,
    pub pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub probs: Vec<f64>,
}

fn softmax_row(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for z in row.iter_mut() {
        *z = (*z - max).exp();
        total += *z;
    }
    for z in row.iter_mut() {
        *z /= total;
    }
}

impl ClusterHead {
    pub fn zeros(input_dim: usize, hidden: usize, k: usize) -> Self {
        Self {
            input_dim,
            hidden,
            k,
            activation: Activation::Relu,
            w1: vec![0.0; input_dim * hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden * k],
            b2: vec![0.0; k],
        }
    }

    /// Glorot-uniform weights in `[-a, a]`, `a = sqrt(6 / (fan_in + fan_out))`;
    /// zero biases.
    pub fn init(input_dim: usize, hidden: usize, k: usize, rng: &mut RngState) -> Self {
        let mut head = Self::zeros(input_dim, hidden, k);
        let a1 = (6.0 / (input_dim + hidden) as f64).sqrt();
        for w in head.w1.iter_mut() {
            *w = (2.0 * rng.uniform_f64() - 1.0) * a1;
        }
        let a2 = (6.0 / (hidden + k) as f64).sqrt();
        for w in head.w2.iter_mut() {
            *w = (2.0 * rng.uniform_f64() - 1.0) * a2;
        }
        head
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn tensors(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    /// Forward pass over `n = x.len() / input_dim` row-major inputs.
    pub fn forward(&self, x: &[f64]) -> HeadForward {
        let (d, h, k) = (self.input_dim, self.hidden, self.k);
        let n = x.len() / d;
        let mut pre = vec![0.0; n * h];
        let mut hidden = vec![0.0; n * h];
        let mut probs = vec![0.0; n * k];
        for s in 0..n {
            let xs = &x[s * d..(s + 1) * d];
            let ps = &mut pre[s * h..(s + 1) * h];
            ps.copy_from_slice(&self.b1);
            for (i, &xi) in xs.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                for (p, &w) in ps.iter_mut().zip(&self.w1[i * h..(i + 1) * h]) {
                    *p += xi * w;
                }
            }
            let hs = &mut hidden[s * h..(s + 1) * h];
            for (o, &p) in hs.iter_mut().zip(ps.iter()) {
                *o = self.activation.apply(p);
            }
            let zs = &mut probs[s * k..(s + 1) * k];
            zs.copy_from_slice(&self.b2);
            for (j, &hj) in hs.iter().enumerate() {
                if hj == 0.0 {
                    continue;
                }
                for (z, &w) in zs.iter_mut().zip(&self.w2[j * k..(j + 1) * k]) {
                    *z += hj * w;
                }
            }
            softmax_row(zs);
        }
        HeadForward {
            n,
            pre,
            hidden,
            probs,
        }
    }

    /// Backpropagates `d_probs` (gradient of the loss w.r.t. the softmax
    /// outputs) through the head, accumulating into `grads`.
    pub fn backward(&self, x: &[f64], fwd: &HeadForward, d_probs: &[f64], grads: &mut HeadGrads) {
        let (d, h, k) = (self.input_dim, self.hidden, self.k);
        let mut dz = vec![0.0; k];
        let mut dh = vec![0.0; h];
        for s in 0..fwd.n {
            let p = &fwd.probs[s * k..(s + 1) * k];
            let g = &d_probs[s * k..(s + 1) * k];
            let inner: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
            for j in 0..k {
                dz[j] = p[j] * (g[j] - inner);
            }
            let hs = &fwd.hidden[s * h..(s + 1) * h];
            let ps = &fwd.pre[s * h..(s + 1) * h];
            for (j, &hj) in hs.iter().enumerate() {
                let row = &self.w2[j * k..(j + 1) * k];
                let grow = &mut grads.w2[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for c in 0..k {
                    grow[c] += hj * dz[c];
                    acc += row[c] * dz[c];
                }
                dh[j] = acc * self.activation.derivative(ps[j], hj);
            }
            for (b, &z) in grads.b2.iter_mut().zip(&dz) {
                *b += z;
            }
            let xs = &x[s * d..(s + 1) * d];
            for (i, &xi) in xs.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                for (gw, &dhj) in grads.w1[i * h..(i + 1) * h].iter_mut().zip(&dh) {
                    *gw += xi * dhj;
                }
            }
            for (b, &v) in grads.b1.iter_mut().zip(&dh) {
                *b += v;
            }
        }
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if dim != self.input_dim {
            return Err(dim_err(format!(
                "head expects {}-dim inputs, got {dim}",
                self.input_dim
            )));
        }
        Ok(())
    }

    /// Soft cluster assignments for every row of `x`.
    pub fn predict_probs(&self, x: &EmbeddingMatrix) -> Result<ProbMatrix> {
        self.check_dim(x.dim())?;
        let input: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
        let fwd = self.forward(&input);
        ProbMatrix::new(x.rows(), self.k, fwd.probs)
    }
}

/// Soft assignments of one head over a batch of embeddings.
pub fn head_forward(params: &ClusterHead, x: &EmbeddingMatrix) -> Result<ProbMatrix> {
    params.predict_probs(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_head_is_uniform() {
        let head = ClusterHead::zeros(3, 4, 5);
        let x =
            EmbeddingMatrix::from_rows(&[vec![0.3f32, -1.0, 2.0], vec![1.0, 1.0, 1.0]]).unwrap();
        let p = head_forward(&head, &x).unwrap();
        for &v in p.data() {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn random_heads_give_distributions() {
        let mut rng = RngState::new(4, 4);
        let head = ClusterHead::init(6, 8, 4, &mut rng);
        let rows: Vec<Vec<f32>> = (0..10)
            .map(|_| (0..6).map(|_| rng.standard_normal() as f32).collect())
            .collect();
        let p = head_forward(&head, &EmbeddingMatrix::from_rows(&rows).unwrap()).unwrap();
        p.validate(1e-6).unwrap();
    }

    #[test]
    fn glorot_bounds() {
        let head = ClusterHead::init(6, 5, 3, &mut RngState::new(0, 4));
        let a1 = (6.0f64 / 11.0).sqrt();
        let a2 = (6.0f64 / 8.0).sqrt();
        assert!(head.w1.iter().all(|w| w.abs() <= a1));
        assert!(head.w2.iter().all(|w| w.abs() <= a2));
        assert!(head.b1.iter().chain(&head.b2).all(|&b| b == 0.0));
    }

    /// 2-d input, 3 hidden units, 2 clusters, evaluated by hand.
    pub(crate) fn hand_fixture() -> (ClusterHead, Vec<f32>, [f64; 2]) {
        let head = ClusterHead {
            input_dim: 2,
            hidden: 3,
            k: 2,
            activation: Activation::Relu,
            w1: vec![1.0, -1.0, 0.5, 2.0, 1.0, -1.0],
            b1: vec![0.0, 0.5, 0.1],
            w2: vec![1.0, 0.0, 0.0, 1.0, 2.0, -1.0],
            b2: vec![0.1, -0.1],
        };
        let x = vec![1.0f32, 0.5];
        // pre = [1 + 1, -1 + 0.5 + 0.5, 0.5 - 0.5 + 0.1] = [2, 0, 0.1]
        // relu = [2, 0, 0.1]
        // logits = [2 + 0.2 + 0.1, 0 - 0.1 - 0.1] = [2.3, -0.2]
        let e0 = 2.3f64.exp();
        let e1 = (-0.2f64).exp();
        (head, x, [e0 / (e0 + e1), e1 / (e0 + e1)])
    }

    #[test]
    fn hand_computed_forward() {
        let (head, x, expected) = hand_fixture();
        let p = head_forward(&head, &EmbeddingMatrix::new(1, 2, x).unwrap()).unwrap();
        assert!((p.get(0, 0) - expected[0]).abs() < 1e-6);
        assert!((p.get(0, 1) - expected[1]).abs() < 1e-6);
    }

    #[test]
    fn shape_mismatch() {
        let head = ClusterHead::zeros(3, 2, 2);
        let x = EmbeddingMatrix::new(1, 2, vec![1.0, 0.0]).unwrap();
        assert!(head_forward(&head, &x).is_err());
    }
}

//! Mini-batch training of the image head `f` and counterpart head `g`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::head::{Activation, ClusterHead, HeadForward, HeadGrads};
use super::loss::{loss_total_with_grads, AssignmentBatch, LossBreakdown, LossConfig, LossTerms};
use crate::error::{dim_err, param_err, Result, TacError};
use crate::math::{self, stream, RngState};
use crate::matrix::{EmbeddingMatrix, ProbMatrix};
use crate::neighbors::{sample_neighbor, NeighborGraph};
use crate::text_space::TextCounterparts;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub tau_hat: f64,
    pub alpha: f64,
    pub n_neighbors: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Hidden width; the input dimension when unset.
    pub hidden: Option<usize>,
    pub relu: bool,
    pub use_dis: bool,
    pub use_con: bool,
    pub use_bal: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            tau_hat: 0.5,
            alpha: 5.0,
            n_neighbors: 50,
            batch_size: 512,
            epochs: 20,
            lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            hidden: None,
            relu: true,
            use_dis: true,
            use_con: true,
            use_bal: true,
        }
    }
}

impl DistillConfig {
    /// Settings for datasets with many target clusters.
    pub fn large_k() -> Self {
        Self {
            tau_hat: 5.0,
            batch_size: 8192,
            epochs: 100,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss_config().validate()?;
        if self.batch_size < 2 {
            return Err(param_err(format!(
                "batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(param_err(format!("lr must be >= 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(param_err("Adam betas must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(param_err("adam_eps must be positive"));
        }
        if self.n_neighbors == 0 {
            return Err(param_err("n_neighbors must be >= 1"));
        }
        if self.hidden == Some(0) {
            return Err(param_err("hidden width must be >= 1"));
        }
        Ok(())
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            tau_hat: self.tau_hat,
            alpha: self.alpha,
            terms: LossTerms {
                dis: self.use_dis,
                con: self.use_con,
                bal: self.use_bal,
            },
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn activation(&self) -> Activation {
        if self.relu {
            Activation::Relu
        } else {
            Activation::Tanh
        }
    }
}

/// Row-major `f64` inputs for one batch.
#[derive(Clone, Debug)]
pub struct BatchInputs {
    pub images: Vec<f64>,
    pub image_neighbors: Vec<f64>,
    pub texts: Vec<f64>,
    pub text_neighbors: Vec<f64>,
}

fn probs(fwd: &HeadForward, k: usize) -> Result<ProbMatrix> {
    ProbMatrix::new(fwd.n, k, fwd.probs.clone())
}

/// Objective value and exact gradients for both heads on one batch. The
/// neighbor branches share parameters with the main branches, so their
/// gradients are summed in.
pub fn grads(
    f: &ClusterHead,
    g: &ClusterHead,
    inputs: &BatchInputs,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, HeadGrads, HeadGrads)> {
    if f.k != g.k {
        return Err(dim_err(format!("heads disagree on K: {} vs {}", f.k, g.k)));
    }
    let n = inputs.images.len() / f.input_dim.max(1);
    let shapes = [
        (inputs.images.len(), f.input_dim),
        (inputs.image_neighbors.len(), f.input_dim),
        (inputs.texts.len(), g.input_dim),
        (inputs.text_neighbors.len(), g.input_dim),
    ];
    if shapes.iter().any(|&(len, d)| len != n * d) || n == 0 {
        return Err(dim_err("batch inputs do not match head input dimensions"));
    }
    let fp = f.forward(&inputs.images);
    let fpn = f.forward(&inputs.image_neighbors);
    let gq = g.forward(&inputs.texts);
    let gqn = g.forward(&inputs.text_neighbors);
    let batch = AssignmentBatch {
        p: probs(&fp, f.k)?,
        p_n: probs(&fpn, f.k)?,
        q: probs(&gq, g.k)?,
        q_n: probs(&gqn, g.k)?,
    };
    let (loss, d) = loss_total_with_grads(&batch, cfg)?;
    let mut gf = HeadGrads::zeros_like(f);
    let mut gg = HeadGrads::zeros_like(g);
    f.backward(&inputs.images, &fp, &d.p, &mut gf);
    f.backward(&inputs.image_neighbors, &fpn, &d.p_n, &mut gf);
    g.backward(&inputs.texts, &gq, &d.q, &mut gg);
    g.backward(&inputs.text_neighbors, &gqn, &d.q_n, &mut gg);
    Ok((loss, gf, gg))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub loss: LossBreakdown,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub image_head: ClusterHead,
    pub text_head: ClusterHead,
    pub history: Vec<StepRecord>,
}

impl TrainOutput {
    pub fn steps(&self) -> u64 {
        self.history.len() as u64
    }

    /// Mean loss per epoch, in epoch order.
    pub fn epoch_means(&self) -> Vec<LossBreakdown> {
        let epochs = self.history.last().map_or(0, |r| r.epoch + 1);
        let mut sums = vec![(LossBreakdown::default(), 0usize); epochs];
        for r in &self.history {
            let (s, c) = &mut sums[r.epoch];
            s.dis += r.loss.dis;
            s.con += r.loss.con;
            s.bal += r.loss.bal;
            s.total += r.loss.total;
            *c += 1;
        }
        sums.into_iter()
            .map(|(s, c)| {
                let c = c.max(1) as f64;
                LossBreakdown {
                    dis: s.dis / c,
                    con: s.con / c,
                    bal: s.bal / c,
                    total: s.total / c,
                }
            })
            .collect()
    }
}

fn gather(m: &EmbeddingMatrix, idx: impl Iterator<Item = usize>, out: &mut Vec<f64>) {
    out.clear();
    for i in idx {
        out.extend(m.row(i).iter().map(|&x| x as f64));
    }
}

/// Runs `epochs * ceil(N / batch_size)` Adam steps. Each step draws a fresh
/// neighbor per sample and modality.
pub fn train(
    images: &EmbeddingMatrix,
    counterparts: &TextCounterparts,
    image_graph: &NeighborGraph,
    text_graph: &NeighborGraph,
    k: usize,
    cfg: &DistillConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let texts = &counterparts.matrix;
    let n = images.rows();
    if texts.rows() != n {
        return Err(dim_err(format!(
            "{n} images but {} counterparts",
            texts.rows()
        )));
    }
    if k < 2 {
        return Err(param_err(format!("K must be >= 2, got {k}")));
    }
    if !image_graph.is_built_on(images) {
        return Err(param_err(
            "image neighbor graph was not built on these images",
        ));
    }
    if !text_graph.is_built_on(texts) {
        return Err(param_err(
            "counterpart neighbor graph was not built on these counterparts",
        ));
    }

    let root = RngState::new(cfg.seed, 0);
    let mut init_rng = root.split(stream::WEIGHT_INIT);
    let mut shuffle_rng = root.split(stream::BATCH_SHUFFLE);
    let mut neighbor_rng = root.split(stream::NEIGHBOR_SAMPLING);

    let act = cfg.activation();
    let mut f = ClusterHead::init(
        images.dim(),
        cfg.hidden.unwrap_or(images.dim()),
        k,
        &mut init_rng,
    )
    .with_activation(act);
    let mut g = ClusterHead::init(
        texts.dim(),
        cfg.hidden.unwrap_or(texts.dim()),
        k,
        &mut init_rng,
    )
    .with_activation(act);
    let mut opt_f = Adam::new(cfg.adam(), &f);
    let mut opt_g = Adam::new(cfg.adam(), &g);
    let loss_cfg = cfg.loss_config();

    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs * n.div_ceil(cfg.batch_size));
    let mut inputs = BatchInputs {
        images: Vec::new(),
        image_neighbors: Vec::new(),
        texts: Vec::new(),
        text_neighbors: Vec::new(),
    };
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let v_n: Vec<usize> = chunk
                .iter()
                .map(|&i| sample_neighbor(image_graph, i, &mut neighbor_rng))
                .collect();
            let t_n: Vec<usize> = chunk
                .iter()
                .map(|&i| sample_neighbor(text_graph, i, &mut neighbor_rng))
                .collect();
            gather(images, chunk.iter().copied(), &mut inputs.images);
            gather(images, v_n.iter().copied(), &mut inputs.image_neighbors);
            gather(texts, chunk.iter().copied(), &mut inputs.texts);
            gather(texts, t_n.iter().copied(), &mut inputs.text_neighbors);

            let (loss, gf, gg) = grads(&f, &g, &inputs, &loss_cfg)?;
            if !loss.is_finite() || !gf.is_finite() || !gg.is_finite() {
                return Err(TacError::TrainingDiverged {
                    step,
                    detail: format!("loss {loss:?}"),
                });
            }
            opt_f.step(&mut f, &gf);
            opt_g.step(&mut g, &gg);
            history.push(StepRecord { step, epoch, loss });
            step += 1;
        }
    }
    Ok(TrainOutput {
        image_head: f,
        text_head: g,
        history,
    })
}

/// Hard cluster per image: argmax of the image head, ties to the lowest id.
pub fn predict(image_head: &ClusterHead, images: &EmbeddingMatrix) -> Result<Vec<usize>> {
    let p = image_head.predict_probs(images)?;
    Ok((0..p.rows()).map(|i| math::argmax(p.row(i))).collect())
}

/// `step,dis,con,bal,total` with optional `#` comment lines first.
pub fn format_loss_csv(history: &[StepRecord], header: &[String]) -> String {
    let mut out = String::new();
    for line in header {
        let _ = writeln!(out, "# {line}");
    }
    out.push_str("step,dis,con,bal,total\n");
    for r in history {
        let l = &r.loss;
        let _ = writeln!(out, "{},{},{},{},{}", r.step, l.dis, l.con, l.bal, l.total);
    }
    out
}

pub fn write_loss_csv(
    path: impl AsRef<Path>,
    history: &[StepRecord],
    header: &[String],
) -> Result<()> {
    fs::write(path, format_loss_csv(history, header))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neighbors::build_graph;

    fn random_matrix(n: usize, d: usize, rng: &mut RngState) -> EmbeddingMatrix {
        let data = (0..n * d).map(|_| rng.standard_normal() as f32).collect();
        EmbeddingMatrix::new(n, d, data)
            .unwrap()
            .normalized()
            .unwrap()
    }

    fn random_inputs(n: usize, d: usize, rng: &mut RngState) -> BatchInputs {
        let mut v = || {
            (0..n * d)
                .map(|_| rng.standard_normal())
                .collect::<Vec<f64>>()
        };
        BatchInputs {
            images: v(),
            image_neighbors: v(),
            texts: v(),
            text_neighbors: v(),
        }
    }

    fn all_params(f: &ClusterHead, g: &ClusterHead) -> Vec<f64> {
        f.tensors()
            .iter()
            .chain(g.tensors().iter())
            .flat_map(|t| t.iter().copied())
            .collect()
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut rng = RngState::new(17, 0);
        for act in [Activation::Relu, Activation::Tanh] {
            let f = ClusterHead::init(6, 5, 3, &mut rng).with_activation(act);
            let g = ClusterHead::init(6, 5, 3, &mut rng).with_activation(act);
            let inputs = random_inputs(8, 6, &mut rng);
            let cfg = LossConfig::default();
            let (_, gf, gg) = grads(&f, &g, &inputs, &cfg).unwrap();
            let analytic: Vec<f64> = gf
                .tensors()
                .iter()
                .chain(gg.tensors().iter())
                .flat_map(|t| t.iter().copied())
                .collect();
            let base = all_params(&f, &g);
            let h = 1e-5;
            for idx in 0..base.len() {
                let eval = |delta: f64| {
                    let (mut f2, mut g2) = (f.clone(), g.clone());
                    let mut c = 0;
                    for t in f2.tensors_mut().into_iter().chain(g2.tensors_mut()) {
                        for x in t.iter_mut() {
                            if c == idx {
                                *x += delta;
                            }
                            c += 1;
                        }
                    }
                    grads(&f2, &g2, &inputs, &cfg).unwrap().0.total
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let scale = numeric.abs().max(analytic[idx].abs()).max(1e-4);
                assert!(
                    (numeric - analytic[idx]).abs() / scale < 1e-4,
                    "param {idx}: {numeric} vs {}",
                    analytic[idx]
                );
            }
        }
    }

    #[test]
    fn symmetric_start_has_balanced_w2_gradient() {
        let f = ClusterHead::zeros(4, 3, 3);
        let g = ClusterHead::zeros(4, 3, 3);
        let mut rng = RngState::new(2, 0);
        let inputs = random_inputs(5, 4, &mut rng);
        let cfg = LossConfig {
            terms: LossTerms {
                dis: false,
                con: false,
                bal: true,
            },
            ..Default::default()
        };
        let (_, gf, _) = grads(&f, &g, &inputs, &cfg).unwrap();
        for j in 0..3 {
            let s: f64 = gf.w2[j * 3..(j + 1) * 3].iter().sum();
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn con_gradient_is_a_descent_direction() {
        let mut rng = RngState::new(5, 0);
        let f = ClusterHead::init(4, 6, 3, &mut rng);
        let g = ClusterHead::init(4, 6, 3, &mut rng);
        let inputs = random_inputs(10, 4, &mut rng);
        let cfg = LossConfig {
            alpha: 0.0,
            terms: LossTerms {
                dis: false,
                con: true,
                bal: false,
            },
            ..Default::default()
        };
        let (before, gf, gg) = grads(&f, &g, &inputs, &cfg).unwrap();
        let (mut f2, mut g2) = (f.clone(), g.clone());
        let lr = 1e-2;
        for (p, d) in f2
            .tensors_mut()
            .into_iter()
            .zip(gf.tensors())
            .chain(g2.tensors_mut().into_iter().zip(gg.tensors()))
        {
            for (x, y) in p.iter_mut().zip(d) {
                *x -= lr * y;
            }
        }
        let (after, _, _) = grads(&f2, &g2, &inputs, &cfg).unwrap();
        // lower -log(agreement) means higher agreement
        assert!(after.con < before.con);
    }

    fn toy_problem(
        seed: u64,
    ) -> (
        EmbeddingMatrix,
        TextCounterparts,
        NeighborGraph,
        NeighborGraph,
    ) {
        let mut rng = RngState::new(seed, 0);
        let v = random_matrix(60, 5, &mut rng);
        let t = random_matrix(60, 5, &mut rng);
        let gv = build_graph(&v, 4).unwrap();
        let gt = build_graph(&t, 4).unwrap();
        (
            v,
            TextCounterparts {
                matrix: t,
                retrieval_tau: 0.005,
            },
            gv,
            gt,
        )
    }

    fn small_cfg() -> DistillConfig {
        DistillConfig {
            batch_size: 16,
            epochs: 3,
            n_neighbors: 4,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn step_count_and_determinism() {
        let (v, t, gv, gt) = toy_problem(1);
        let cfg = small_cfg();
        let a = train(&v, &t, &gv, &gt, 3, &cfg).unwrap();
        let b = train(&v, &t, &gv, &gt, 3, &cfg).unwrap();
        assert_eq!(a.steps(), 3 * 4);
        assert_eq!(a.history, b.history);
        assert_eq!(a.image_head, b.image_head);
        assert_eq!(
            format_loss_csv(&a.history, &[]),
            format_loss_csv(&b.history, &[])
        );
        assert_eq!(a.epoch_means().len(), 3);
        for r in &a.history {
            let l = r.loss;
            assert!((l.total - (l.dis + l.con - 5.0 * l.bal)).abs() < 1e-6);
        }
    }

    #[test]
    fn loss_falls_on_the_synthetic_mixture() {
        let fx = crate::synthetic::generate(&crate::synthetic::SyntheticConfig::default()).unwrap();
        let t = TextCounterparts {
            matrix: fx.texts,
            retrieval_tau: 0.005,
        };
        let gv = build_graph(&fx.images, 50).unwrap();
        let gt = build_graph(&t.matrix, 50).unwrap();
        let out = train(&fx.images, &t, &gv, &gt, 4, &DistillConfig::default()).unwrap();
        let means = out.epoch_means();
        assert_eq!(out.steps(), 20 * 4);
        assert!(means.last().unwrap().total < means[0].total);
    }

    #[test]
    fn zero_lr_keeps_initial_parameters() {
        let (v, t, gv, gt) = toy_problem(2);
        let cfg = DistillConfig {
            lr: 0.0,
            ..small_cfg()
        };
        let trained = train(&v, &t, &gv, &gt, 3, &cfg).unwrap();
        let none = train(&v, &t, &gv, &gt, 3, &DistillConfig { epochs: 0, ..cfg }).unwrap();
        assert!(none.history.is_empty());
        assert_eq!(trained.image_head, none.image_head);
        assert_eq!(trained.text_head, none.text_head);
    }

    #[test]
    fn graphs_must_match_their_modality() {
        let (v, t, gv, gt) = toy_problem(3);
        let err = train(&v, &t, &gt, &gv, 3, &small_cfg()).unwrap_err();
        assert!(matches!(err, TacError::Parameter(_)));
    }

    #[test]
    fn divergence_reports_the_step() {
        let (v, t, gv, gt) = toy_problem(4);
        let cfg = DistillConfig {
            lr: 1e300,
            ..small_cfg()
        };
        match train(&v, &t, &gv, &gt, 3, &cfg) {
            Err(TacError::TrainingDiverged { step, .. }) => assert!(step >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(DistillConfig::default().validate().is_ok());
        assert!(DistillConfig::large_k().validate().is_ok());
        assert_eq!(DistillConfig::large_k().tau_hat, 5.0);
        for bad in [
            DistillConfig {
                tau_hat: 0.0,
                ..Default::default()
            },
            DistillConfig {
                alpha: -1.0,
                ..Default::default()
            },
            DistillConfig {
                batch_size: 1,
                ..Default::default()
            },
            DistillConfig {
                lr: f64::NAN,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn predict_tie_rule() {
        let head = ClusterHead::zeros(2, 2, 3);
        let x = EmbeddingMatrix::from_rows(&[vec![1.0f32, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(predict(&head, &x).unwrap(), vec![0, 0]);
        let mut biased = head.clone();
        biased.b2 = vec![0.0, 0.0, 4.0];
        assert_eq!(predict(&biased, &x).unwrap(), vec![2, 2]);
    }

    #[test]
    fn hand_fixture_prediction() {
        let mut head = ClusterHead::zeros(2, 3, 2);
        head.w1 = vec![1.0, -1.0, 0.5, 2.0, 1.0, -1.0];
        head.b1 = vec![0.0, 0.5, 0.1];
        head.w2 = vec![1.0, 0.0, 0.0, 1.0, 2.0, -1.0];
        head.b2 = vec![0.1, -0.1];
        // (1, 0.5): logits [2.3, -0.2]
        // (0, 1):   pre [2, 1.5, -0.9], relu [2, 1.5, 0], logits [2.1, 1.4]
        // (-1, 0):  pre [-1, 1.5, -0.4], relu [0, 1.5, 0], logits [0.1, 1.4]
        let x = EmbeddingMatrix::from_rows(&[vec![1.0f32, 0.5], vec![0.0, 1.0], vec![-1.0, 0.0]])
            .unwrap();
        assert_eq!(predict(&head, &x).unwrap(), vec![0, 0, 1]);
    }

    #[test]
    fn loss_csv_layout() {
        let h = vec![StepRecord {
            step: 0,
            epoch: 0,
            loss: LossBreakdown {
                dis: 1.0,
                con: 0.5,
                bal: 0.25,
                total: 0.25,
            },
        }];
        let text = format_loss_csv(&h, &["config_hash: ab".to_string()]);
        assert_eq!(
            text,
            "# config_hash: ab\nstep,dis,con,bal,total\n0,1,0.5,0.25,0.25\n"
        );
    }
}

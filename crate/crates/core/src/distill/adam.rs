use super::head::{ClusterHead, HeadGrads};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction, holding moment estimates for one head.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    t: u64,
    m: [Vec<f64>; 4],
    v: [Vec<f64>; 4],
}

impl Adam {
    pub fn new(cfg: AdamConfig, head: &ClusterHead) -> Self {
        let zeros = || head.tensors().map(|t| vec![0.0; t.len()]);
        Self {
            cfg,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, head: &mut ClusterHead, grads: &HeadGrads) {
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (((p, g), m), v) in head
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                if lr != 0.0 {
                    p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::RngState;

    #[test]
    fn zero_lr_is_a_no_op() {
        let mut head = ClusterHead::init(4, 3, 2, &mut RngState::new(0, 4));
        let before = head.clone();
        let mut grads = HeadGrads::zeros_like(&head);
        grads.w1.iter_mut().for_each(|g| *g = 0.7);
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.0,
                ..Default::default()
            },
            &head,
        );
        for _ in 0..5 {
            opt.step(&mut head, &grads);
        }
        assert_eq!(head, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // with bias correction the first update is lr * sign(g)
        let mut head = ClusterHead::zeros(2, 2, 2);
        let mut grads = HeadGrads::zeros_like(&head);
        grads.b2 = vec![3.0, -0.01];
        let mut opt = Adam::new(AdamConfig::default(), &head);
        opt.step(&mut head, &grads);
        assert!((head.b2[0] + 1e-3).abs() < 1e-8);
        assert!((head.b2[1] - 1e-3).abs() < 1e-6);
        assert_eq!(head.b1, vec![0.0, 0.0]);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut head = ClusterHead::zeros(1, 1, 2);
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.05,
                ..Default::default()
            },
            &head,
        );
        for _ in 0..2000 {
            let mut g = HeadGrads::zeros_like(&head);
            g.b2 = head.b2.iter().map(|x| 2.0 * (x - 1.5)).collect();
            opt.step(&mut head, &g);
        }
        assert!(head.b2.iter().all(|x| (x - 1.5).abs() < 1e-2));
    }
}

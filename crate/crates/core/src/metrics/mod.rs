//! External clustering metrics: NMI, ACC (optimal one-to-one mapping) and ARI.

pub mod hungarian;

use std::collections::BTreeMap;

use crate::error::{dim_err, param_err, Result};

/// Which mean of the two entropies normalizes the mutual information.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NmiNormalization {
    #[default]
    Arithmetic,
    Geometric,
}

/// Contingency table between two labelings; label values are compacted to
/// dense ids in ascending order.
#[derive(Clone, Debug)]
pub struct Contingency {
    pub counts: Vec<Vec<u64>>,
    pub row_sums: Vec<u64>,
    pub col_sums: Vec<u64>,
    pub n: u64,
}

fn compact(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut ids = BTreeMap::new();
    for &l in labels {
        ids.entry(l).or_insert(0usize);
    }
    for (i, v) in ids.values_mut().enumerate() {
        *v = i;
    }
    (labels.iter().map(|l| ids[l]).collect(), ids.len())
}

impl Contingency {
    pub fn new(pred: &[usize], truth: &[usize]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(dim_err(format!(
                "{} predictions vs {} ground-truth labels",
                pred.len(),
                truth.len()
            )));
        }
        let (p, kp) = compact(pred);
        let (t, kt) = compact(truth);
        let mut counts = vec![vec![0u64; kt]; kp];
        for (&a, &b) in p.iter().zip(&t) {
            counts[a][b] += 1;
        }
        let row_sums = counts.iter().map(|r| r.iter().sum()).collect();
        let col_sums = (0..kt).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
        Ok(Self {
            counts,
            row_sums,
            col_sums,
            n: pred.len() as u64,
        })
    }
}

fn entropy_of_counts(counts: &[u64], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .fold(0.0, |acc, x| acc + x)
}

pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    nmi_with(pred, truth, NmiNormalization::Arithmetic)
}

/// Mutual information normalized by the chosen mean of the two entropies.
/// Two single-cluster labelings are identical and score 1.
pub fn nmi_with(pred: &[usize], truth: &[usize], norm: NmiNormalization) -> Result<f64> {
    let table = Contingency::new(pred, truth)?;
    if table.n == 0 {
        return Err(param_err("nmi of empty labelings"));
    }
    let n = table.n as f64;
    let hp = entropy_of_counts(&table.row_sums, n);
    let ht = entropy_of_counts(&table.col_sums, n);
    if hp == 0.0 && ht == 0.0 {
        return Ok(1.0);
    }
    let mut mi = 0.0;
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let c = c as f64;
            mi += c / n * (c * n / (table.row_sums[i] as f64 * table.col_sums[j] as f64)).ln();
        }
    }
    let denom = match norm {
        NmiNormalization::Arithmetic => 0.5 * (hp + ht),
        NmiNormalization::Geometric => (hp * ht).sqrt(),
    };
    if denom <= 0.0 {
        return Ok(0.0);
    }
    Ok((mi / denom).clamp(0.0, 1.0))
}

/// Fraction of samples matched under the best one-to-one mapping between
/// predicted clusters and true classes (Hungarian algorithm on the
/// zero-padded contingency table).
pub fn acc(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = Contingency::new(pred, truth)?;
    if table.n == 0 {
        return Err(param_err("acc of empty labelings"));
    }
    let size = table.row_sums.len().max(table.col_sums.len());
    let mut costs = vec![vec![0.0f64; size]; size];
    for (i, row) in table.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            costs[i][j] = -(c as f64);
        }
    }
    let mapping = hungarian::solve(&costs);
    let matched: f64 = mapping.iter().enumerate().map(|(i, &j)| -costs[i][j]).sum();
    Ok(matched / table.n as f64)
}

fn comb2(x: u64) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index from pair counts over the contingency table.
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = Contingency::new(pred, truth)?;
    if table.n < 2 {
        return Err(param_err("ari needs at least two samples"));
    }
    let index: f64 = table.counts.iter().flatten().map(|&c| comb2(c)).sum();
    let sum_rows: f64 = table.row_sums.iter().map(|&c| comb2(c)).sum();
    let sum_cols: f64 = table.col_sums.iter().map(|&c| comb2(c)).sum();
    let expected = sum_rows * sum_cols / comb2(table.n);
    let max_index = 0.5 * (sum_rows + sum_cols);
    let denom = max_index - expected;
    if denom == 0.0 {
        // both labelings trivial (one cluster, or all singletons)
        return Ok(if index == max_index { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / denom)
}

/// Entropy (natural log) of the cluster-size distribution of `assignment`.
pub fn cluster_size_entropy(assignment: &[usize], k: usize) -> f64 {
    let k = k.max(assignment.iter().max().map_or(0, |m| m + 1));
    let mut counts = vec![0u64; k];
    for &a in assignment {
        counts[a] += 1;
    }
    entropy_of_counts(&counts, assignment.len().max(1) as f64)
}

/// Evaluation result plus the metadata needed to trace it back to a run.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub nmi: f64,
    pub acc: f64,
    pub ari: f64,
    pub n: usize,
    pub k_pred: usize,
    pub k_true: usize,
    pub seed: u64,
    pub config_hash: String,
    pub timestamp: String,
}

impl MetricsReport {
    pub fn evaluate(pred: &[usize], truth: &[usize]) -> Result<Self> {
        let table = Contingency::new(pred, truth)?;
        Ok(Self {
            nmi: nmi(pred, truth)?,
            acc: acc(pred, truth)?,
            ari: ari(pred, truth)?,
            n: pred.len(),
            k_pred: table.row_sums.len(),
            k_true: table.col_sums.len(),
            seed: 0,
            config_hash: String::new(),
            timestamp: String::new(),
        })
    }

    pub fn with_metadata(
        mut self,
        seed: u64,
        config_hash: impl Into<String>,
        timestamp: impl Into<String>,
    ) -> Self {
        self.seed = seed;
        self.config_hash = config_hash.into();
        self.timestamp = timestamp.into();
        self
    }

    pub const FIELDS: [&'static str; 9] = [
        "nmi",
        "acc",
        "ari",
        "n",
        "k_pred",
        "k_true",
        "seed",
        "config_hash",
        "timestamp",
    ];

    fn values(&self) -> [String; 9] {
        [
            format!("{:.6}", self.nmi),
            format!("{:.6}", self.acc),
            format!("{:.6}", self.ari),
            self.n.to_string(),
            self.k_pred.to_string(),
            self.k_true.to_string(),
            self.seed.to_string(),
            self.config_hash.clone(),
            self.timestamp.clone(),
        ]
    }

    /// `key: value` lines in [`Self::FIELDS`] order.
    pub fn to_kv_text(&self) -> String {
        Self::FIELDS
            .iter()
            .zip(self.values())
            .map(|(k, v)| format!("{k}: {v}\n"))
            .collect()
    }

    pub fn csv_header() -> String {
        Self::FIELDS.join(",")
    }

    pub fn to_csv_row(&self) -> String {
        self.values().join(",")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn nmi_examples() {
        let t = [0, 0, 1, 1, 2, 2];
        assert!((nmi(&t, &t).unwrap() - 1.0).abs() < 1e-12);
        let swapped = [1, 1, 0, 0, 2, 2];
        assert!((nmi(&swapped, &t).unwrap() - 1.0).abs() < 1e-12);
        assert!(nmi(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap().abs() < 1e-12);
        assert_eq!(nmi(&[0, 0, 0], &[0, 1, 2]).unwrap(), 0.0);
        assert!(nmi(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn nmi_hand_computed() {
        // pred=[0,0,1,1,1], truth=[0,0,0,1,1]
        // H(p)=H(t)=-(0.4 ln 0.4 + 0.6 ln 0.6)
        // I = 0.4 ln(0.4/(0.4*0.6)) + 0.2 ln(0.2/(0.6*0.6)) + 0.4 ln(0.4/(0.6*0.4))
        let h = -(0.4f64 * 0.4f64.ln() + 0.6 * 0.6f64.ln());
        let i =
            0.4 * (0.4f64 / 0.24).ln() + 0.2 * (0.2f64 / 0.36).ln() + 0.4 * (0.4f64 / 0.24).ln();
        let got = nmi(&[0, 0, 1, 1, 1], &[0, 0, 0, 1, 1]).unwrap();
        assert!((got - i / h).abs() < 1e-12);
        let geo = nmi_with(
            &[0, 0, 1, 1, 1],
            &[0, 0, 0, 1, 1],
            NmiNormalization::Geometric,
        )
        .unwrap();
        assert!((geo - i / h).abs() < 1e-12);
    }

    #[test]
    fn acc_examples() {
        assert_eq!(acc(&[2, 2, 0, 0, 1], &[0, 0, 1, 1, 2]).unwrap(), 1.0);
        assert_eq!(acc(&[0, 0, 0, 1], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert!(acc(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn ari_examples() {
        let t = [0, 0, 1, 1, 2];
        assert!((ari(&t, &t).unwrap() - 1.0).abs() < 1e-12);
        let singletons: Vec<usize> = (0..6).collect();
        assert_eq!(ari(&singletons, &[0; 6]).unwrap(), 0.0);
        // pair counting by hand over the 10 pairs of 5 points
        let pred = [0, 0, 1, 1, 1];
        let truth = [0, 0, 0, 1, 1];
        let (mut a, mut b, mut c, mut d) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..5 {
            for j in i + 1..5 {
                match (pred[i] == pred[j], truth[i] == truth[j]) {
                    (true, true) => a += 1.0,
                    (true, false) => b += 1.0,
                    (false, true) => c += 1.0,
                    (false, false) => d += 1.0,
                }
            }
        }
        let n = a + b + c + d;
        let expected_index = (a + b) * (a + c) / n;
        let oracle = (a - expected_index) / (0.5 * ((a + b) + (a + c)) - expected_index);
        assert!((ari(&pred, &truth).unwrap() - oracle).abs() < 1e-12);
        assert!(ari(&[0], &[0]).is_err());
    }

    #[test]
    fn report_serialization() {
        let r = MetricsReport::evaluate(&[0, 1, 1], &[1, 0, 0])
            .unwrap()
            .with_metadata(7, "abc", "2026-01-01T00:00:00Z");
        let kv = r.to_kv_text();
        assert!(kv.starts_with("nmi: 1.000000\nacc: 1.000000\nari: 1.000000\nn: 3\n"));
        assert_eq!(
            MetricsReport::csv_header(),
            "nmi,acc,ari,n,k_pred,k_true,seed,config_hash,timestamp"
        );
        assert_eq!(
            r.to_csv_row(),
            "1.000000,1.000000,1.000000,3,2,2,7,abc,2026-01-01T00:00:00Z"
        );
    }

    #[test]
    fn entropy_of_cluster_sizes() {
        assert!((cluster_size_entropy(&[0, 1, 2, 3], 4) - 4f64.ln()).abs() < 1e-12);
        assert_eq!(cluster_size_entropy(&[2, 2, 2], 4), 0.0);
    }

    fn relabel(labels: &[usize], perm: &[usize]) -> Vec<usize> {
        labels.iter().map(|&l| perm[l]).collect()
    }

    proptest! {
        #[test]
        fn metrics_invariant_under_relabeling(
            pred in prop::collection::vec(0usize..5, 2..40),
            seed in any::<u64>(),
        ) {
            let n = pred.len();
            let truth: Vec<usize> = (0..n).map(|i| ((i as u64).wrapping_mul(seed | 1) >> 3) as usize % 4).collect();
            let perm = [3, 0, 4, 1, 2];
            let p2 = relabel(&pred, &perm);
            prop_assert!((nmi(&pred, &truth).unwrap() - nmi(&p2, &truth).unwrap()).abs() < 1e-12);
            prop_assert!((acc(&pred, &truth).unwrap() - acc(&p2, &truth).unwrap()).abs() < 1e-12);
            prop_assert!((ari(&pred, &truth).unwrap() - ari(&p2, &truth).unwrap()).abs() < 1e-12);
            let t2 = relabel(&truth, &perm);
            prop_assert!((acc(&pred, &truth).unwrap() - acc(&pred, &t2).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn acc_lower_bounds(
            pred in prop::collection::vec(0usize..4, 1..50),
            truth_seed in prop::collection::vec(0usize..3, 50),
        ) {
            let truth = &truth_seed[..pred.len()];
            let n = pred.len() as f64;
            let table = Contingency::new(&pred, truth).unwrap();
            let best_cell = *table.counts.iter().flatten().max().unwrap() as f64 / n;
            let a = acc(&pred, truth).unwrap();
            prop_assert!(a + 1e-12 >= best_cell);
            prop_assert!((0.0..=1.0).contains(&a));
            // a constant prediction maps onto the majority class
            let majority = *table.col_sums.iter().max().unwrap() as f64 / n;
            let constant = vec![0usize; pred.len()];
            prop_assert!((acc(&constant, truth).unwrap() - majority).abs() < 1e-12);
            let m = nmi(&pred, truth).unwrap();
            prop_assert!((0.0..=1.0).contains(&m));
        }
    }
}

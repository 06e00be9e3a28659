#![allow(dead_code)]

use clusterjack_core::link::logistic;
use clusterjack_core::{Dataset, Design, GroupedRow};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Observation-level logit data: a constant, `k - 1` regressors (normal and
/// binary in turn, each with a cluster-level shift) and a cluster random
/// effect in the index.
pub fn logit_dataset(seed: u64, sizes: &[usize], k: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta: Vec<f64> = (0..k).map(|j| if j == 0 { -0.3 } else { 0.4 * (-1f64).powi(j as i32) }).collect();
    let (mut y, mut x, mut cl) = (Vec::new(), Vec::new(), Vec::new());
    for (g, &n) in sizes.iter().enumerate() {
        let shift: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(StandardNormal) * 0.5).collect();
        let effect = rng.sample::<f64, _>(StandardNormal) * 0.3;
        for _ in 0..n {
            let mut row = vec![1.0];
            for j in 1..k {
                let v = if j % 2 == 1 {
                    rng.sample::<f64, _>(StandardNormal) + shift[j]
                } else if rng.random::<f64>() < logistic(shift[j]) {
                    1.0
                } else {
                    0.0
                };
                row.push(v);
            }
            let idx: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + effect;
            y.push(if rng.random::<f64>() < logistic(idx) { 1.0 } else { 0.0 });
            x.extend(row);
            cl.push(g);
        }
    }
    let names = (0..k).map(|j| if j == 0 { "_cons".to_string() } else { format!("x{j}") }).collect();
    let labels = (0..sizes.len()).map(|g| format!("c{g}")).collect();
    Dataset::from_parts("y", y, names, x, "cluster", cl, labels).expect("valid fixture")
}

/// The raw rows of `d` with clusters in `keep` only, rebuilt from scratch.
pub fn subset(d: &Dataset, keep: impl Fn(usize) -> bool) -> Design {
    let g = d.n_clusters();
    let mut clusters: Vec<Vec<GroupedRow>> = vec![Vec::new(); g];
    for i in 0..d.n_obs() {
        clusters[d.cluster()[i]].push(GroupedRow { x: d.row(i).to_vec(), trials: 1.0, successes: d.y()[i] });
    }
    let kept = clusters.into_iter().enumerate().filter(|(c, _)| keep(*c)).map(|(_, v)| v).collect();
    Design::from_clusters(d.names().to_vec(), kept).expect("nonempty subset")
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

pub fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    max_abs(&(a - b)) / max_abs(b).max(f64::MIN_POSITIVE)
}

pub fn unit(k: usize, j: usize) -> DVector<f64> {
    let mut a = DVector::zeros(k);
    a[j] = 1.0;
    a
}

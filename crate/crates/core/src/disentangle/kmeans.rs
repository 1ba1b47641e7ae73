use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const MAX_ITERS: usize = 100;
const SHIFT_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub centers: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest center; ties go to the lowest index.
pub fn nearest(x: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn plus_plus(samples: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = samples.len();
    let mut centers = vec![samples[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = samples.iter().map(|x| sq_dist(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let r = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > r {
                    idx = i;
                    break;
                }
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        let c = samples[pick].clone();
        for (d, x) in d2.iter_mut().zip(samples) {
            *d = d.min(sq_dist(x, &c));
        }
        centers.push(c);
    }
    centers
}

/// k-means++ seeded Lloyd iterations. Empty clusters keep their center.
pub fn kmeans(samples: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::invalid("cluster count must be at least 1"));
    }
    if samples.len() < k {
        return Err(Error::invalid(format!("{} samples cannot form {k} clusters", samples.len())));
    }
    let dim = samples[0].len();
    if samples.iter().any(|s| s.len() != dim || s.iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid("samples must be finite and equally sized"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = plus_plus(samples, k, &mut rng);
    let mut labels = vec![0; samples.len()];
    let mut iterations = 0;
    for _ in 0..MAX_ITERS {
        iterations += 1;
        for (l, x) in labels.iter_mut().zip(samples) {
            *l = nearest(x, &centers).0;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&l, x) in labels.iter().zip(samples) {
            counts[l] += 1;
            sums[l].iter_mut().zip(x).for_each(|(s, v)| *s += v);
        }
        let mut shift: f64 = 0.0;
        for ((c, s), &n) in centers.iter_mut().zip(sums).zip(&counts) {
            if n == 0 {
                continue;
            }
            let new: Vec<f64> = s.into_iter().map(|v| v / n as f64).collect();
            shift = shift.max(sq_dist(c, &new).sqrt());
            *c = new;
        }
        if shift < SHIFT_TOL {
            break;
        }
    }
    let mut inertia = 0.0;
    for (l, x) in labels.iter_mut().zip(samples) {
        let (k, d) = nearest(x, &centers);
        *l = k;
        inertia += d;
    }
    Ok(KMeans {
        centers,
        labels,
        inertia,
        iterations,
    })
}

/// Sum of squared distances of samples to their assigned label means.
pub fn assignment_inertia(samples: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let dim = samples[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (&l, x) in labels.iter().zip(samples) {
        counts[l] += 1;
        sums[l].iter_mut().zip(x).for_each(|(s, v)| *s += v);
    }
    let means: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &n)| s.into_iter().map(|v| v / n.max(1) as f64).collect())
        .collect();
    labels.iter().zip(samples).map(|(&l, x)| sq_dist(x, &means[l])).sum()
}

//! Trainable feature map and the clustering consistency loss: samples are
//! pulled toward their cluster center, same-label pairs attract and
//! different-label pairs repel up to a hinge margin, all in mapped space.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::disentangle::kmeans::nearest;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

/// `f(x) = act(W x + b)` with `W` stored row-major `out × in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl FeatureMap {
    pub fn identity(dim: usize) -> Self {
        let mut weight = vec![0.0; dim * dim];
        (0..dim).for_each(|i| weight[i * dim + i] = 1.0);
        FeatureMap {
            in_dim: dim,
            out_dim: dim,
            weight,
            bias: vec![0.0; dim],
            activation: Activation::Identity,
        }
    }

    /// Square tanh map initialized at the identity plus small seeded noise.
    pub fn near_identity(dim: usize, noise: f64, seed: u64) -> Self {
        let mut m = FeatureMap::identity(dim);
        m.activation = Activation::Tanh;
        if noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = Normal::new(0.0, noise).expect("finite std");
            m.weight.iter_mut().for_each(|w| *w += n.sample(&mut rng));
        }
        m
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.out_dim)
            .map(|o| {
                let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
                let z = self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                match self.activation {
                    Activation::Tanh => z.tanh(),
                    Activation::Identity => z,
                }
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weight.clone();
        p.extend_from_slice(&self.bias);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let nw = self.weight.len();
        self.weight.copy_from_slice(&p[..nw]);
        self.bias.copy_from_slice(&p[nw..]);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    /// Centers in mapped space.
    pub centers: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub map: FeatureMap,
}

impl ClusterModel {
    pub fn new(k: usize, labels: Vec<usize>, map: FeatureMap) -> Result<Self> {
        if k < 1 {
            return Err(Error::invalid("cluster count must be at least 1"));
        }
        if labels.iter().any(|&l| l >= k) {
            return Err(Error::invalid("label out of range"));
        }
        Ok(ClusterModel {
            k,
            centers: Vec::new(),
            labels,
            map,
        })
    }

    /// Recomputes centers as label means of the mapped features.
    pub fn update_centers(&mut self, features: &[Vec<f64>]) {
        let mapped: Vec<Vec<f64>> = features.iter().map(|x| self.map.apply(x)).collect();
        self.centers = label_means(&mapped, &self.labels, self.k).0;
    }

    /// Assigns every sample to the nearest mapped-space center.
    pub fn relabel(&mut self, features: &[Vec<f64>]) {
        self.update_centers(features);
        self.labels = features.iter().map(|x| nearest(&self.map.apply(x), &self.centers).0).collect();
    }
}

fn label_means(f: &[Vec<f64>], labels: &[usize], k: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let dim = f.first().map_or(0, |v| v.len());
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (&l, v) in labels.iter().zip(f) {
        counts[l] += 1;
        sums[l].iter_mut().zip(v).for_each(|(s, x)| *s += x);
    }
    let means = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &n)| if n == 0 { s } else { s.into_iter().map(|x| x / n as f64).collect() })
        .collect();
    (means, counts)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterLoss {
    pub loss: f64,
    /// Gradient w.r.t. `FeatureMap::params()`.
    pub grad: Vec<f64>,
    pub warnings: Vec<String>,
}

/// All `i < j` pairs when there are at most `max_pairs`, otherwise
/// `max_pairs` seeded draws of distinct index pairs.
pub fn sample_pairs(n: usize, max_pairs: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let total = n * n.saturating_sub(1) / 2;
    if total <= max_pairs {
        return (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    }
    (0..max_pairs)
        .map(|_| {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            (i.min(j), i.max(j))
        })
        .collect()
}

const NORM_EPS: f64 = 1e-12;

/// Loss value and analytic parameter gradient. Centers are recomputed from
/// the current map and receive gradient as functions of it.
pub fn clustering_loss(
    map: &FeatureMap,
    features: &[Vec<f64>],
    labels: &[usize],
    k: usize,
    margin: f64,
    pairs: &[(usize, usize)],
) -> Result<ClusterLoss> {
    if !(margin > 0.0) {
        return Err(Error::invalid("margin must be positive"));
    }
    if features.len() != labels.len() {
        return Err(Error::invalid("one label per feature required"));
    }
    let n = features.len();
    let z: Vec<Vec<f64>> = features
        .iter()
        .map(|x| {
            let mut id = map.clone();
            id.activation = Activation::Identity;
            id.apply(x)
        })
        .collect();
    let f: Vec<Vec<f64>> = z
        .iter()
        .map(|zi| match map.activation {
            Activation::Tanh => zi.iter().map(|v| v.tanh()).collect(),
            Activation::Identity => zi.clone(),
        })
        .collect();
    let (centers, counts) = label_means(&f, labels, k);
    let mut warnings = Vec::new();
    for (c, &cnt) in counts.iter().enumerate() {
        if cnt == 0 {
            warnings.push(format!("cluster {c} is empty; its center term is skipped"));
        }
    }

    let dim = map.out_dim;
    let mut g = vec![vec![0.0; dim]; n];
    let mut loss = 0.0;

    // Center terms. c is the member mean, so every member also receives
    // minus the mean unit residual through c.
    let mut ubar = vec![vec![0.0; dim]; k];
    for i in 0..n {
        let l = labels[i];
        let d: Vec<f64> = f[i].iter().zip(&centers[l]).map(|(a, b)| a - b).collect();
        let r = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        loss += r;
        if r > NORM_EPS {
            for (q, v) in d.iter().enumerate() {
                g[i][q] += v / r;
                ubar[l][q] += v / r;
            }
        }
    }
    for i in 0..n {
        let l = labels[i];
        let cnt = counts[l] as f64;
        for q in 0..dim {
            g[i][q] -= ubar[l][q] / cnt;
        }
    }

    for &(i, j) in pairs {
        let d: Vec<f64> = f[i].iter().zip(&f[j]).map(|(a, b)| a - b).collect();
        let r = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        let sign = if labels[i] == labels[j] {
            loss += r;
            1.0
        } else if r < margin {
            loss += margin - r;
            -1.0
        } else {
            continue;
        };
        if r > NORM_EPS {
            for (q, v) in d.iter().enumerate() {
                g[i][q] += sign * v / r;
                g[j][q] -= sign * v / r;
            }
        }
    }

    let mut grad = vec![0.0; map.num_params()];
    let nw = map.weight.len();
    for i in 0..n {
        for o in 0..dim {
            let dz = match map.activation {
                Activation::Tanh => g[i][o] * (1.0 - f[i][o] * f[i][o]),
                Activation::Identity => g[i][o],
            };
            if dz == 0.0 {
                continue;
            }
            let row = &mut grad[o * map.in_dim..(o + 1) * map.in_dim];
            row.iter_mut().zip(&features[i]).for_each(|(gw, x)| *gw += dz * x);
            grad[nw + o] += dz;
        }
    }
    Ok(ClusterLoss { loss, grad, warnings })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefineConfig {
    pub steps: usize,
    /// Step size applied to the gradient of the per-term mean loss.
    pub step_size: f64,
    pub margin: f64,
    pub max_pairs: usize,
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            steps: 200,
            step_size: 0.1,
            margin: 1.0,
            max_pairs: 4096,
            seed: 7,
        }
    }
}

/// Plain gradient descent on the feature map with fixed labels. Returns the
/// loss before each step, normalized by the number of terms.
pub fn refine(model: &mut ClusterModel, features: &[Vec<f64>], cfg: &RefineConfig) -> Result<(Vec<f64>, Vec<String>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::with_capacity(cfg.steps);
    let mut warnings = Vec::new();
    for _ in 0..cfg.steps {
        let pairs = sample_pairs(features.len(), cfg.max_pairs, &mut rng);
        let out = clustering_loss(&model.map, features, &model.labels, model.k, cfg.margin, &pairs)?;
        if !out.loss.is_finite() {
            return Err(Error::Numerical("clustering loss is not finite".into()));
        }
        for w in out.warnings {
            if !warnings.contains(&w) {
                warnings.push(w);
            }
        }
        let norm = (features.len() + pairs.len()) as f64;
        history.push(out.loss / norm);
        let mut p = model.map.params();
        p.iter_mut().zip(&out.grad).for_each(|(v, g)| *v -= cfg.step_size * g / norm);
        model.map.set_params(&p);
    }
    model.update_centers(features);
    Ok((history, warnings))
}

//! Per-pixel overlap probability ρ from a two-hidden-layer tanh perceptron
//! over normalized pixel coordinates, normalized time and a pose summary.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::CameraModel;
use crate::scene::sigmoid;

pub const INPUTS: usize = 9;
pub const HIDDEN: usize = 32;
/// Rows per reduction chunk. Fixed, so sums do not depend on thread count.
const CHUNK_ROWS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapField {
    pub width: usize,
    pub height: usize,
    /// Time range mapped to `[-1, 1]`, microseconds.
    pub t_range: (f64, f64),
    /// `HIDDEN × INPUTS`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `HIDDEN × HIDDEN`.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: f64,
}

/// Gradient with the same layout as the field's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct OverlapGrad {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: f64,
}

impl OverlapGrad {
    fn zeros() -> Self {
        OverlapGrad {
            w1: vec![0.0; HIDDEN * INPUTS],
            b1: vec![0.0; HIDDEN],
            w2: vec![0.0; HIDDEN * HIDDEN],
            b2: vec![0.0; HIDDEN],
            w3: vec![0.0; HIDDEN],
            b3: 0.0,
        }
    }

    fn add(&mut self, o: &OverlapGrad) {
        let acc = |a: &mut Vec<f64>, b: &Vec<f64>| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        acc(&mut self.w1, &o.w1);
        acc(&mut self.b1, &o.b1);
        acc(&mut self.w2, &o.w2);
        acc(&mut self.b2, &o.b2);
        acc(&mut self.w3, &o.w3);
        self.b3 += o.b3;
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(OverlapField::num_params());
        v.extend_from_slice(&self.w1);
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w2);
        v.extend_from_slice(&self.b2);
        v.extend_from_slice(&self.w3);
        v.push(self.b3);
        v
    }
}

struct Activations {
    h1: [f64; HIDDEN],
    h2: [f64; HIDDEN],
    rho: f64,
}

impl OverlapField {
    /// Hidden layers get seeded Glorot-uniform weights; the output layer is
    /// zero so ρ starts at ½ everywhere.
    pub fn new(width: usize, height: usize, t_range: (f64, f64), seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |fan_in: usize, fan_out: usize, n: usize| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let u = Uniform::new_inclusive(-a, a).expect("finite bound");
            (0..n).map(|_| u.sample(&mut rng)).collect::<Vec<f64>>()
        };
        let w1 = glorot(INPUTS, HIDDEN, HIDDEN * INPUTS);
        let w2 = glorot(HIDDEN, HIDDEN, HIDDEN * HIDDEN);
        OverlapField {
            width,
            height,
            t_range,
            w1,
            b1: vec![0.0; HIDDEN],
            w2,
            b2: vec![0.0; HIDDEN],
            w3: vec![0.0; HIDDEN],
            b3: 0.0,
        }
    }

    pub const fn num_params() -> usize {
        HIDDEN * INPUTS + HIDDEN + HIDDEN * HIDDEN + HIDDEN + HIDDEN + 1
    }

    pub fn params(&self) -> Vec<f64> {
        OverlapGrad {
            w1: self.w1.clone(),
            b1: self.b1.clone(),
            w2: self.w2.clone(),
            b2: self.b2.clone(),
            w3: self.w3.clone(),
            b3: self.b3,
        }
        .to_vec()
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let mut o = 0;
        let mut take = |dst: &mut Vec<f64>| {
            let n = dst.len();
            dst.copy_from_slice(&p[o..o + n]);
            o += n;
        };
        take(&mut self.w1);
        take(&mut self.b1);
        take(&mut self.w2);
        take(&mut self.b2);
        take(&mut self.w3);
        self.b3 = p[o];
    }

    fn normalized_time(&self, t_us: f64) -> f64 {
        let (a, b) = self.t_range;
        if b > a {
            2.0 * (t_us - a) / (b - a) - 1.0
        } else {
            0.0
        }
    }

    fn norm_xy(&self, x: usize, y: usize) -> (f64, f64) {
        let nx = if self.width > 1 {
            2.0 * x as f64 / (self.width - 1) as f64 - 1.0
        } else {
            0.0
        };
        let ny = if self.height > 1 {
            2.0 * y as f64 / (self.height - 1) as f64 - 1.0
        } else {
            0.0
        };
        (nx, ny)
    }

    fn inputs(&self, cam: &CameraModel, t_us: f64) -> [f64; INPUTS] {
        let p = cam.pose_summary();
        [0.0, 0.0, self.normalized_time(t_us), p[0], p[1], p[2], p[3], p[4], p[5]]
    }

    /// First-layer pre-activation without the pixel-coordinate terms, shared by
    /// every pixel of a render.
    fn shared_preact(&self, input: &[f64; INPUTS]) -> [f64; HIDDEN] {
        let mut a = [0.0; HIDDEN];
        for (j, aj) in a.iter_mut().enumerate() {
            let row = &self.w1[j * INPUTS..(j + 1) * INPUTS];
            *aj = self.b1[j] + (2..INPUTS).map(|i| row[i] * input[i]).sum::<f64>();
        }
        a
    }

    fn eval(&self, shared: &[f64; HIDDEN], nx: f64, ny: f64) -> Activations {
        let mut h1 = [0.0; HIDDEN];
        for j in 0..HIDDEN {
            h1[j] = (shared[j] + self.w1[j * INPUTS] * nx + self.w1[j * INPUTS + 1] * ny).tanh();
        }
        let mut h2 = [0.0; HIDDEN];
        for (j, h) in h2.iter_mut().enumerate() {
            let row = &self.w2[j * HIDDEN..(j + 1) * HIDDEN];
            *h = (self.b2[j] + row.iter().zip(&h1).map(|(w, v)| w * v).sum::<f64>()).tanh();
        }
        let z = self.b3 + self.w3.iter().zip(&h2).map(|(w, v)| w * v).sum::<f64>();
        Activations { h1, h2, rho: sigmoid(z) }
    }

    /// ρ for every pixel of a `width × height` render.
    pub fn rho(&self, cam: &CameraModel, t_us: f64) -> Vec<f64> {
        let input = self.inputs(cam, t_us);
        let shared = self.shared_preact(&input);
        let w = self.width;
        let mut out = vec![0.0; w * self.height];
        out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            for (x, r) in row.iter_mut().enumerate() {
                let (nx, ny) = self.norm_xy(x, y);
                *r = self.eval(&shared, nx, ny).rho;
            }
        });
        out
    }

    /// Backpropagates `d_rho` (one value per pixel) to the parameters.
    pub fn backward(&self, cam: &CameraModel, t_us: f64, d_rho: &[f64]) -> OverlapGrad {
        let input = self.inputs(cam, t_us);
        let shared = self.shared_preact(&input);
        let w = self.width;
        let partials: Vec<OverlapGrad> = d_rho
            .par_chunks(w * CHUNK_ROWS)
            .enumerate()
            .map(|(ci, chunk)| {
                let mut g = OverlapGrad::zeros();
                for (p, &dr) in chunk.iter().enumerate() {
                    if dr == 0.0 {
                        continue;
                    }
                    let y = ci * CHUNK_ROWS + p / w;
                    let x = p % w;
                    let (nx, ny) = self.norm_xy(x, y);
                    let a = self.eval(&shared, nx, ny);
                    let dz = dr * a.rho * (1.0 - a.rho);
                    g.b3 += dz;
                    let mut da2 = [0.0; HIDDEN];
                    for j in 0..HIDDEN {
                        g.w3[j] += dz * a.h2[j];
                        da2[j] = dz * self.w3[j] * (1.0 - a.h2[j] * a.h2[j]);
                    }
                    let mut dh1 = [0.0; HIDDEN];
                    for j in 0..HIDDEN {
                        let d = da2[j];
                        if d == 0.0 {
                            continue;
                        }
                        g.b2[j] += d;
                        let row = &self.w2[j * HIDDEN..(j + 1) * HIDDEN];
                        let grow = &mut g.w2[j * HIDDEN..(j + 1) * HIDDEN];
                        for i in 0..HIDDEN {
                            grow[i] += d * a.h1[i];
                            dh1[i] += d * row[i];
                        }
                    }
                    let mut inp = input;
                    inp[0] = nx;
                    inp[1] = ny;
                    for j in 0..HIDDEN {
                        let d = dh1[j] * (1.0 - a.h1[j] * a.h1[j]);
                        g.b1[j] += d;
                        let grow = &mut g.w1[j * INPUTS..(j + 1) * INPUTS];
                        for i in 0..INPUTS {
                            grow[i] += d * inp[i];
                        }
                    }
                }
                g
            })
            .collect();
        let mut total = OverlapGrad::zeros();
        for p in &partials {
            total.add(p);
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn cam() -> CameraModel {
        CameraModel::new(10.0, 10.0, 3.5, 2.5).looking_forward_from([0.1, -0.2, 0.05])
    }

    #[test]
    fn fresh_field_is_one_half() {
        let f = OverlapField::new(8, 6, (0.0, 1e6), 3);
        assert!(f.rho(&cam(), 2e5).iter().all(|&r| r == 0.5));
    }

    #[test]
    fn rho_stays_inside_unit_interval() {
        let mut f = OverlapField::new(8, 6, (0.0, 1e6), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p: Vec<f64> = (0..OverlapField::num_params()).map(|_| rng.random_range(-3.0..3.0)).collect();
        f.set_params(&p);
        assert!(f.rho(&cam(), 7e5).iter().all(|&r| r > 0.0 && r < 1.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut f = OverlapField::new(7, 5, (0.0, 1e6), 9);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p: Vec<f64> = (0..OverlapField::num_params()).map(|_| rng.random_range(-0.6..0.6)).collect();
        f.set_params(&p);
        let cam = cam();
        let t = 3.3e5;
        let wts: Vec<f64> = (0..35).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.5).collect();
        let loss = |f: &OverlapField| f.rho(&cam, t).iter().zip(&wts).map(|(a, b)| a * b).sum::<f64>();
        let g = f.backward(&cam, t, &wts).to_vec();
        let h = 1e-5;
        for i in 0..p.len() {
            let mut a = f.clone();
            let mut pa = p.clone();
            pa[i] += h;
            a.set_params(&pa);
            let mut b = f.clone();
            let mut pb = p.clone();
            pb[i] -= h;
            b.set_params(&pb);
            let fd = (loss(&a) - loss(&b)) / (2.0 * h);
            let rel = (fd - g[i]).abs() / fd.abs().max(1e-6);
            assert!(rel < 1e-4 || (fd - g[i]).abs() < 1e-9, "param {i}: fd {fd} analytic {}", g[i]);
        }
    }
}

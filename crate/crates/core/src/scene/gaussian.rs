//! Gaussian primitives and the small amount of differentiable geometry they
//! need: quaternion rotation, log-scale covariance and logistic opacity.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

/// Static Gaussian: world mean, rotation quaternion `[w, x, y, z]`, log-scales,
/// opacity logit and RGB color.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaussian3D {
    pub mu: [f64; 3],
    pub q: [f64; 4],
    pub s: [f64; 3],
    pub sigma: f64,
    pub c: [f64; 3],
}

/// Number of scalar parameters of a [`Gaussian3D`].
pub const G3_LEN: usize = 14;

impl Gaussian3D {
    pub fn isotropic(mu: [f64; 3], scale: f64, opacity: f64, c: [f64; 3]) -> Self {
        Gaussian3D {
            mu,
            q: [1.0, 0.0, 0.0, 0.0],
            s: [scale.ln(); 3],
            sigma: logit(opacity),
            c,
        }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.sigma)
    }

    pub fn scales(&self) -> [f64; 3] {
        self.s.map(f64::exp)
    }

    pub fn max_scale(&self) -> f64 {
        self.scales().into_iter().fold(0.0, f64::max)
    }

    pub fn mean(&self) -> Vector3<f64> {
        Vector3::from(self.mu)
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        quat_to_matrix(&normalized(&self.q))
    }

    /// World covariance `R diag(exp(2s)) Rᵀ`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation();
        let d = Matrix3::from_diagonal(&Vector3::from(self.s.map(|v| (2.0 * v).exp())));
        r * d * r.transpose()
    }

    pub fn normalize_rotation(&mut self) {
        self.q = normalized(&self.q);
    }

    pub fn to_array(&self) -> [f64; G3_LEN] {
        let mut a = [0.0; G3_LEN];
        a[0..3].copy_from_slice(&self.mu);
        a[3..7].copy_from_slice(&self.q);
        a[7..10].copy_from_slice(&self.s);
        a[10] = self.sigma;
        a[11..14].copy_from_slice(&self.c);
        a
    }

    pub fn from_array(a: &[f64]) -> Self {
        Gaussian3D {
            mu: [a[0], a[1], a[2]],
            q: [a[3], a[4], a[5], a[6]],
            s: [a[7], a[8], a[9]],
            sigma: a[10],
            c: [a[11], a[12], a[13]],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Dynamic Gaussian. `g.mu` is an offset from the owning object's anchor,
/// `knots` add a time-varying offset interpolated between trajectory points,
/// and the temporal window `exp(-(t - t_c)² / (2 exp(t_s)²))` scales opacity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaussian4D {
    #[serde(flatten)]
    pub g: Gaussian3D,
    /// Temporal center, microseconds.
    pub t_c: f64,
    /// Log temporal scale, log-microseconds.
    pub t_s: f64,
    pub knots: Vec<[f64; 3]>,
}

impl Gaussian4D {
    pub fn temporal_weight(&self, t_us: f64) -> f64 {
        let sd = self.t_s.exp();
        let d = (t_us - self.t_c) / sd;
        (-0.5 * d * d).exp()
    }

    /// Derivatives of the temporal weight with respect to `t_c` and `t_s`.
    pub fn temporal_weight_grad(&self, t_us: f64) -> (f64, f64, f64) {
        let sd = self.t_s.exp();
        let diff = t_us - self.t_c;
        let w = (-0.5 * diff * diff / (sd * sd)).exp();
        let d_tc = w * diff / (sd * sd);
        let d_ts = w * diff * diff / (sd * sd);
        (w, d_tc, d_ts)
    }

    pub fn len_params(&self) -> usize {
        G3_LEN + 2 + 3 * self.knots.len()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len_params());
        v.extend_from_slice(&self.g.to_array());
        v.push(self.t_c);
        v.push(self.t_s);
        for k in &self.knots {
            v.extend_from_slice(k);
        }
        v
    }

    pub fn set_from(&mut self, v: &[f64]) {
        self.g = Gaussian3D::from_array(&v[..G3_LEN]);
        self.t_c = v[G3_LEN];
        self.t_s = v[G3_LEN + 1];
        for (i, k) in self.knots.iter_mut().enumerate() {
            let o = G3_LEN + 2 + 3 * i;
            *k = [v[o], v[o + 1], v[o + 2]];
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }
}

pub fn normalized(q: &[f64; 4]) -> [f64; 4] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n == 0.0 {
        [1.0, 0.0, 0.0, 0.0]
    } else {
        q.map(|v| v / n)
    }
}

/// Rotation matrix of a unit quaternion `[w, x, y, z]`.
pub fn quat_to_matrix(q: &[f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = *q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls `dL/dR` back to the raw (possibly unnormalized) quaternion.
pub fn quat_backward(q: &[f64; 4], d_r: &Matrix3<f64>) -> [f64; 4] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = normalized(q);
    let g = |m: Matrix3<f64>| m.component_mul(d_r).sum();
    let dw = g(Matrix3::new(0.0, -2.0 * z, 2.0 * y, 2.0 * z, 0.0, -2.0 * x, -2.0 * y, 2.0 * x, 0.0));
    let dx = g(Matrix3::new(
        0.0,
        2.0 * y,
        2.0 * z,
        2.0 * y,
        -4.0 * x,
        -2.0 * w,
        2.0 * z,
        2.0 * w,
        -4.0 * x,
    ));
    let dy = g(Matrix3::new(
        -4.0 * y,
        2.0 * x,
        2.0 * w,
        2.0 * x,
        0.0,
        2.0 * z,
        -2.0 * w,
        2.0 * z,
        -4.0 * y,
    ));
    let dz = g(Matrix3::new(
        -4.0 * z,
        -2.0 * w,
        2.0 * x,
        2.0 * w,
        -4.0 * z,
        2.0 * y,
        2.0 * x,
        2.0 * y,
        0.0,
    ));
    let gq = [dw, dx, dy, dz];
    if n == 0.0 {
        return gq;
    }
    let qh = [w, x, y, z];
    let dot: f64 = gq.iter().zip(&qh).map(|(a, b)| a * b).sum();
    [0, 1, 2, 3].map(|i| (gq[i] - qh[i] * dot) / n)
}

/// Pulls `dL/dΣ` (full 3×3 convention) back to the quaternion and log-scales.
pub fn covariance_backward(g: &Gaussian3D, d_cov: &Matrix3<f64>) -> ([f64; 4], [f64; 3]) {
    let r = g.rotation();
    let dvec = Vector3::from(g.s.map(|v| (2.0 * v).exp()));
    let d = Matrix3::from_diagonal(&dvec);
    let d_r = d_cov * r * d + d_cov.transpose() * r * d;
    let m = r.transpose() * d_cov * r;
    let ds = [0, 1, 2].map(|i| m[(i, i)] * 2.0 * dvec[i]);
    (quat_backward(&g.q, &d_r), ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cov_entry_loss(g: &Gaussian3D, w: &Matrix3<f64>) -> f64 {
        g.covariance().component_mul(w).sum()
    }

    #[test]
    fn identity_quaternion_gives_identity() {
        assert_eq!(quat_to_matrix(&[1.0, 0.0, 0.0, 0.0]), Matrix3::identity());
    }

    #[test]
    fn rotation_is_orthonormal() {
        let r = quat_to_matrix(&normalized(&[0.3, -0.5, 0.7, 0.2]));
        assert!((r * r.transpose() - Matrix3::identity()).abs().max() < 1e-12);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn covariance_gradient_matches_finite_differences() {
        let g = Gaussian3D {
            mu: [0.0; 3],
            q: [0.9, 0.2, -0.3, 0.4],
            s: [-0.5, 0.1, -1.2],
            sigma: 0.0,
            c: [0.0; 3],
        };
        let w = Matrix3::new(0.3, -1.0, 0.2, 0.5, 0.7, -0.4, 1.1, 0.05, -0.6);
        let (dq, ds) = covariance_backward(&g, &w);
        let h = 1e-6;
        for i in 0..4 {
            let (mut a, mut b) = (g.clone(), g.clone());
            a.q[i] += h;
            b.q[i] -= h;
            let fd = (cov_entry_loss(&a, &w) - cov_entry_loss(&b, &w)) / (2.0 * h);
            assert!((fd - dq[i]).abs() < 1e-7 * (1.0 + fd.abs()), "q{i}: {fd} vs {}", dq[i]);
        }
        for i in 0..3 {
            let (mut a, mut b) = (g.clone(), g.clone());
            a.s[i] += h;
            b.s[i] -= h;
            let fd = (cov_entry_loss(&a, &w) - cov_entry_loss(&b, &w)) / (2.0 * h);
            assert!((fd - ds[i]).abs() < 1e-7 * (1.0 + fd.abs()), "s{i}: {fd} vs {}", ds[i]);
        }
    }

    #[test]
    fn temporal_weight_values() {
        let g = Gaussian4D {
            g: Gaussian3D::isotropic([0.0; 3], 0.1, 0.5, [0.5; 3]),
            t_c: 1000.0,
            t_s: 200f64.ln(),
            knots: vec![],
        };
        assert_eq!(g.temporal_weight(1000.0), 1.0);
        assert!((g.temporal_weight(1200.0) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((g.temporal_weight(800.0) - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn temporal_weight_gradient() {
        let g = Gaussian4D {
            g: Gaussian3D::isotropic([0.0; 3], 0.1, 0.5, [0.5; 3]),
            t_c: 1000.0,
            t_s: 300f64.ln(),
            knots: vec![],
        };
        let t = 1234.0;
        let (_, dtc, dts) = g.temporal_weight_grad(t);
        let h = 1e-4;
        let mut a = g.clone();
        a.t_c += h;
        let mut b = g.clone();
        b.t_c -= h;
        let fd = (a.temporal_weight(t) - b.temporal_weight(t)) / (2.0 * h);
        assert!((fd - dtc).abs() < 1e-9);
        let mut a = g.clone();
        a.t_s += h;
        let mut b = g.clone();
        b.t_s -= h;
        let fd = (a.temporal_weight(t) - b.temporal_weight(t)) / (2.0 * h);
        assert!((fd - dts).abs() < 1e-8);
    }

    #[test]
    fn array_round_trip() {
        let g = Gaussian3D {
            mu: [1.0, 2.0, 3.0],
            q: [0.5, 0.5, 0.5, 0.5],
            s: [-1.0, -2.0, -3.0],
            sigma: 0.3,
            c: [0.1, 0.2, 0.3],
        };
        assert_eq!(Gaussian3D::from_array(&g.to_array()), g);
    }
}

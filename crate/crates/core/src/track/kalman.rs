//! Constant-velocity Kalman filter over image-plane position. State is
//! `(u, v, u̇, v̇)` in pixels and pixels per second.

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Matrix4x2, Vector2, Vector4};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrackState {
    pub x: Vector4<f64>,
    pub p: Matrix4<f64>,
    pub t_us: u64,
}

impl TrackState {
    pub fn new(u: f64, v: f64, pos_std: f64, vel_std: f64, t_us: u64) -> Self {
        let (a, b) = (pos_std * pos_std, vel_std * vel_std);
        TrackState {
            x: Vector4::new(u, v, 0.0, 0.0),
            p: Matrix4::from_diagonal(&Vector4::new(a, a, b, b)),
            t_us,
        }
    }

    pub fn position(&self) -> (f64, f64) {
        (self.x[0], self.x[1])
    }

    pub fn velocity(&self) -> (f64, f64) {
        (self.x[2], self.x[3])
    }

    pub fn speed(&self) -> f64 {
        self.x[2].hypot(self.x[3])
    }

    /// Covariance flattened row-major.
    pub fn p_flat(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = self.p[(r, c)];
            }
        }
        out
    }
}

pub fn transition(dt: f64) -> Matrix4<f64> {
    let mut f = Matrix4::identity();
    f[(0, 2)] = dt;
    f[(1, 3)] = dt;
    f
}

/// White-acceleration process noise with acceleration std `q` (pixels/s²).
pub fn process_noise(dt: f64, q: f64) -> Matrix4<f64> {
    let s = q * q;
    let (a, b, c) = (s * dt.powi(3) / 3.0, s * dt * dt / 2.0, s * dt);
    let mut m = Matrix4::zeros();
    for i in 0..2 {
        m[(i, i)] = a;
        m[(i, i + 2)] = b;
        m[(i + 2, i)] = b;
        m[(i + 2, i + 2)] = c;
    }
    m
}

pub fn ekf_predict(state: &TrackState, dt: f64, q: f64) -> Result<TrackState> {
    if !(dt > 0.0) {
        return Err(Error::invalid("prediction step must be positive"));
    }
    let f = transition(dt);
    let p = f * state.p * f.transpose() + process_noise(dt, q);
    Ok(TrackState {
        x: f * state.x,
        p: 0.5 * (p + p.transpose()),
        t_us: state.t_us + (dt * 1e6).round() as u64,
    })
}

/// Innovation of the last update, kept for diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct Innovation {
    pub residual: Vector2<f64>,
    pub covariance: Matrix2<f64>,
}

/// General update with measurement prediction `h(x)` and Jacobian `H`.
pub fn ekf_update_with(
    state: &TrackState,
    z: Vector2<f64>,
    hx: Vector2<f64>,
    h: Matrix2x4<f64>,
    r: Matrix2<f64>,
) -> Result<(TrackState, Innovation)> {
    if !z.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("non-finite measurement".into()));
    }
    let s = h * state.p * h.transpose() + r;
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular innovation covariance".into()))?;
    let k: Matrix4x2<f64> = state.p * h.transpose() * s_inv;
    let y = z - hx;
    let a = Matrix4::identity() - k * h;
    let p = a * state.p * a.transpose() + k * r * k.transpose();
    Ok((
        TrackState {
            x: state.x + k * y,
            p: 0.5 * (p + p.transpose()),
            t_us: state.t_us,
        },
        Innovation {
            residual: y,
            covariance: s,
        },
    ))
}

/// Position measurement with isotropic noise std `r` pixels; Joseph-form covariance.
pub fn ekf_update(state: &TrackState, z: (f64, f64), r: f64) -> Result<(TrackState, Innovation)> {
    if !(r > 0.0) {
        return Err(Error::invalid("measurement noise must be positive"));
    }
    let h = Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0);
    let hx = Vector2::new(state.x[0], state.x[1]);
    ekf_update_with(state, Vector2::new(z.0, z.1), hx, h, Matrix2::identity() * (r * r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn min_eig(p: &Matrix4<f64>) -> f64 {
        p.symmetric_eigen().eigenvalues.min()
    }

    #[test]
    fn predict_propagates_linearly() {
        let mut s = TrackState::new(0.0, 0.0, 1.0, 1.0, 0);
        s.x = Vector4::new(0.0, 0.0, 2.0, -1.0);
        let p = ekf_predict(&s, 0.5, 1.0).unwrap();
        assert_eq!(p.position(), (1.0, -0.5));
        assert_eq!(p.velocity(), (2.0, -1.0));
        assert_eq!(p.t_us, 500_000);
    }

    #[test]
    fn zero_noise_zero_covariance_stays_zero() {
        let mut s = TrackState::new(3.0, 4.0, 0.0, 0.0, 0);
        s.p = Matrix4::zeros();
        let p = ekf_predict(&s, 0.1, 0.0).unwrap();
        assert_eq!(p.p, Matrix4::zeros());
    }

    #[test]
    fn trace_grows_under_repeated_prediction() {
        let mut s = TrackState::new(0.0, 0.0, 1.0, 1.0, 0);
        // Oracle: iterate F P Fᵀ + Q by hand with explicit loops.
        let (dt, q) = (0.01, 50.0);
        let mut oracle = [[0.0f64; 4]; 4];
        for i in 0..4 {
            oracle[i][i] = 1.0;
        }
        let mut prev = s.p.trace();
        for _ in 0..20 {
            s = ekf_predict(&s, dt, q).unwrap();
            let f = transition(dt);
            let qm = process_noise(dt, q);
            let mut fp = [[0.0; 4]; 4];
            for i in 0..4 {
                for j in 0..4 {
                    fp[i][j] = (0..4).map(|k| f[(i, k)] * oracle[k][j]).sum();
                }
            }
            for i in 0..4 {
                for j in 0..4 {
                    oracle[i][j] = (0..4).map(|k| fp[i][k] * f[(j, k)]).sum::<f64>() + qm[(i, j)];
                }
            }
            let tr = s.p.trace();
            assert!(tr > prev);
            assert!((tr - (0..4).map(|i| oracle[i][i]).sum::<f64>()).abs() < 1e-9 * tr);
            prev = tr;
        }
    }

    #[test]
    fn large_prior_follows_measurement() {
        let s = TrackState::new(0.0, 0.0, 1e6, 1e6, 0);
        let (post, _) = ekf_update(&s, (5.0, 7.0), 1.0).unwrap();
        assert!((post.x[0] - 5.0).abs() < 1e-6 && (post.x[1] - 7.0).abs() < 1e-6);
    }

    #[test]
    fn large_noise_keeps_prior() {
        let s = TrackState::new(1.0, 2.0, 1.0, 1.0, 0);
        let (post, _) = ekf_update(&s, (50.0, -40.0), 1e5).unwrap();
        assert!((post.x[0] - 1.0).abs() < 1e-6 && (post.x[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_non_finite_measurement() {
        let s = TrackState::new(0.0, 0.0, 1.0, 1.0, 0);
        assert!(ekf_update(&s, (f64::NAN, 0.0), 1.0).is_err());
    }

    #[test]
    fn stationary_truth_rmse_below_r() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = 1.0;
        let noise = Normal::new(0.0, r).unwrap();
        let mut s = TrackState::new(0.0, 0.0, 10.0, 5.0, 0);
        let mut se = 0.0;
        for _ in 0..100 {
            s = ekf_predict(&s, 0.01, 1.0).unwrap();
            let z = (10.0 + noise.sample(&mut rng), -3.0 + noise.sample(&mut rng));
            s = ekf_update(&s, z, r).unwrap().0;
            se += (s.x[0] - 10.0).powi(2) + (s.x[1] + 3.0).powi(2);
        }
        assert!((se / 100.0).sqrt() < r);
    }

    proptest! {
        #[test]
        fn covariance_stays_psd(steps in prop::collection::vec((0.001f64..0.1, -50.0f64..50.0, -50.0f64..50.0), 1..40),
                                q in 0.0f64..100.0, r in 0.1f64..5.0) {
            let mut s = TrackState::new(0.0, 0.0, 3.0, 20.0, 0);
            for (dt, zu, zv) in steps {
                s = ekf_predict(&s, dt, q).unwrap();
                prop_assert!(min_eig(&s.p) >= -1e-9);
                s = ekf_update(&s, (zu, zv), r).unwrap().0;
                prop_assert!(min_eig(&s.p) >= -1e-9);
                prop_assert!((s.p - s.p.transpose()).abs().max() == 0.0);
            }
        }

        #[test]
        fn update_contracts_toward_measurement(u in -20.0f64..20.0, v in -20.0f64..20.0,
                                              zu in -20.0f64..20.0, zv in -20.0f64..20.0,
                                              pp in 0.01f64..100.0, r in 0.1f64..10.0) {
            let mut s = TrackState::new(u, v, 1.0, 1.0, 0);
            s.p = Matrix4::from_diagonal(&Vector4::new(pp, pp, 1.0, 1.0));
            let (post, _) = ekf_update(&s, (zu, zv), r).unwrap();
            let between = |a: f64, b: f64, x: f64| x >= a.min(b) - 1e-12 && x <= a.max(b) + 1e-12;
            prop_assert!(between(u, zu, post.x[0]) && between(v, zv, post.x[1]));
        }
    }
}

//! Per-pixel fusion of the background and object layers with the overlap
//! probability: density ratios times `(1 − ρ, ρ)`, optionally renormalized.

const EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FuseWeights {
    pub a_s: f64,
    pub a_d: f64,
}

#[inline]
pub fn fuse_weights(sigma_s: f64, sigma_d: f64, rho: f64, renormalize: bool) -> FuseWeights {
    let sum = sigma_s + sigma_d;
    let (r_s, r_d) = if sum < EPS { (0.5, 0.5) } else { (sigma_s / sum, sigma_d / sum) };
    let w_s = r_s * (1.0 - rho);
    let w_d = r_d * rho;
    let w = w_s + w_d;
    if renormalize && w > EPS {
        FuseWeights {
            a_s: w_s / w,
            a_d: w_d / w,
        }
    } else {
        FuseWeights { a_s: w_s, a_d: w_d }
    }
}

/// Gradients with respect to `(σ_s, σ_d, ρ)` given `∂L/∂a_s` and `∂L/∂a_d`.
#[inline]
pub fn fuse_weights_backward(sigma_s: f64, sigma_d: f64, rho: f64, renormalize: bool, da_s: f64, da_d: f64) -> (f64, f64, f64) {
    let sum = sigma_s + sigma_d;
    let degenerate = sum < EPS;
    let (r_s, r_d) = if degenerate { (0.5, 0.5) } else { (sigma_s / sum, sigma_d / sum) };
    let w_s = r_s * (1.0 - rho);
    let w_d = r_d * rho;
    let w = w_s + w_d;
    let (dw_s, dw_d) = if renormalize && w > EPS {
        let w2 = w * w;
        ((da_s - da_d) * w_d / w2, (da_d - da_s) * w_s / w2)
    } else {
        (da_s, da_d)
    };
    let d_rho = -dw_s * r_s + dw_d * r_d;
    if degenerate {
        return (0.0, 0.0, d_rho);
    }
    let (dr_s, dr_d) = (dw_s * (1.0 - rho), dw_d * rho);
    let s2 = sum * sum;
    let d_ss = (dr_s - dr_d) * sigma_d / s2;
    let d_sd = (dr_d - dr_s) * sigma_s / s2;
    (d_ss, d_sd, d_rho)
}

/// Fused 3-channel image from two layers' colors and densities.
pub fn fuse(c_s: &[f64], sigma_s: &[f64], c_d: &[f64], sigma_d: &[f64], rho: &[f64], renormalize: bool) -> Vec<f64> {
    let mut out = vec![0.0; c_s.len()];
    for i in 0..sigma_s.len() {
        let FuseWeights { a_s, a_d } = fuse_weights(sigma_s[i], sigma_d[i], rho[i], renormalize);
        for c in 0..3 {
            out[i * 3 + c] = a_s * c_s[i * 3 + c] + a_d * c_d[i * 3 + c];
        }
    }
    out
}

/// Gradients of the fused image with respect to both layers and ρ.
pub struct FuseGrad {
    pub d_c_s: Vec<f64>,
    pub d_sigma_s: Vec<f64>,
    pub d_c_d: Vec<f64>,
    pub d_sigma_d: Vec<f64>,
    pub d_rho: Vec<f64>,
}

pub fn fuse_backward(
    c_s: &[f64],
    sigma_s: &[f64],
    c_d: &[f64],
    sigma_d: &[f64],
    rho: &[f64],
    renormalize: bool,
    d_out: &[f64],
) -> FuseGrad {
    let n = sigma_s.len();
    let mut g = FuseGrad {
        d_c_s: vec![0.0; 3 * n],
        d_sigma_s: vec![0.0; n],
        d_c_d: vec![0.0; 3 * n],
        d_sigma_d: vec![0.0; n],
        d_rho: vec![0.0; n],
    };
    for i in 0..n {
        let FuseWeights { a_s, a_d } = fuse_weights(sigma_s[i], sigma_d[i], rho[i], renormalize);
        let (mut da_s, mut da_d) = (0.0, 0.0);
        for c in 0..3 {
            let d = d_out[i * 3 + c];
            g.d_c_s[i * 3 + c] = a_s * d;
            g.d_c_d[i * 3 + c] = a_d * d;
            da_s += d * c_s[i * 3 + c];
            da_d += d * c_d[i * 3 + c];
        }
        let (ds, dd, dr) = fuse_weights_backward(sigma_s[i], sigma_d[i], rho[i], renormalize, da_s, da_d);
        g.d_sigma_s[i] = ds;
        g.d_sigma_d[i] = dd;
        g.d_rho[i] = dr;
    }
    g
}

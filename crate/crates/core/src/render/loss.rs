//! Photometric reconstruction loss (L1 plus structural dissimilarity) with
//! its image-space gradient, and the PSNR/SSIM metrics.

use crate::error::{Error, Result};
use crate::image::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_kernel() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable zero-padded "same" filtering of a single-channel plane.
fn filter(plane: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xx = x as isize + i as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    s += kv * plane[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = s;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let yy = y as isize + i as isize - r;
                if yy >= 0 && (yy as usize) < h {
                    s += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = s;
        }
    }
    out
}

fn channel(img: &Image, c: usize) -> Vec<f64> {
    img.data.iter().skip(c).step_by(img.channels).copied().collect()
}

fn check_shapes(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::invalid(format!(
            "image shapes differ: {}x{}x{} vs {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    Ok(())
}

/// Mean SSIM over pixels and channels, and optionally its gradient with
/// respect to `x`.
fn ssim_impl(x: &Image, y: &Image, want_grad: bool) -> (f64, Vec<f64>) {
    let (w, h, ch) = (x.width, x.height, x.channels);
    let k = gaussian_kernel();
    let n = (w * h * ch) as f64;
    let mut total = 0.0;
    let mut grad = if want_grad { vec![0.0; x.data.len()] } else { Vec::new() };
    for c in 0..ch {
        let xc = channel(x, c);
        let yc = channel(y, c);
        let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<f64>>();
        let mx = filter(&xc, w, h, &k);
        let my = filter(&yc, w, h, &k);
        let exx = filter(&sq(&xc, &xc), w, h, &k);
        let eyy = filter(&sq(&yc, &yc), w, h, &k);
        let exy = filter(&sq(&xc, &yc), w, h, &k);
        let (mut ga, mut gb, mut gc) = if want_grad {
            (vec![0.0; w * h], vec![0.0; w * h], vec![0.0; w * h])
        } else {
            (Vec::new(), Vec::new(), Vec::new())
        };
        for i in 0..w * h {
            let (ux, uy) = (mx[i], my[i]);
            let a1 = 2.0 * ux * uy + SSIM_C1;
            let a2 = 2.0 * (exy[i] - ux * uy) + SSIM_C2;
            let b1 = ux * ux + uy * uy + SSIM_C1;
            let b2 = (exx[i] - ux * ux) + (eyy[i] - uy * uy) + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                ga[i] = s * (2.0 * uy / a1 - 2.0 * uy / a2 - 2.0 * ux / b1 + 2.0 * ux / b2);
                gb[i] = -s / b2;
                gc[i] = 2.0 * s / a2;
            }
        }
        if want_grad {
            let fa = filter(&ga, w, h, &k);
            let fb = filter(&gb, w, h, &k);
            let fc = filter(&gc, w, h, &k);
            for i in 0..w * h {
                grad[i * ch + c] = (fa[i] + 2.0 * xc[i] * fb[i] + yc[i] * fc[i]) / n;
            }
        }
    }
    (total / n, grad)
}

pub fn ssim(x: &Image, y: &Image) -> Result<f64> {
    check_shapes(x, y)?;
    Ok(ssim_impl(x, y, false).0)
}

/// Loss value with its components and `∂loss/∂Î`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconLoss {
    pub loss: f64,
    pub l1: f64,
    pub ssim: f64,
    pub grad: Vec<f64>,
}

/// `mean|Î − I| + (1 − SSIM(Î, I))`.
pub fn recon_loss(pred: &Image, gt: &Image) -> Result<ReconLoss> {
    check_shapes(pred, gt)?;
    let n = pred.data.len() as f64;
    let l1 = pred.data.iter().zip(&gt.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    let (s, mut grad) = ssim_impl(pred, gt, true);
    for ((g, a), b) in grad.iter_mut().zip(&pred.data).zip(&gt.data) {
        let sign = if a > b {
            1.0
        } else if a < b {
            -1.0
        } else {
            0.0
        };
        *g = sign / n - *g;
    }
    Ok(ReconLoss {
        loss: l1 + (1.0 - s),
        l1,
        ssim: s,
        grad,
    })
}

pub const PSNR_CAP: f64 = 100.0;

/// `10·log10(1/MSE)`, capped at 100 dB.
pub fn psnr(x: &Image, y: &Image) -> Result<f64> {
    check_shapes(x, y)?;
    let mse = x.data.iter().zip(&y.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.data.len() as f64;
    Ok(if mse < 1e-10 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    })
}

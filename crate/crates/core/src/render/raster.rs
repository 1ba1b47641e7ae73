//! Tile-binned front-to-back alpha compositing of projected Gaussians with a
//! replayable per-pixel contributor trace.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::render::project::ProjectedGaussian;
use crate::render::RenderConfig;

#[derive(Clone, Copy, Debug, PartialEq)]
struct Contrib {
    /// Index into the tile's Gaussian list.
    local: u32,
    clamped: bool,
    alpha: f64,
    /// Transmittance in front of this splat.
    t: f64,
}

#[derive(Clone, Debug, PartialEq)]
struct TileTrace {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
    /// Input indices of the Gaussians binned here, front to back.
    list: Vec<u32>,
    /// Per-pixel ranges into `contribs`, row-major within the tile.
    starts: Vec<u32>,
    contribs: Vec<Contrib>,
}

/// One rasterized layer: `K`-channel features, accumulated alpha and final
/// transmittance per pixel, plus the trace needed by the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerRender {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// `height × width × channels`.
    pub color: Vec<f64>,
    /// Accumulated alpha `1 − Π(1 − α_i)`.
    pub density: Vec<f64>,
    pub transmittance: Vec<f64>,
    tiles: Vec<TileTrace>,
}

/// Gradients of a layer loss with respect to each input splat.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterGrad {
    pub channels: usize,
    pub d_mean2d: Vec<[f64; 2]>,
    /// Full-matrix convention `[g00, g01, g11]`.
    pub d_conic: Vec<[f64; 3]>,
    pub d_opacity: Vec<f64>,
    /// `N × channels`.
    pub d_features: Vec<f64>,
}

impl LayerRender {
    pub fn empty(width: usize, height: usize, channels: usize) -> Self {
        LayerRender {
            width,
            height,
            channels,
            color: vec![0.0; width * height * channels],
            density: vec![0.0; width * height],
            transmittance: vec![1.0; width * height],
            tiles: Vec::new(),
        }
    }

    /// Sum over each pixel's contributors of `α_i T_i`, the quantity that
    /// together with the final transmittance must add up to one.
    pub fn contribution_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.width * self.height];
        for tile in &self.tiles {
            let tw = tile.x1 - tile.x0;
            for (p, w) in tile.starts.windows(2).enumerate() {
                let (x, y) = (tile.x0 + p % tw, tile.y0 + p / tw);
                out[y * self.width + x] = tile.contribs[w[0] as usize..w[1] as usize].iter().map(|c| c.alpha * c.t).sum();
            }
        }
        out
    }

    /// Number of contributors at each pixel.
    pub fn contributor_counts(&self) -> Vec<usize> {
        let mut out = vec![0; self.width * self.height];
        for tile in &self.tiles {
            let tw = tile.x1 - tile.x0;
            for (p, w) in tile.starts.windows(2).enumerate() {
                out[(tile.y0 + p / tw) * self.width + tile.x0 + p % tw] = (w[1] - w[0]) as usize;
            }
        }
        out
    }
}

fn canonical_order(splats: &[ProjectedGaussian], features: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..splats.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&splats[i], &splats[j]);
        let keys = [
            (a.depth, b.depth),
            (a.mean2d[0], b.mean2d[0]),
            (a.mean2d[1], b.mean2d[1]),
            (a.opacity, b.opacity),
            (a.conic[0], b.conic[0]),
            (a.conic[1], b.conic[1]),
            (a.conic[2], b.conic[2]),
        ];
        for (x, y) in keys {
            match x.total_cmp(&y) {
                Ordering::Equal => {}
                o => return o,
            }
        }
        for c in 0..k {
            match features[i * k + c].total_cmp(&features[j * k + c]) {
                Ordering::Equal => {}
                o => return o,
            }
        }
        i.cmp(&j)
    });
    order
}

#[inline]
fn mahalanobis(g: &ProjectedGaussian, dx: f64, dy: f64) -> f64 {
    g.conic[0] * dx * dx + 2.0 * g.conic[1] * dx * dy + g.conic[2] * dy * dy
}

/// Composites `splats` front to back. `features` holds `channels` values per
/// splat. The depth sort is canonical, so any permutation of the input gives
/// a bit-identical image.
pub fn rasterize(
    splats: &[ProjectedGaussian],
    features: &[f64],
    channels: usize,
    width: usize,
    height: usize,
    cfg: &RenderConfig,
) -> LayerRender {
    assert_eq!(features.len(), splats.len() * channels, "feature buffer size mismatch");
    let ts = cfg.tile_size.max(1);
    let (ntx, nty) = (width.div_ceil(ts), height.div_ceil(ts));
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); ntx * nty];
    for i in canonical_order(splats, features, channels) {
        let g = &splats[i];
        let r = g.radius;
        let (mx, my) = (g.mean2d[0], g.mean2d[1]);
        if !(r.is_finite() && mx.is_finite() && my.is_finite()) {
            continue;
        }
        let x_lo = (mx - r).ceil().max(0.0);
        let x_hi = (mx + r).floor().min(width as f64 - 1.0);
        let y_lo = (my - r).ceil().max(0.0);
        let y_hi = (my + r).floor().min(height as f64 - 1.0);
        if x_lo > x_hi || y_lo > y_hi {
            continue;
        }
        let (tx0, tx1) = (x_lo as usize / ts, x_hi as usize / ts);
        let (ty0, ty1) = (y_lo as usize / ts, y_hi as usize / ts);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                bins[ty * ntx + tx].push(i as u32);
            }
        }
    }

    let cutoff2 = cfg.sigma_cutoff * cfg.sigma_cutoff;
    let tiles: Vec<(TileTrace, Vec<f64>, Vec<f64>)> = bins
        .into_par_iter()
        .enumerate()
        .map(|(ti, list)| {
            let (x0, y0) = ((ti % ntx) * ts, (ti / ntx) * ts);
            let (x1, y1) = ((x0 + ts).min(width), (y0 + ts).min(height));
            let npx = (x1 - x0) * (y1 - y0);
            let mut color = vec![0.0; npx * channels];
            let mut trans = vec![1.0; npx];
            let mut starts = Vec::with_capacity(npx + 1);
            let mut contribs = Vec::new();
            starts.push(0u32);
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = (y - y0) * (x1 - x0) + (x - x0);
                    let mut t = 1.0;
                    for (l, &gi) in list.iter().enumerate() {
                        if t < cfg.min_transmittance {
                            break;
                        }
                        let g = &splats[gi as usize];
                        let (dx, dy) = (x as f64 - g.mean2d[0], y as f64 - g.mean2d[1]);
                        let q = mahalanobis(g, dx, dy);
                        if !(q <= cutoff2) {
                            continue;
                        }
                        let raw = g.opacity * (-0.5 * q).exp();
                        let clamped = raw > cfg.alpha_max;
                        let alpha = if clamped { cfg.alpha_max } else { raw };
                        if alpha <= 0.0 {
                            continue;
                        }
                        let f = &features[gi as usize * channels..(gi as usize + 1) * channels];
                        for c in 0..channels {
                            color[p * channels + c] += f[c] * alpha * t;
                        }
                        contribs.push(Contrib {
                            local: l as u32,
                            clamped,
                            alpha,
                            t,
                        });
                        t *= 1.0 - alpha;
                    }
                    trans[p] = t;
                    starts.push(contribs.len() as u32);
                }
            }
            (
                TileTrace {
                    x0,
                    y0,
                    x1,
                    y1,
                    list,
                    starts,
                    contribs,
                },
                color,
                trans,
            )
        })
        .collect();

    let mut out = LayerRender::empty(width, height, channels);
    let mut traces = Vec::with_capacity(tiles.len());
    for (trace, color, trans) in tiles {
        let tw = trace.x1 - trace.x0;
        for (p, &t) in trans.iter().enumerate() {
            let idx = (trace.y0 + p / tw) * width + trace.x0 + p % tw;
            out.transmittance[idx] = t;
            out.density[idx] = 1.0 - t;
            out.color[idx * channels..(idx + 1) * channels].copy_from_slice(&color[p * channels..(p + 1) * channels]);
        }
        traces.push(trace);
    }
    out.tiles = traces;
    out
}

/// Replays the contributor trace in reverse. `d_color` is `H × W × channels`
/// and `d_density` (optional) is `H × W`.
pub fn rasterize_backward(
    layer: &LayerRender,
    splats: &[ProjectedGaussian],
    features: &[f64],
    d_color: &[f64],
    d_density: Option<&[f64]>,
) -> RasterGrad {
    let k = layer.channels;
    let w = layer.width;
    let n = splats.len();
    // Local buffer layout per binned splat: mean(2), conic(3), opacity(1), features(k).
    let stride = 6 + k;
    let partials: Vec<Vec<f64>> = layer
        .tiles
        .par_iter()
        .map(|tile| {
            let mut buf = vec![0.0; tile.list.len() * stride];
            let tw = tile.x1 - tile.x0;
            let mut suffix = vec![0.0; k];
            for (p, range) in tile.starts.windows(2).enumerate() {
                let (s, e) = (range[0] as usize, range[1] as usize);
                if s == e {
                    continue;
                }
                let (x, y) = (tile.x0 + p % tw, tile.y0 + p / tw);
                let idx = y * w + x;
                let g_col = &d_color[idx * k..(idx + 1) * k];
                let g_den = d_density.map_or(0.0, |d| d[idx]);
                let t_final = layer.transmittance[idx];
                suffix.iter_mut().for_each(|v| *v = 0.0);
                for c in tile.contribs[s..e].iter().rev() {
                    let gi = tile.list[c.local as usize] as usize;
                    let f = &features[gi * k..(gi + 1) * k];
                    let b = &mut buf[c.local as usize * stride..(c.local as usize + 1) * stride];
                    let one_minus = 1.0 - c.alpha;
                    let mut d_alpha = g_den * t_final / one_minus;
                    for ch in 0..k {
                        d_alpha += g_col[ch] * (f[ch] * c.t - suffix[ch] / one_minus);
                        b[6 + ch] += g_col[ch] * c.alpha * c.t;
                        suffix[ch] += f[ch] * c.alpha * c.t;
                    }
                    if c.clamped {
                        continue;
                    }
                    let g = &splats[gi];
                    let (dx, dy) = (x as f64 - g.mean2d[0], y as f64 - g.mean2d[1]);
                    let a = c.alpha;
                    // Gradient through α = o · exp(−½ dᵀQd).
                    b[5] += d_alpha * a / g.opacity;
                    let (qdx, qdy) = (g.conic[0] * dx + g.conic[1] * dy, g.conic[1] * dx + g.conic[2] * dy);
                    b[0] += d_alpha * a * qdx;
                    b[1] += d_alpha * a * qdy;
                    b[2] += -0.5 * d_alpha * a * dx * dx;
                    b[3] += -0.5 * d_alpha * a * dx * dy;
                    b[4] += -0.5 * d_alpha * a * dy * dy;
                }
            }
            buf
        })
        .collect();

    let mut out = RasterGrad {
        channels: k,
        d_mean2d: vec![[0.0; 2]; n],
        d_conic: vec![[0.0; 3]; n],
        d_opacity: vec![0.0; n],
        d_features: vec![0.0; n * k],
    };
    for (tile, buf) in layer.tiles.iter().zip(&partials) {
        for (l, &gi) in tile.list.iter().enumerate() {
            let b = &buf[l * stride..(l + 1) * stride];
            let gi = gi as usize;
            out.d_mean2d[gi][0] += b[0];
            out.d_mean2d[gi][1] += b[1];
            out.d_conic[gi][0] += b[2];
            out.d_conic[gi][1] += b[3];
            out.d_conic[gi][2] += b[4];
            out.d_opacity[gi] += b[5];
            for ch in 0..k {
                out.d_features[gi * k + ch] += b[6 + ch];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn splat(mx: f64, my: f64, depth: f64, opacity: f64, var: f64) -> ProjectedGaussian {
        ProjectedGaussian {
            mean2d: [mx, my],
            cov2d: [var, 0.0, var],
            conic: [1.0 / var, 0.0, 1.0 / var],
            depth,
            opacity,
            radius: 3.0 * var.sqrt(),
        }
    }

    #[test]
    fn empty_list_renders_black() {
        let l = rasterize(&[], &[], 3, 8, 8, &RenderConfig::default());
        assert!(l.color.iter().all(|&v| v == 0.0));
        assert!(l.density.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_single_splat() {
        let l = rasterize(
            &[splat(3.0, 4.0, 1.0, 1.0, 2.0)],
            &[0.2, 0.4, 0.8],
            3,
            8,
            8,
            &RenderConfig::default(),
        );
        let i = 4 * 8 + 3;
        assert!((l.color[i * 3] - 0.99 * 0.2).abs() < 1e-15);
        assert!((l.color[i * 3 + 2] - 0.99 * 0.8).abs() < 1e-15);
        assert!((l.density[i] - 0.99).abs() < 1e-15);
    }

    #[test]
    fn two_term_front_to_back_formula() {
        let a = splat(4.0, 4.0, 2.0, 0.6, 3.0);
        let b = splat(5.0, 3.5, 1.0, 0.7, 2.0);
        let fa = [1.0, 0.0, 0.5];
        let fb = [0.0, 1.0, 0.25];
        let mut feats = fa.to_vec();
        feats.extend_from_slice(&fb);
        let l = rasterize(&[a.clone(), b.clone()], &feats, 3, 10, 10, &RenderConfig::default());
        let (x, y) = (4.0, 5.0);
        let alpha = |g: &ProjectedGaussian| {
            let (dx, dy) = (x - g.mean2d[0], y - g.mean2d[1]);
            g.opacity * (-0.5 * (dx * dx + dy * dy) / g.cov2d[0]).exp()
        };
        let (ab, aa) = (alpha(&b), alpha(&a));
        let i = 5 * 10 + 4;
        for c in 0..3 {
            let expect = fb[c] * ab + fa[c] * aa * (1.0 - ab);
            assert!((l.color[i * 3 + c] - expect).abs() < 1e-12);
        }
        assert!((l.transmittance[i] - (1.0 - ab) * (1.0 - aa)).abs() < 1e-12);
    }

    #[test]
    fn permutation_is_bit_identical() {
        let s = vec![
            splat(4.0, 4.0, 2.0, 0.6, 3.0),
            splat(5.0, 3.5, 1.0, 0.7, 2.0),
            splat(20.0, 18.0, 1.5, 0.9, 9.0),
            splat(5.0, 3.5, 1.0, 0.7, 2.0),
        ];
        let f = vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.15, 0.25, 0.35];
        let a = rasterize(&s, &f, 3, 33, 21, &RenderConfig::default());
        let perm = [2usize, 3, 0, 1];
        let sp: Vec<_> = perm.iter().map(|&i| s[i].clone()).collect();
        let fp: Vec<f64> = perm.iter().flat_map(|&i| f[i * 3..i * 3 + 3].to_vec()).collect();
        let b = rasterize(&sp, &fp, 3, 33, 21, &RenderConfig::default());
        assert_eq!(a.color, b.color);
        assert_eq!(a.density, b.density);
    }

    #[test]
    fn conservation_holds() {
        let s: Vec<_> = (0..12)
            .map(|i| {
                splat(
                    3.0 + i as f64 * 1.7,
                    10.0 - i as f64 * 0.5,
                    1.0 + i as f64 * 0.1,
                    0.3 + 0.05 * i as f64,
                    4.0 + i as f64,
                )
            })
            .collect();
        let f = vec![0.5; 12];
        let l = rasterize(&s, &f, 1, 24, 20, &RenderConfig::default());
        for (sum, t) in l.contribution_sums().iter().zip(&l.transmittance) {
            assert!((sum + t - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let cfg = RenderConfig::default();
        let s = vec![
            ProjectedGaussian {
                mean2d: [5.3, 6.1],
                cov2d: [0.0; 3],
                conic: [0.25, 0.05, 0.3],
                depth: 2.0,
                opacity: 0.7,
                radius: 9.0,
            },
            ProjectedGaussian {
                mean2d: [8.2, 4.4],
                cov2d: [0.0; 3],
                conic: [0.4, -0.1, 0.2],
                depth: 1.0,
                opacity: 0.5,
                radius: 9.0,
            },
        ];
        let f = vec![0.9, 0.1, 0.3, 0.2, 0.8, 0.6];
        let (w, h) = (12, 10);
        let wc: Vec<f64> = (0..w * h * 3).map(|i| ((i * 37 % 11) as f64 - 5.0) / 5.0).collect();
        let wd: Vec<f64> = (0..w * h).map(|i| ((i * 13 % 7) as f64 - 3.0) / 3.0).collect();
        let loss = |s: &[ProjectedGaussian], f: &[f64]| {
            let l = rasterize(s, f, 3, w, h, &cfg);
            l.color.iter().zip(&wc).map(|(a, b)| a * b).sum::<f64>() + l.density.iter().zip(&wd).map(|(a, b)| a * b).sum::<f64>()
        };
        let l = rasterize(&s, &f, 3, w, h, &cfg);
        let g = rasterize_backward(&l, &s, &f, &wc, Some(&wd));
        let hh = 1e-6;
        let check = |fd: f64, an: f64, what: &str| assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "{what}: fd {fd} analytic {an}");
        for i in 0..2 {
            for d in 0..2 {
                let mut a = s.clone();
                let mut b = s.clone();
                a[i].mean2d[d] += hh;
                b[i].mean2d[d] -= hh;
                check((loss(&a, &f) - loss(&b, &f)) / (2.0 * hh), g.d_mean2d[i][d], "mean");
            }
            for d in 0..3 {
                let mut a = s.clone();
                let mut b = s.clone();
                a[i].conic[d] += hh;
                b[i].conic[d] -= hh;
                let fd = (loss(&a, &f) - loss(&b, &f)) / (2.0 * hh);
                // The off-diagonal conic entry appears twice in the quadratic form.
                let an = if d == 1 { 2.0 * g.d_conic[i][1] } else { g.d_conic[i][d] };
                check(fd, an, "conic");
            }
            let mut a = s.clone();
            let mut b = s.clone();
            a[i].opacity += hh;
            b[i].opacity -= hh;
            check((loss(&a, &f) - loss(&b, &f)) / (2.0 * hh), g.d_opacity[i], "opacity");
            for c in 0..3 {
                let mut fa = f.clone();
                let mut fb = f.clone();
                fa[i * 3 + c] += hh;
                fb[i * 3 + c] -= hh;
                check((loss(&s, &fa) - loss(&s, &fb)) / (2.0 * hh), g.d_features[i * 3 + c], "feature");
            }
        }
    }
}

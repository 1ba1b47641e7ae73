use crate::disentangle::{correlation_volume, EventVoxelGrid, Patch};
use crate::error::{Error, Result};

/// Event-count image of an object region plus its correlation descriptor.
#[derive(Clone, Debug, PartialEq)]
pub struct Template {
    pub width: usize,
    pub height: usize,
    /// Row-major event counts, `width × height`.
    pub counts: Vec<f64>,
    /// Upper triangle of the region's correlation volume (empty for one bin).
    pub correlation: Vec<f64>,
}

impl Template {
    /// Extracts the patch of `grid` whose top-left corner is `(x0, y0)`.
    pub fn extract(grid: &EventVoxelGrid, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("template patch is empty"));
        }
        if x0 + width > grid.width || y0 + height > grid.height {
            return Err(Error::invalid("template patch outside the sensor"));
        }
        let counts = (y0..y0 + height)
            .flat_map(|y| (x0..x0 + width).map(move |x| (x, y)))
            .map(|(x, y)| f64::from(grid.count(x, y)))
            .collect();
        let correlation = if grid.bins >= 2 {
            correlation_volume(grid, Patch::new(x0, y0, width, height))?.upper_triangle()
        } else {
            Vec::new()
        };
        Ok(Template {
            width,
            height,
            counts,
            correlation,
        })
    }

    /// Patch of a dense `img_w`-wide image, with the correlation descriptor
    /// taken from `grid`.
    pub fn extract_from(
        image: &[f64],
        img_w: usize,
        grid: &EventVoxelGrid,
        x0: usize,
        y0: usize,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let mut t = Template::extract(grid, x0, y0, width, height)?;
        t.counts = (y0..y0 + height)
            .flat_map(|y| image[y * img_w + x0..y * img_w + x0 + width].iter().copied())
            .collect();
        Ok(t)
    }

    pub fn is_blank(&self) -> bool {
        self.counts.iter().all(|&c| c == 0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Match {
    Found {
        /// Top-left corner of the best window.
        x0: usize,
        y0: usize,
        /// Offset of that corner from the search origin.
        offset: (i64, i64),
        score: f64,
        /// NCC scores at the horizontal and vertical neighbors of the peak,
        /// when those windows were evaluated.
        neighbors: [Option<f64>; 4],
    },
    Lost,
}

fn ncc(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut num, mut da, mut db) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (p, q) = (x - ma, y - mb);
        num += p * q;
        da += p * p;
        db += q * q;
    }
    if da <= 0.0 || db <= 0.0 {
        0.0
    } else {
        (num / (da * db).sqrt()).clamp(-1.0, 1.0)
    }
}

/// Normalized cross-correlation search over integer offsets in
/// `[-radius, radius]²` around the window whose top-left corner is `origin`.
/// Windows leaving the sensor are skipped. Ties prefer the smallest offset
/// norm, then row-major order.
pub fn match_template(template: &Template, grid: &EventVoxelGrid, origin: (i64, i64), radius: usize) -> Match {
    match_in_image(template, &grid.count_image(), grid.width, grid.height, origin, radius)
}

/// [`match_template`] against an arbitrary dense image, such as a smoothed
/// event-count image.
pub fn match_in_image(template: &Template, counts: &[f64], width: usize, height: usize, origin: (i64, i64), radius: usize) -> Match {
    let (tw, th) = (template.width as i64, template.height as i64);
    let r = radius as i64;
    let gw = width as i64;
    let window = |x0: i64, y0: i64| -> Option<Vec<f64>> {
        if x0 < 0 || y0 < 0 || x0 + tw > gw || y0 + th > height as i64 {
            return None;
        }
        let mut out = Vec::with_capacity((tw * th) as usize);
        for y in y0..y0 + th {
            let row = (y * gw + x0) as usize;
            out.extend_from_slice(&counts[row..row + tw as usize]);
        }
        Some(out)
    };
    let side = (2 * r + 1) as usize;
    let mut scores = vec![None; side * side];
    let mut any_events = false;
    let mut best: Option<(f64, i64, i64, i64)> = None;
    for dy in -r..=r {
        for dx in -r..=r {
            let Some(win) = window(origin.0 + dx, origin.1 + dy) else {
                continue;
            };
            any_events |= win.iter().any(|&c| c != 0.0);
            let s = ncc(&template.counts, &win);
            scores[((dy + r) as usize) * side + (dx + r) as usize] = Some(s);
            let norm = dx * dx + dy * dy;
            let better = match best {
                None => true,
                Some((bs, bn, _, _)) => s > bs || (s == bs && norm < bn),
            };
            if better {
                best = Some((s, norm, dx, dy));
            }
        }
    }
    match best {
        Some((score, _, dx, dy)) if any_events => {
            let at = |ddx: i64, ddy: i64| -> Option<f64> {
                let (i, j) = (dx + ddx + r, dy + ddy + r);
                if i < 0 || j < 0 || i >= side as i64 || j >= side as i64 {
                    None
                } else {
                    scores[j as usize * side + i as usize]
                }
            };
            Match::Found {
                x0: (origin.0 + dx) as usize,
                y0: (origin.1 + dy) as usize,
                offset: (dx, dy),
                score,
                neighbors: [at(-1, 0), at(1, 0), at(0, -1), at(0, 1)],
            }
        }
        _ => Match::Lost,
    }
}

/// Separable Gaussian blur of a single-channel image with zero padding.
pub fn gaussian_blur(img: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return img.to_vec();
    }
    let r = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = k.iter().sum();
    let k: Vec<f64> = k.into_iter().map(|v| v / norm).collect();
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let xx = x as i64 + j as i64 - r;
                if xx >= 0 && xx < w as i64 {
                    acc += kv * img[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let yy = y as i64 + j as i64 - r;
                if yy >= 0 && yy < h as i64 {
                    acc += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Sub-pixel shift of a peak from a parabola through three samples.
pub fn parabolic_peak(left: f64, center: f64, right: f64) -> f64 {
    let denom = left - 2.0 * center + right;
    if denom >= 0.0 {
        0.0
    } else {
        (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
    }
}

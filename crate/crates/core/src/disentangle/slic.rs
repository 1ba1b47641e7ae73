//! SLIC superpixels with connectivity enforcement.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::image::Image;

const MAX_ITERS: usize = 10;
const CONVERGED_MOTION: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct Superpixel {
    pub mean_color: [f64; 3],
    pub centroid: [f64; 2],
    pub count: usize,
    /// Inclusive pixel bounding box `[x0, y0, x1, y1]`.
    pub bbox: [usize; 4],
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuperpixelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
    pub superpixels: Vec<Superpixel>,
}

impl SuperpixelMap {
    pub fn len(&self) -> usize {
        self.superpixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.superpixels.is_empty()
    }

    #[inline]
    pub fn label(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }
}

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

/// sRGB in [0, 1] to CIELAB (D65).
pub fn rgb_to_lab(rgb: &[f64]) -> [f64; 3] {
    let (r, g, b) = (srgb_to_linear(rgb[0]), srgb_to_linear(rgb[1]), srgb_to_linear(rgb[2]));
    let x = (0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b) / 0.950_47;
    let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175_0 * b;
    let z = (0.019_333_9 * r + 0.119_192 * g + 0.950_304_1 * b) / 1.088_83;
    let f = |t: f64| {
        if t > 216.0 / 24389.0 {
            t.cbrt()
        } else {
            (24389.0 / 27.0 * t + 16.0) / 116.0
        }
    };
    let (fx, fy, fz) = (f(x), f(y), f(z));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

#[derive(Clone, Copy, Debug)]
struct Center {
    lab: [f64; 3],
    x: f64,
    y: f64,
}

/// Segments `image` into roughly `k` compact superpixels.
///
/// Distance between a pixel and a center is `d_lab + compactness · d_xy / S`
/// with `S = sqrt(N / k)` the grid interval. Every returned superpixel is a
/// single 4-connected region and labels are numbered in raster order of first
/// appearance.
pub fn slic_superpixels(image: &Image, k: usize, compactness: f64) -> Result<SuperpixelMap> {
    let (w, h) = (image.width, image.height);
    let n = w * h;
    if k == 0 {
        return Err(Error::invalid("superpixel count must be at least 1"));
    }
    if k > n {
        return Err(Error::invalid(format!("superpixel count {k} exceeds pixel count {n}")));
    }
    if !(compactness > 0.0) {
        return Err(Error::invalid("compactness must be positive"));
    }
    if image.channels != 3 {
        return Err(Error::invalid("SLIC expects an RGB image"));
    }

    let lab: Vec<[f64; 3]> = image.data.chunks_exact(3).map(rgb_to_lab).collect();
    let s = (n as f64 / k as f64).sqrt();
    let nx = ((w as f64 / s).round() as usize).clamp(1, w);
    let ny = ((h as f64 / s).round() as usize).clamp(1, h);

    let grad = |x: usize, y: usize| -> f64 {
        let at = |x: usize, y: usize| lab[y * w + x];
        let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
        let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
        let (a, b, c, d) = (at(xr, y), at(xl, y), at(x, yd), at(x, yu));
        (0..3).map(|i| (a[i] - b[i]).powi(2) + (c[i] - d[i]).powi(2)).sum()
    };

    let mut centers = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let cx = (((i as f64 + 0.5) * w as f64 / nx as f64).floor() as usize).min(w - 1);
            let cy = (((j as f64 + 0.5) * h as f64 / ny as f64).floor() as usize).min(h - 1);
            // Move the seed to the lowest-gradient pixel of its 3×3 neighborhood.
            let (mut bx, mut by, mut bg) = (cx, cy, grad(cx, cy));
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (x, y) = (cx as i64 + dx, cy as i64 + dy);
                    if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                        continue;
                    }
                    let g = grad(x as usize, y as usize);
                    if g < bg {
                        (bx, by, bg) = (x as usize, y as usize, g);
                    }
                }
            }
            centers.push(Center {
                lab: lab[by * w + bx],
                x: bx as f64,
                y: by as f64,
            });
        }
    }

    let mut labels = vec![u32::MAX; n];
    let mut dist = vec![f64::INFINITY; n];
    let radius = s.ceil() as i64;
    let spatial = compactness / s;
    for _ in 0..MAX_ITERS {
        dist.fill(f64::INFINITY);
        labels.fill(u32::MAX);
        for (ci, c) in centers.iter().enumerate() {
            let (x0, x1) = ((c.x as i64 - radius).max(0), (c.x as i64 + radius).min(w as i64 - 1));
            let (y0, y1) = ((c.y as i64 - radius).max(0), (c.y as i64 + radius).min(h as i64 - 1));
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let i = y as usize * w + x as usize;
                    let p = lab[i];
                    let dc = ((p[0] - c.lab[0]).powi(2) + (p[1] - c.lab[1]).powi(2) + (p[2] - c.lab[2]).powi(2)).sqrt();
                    let ds = ((x as f64 - c.x).powi(2) + (y as f64 - c.y).powi(2)).sqrt();
                    let d = dc + spatial * ds;
                    if d < dist[i] {
                        dist[i] = d;
                        labels[i] = ci as u32;
                    }
                }
            }
        }
        // Pixels outside every search window fall back to the nearest center.
        for i in 0..n {
            if labels[i] == u32::MAX {
                let (x, y) = ((i % w) as f64, (i / w) as f64);
                let best = centers
                    .iter()
                    .enumerate()
                    .map(|(ci, c)| (ci, (x - c.x).powi(2) + (y - c.y).powi(2)))
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(ci, _)| ci)
                    .unwrap_or(0);
                labels[i] = best as u32;
            }
        }
        let mut sums = vec![[0.0f64; 6]; centers.len()];
        for i in 0..n {
            let s = &mut sums[labels[i] as usize];
            let p = lab[i];
            s[0] += p[0];
            s[1] += p[1];
            s[2] += p[2];
            s[3] += (i % w) as f64;
            s[4] += (i / w) as f64;
            s[5] += 1.0;
        }
        let mut motion: f64 = 0.0;
        for (c, s) in centers.iter_mut().zip(&sums) {
            if s[5] == 0.0 {
                continue;
            }
            let (x, y) = (s[3] / s[5], s[4] / s[5]);
            motion = motion.max(((x - c.x).powi(2) + (y - c.y).powi(2)).sqrt());
            *c = Center {
                lab: [s[0] / s[5], s[1] / s[5], s[2] / s[5]],
                x,
                y,
            };
        }
        if motion < CONVERGED_MOTION {
            break;
        }
    }

    let labels = enforce_connectivity(&labels, w, h);
    Ok(build_map(image, labels))
}

/// 4-connected components of a label map, in raster order of first pixel.
pub fn connected_components(labels: &[u32], w: usize, h: usize) -> (Vec<usize>, Vec<Vec<usize>>) {
    let mut comp = vec![usize::MAX; labels.len()];
    let mut members = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..labels.len() {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = members.len();
        let mut list = vec![start];
        comp[start] = id;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if comp[j] == usize::MAX && labels[j] == labels[i] {
                    comp[j] = id;
                    list.push(j);
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        members.push(list);
    }
    (comp, members)
}

/// Keeps the largest component of each label and merges every other
/// component into the largest adjacent superpixel.
fn enforce_connectivity(labels: &[u32], w: usize, h: usize) -> Vec<u32> {
    let (comp, members) = connected_components(labels, w, h);
    let ncomp = members.len();
    let mut comp_label: Vec<u32> = members.iter().map(|m| labels[m[0]]).collect();

    let max_label = labels.iter().copied().max().unwrap_or(0) as usize;
    let mut main = vec![usize::MAX; max_label + 1];
    for (c, m) in members.iter().enumerate() {
        let l = comp_label[c] as usize;
        if main[l] == usize::MAX || m.len() > members[main[l]].len() {
            main[l] = c;
        }
    }
    let mut settled: Vec<bool> = (0..ncomp).map(|c| main[comp_label[c] as usize] == c).collect();
    let mut size = vec![0usize; max_label + 1];
    for (c, m) in members.iter().enumerate() {
        if settled[c] {
            size[comp_label[c] as usize] += m.len();
        }
    }

    let mut pending: Vec<usize> = (0..ncomp).filter(|&c| !settled[c]).collect();
    while !pending.is_empty() {
        let mut next = Vec::new();
        for &c in &pending {
            let mut best: Option<(usize, u32)> = None;
            for &i in &members[c] {
                let (x, y) = (i % w, i / w);
                let mut neigh = [usize::MAX; 4];
                if x > 0 {
                    neigh[0] = i - 1;
                }
                if x + 1 < w {
                    neigh[1] = i + 1;
                }
                if y > 0 {
                    neigh[2] = i - w;
                }
                if y + 1 < h {
                    neigh[3] = i + w;
                }
                for j in neigh.into_iter().filter(|&j| j != usize::MAX) {
                    let oc = comp[j];
                    if oc == c || !settled[oc] {
                        continue;
                    }
                    let l = comp_label[oc];
                    let s = size[l as usize];
                    let better = match best {
                        None => true,
                        Some((bs, bl)) => s > bs || (s == bs && l < bl),
                    };
                    if better {
                        best = Some((s, l));
                    }
                }
            }
            match best {
                Some((_, l)) => {
                    comp_label[c] = l;
                    settled[c] = true;
                    size[l as usize] += members[c].len();
                }
                None => next.push(c),
            }
        }
        if next.len() == pending.len() {
            // Isolated orphans (cannot happen on a connected grid) keep their label.
            break;
        }
        pending = next;
    }

    // Relabel consecutively in raster order of first appearance.
    let mut remap = vec![u32::MAX; max_label + 1];
    let mut next_id = 0u32;
    let mut out = vec![0u32; labels.len()];
    for i in 0..labels.len() {
        let l = comp_label[comp[i]] as usize;
        if remap[l] == u32::MAX {
            remap[l] = next_id;
            next_id += 1;
        }
        out[i] = remap[l];
    }
    out
}

fn build_map(image: &Image, labels: Vec<u32>) -> SuperpixelMap {
    let (w, h) = (image.width, image.height);
    let k = labels.iter().copied().max().map_or(0, |m| m as usize + 1);
    let mut acc = vec![[0.0f64; 6]; k];
    let mut bbox = vec![[usize::MAX, usize::MAX, 0, 0]; k];
    for (i, &l) in labels.iter().enumerate() {
        let (x, y) = (i % w, i / w);
        let a = &mut acc[l as usize];
        let p = image.pixel(x, y);
        a[0] += p[0];
        a[1] += p[1];
        a[2] += p[2];
        a[3] += x as f64;
        a[4] += y as f64;
        a[5] += 1.0;
        let b = &mut bbox[l as usize];
        b[0] = b[0].min(x);
        b[1] = b[1].min(y);
        b[2] = b[2].max(x);
        b[3] = b[3].max(y);
    }
    let superpixels = acc
        .iter()
        .zip(bbox)
        .map(|(a, bbox)| Superpixel {
            mean_color: [a[0] / a[5], a[1] / a[5], a[2] / a[5]],
            centroid: [a[3] / a[5], a[4] / a[5]],
            count: a[5] as usize,
            bbox,
        })
        .collect();
    SuperpixelMap {
        width: w,
        height: h,
        labels,
        superpixels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadrants(w: usize, h: usize) -> Image {
        let colors = [[0.9, 0.1, 0.1], [0.1, 0.8, 0.1], [0.1, 0.2, 0.9], [0.9, 0.9, 0.2]];
        let mut img = Image::new(w, h, 3);
        for y in 0..h {
            for x in 0..w {
                let q = usize::from(x >= w / 2) + 2 * usize::from(y >= h / 2);
                img.pixel_mut(x, y).copy_from_slice(&colors[q]);
            }
        }
        img
    }

    #[test]
    fn uniform_image_single_superpixel() {
        let img = Image::filled(20, 14, 3, 0.4);
        let sp = slic_superpixels(&img, 1, 10.0).unwrap();
        assert_eq!(sp.len(), 1);
        assert!(sp.labels.iter().all(|&l| l == 0));
        assert_eq!(sp.superpixels[0].count, 20 * 14);
    }

    #[test]
    fn quadrants_are_recovered_exactly() {
        let img = quadrants(32, 32);
        let sp = slic_superpixels(&img, 4, 40.0).unwrap();
        assert_eq!(sp.len(), 4);
        // Purity oracle: within each quadrant every pixel carries the label of
        // the quadrant's corner pixel.
        let mut misassigned = 0;
        for y in 0..32 {
            for x in 0..32 {
                let (cx, cy) = (if x < 16 { 0 } else { 31 }, if y < 16 { 0 } else { 31 });
                if sp.label(x, y) != sp.label(cx, cy) {
                    misassigned += 1;
                }
            }
        }
        assert_eq!(misassigned, 0);
    }

    #[test]
    fn rejects_too_many_superpixels() {
        let img = Image::filled(3, 3, 3, 0.0);
        assert!(slic_superpixels(&img, 10, 10.0).is_err());
        assert!(slic_superpixels(&img, 0, 10.0).is_err());
        assert!(slic_superpixels(&img, 2, 0.0).is_err());
    }

    #[test]
    fn orphans_merge_into_largest_neighbor() {
        // Label 1 has a stray pixel inside label 0's territory.
        #[rustfmt::skip]
        let labels = vec![
            0, 0, 0, 1, 1,
            0, 1, 0, 1, 1,
            0, 0, 0, 1, 1,
        ];
        let out = enforce_connectivity(&labels, 5, 3);
        assert_eq!(out[6], out[0]);
        assert_eq!(out.iter().filter(|&&l| l == out[3]).count(), 6);
    }

    #[test]
    fn lab_of_white_and_black() {
        let w = rgb_to_lab(&[1.0, 1.0, 1.0]);
        assert!((w[0] - 100.0).abs() < 1e-3 && w[1].abs() < 1e-2 && w[2].abs() < 1e-2);
        let b = rgb_to_lab(&[0.0, 0.0, 0.0]);
        assert!(b[0].abs() < 1e-9);
    }
}

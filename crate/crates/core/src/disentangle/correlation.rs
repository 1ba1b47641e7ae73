use crate::disentangle::voxel::EventVoxelGrid;
use crate::error::{Error, Result};

/// Axis-aligned pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Patch {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Patch {
    pub fn new(x0: usize, y0: usize, width: usize, height: usize) -> Self {
        Patch { x0, y0, width, height }
    }

    /// From an inclusive `[x0, y0, x1, y1]` box.
    pub fn from_bbox(b: [usize; 4]) -> Self {
        Patch::new(b[0], b[1], b[2] + 1 - b[0], b[3] + 1 - b[1])
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }
}

/// Cosine similarities between the temporal slices of a patch.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationVolume {
    pub bins: usize,
    pub patch: Patch,
    /// Row-major `bins × bins`.
    pub matrix: Vec<f64>,
}

impl CorrelationVolume {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.bins + j]
    }

    /// Strict upper triangle in row-major order, `bins·(bins−1)/2` values.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.bins * (self.bins - 1) / 2);
        for i in 0..self.bins {
            for j in i + 1..self.bins {
                out.push(self.get(i, j));
            }
        }
        out
    }
}

pub fn correlation_volume(grid: &EventVoxelGrid, patch: Patch) -> Result<CorrelationVolume> {
    correlation_volume_masked(grid, patch, None)
}

/// As [`correlation_volume`], with pixels where `mask` (patch-sized,
/// row-major) is false treated as empty.
pub fn correlation_volume_masked(grid: &EventVoxelGrid, patch: Patch, mask: Option<&[bool]>) -> Result<CorrelationVolume> {
    if grid.bins < 2 {
        return Err(Error::invalid("correlation volume needs at least two bins"));
    }
    if patch.area() == 0 || patch.x0 + patch.width > grid.width || patch.y0 + patch.height > grid.height {
        return Err(Error::invalid(format!(
            "patch {patch:?} outside {}x{} grid",
            grid.width, grid.height
        )));
    }
    if mask.is_some_and(|m| m.len() != patch.area()) {
        return Err(Error::invalid("mask does not match the patch"));
    }
    let b = grid.bins;
    let slices: Vec<Vec<f64>> = (0..b)
        .map(|k| {
            let s = grid.slice(k);
            (patch.y0..patch.y0 + patch.height)
                .flat_map(|y| {
                    s[y * grid.width + patch.x0..y * grid.width + patch.x0 + patch.width]
                        .iter()
                        .copied()
                })
                .enumerate()
                .map(|(i, v)| if mask.is_none_or(|m| m[i]) { v } else { 0.0 })
                .collect()
        })
        .collect();
    let norms: Vec<f64> = slices.iter().map(|s| s.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let mut matrix = vec![0.0; b * b];
    for i in 0..b {
        for j in i..b {
            let v = if norms[i] == 0.0 || norms[j] == 0.0 {
                0.0
            } else if i == j {
                1.0
            } else {
                let dot: f64 = slices[i].iter().zip(&slices[j]).map(|(a, c)| a * c).sum();
                (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            };
            matrix[i * b + j] = v;
            matrix[j * b + i] = v;
        }
    }
    Ok(CorrelationVolume { bins: b, patch, matrix })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid_from(bins: usize, w: usize, h: usize, data: Vec<f64>) -> EventVoxelGrid {
        EventVoxelGrid {
            bins,
            width: w,
            height: h,
            window: (0, 1),
            grid: data,
            counts: vec![0; w * h],
            latest: vec![None; w * h],
        }
    }

    #[test]
    fn identical_slices_correlate_to_one() {
        let g = grid_from(2, 2, 2, vec![1.0, -2.0, 0.0, 3.0, 1.0, -2.0, 0.0, 3.0]);
        let c = correlation_volume(&g, Patch::new(0, 0, 2, 2)).unwrap();
        assert!((c.get(0, 1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn disjoint_supports_are_orthogonal() {
        let g = grid_from(2, 2, 1, vec![1.0, 0.0, 0.0, 1.0]);
        let c = correlation_volume(&g, Patch::new(0, 0, 2, 1)).unwrap();
        assert_eq!(c.get(0, 1), 0.0);
        assert_eq!(c.get(0, 0), 1.0);
    }

    #[test]
    fn matches_scalar_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (b, w, h) = (5, 7, 6);
        let g = grid_from(b, w, h, (0..b * w * h).map(|_| rng.random_range(-3.0..3.0)).collect());
        let patch = Patch::new(1, 2, 4, 3);
        let c = correlation_volume(&g, patch).unwrap();
        for i in 0..b {
            for j in 0..b {
                let (mut dot, mut ni, mut nj) = (0.0, 0.0, 0.0);
                for y in 2..5 {
                    for x in 1..5 {
                        let (a, bb) = (g.get(i, x, y), g.get(j, x, y));
                        dot += a * bb;
                        ni += a * a;
                        nj += bb * bb;
                    }
                }
                let want = dot / (ni.sqrt() * nj.sqrt());
                assert!((c.get(i, j) - want).abs() < 1e-12);
                assert_eq!(c.get(i, j), c.get(j, i));
            }
        }
        assert_eq!(c.upper_triangle().len(), 10);
    }

    #[test]
    fn mask_hides_pixels() {
        // Slices agree on pixel 0 and disagree on pixel 1.
        let g = grid_from(2, 2, 1, vec![1.0, 1.0, 1.0, -1.0]);
        let p = Patch::new(0, 0, 2, 1);
        assert_eq!(correlation_volume(&g, p).unwrap().get(0, 1), 0.0);
        let c = correlation_volume_masked(&g, p, Some(&[true, false])).unwrap();
        assert!((c.get(0, 1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_out_of_bounds_patch() {
        let g = grid_from(2, 3, 3, vec![0.0; 18]);
        assert!(correlation_volume(&g, Patch::new(2, 0, 2, 1)).is_err());
        let g1 = grid_from(1, 3, 3, vec![0.0; 9]);
        assert!(correlation_volume(&g1, Patch::new(0, 0, 1, 1)).is_err());
    }
}

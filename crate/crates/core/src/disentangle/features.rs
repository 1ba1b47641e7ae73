use rayon::prelude::*;

use crate::dataio::Frame;
use crate::disentangle::correlation::{correlation_volume_masked, Patch};
use crate::disentangle::slic::SuperpixelMap;
use crate::disentangle::voxel::EventVoxelGrid;
use crate::error::{Error, Result};

pub const HIST_BINS: usize = 8;
/// Bound on normalized values so sparse histogram bins cannot dominate.
pub const Z_CLIP: f64 = 6.0;
pub const APPEARANCE_DIM: usize = 3 + 3 * HIST_BINS + 2;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub frame: usize,
    pub superpixel: usize,
    pub appearance: Vec<f64>,
    pub motion: Vec<f64>,
    /// Unnormalized events per pixel per second inside the superpixel.
    pub event_density: f64,
}

impl FeatureVector {
    pub fn concat(&self) -> Vec<f64> {
        let mut v = self.appearance.clone();
        v.extend_from_slice(&self.motion);
        v
    }
}

pub fn motion_dim(bins: usize) -> usize {
    bins * (bins - 1) / 2 + 1
}

fn raw_features(frame_idx: usize, frame: &Frame, sp: &SuperpixelMap, grid: &EventVoxelGrid) -> Result<Vec<FeatureVector>> {
    let (w, h) = (sp.width, sp.height);
    let k = sp.len();
    let mut hist = vec![[0.0f64; 3 * HIST_BINS]; k];
    let mut events = vec![0u64; k];
    for (i, &l) in sp.labels.iter().enumerate() {
        let p = frame.image.pixel(i % w, i / w);
        for c in 0..3 {
            // Linear interpolation between bin centers keeps the histogram
            // continuous in color.
            let pos = (p[c].clamp(0.0, 1.0) * HIST_BINS as f64 - 0.5).clamp(0.0, (HIST_BINS - 1) as f64);
            let b = (pos as usize).min(HIST_BINS - 2);
            let f = pos - b as f64;
            hist[l as usize][c * HIST_BINS + b] += 1.0 - f;
            hist[l as usize][c * HIST_BINS + b + 1] += f;
        }
        events[l as usize] += u64::from(grid.counts[i]);
    }
    let dur = grid.duration_s();
    (0..k)
        .into_par_iter()
        .map(|s| {
            let rec = &sp.superpixels[s];
            let n = rec.count as f64;
            let mut app = Vec::with_capacity(APPEARANCE_DIM);
            app.extend_from_slice(&rec.mean_color);
            app.extend(hist[s].iter().map(|v| v / n));
            app.push(rec.centroid[0] / w as f64);
            app.push(rec.centroid[1] / h as f64);
            let density = events[s] as f64 / (n * dur);
            let patch = Patch::from_bbox(rec.bbox);
            let mask: Vec<bool> = (patch.y0..patch.y0 + patch.height)
                .flat_map(|y| (patch.x0..patch.x0 + patch.width).map(move |x| sp.labels[y * w + x] == s as u32))
                .collect();
            let mut motion = correlation_volume_masked(grid, patch, Some(&mask))?.upper_triangle();
            motion.push(density.ln_1p());
            Ok(FeatureVector {
                frame: frame_idx,
                superpixel: s,
                appearance: app,
                motion,
                event_density: density,
            })
        })
        .collect()
}

/// Z-scores `rows[..][range]` per dimension; zero-variance dimensions pass through.
fn zscore(rows: &mut [&mut Vec<f64>]) {
    let Some(dim) = rows.first().map(|r| r.len()) else { return };
    let n = rows.len() as f64;
    for d in 0..dim {
        let mean = rows.iter().map(|r| r[d]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>() / n;
        if var <= 1e-24 {
            continue;
        }
        let sd = var.sqrt();
        for r in rows.iter_mut() {
            r[d] = ((r[d] - mean) / sd).clamp(-Z_CLIP, Z_CLIP);
        }
    }
}

/// One feature vector per superpixel per frame, with appearance and motion
/// parts z-scored over the whole batch.
pub fn build_features(frames: &[Frame], superpixels: &[SuperpixelMap], grids: &[EventVoxelGrid]) -> Result<Vec<FeatureVector>> {
    if frames.len() != superpixels.len() || frames.len() != grids.len() {
        return Err(Error::invalid("frames, superpixel maps and voxel grids must align"));
    }
    let mut out = Vec::new();
    for (i, ((f, sp), g)) in frames.iter().zip(superpixels).zip(grids).enumerate() {
        if sp.width != g.width || sp.height != g.height {
            return Err(Error::invalid(format!("frame {i}: superpixel map and voxel grid sizes differ")));
        }
        out.extend(raw_features(i, f, sp, g)?);
    }
    zscore(&mut out.iter_mut().map(|f| &mut f.appearance).collect::<Vec<_>>());
    zscore(&mut out.iter_mut().map(|f| &mut f.motion).collect::<Vec<_>>());
    Ok(out)
}

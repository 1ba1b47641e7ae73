//! Spatiotemporal consistency between the object layer and the events: the
//! rendered object color should match the event-integrated brightness, and
//! each Gaussian's projected displacement over one tracking step should match
//! the event normal flow.

use serde::{Deserialize, Serialize};

use crate::dataio::{EventStream, FrameSequence};
use crate::disentangle::{voxelize_events, SceneDecomposition};
use crate::error::{Error, Result};
use crate::render::{object_backward, object_colors, object_splats, projection_jacobian, rasterize, rasterize_backward, RenderConfig};
use crate::scene::events::{event_brightness_rgb, event_flow, EventBrightnessMap, EventFlowField};
use crate::scene::model::{knot_offset, knot_segment, object_anchor};
use crate::scene::{GaussianScene, SceneGrad};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConsistencyConfig {
    /// Event window for the flow fit, centered on the sample time.
    pub flow_window_us: u64,
    pub flow_bins: usize,
    pub window_px: usize,
    pub min_events: usize,
    /// Object-layer density below which the rendered displacement is ignored.
    pub min_density: f64,
    /// Displacement horizon; 0 means one step of the object's trajectory.
    pub delta_us: u64,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        ConsistencyConfig {
            flow_window_us: 40_000,
            flow_bins: 3,
            window_px: 2,
            min_events: 6,
            min_density: 0.5,
            delta_us: 0,
        }
    }
}

/// Event-derived references at one sample time.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyTarget {
    pub t_us: u64,
    pub delta_us: u64,
    /// Three-channel brightness.
    pub brightness: EventBrightnessMap,
    pub mask: Vec<bool>,
    pub flow: EventFlowField,
}

/// Object pixels at `t`: the latest decomposition mask at or before `t`, each
/// object shifted by its tracked displacement since that frame.
pub fn object_mask_at(scene: &GaussianScene, decomp: &SceneDecomposition, frames: &FrameSequence, t: u64) -> Result<Vec<bool>> {
    let fi = frames
        .latest_at_or_before(t)
        .ok_or_else(|| Error::invalid(format!("no frame at or before t = {t}")))?;
    let (w, h) = (decomp.width, decomp.height);
    let src = &decomp.masks[fi];
    let tf = frames.frames[fi].timestamp_us as f64;
    let mut mask = vec![false; w * h];
    for (&id, obj) in &scene.objects {
        let (Some(a), Some(b)) = (obj.trajectory.position_at(tf), obj.trajectory.position_at(t as f64)) else {
            continue;
        };
        let (sx, sy) = ((b.0 - a.0).round() as isize, (b.1 - a.1).round() as isize);
        for y in 0..h {
            for x in 0..w {
                if src[y * w + x] != id {
                    continue;
                }
                let (nx, ny) = (x as isize + sx, y as isize + sy);
                if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                    mask[ny as usize * w + nx as usize] = true;
                }
            }
        }
    }
    Ok(mask)
}

fn default_delta(scene: &GaussianScene) -> u64 {
    scene
        .objects
        .values()
        .map(|o| o.trajectory.step_us)
        .find(|&s| s > 0)
        .unwrap_or(10_000)
}

pub fn build_target(
    scene: &GaussianScene,
    frames: &FrameSequence,
    stream: &EventStream,
    decomp: &SceneDecomposition,
    t_us: u64,
    cfg: &ConsistencyConfig,
) -> Result<ConsistencyTarget> {
    let fi = frames
        .latest_at_or_before(t_us)
        .ok_or_else(|| Error::invalid(format!("no reference frame at or before t = {t_us}")))?;
    let brightness = event_brightness_rgb(&frames.frames[fi], stream, t_us)?;
    let mask = object_mask_at(scene, decomp, frames, t_us)?;
    let half = cfg.flow_window_us / 2;
    let grid = voxelize_events(stream, (t_us.saturating_sub(half), t_us + half.max(1)), cfg.flow_bins)?;
    let flow = event_flow(&grid, cfg.window_px, cfg.min_events)?;
    Ok(ConsistencyTarget {
        t_us,
        delta_us: if cfg.delta_us > 0 { cfg.delta_us } else { default_delta(scene) },
        brightness,
        mask,
        flow,
    })
}

/// Convenience wrapper building targets at each sample time.
pub fn build_targets(
    scene: &GaussianScene,
    frames: &FrameSequence,
    stream: &EventStream,
    decomp: &SceneDecomposition,
    t_samples: &[u64],
    cfg: &ConsistencyConfig,
) -> Result<Vec<ConsistencyTarget>> {
    t_samples
        .iter()
        .map(|&t| build_target(scene, frames, stream, decomp, t, cfg))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyOutput {
    /// Sum of both terms over all targets.
    pub loss: f64,
    pub color_term: f64,
    pub flow_term: f64,
    /// Number of absolute-value terms in each sum.
    pub color_terms: usize,
    pub flow_terms: usize,
    pub grad: SceneGrad,
    pub warnings: Vec<String>,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Sum over targets of the masked L1 color error and the L1 normal-flow
/// displacement error, with gradients for every object parameter.
pub fn consistency_loss(
    scene: &GaussianScene,
    targets: &[ConsistencyTarget],
    cfg: &ConsistencyConfig,
    rcfg: &RenderConfig,
) -> Result<ConsistencyOutput> {
    let mut out = ConsistencyOutput {
        loss: 0.0,
        color_term: 0.0,
        flow_term: 0.0,
        color_terms: 0,
        flow_terms: 0,
        grad: SceneGrad::zeros_like(scene),
        warnings: Vec::new(),
    };
    const K: usize = 5;
    for tg in targets {
        let (w, h) = (tg.brightness.width, tg.brightness.height);
        if tg.brightness.channels != 3 || tg.mask.len() != w * h || tg.flow.valid.len() != w * h {
            return Err(Error::invalid("consistency target buffers have inconsistent sizes"));
        }
        let t0 = tg.t_us as f64;
        let t1 = t0 + tg.delta_us as f64;
        let dt = tg.delta_us as f64 * 1e-6;
        let cam0 = scene.capture_camera(t0);
        let cam1 = scene.capture_camera(t1);
        let input = object_splats(scene, &cam0, t0, rcfg);
        let colors = object_colors(scene, &input);

        // Displacement of each splat over the horizon, plus what its backward needs.
        let mut feats = Vec::with_capacity(input.splats.len() * K);
        let mut later = Vec::with_capacity(input.splats.len());
        for (j, src) in input.sources.iter().enumerate() {
            let obj = &scene.objects[&src.id];
            let g = &obj.gaussians[src.index];
            let (anchor1, ray1) = object_anchor(obj, &cam1, t1)?;
            let seg1 = knot_segment(&obj.trajectory, t1).expect("non-empty trajectory");
            let p1 = anchor1 + g.g.mean() + knot_offset(g, seg1);
            let (u0, v0, _) = cam0.project(&src.mu);
            let (u1, v1, _) = cam1.project(&p1);
            feats.extend_from_slice(&colors[j * 3..j * 3 + 3]);
            feats.push(u1 - u0);
            feats.push(v1 - v0);
            later.push((p1, ray1, seg1));
        }
        let layer = rasterize(&input.splats, &feats, K, w, h, rcfg);

        let mut d_feat = vec![0.0; w * h * K];
        let mut d_den = vec![0.0; w * h];
        let mut flow_pixels = 0;
        for i in 0..w * h {
            if !tg.mask[i] {
                continue;
            }
            for c in 0..3 {
                let r = layer.color[i * K + c] - tg.brightness.values[i * 3 + c];
                out.color_term += r.abs();
                out.color_terms += 1;
                d_feat[i * K + c] = sign(r);
            }
            let sigma = layer.density[i];
            if !tg.flow.valid[i] || sigma < cfg.min_density {
                continue;
            }
            let f = tg.flow.flow[i];
            let mag = (f[0] * f[0] + f[1] * f[1]).sqrt();
            if !(mag > 0.0) {
                continue;
            }
            let n = [f[0] / mag, f[1] / mag];
            let d = [layer.color[i * K + 3] / sigma, layer.color[i * K + 4] / sigma];
            let r = d[0] * n[0] + d[1] * n[1] - mag * dt;
            out.flow_term += r.abs();
            out.flow_terms += 1;
            flow_pixels += 1;
            let s = sign(r);
            d_feat[i * K + 3] = s * n[0] / sigma;
            d_feat[i * K + 4] = s * n[1] / sigma;
            d_den[i] = -s * (n[0] * d[0] + n[1] * d[1]) / sigma;
        }
        if flow_pixels == 0 {
            let msg = format!("t = {}: no valid flow pixels on the object mask, flow term is 0", tg.t_us);
            log::warn!("{msg}");
            out.warnings.push(msg);
        }
        if input.splats.is_empty() {
            continue;
        }
        let rg = rasterize_backward(&layer, &input.splats, &feats, &d_feat, Some(&d_den));
        object_backward(scene, &input, &rg, &cam0, t0, &mut out.grad);

        for (j, src) in input.sources.iter().enumerate() {
            let e = nalgebra::Vector2::new(rg.d_features[j * K + 3], rg.d_features[j * K + 4]);
            if e.x == 0.0 && e.y == 0.0 {
                continue;
            }
            let (p1, ray1, seg1) = &later[j];
            let dp0 = -(projection_jacobian(&cam0, &src.mu).transpose() * e);
            let dp1 = projection_jacobian(&cam1, p1).transpose() * e;
            let og = out.grad.objects.get_mut(&src.id).expect("gradient buffer matches scene");
            let gv = &mut og.gaussians[src.index];
            for c in 0..3 {
                gv[c] += dp0[c] + dp1[c];
            }
            let nk = scene.objects[&src.id].gaussians[src.index].knots.len();
            if nk > 0 {
                for (seg, dp) in [(src.seg, &dp0), (*seg1, &dp1)] {
                    for c in 0..3 {
                        gv[16 + 3 * seg.i0 + c] += dp[c] * (1.0 - seg.a);
                        gv[16 + 3 * seg.i1 + c] += dp[c] * seg.a;
                    }
                }
            }
            og.depth += dp0.dot(&src.ray) + dp1.dot(ray1);
        }
    }
    out.loss = out.color_term + out.flow_term;
    Ok(out)
}

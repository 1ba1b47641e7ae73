//! The Gaussian scene: a static background set plus per-object dynamic sets
//! anchored on 2D trajectories back-projected at a per-object depth.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{CameraModel, FrameSequence};
use crate::disentangle::SceneDecomposition;
use crate::error::{Error, Result};
use crate::fsutil::{read_json, write_json};
use crate::scene::gaussian::{Gaussian3D, Gaussian4D, G3_LEN};
use crate::track::Trajectory;

/// Capture pose at a timestamp; object anchors are back-projected through the
/// capture camera at their time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraKey {
    pub t_us: u64,
    pub camera: CameraModel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectModel {
    pub trajectory: Trajectory,
    /// Camera-space depth at which the 2D anchor is back-projected.
    pub depth: f64,
    pub gaussians: Vec<Gaussian4D>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianScene {
    pub background: Vec<Gaussian3D>,
    pub objects: BTreeMap<u32, ObjectModel>,
    pub cameras: Vec<CameraKey>,
}

/// Linear interpolation weights between knots `i0` and `i1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KnotSegment {
    pub i0: usize,
    pub i1: usize,
    pub a: f64,
}

/// Segment of the trajectory's time axis containing `t`, clamped to the ends.
pub fn knot_segment(traj: &Trajectory, t: f64) -> Option<KnotSegment> {
    let pts = &traj.points;
    let n = pts.len();
    if n == 0 {
        return None;
    }
    if n == 1 || t <= pts[0].t_us as f64 {
        return Some(KnotSegment { i0: 0, i1: 0, a: 0.0 });
    }
    if t >= pts[n - 1].t_us as f64 {
        return Some(KnotSegment {
            i0: n - 1,
            i1: n - 1,
            a: 0.0,
        });
    }
    let i = pts.partition_point(|p| (p.t_us as f64) <= t);
    let (t0, t1) = (pts[i - 1].t_us as f64, pts[i].t_us as f64);
    Some(KnotSegment {
        i0: i - 1,
        i1: i,
        a: (t - t0) / (t1 - t0),
    })
}

pub fn knot_offset(g: &Gaussian4D, seg: KnotSegment) -> Vector3<f64> {
    if g.knots.is_empty() {
        return Vector3::zeros();
    }
    let k0 = Vector3::from(g.knots[seg.i0]);
    let k1 = Vector3::from(g.knots[seg.i1]);
    k0 * (1.0 - seg.a) + k1 * seg.a
}

/// Gaussian placed at a time: world mean and time-weighted opacity.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionedGaussian {
    pub mu: [f64; 3],
    pub opacity: f64,
}

/// World anchor of an object at `t` and its derivative with respect to depth.
pub fn object_anchor(obj: &ObjectModel, capture: &CameraModel, t: f64) -> Result<(Vector3<f64>, Vector3<f64>)> {
    let (u, v) = obj
        .trajectory
        .position_at(t)
        .ok_or_else(|| Error::invalid(format!("trajectory {} is empty", obj.trajectory.object_id)))?;
    let ray = capture.ray(u, v);
    Ok((capture.center() + ray * obj.depth, ray))
}

/// Moves each Gaussian of `obj` to time `t`: anchor plus own offset plus the
/// interpolated knot offset, with opacity scaled by the temporal window.
pub fn deform(obj: &ObjectModel, capture: &CameraModel, t: f64) -> Result<Vec<PositionedGaussian>> {
    let (t0, t1) = obj
        .trajectory
        .span()
        .ok_or_else(|| Error::invalid(format!("trajectory {} is empty", obj.trajectory.object_id)))?;
    if t < t0 as f64 || t > t1 as f64 {
        log::warn!("deform: t = {t} outside trajectory span [{t0}, {t1}], clamping");
    }
    let (anchor, _) = object_anchor(obj, capture, t)?;
    let seg = knot_segment(&obj.trajectory, t).expect("non-empty trajectory");
    Ok(obj
        .gaussians
        .iter()
        .map(|g| {
            let p = anchor + g.g.mean() + knot_offset(g, seg);
            PositionedGaussian {
                mu: [p.x, p.y, p.z],
                opacity: g.g.opacity() * g.temporal_weight(t),
            }
        })
        .collect())
}

impl GaussianScene {
    pub fn num_gaussians(&self) -> usize {
        self.background.len() + self.objects.values().map(|o| o.gaussians.len()).sum::<usize>()
    }

    pub fn num_object_gaussians(&self) -> usize {
        self.objects.values().map(|o| o.gaussians.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.num_gaussians() == 0
    }

    pub fn span(&self) -> Option<(u64, u64)> {
        Some((self.cameras.first()?.t_us, self.cameras.last()?.t_us))
    }

    /// Capture pose at `t`, interpolated between keys and held outside them.
    pub fn capture_camera(&self, t: f64) -> CameraModel {
        let keys = &self.cameras;
        assert!(!keys.is_empty(), "scene has no capture cameras");
        let n = keys.partition_point(|k| (k.t_us as f64) <= t);
        if n == 0 {
            return keys[0].camera.clone();
        }
        if n >= keys.len() {
            return keys[keys.len() - 1].camera.clone();
        }
        let (a, b) = (&keys[n - 1], &keys[n]);
        let w = (t - a.t_us as f64) / (b.t_us as f64 - a.t_us as f64);
        a.camera.interpolate(&b.camera, w)
    }

    pub fn is_finite(&self) -> bool {
        self.background.iter().all(Gaussian3D::is_finite)
            && self
                .objects
                .values()
                .all(|o| o.depth.is_finite() && o.gaussians.iter().all(Gaussian4D::is_finite))
    }

    pub fn max_quaternion_norm_error(&self) -> f64 {
        let err = |q: &[f64; 4]| (q.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs();
        self.background
            .iter()
            .map(|g| err(&g.q))
            .chain(self.objects.values().flat_map(|o| o.gaussians.iter().map(|g| err(&g.g.q))))
            .fold(0.0, f64::max)
    }

    /// All optimizable scalars in a fixed order: background Gaussians, then
    /// per object (ascending id) its depth followed by its Gaussians.
    pub fn params(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for g in &self.background {
            v.extend_from_slice(&g.to_array());
        }
        for o in self.objects.values() {
            v.push(o.depth);
            for g in &o.gaussians {
                v.extend(g.to_vec());
            }
        }
        v
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let mut i = 0;
        for g in &mut self.background {
            *g = Gaussian3D::from_array(&p[i..i + G3_LEN]);
            i += G3_LEN;
        }
        for o in self.objects.values_mut() {
            o.depth = p[i];
            i += 1;
            for g in &mut o.gaussians {
                let n = g.len_params();
                g.set_from(&p[i..i + n]);
                i += n;
            }
        }
    }
}

/// Gradient buffer shaped like a [`GaussianScene`].
#[derive(Clone, Debug, PartialEq)]
pub struct SceneGrad {
    pub background: Vec<[f64; G3_LEN]>,
    pub objects: BTreeMap<u32, ObjectGrad>,
    /// Per background Gaussian, norm of the image-space mean gradient.
    pub bg_view_grad: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectGrad {
    pub depth: f64,
    pub gaussians: Vec<Vec<f64>>,
    pub view_grad: Vec<f64>,
}

impl SceneGrad {
    pub fn zeros_like(scene: &GaussianScene) -> Self {
        SceneGrad {
            background: vec![[0.0; G3_LEN]; scene.background.len()],
            objects: scene
                .objects
                .iter()
                .map(|(&id, o)| {
                    (
                        id,
                        ObjectGrad {
                            depth: 0.0,
                            gaussians: o.gaussians.iter().map(|g| vec![0.0; g.len_params()]).collect(),
                            view_grad: vec![0.0; o.gaussians.len()],
                        },
                    )
                })
                .collect(),
            bg_view_grad: vec![0.0; scene.background.len()],
        }
    }

    /// Same order as [`GaussianScene::params`].
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for g in &self.background {
            v.extend_from_slice(g);
        }
        for o in self.objects.values() {
            v.push(o.depth);
            for g in &o.gaussians {
                v.extend_from_slice(g);
            }
        }
        v
    }

    pub fn scale(&mut self, s: f64) {
        self.background.iter_mut().flatten().for_each(|v| *v *= s);
        for o in self.objects.values_mut() {
            o.depth *= s;
            o.gaussians.iter_mut().flatten().for_each(|v| *v *= s);
        }
    }

    pub fn add_scaled(&mut self, other: &SceneGrad, s: f64) {
        for (a, b) in self.background.iter_mut().zip(&other.background) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += s * y);
        }
        for (id, o) in self.objects.iter_mut() {
            if let Some(b) = other.objects.get(id) {
                o.depth += s * b.depth;
                for (ga, gb) in o.gaussians.iter_mut().zip(&b.gaussians) {
                    ga.iter_mut().zip(gb).for_each(|(x, y)| *x += s * y);
                }
            }
        }
    }

    /// True when every entry is exactly zero.
    pub fn is_zero(&self) -> bool {
        self.to_vec().iter().all(|&v| v == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }
}

// ---------------------------------------------------------------- init

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitConfig {
    /// Background sampling stride, pixels.
    pub stride: usize,
    pub background_depth: f64,
    /// Object sampling stride, pixels.
    pub object_stride: usize,
    /// Uniform pixel jitter of object samples.
    pub jitter_px: f64,
    /// Gaussian scale as a fraction of the sample spacing.
    pub scale_factor: f64,
    pub opacity: f64,
    /// Candidate depths for the per-object depth search, as fractions of the
    /// background depth.
    pub depth_candidates: usize,
    pub seed: u64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            stride: 4,
            background_depth: 5.0,
            object_stride: 2,
            jitter_px: 0.25,
            scale_factor: 0.6,
            opacity: 0.5,
            depth_candidates: 37,
            seed: 0,
        }
    }
}

fn mean_focal(cam: &CameraModel) -> f64 {
    0.5 * (cam.fx + cam.fy)
}

/// Depth minimizing the reprojection error of a constant-velocity world
/// motion fitted to the back-projected anchors at the frame times. Exact ties
/// (for instance a static camera, where depth is unobservable) resolve to the
/// candidate closest to `prior`.
pub fn estimate_object_depth(traj: &Trajectory, frames: &FrameSequence, lo: f64, hi: f64, candidates: usize, prior: f64) -> f64 {
    let obs: Vec<(f64, f64, f64, CameraModel)> = frames
        .frames
        .iter()
        .filter_map(|f| {
            let t = f.timestamp_us as f64;
            let (t0, t1) = traj.span()?;
            if t < t0 as f64 || t > t1 as f64 {
                return None;
            }
            let (u, v) = traj.position_at(t)?;
            Some((t * 1e-6, u, v, f.camera.clone()))
        })
        .collect();
    if obs.len() < 3 || candidates < 2 {
        return prior;
    }
    let tm = obs.iter().map(|o| o.0).sum::<f64>() / obs.len() as f64;
    let stt = obs.iter().map(|o| (o.0 - tm).powi(2)).sum::<f64>();
    let mut best = (f64::INFINITY, prior);
    for k in 0..candidates {
        let d = lo + (hi - lo) * k as f64 / (candidates - 1) as f64;
        let pts: Vec<Vector3<f64>> = obs.iter().map(|(_, u, v, c)| c.backproject(*u, *v, d)).collect();
        let pm = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
        let vel = if stt > 0.0 {
            obs.iter().zip(&pts).map(|(o, p)| (p - pm) * (o.0 - tm)).sum::<Vector3<f64>>() / stt
        } else {
            Vector3::zeros()
        };
        let err: f64 = obs
            .iter()
            .map(|(t, u, v, c)| {
                let p = pm + vel * (t - tm);
                let (pu, pv, _) = c.project(&p);
                (pu - u).powi(2) + (pv - v).powi(2)
            })
            .sum();
        let tol = 1e-9 * (1.0 + best.0.abs());
        if err < best.0 - tol || ((err - best.0).abs() <= tol && (d - prior).abs() < (best.1 - prior).abs()) {
            best = (err, d);
        }
    }
    best.1
}

/// Seeds background Gaussians on a stride grid of background pixels at the
/// background depth plane, and object Gaussians from each object's first mask.
pub fn init_scene(
    decomp: &SceneDecomposition,
    frames: &FrameSequence,
    trajectories: &[Trajectory],
    cfg: &InitConfig,
) -> Result<GaussianScene> {
    if frames.is_empty() {
        return Err(Error::invalid("init_scene needs at least one frame"));
    }
    if decomp.masks.len() != frames.len() || decomp.width != frames.width || decomp.height != frames.height {
        return Err(Error::invalid("decomposition does not match the frame sequence"));
    }
    if cfg.stride == 0 || cfg.object_stride == 0 {
        return Err(Error::invalid("init strides must be positive"));
    }
    let (w, h) = (frames.width, frames.height);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut background = Vec::new();
    let half = cfg.stride / 2;
    for y in (half..h).step_by(cfg.stride) {
        for x in (half..w).step_by(cfg.stride) {
            let i = y * w + x;
            let Some(fi) = (0..frames.len()).find(|&f| decomp.masks[f][i] == 0) else {
                continue;
            };
            let f = &frames.frames[fi];
            let p = f.camera.backproject(x as f64, y as f64, cfg.background_depth);
            let px = f.image.pixel(x, y);
            let scale = cfg.stride as f64 * cfg.background_depth / mean_focal(&f.camera) * cfg.scale_factor;
            background.push(Gaussian3D::isotropic([p.x, p.y, p.z], scale, cfg.opacity, [px[0], px[1], px[2]]));
        }
    }
    if background.is_empty() {
        return Err(Error::invalid("background mask is empty"));
    }

    let mut objects = BTreeMap::new();
    for &id in &decomp.object_ids {
        let traj = trajectories
            .iter()
            .find(|t| t.object_id == id)
            .ok_or_else(|| Error::invalid(format!("no trajectory for object {id}")))?;
        let (t0, t1) = traj.span().ok_or_else(|| Error::invalid(format!("trajectory {id} is empty")))?;
        let prior = 0.5 * cfg.background_depth;
        let depth = estimate_object_depth(
            traj,
            frames,
            0.2 * cfg.background_depth,
            0.95 * cfg.background_depth,
            cfg.depth_candidates,
            prior,
        );
        let Some(fi) = (0..frames.len()).find(|&f| {
            let ts = frames.frames[f].timestamp_us;
            ts >= t0 && ts <= t1 && decomp.masks[f].contains(&id)
        }) else {
            log::warn!("object {id}: no frame inside its trajectory shows it; skipped");
            continue;
        };
        let frame = &frames.frames[fi];
        let t = frame.timestamp_us as f64;
        let obj_stub = ObjectModel {
            trajectory: traj.clone(),
            depth,
            gaussians: Vec::new(),
        };
        let (anchor, _) = object_anchor(&obj_stub, &frame.camera, t)?;
        let scale = cfg.object_stride as f64 * depth / mean_focal(&frame.camera) * cfg.scale_factor;
        let t_c = 0.5 * (t0 + t1) as f64;
        let t_s = (0.5 * (t1 - t0) as f64).max(1.0).ln();
        let nk = traj.points.len();
        let mut gaussians = Vec::new();
        let os = cfg.object_stride;
        for y in (os / 2..h).step_by(os) {
            for x in (os / 2..w).step_by(os) {
                if decomp.masks[fi][y * w + x] != id {
                    continue;
                }
                let (jx, jy) = if cfg.jitter_px > 0.0 {
                    (
                        rng.random_range(-cfg.jitter_px..cfg.jitter_px),
                        rng.random_range(-cfg.jitter_px..cfg.jitter_px),
                    )
                } else {
                    (0.0, 0.0)
                };
                let p = frame.camera.backproject(x as f64 + jx, y as f64 + jy, depth) - anchor;
                let px = frame.image.pixel(x, y);
                gaussians.push(Gaussian4D {
                    g: Gaussian3D::isotropic([p.x, p.y, p.z], scale, cfg.opacity, [px[0], px[1], px[2]]),
                    t_c,
                    t_s,
                    knots: vec![[0.0; 3]; nk],
                });
            }
        }
        objects.insert(
            id,
            ObjectModel {
                trajectory: traj.clone(),
                depth,
                gaussians,
            },
        );
    }
    Ok(GaussianScene {
        background,
        objects,
        cameras: frames
            .frames
            .iter()
            .map(|f| CameraKey {
                t_us: f.timestamp_us,
                camera: f.camera.clone(),
            })
            .collect(),
    })
}

// ---------------------------------------------------------------- checkpoint

#[derive(Serialize, Deserialize)]
struct ObjectEntry {
    trajectory_path: String,
    depth: f64,
    gaussians: Vec<Gaussian4D>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    background: Vec<Gaussian3D>,
    objects: BTreeMap<String, ObjectEntry>,
    cameras: Vec<CameraKey>,
}

pub const SCENE_FILE: &str = "scene.json";

impl GaussianScene {
    /// Writes `scene.json` plus one trajectory file per object into `dir`.
    pub fn write_checkpoint(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut objects = BTreeMap::new();
        for (id, o) in &self.objects {
            o.trajectory.write(dir)?;
            objects.insert(
                id.to_string(),
                ObjectEntry {
                    trajectory_path: Trajectory::file_name(*id),
                    depth: o.depth,
                    gaussians: o.gaussians.clone(),
                },
            );
        }
        write_json(
            &dir.join(SCENE_FILE),
            &CheckpointFile {
                background: self.background.clone(),
                objects,
                cameras: self.cameras.clone(),
            },
        )
    }

    /// Reads a checkpoint from a directory or a `scene.json` path.
    pub fn read_checkpoint(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(SCENE_FILE) } else { path.to_path_buf() };
        let base = file.parent().unwrap_or(Path::new("."));
        let ck: CheckpointFile = read_json(&file)?;
        let mut objects = BTreeMap::new();
        for (key, e) in ck.objects {
            let id: u32 = key
                .parse()
                .map_err(|_| Error::data(&file, None, format!("object id '{key}' is not an integer")))?;
            let trajectory = Trajectory::read(&base.join(&e.trajectory_path))?;
            if trajectory.object_id != id {
                return Err(Error::data(
                    &file,
                    None,
                    format!("object {id} references trajectory of object {}", trajectory.object_id),
                ));
            }
            if e.gaussians.iter().any(|g| g.knots.len() != trajectory.points.len()) {
                return Err(Error::data(
                    &file,
                    None,
                    format!("object {id}: knot count does not match its trajectory"),
                ));
            }
            objects.insert(
                id,
                ObjectModel {
                    trajectory,
                    depth: e.depth,
                    gaussians: e.gaussians,
                },
            );
        }
        if ck.cameras.is_empty() {
            return Err(Error::data(&file, None, "checkpoint has no capture cameras"));
        }
        Ok(GaussianScene {
            background: ck.background,
            objects,
            cameras: ck.cameras,
        })
    }
}

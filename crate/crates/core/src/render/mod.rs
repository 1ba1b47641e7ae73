//! Differentiable splatting of a [`GaussianScene`]: projection, two-layer
//! rasterization, overlap-weighted fusion and the photometric loss.

pub mod fuse;
pub mod loss;
pub mod overlap;
pub mod project;
pub mod raster;

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dataio::CameraModel;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::image::Image;
use crate::scene::gaussian::covariance_backward;
use crate::scene::model::{knot_offset, knot_segment, object_anchor, KnotSegment};
use crate::scene::{GaussianScene, SceneGrad};

pub use fuse::{fuse, fuse_backward, fuse_weights, FuseGrad, FuseWeights};
pub use loss::{psnr, recon_loss, ssim, ReconLoss, PSNR_CAP};
pub use overlap::{OverlapField, OverlapGrad};
pub use project::{project_backward, project_gaussian, projection_jacobian, ProjectedGaussian};
pub use raster::{rasterize, rasterize_backward, LayerRender, RasterGrad};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub alpha_max: f64,
    /// Truncation radius in standard deviations.
    pub sigma_cutoff: f64,
    pub min_transmittance: f64,
    pub tile_size: usize,
    pub near: f64,
    /// Isotropic variance added to every 2D covariance, pixels².
    pub cov_blur: f64,
    pub eig_floor: f64,
    /// Renormalize the fusion weights by their sum.
    pub renormalize: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            alpha_max: 0.99,
            sigma_cutoff: 3.0,
            min_transmittance: 1e-4,
            tile_size: 16,
            near: 0.01,
            cov_blur: 0.0,
            eig_floor: 1e-6,
            renormalize: true,
        }
    }
}

/// Source of the per-pixel overlap probability.
#[derive(Clone, Copy, Debug)]
pub enum Overlap<'a> {
    Field(&'a OverlapField),
    Constant(f64),
}

/// Where an object-layer splat came from, with what its backward pass needs.
#[derive(Clone, Debug)]
pub struct ObjectSplatSource {
    pub id: u32,
    pub index: usize,
    pub mu: Vector3<f64>,
    pub cov: Matrix3<f64>,
    pub seg: KnotSegment,
    /// `∂anchor/∂depth`.
    pub ray: Vector3<f64>,
    pub weight: f64,
    pub base_opacity: f64,
}

/// Projected object Gaussians at one time, aligned with their sources.
#[derive(Clone, Debug, Default)]
pub struct ObjectLayerInput {
    pub splats: Vec<ProjectedGaussian>,
    pub sources: Vec<ObjectSplatSource>,
}

pub fn clamp_time(scene: &GaussianScene, t: f64) -> f64 {
    match scene.span() {
        Some((a, b)) => t.clamp(a as f64, b as f64),
        None => t,
    }
}

/// Deforms every object to `t` (anchors through the capture camera at `t`)
/// and projects through `cam`.
pub fn object_splats(scene: &GaussianScene, cam: &CameraModel, t: f64, cfg: &RenderConfig) -> ObjectLayerInput {
    let mut out = ObjectLayerInput::default();
    if scene.objects.is_empty() {
        return out;
    }
    let capture = scene.capture_camera(t);
    for (&id, obj) in &scene.objects {
        let Ok((anchor, ray)) = object_anchor(obj, &capture, t) else {
            continue;
        };
        let Some(seg) = knot_segment(&obj.trajectory, t) else {
            continue;
        };
        for (index, g) in obj.gaussians.iter().enumerate() {
            let mu = anchor + g.g.mean() + knot_offset(g, seg);
            let cov = g.g.covariance();
            let base = g.g.opacity();
            let weight = g.temporal_weight(t);
            if let Some(p) = project_gaussian(&mu, &cov, base * weight, cam, cfg) {
                out.splats.push(p);
                out.sources.push(ObjectSplatSource {
                    id,
                    index,
                    mu,
                    cov,
                    seg,
                    ray,
                    weight,
                    base_opacity: base,
                });
            }
        }
    }
    out
}

/// Colors of the object splats, three channels each.
pub fn object_colors(scene: &GaussianScene, input: &ObjectLayerInput) -> Vec<f64> {
    input
        .sources
        .iter()
        .flat_map(|s| scene.objects[&s.id].gaussians[s.index].g.c)
        .collect()
}

/// Accumulates an object layer's raster gradient into `grad`. The first three
/// feature channels are the Gaussian colors; any further channels are the
/// caller's business.
pub fn object_backward(scene: &GaussianScene, input: &ObjectLayerInput, rg: &RasterGrad, cam: &CameraModel, t: f64, grad: &mut SceneGrad) {
    let k = rg.channels;
    for (j, (src, splat)) in input.sources.iter().zip(&input.splats).enumerate() {
        let obj = &scene.objects[&src.id];
        let g = &obj.gaussians[src.index];
        let og = grad.objects.get_mut(&src.id).expect("gradient buffer matches scene");
        let gv = &mut og.gaussians[src.index];
        let (dmu, dcov) = project_backward(&src.mu, &src.cov, splat, cam, rg.d_mean2d[j], rg.d_conic[j]);
        let (dq, ds) = covariance_backward(&g.g, &dcov);
        for i in 0..3 {
            gv[i] += dmu[i];
            gv[7 + i] += ds[i];
            if i < k {
                gv[11 + i] += rg.d_features[j * k + i];
            }
        }
        for i in 0..4 {
            gv[3 + i] += dq[i];
        }
        let d_op = rg.d_opacity[j];
        let o = src.base_opacity;
        gv[10] += d_op * src.weight * o * (1.0 - o);
        let (_, dtc, dts) = g.temporal_weight_grad(t);
        gv[14] += d_op * o * dtc;
        gv[15] += d_op * o * dts;
        if !g.knots.is_empty() {
            let (i0, i1, a) = (src.seg.i0, src.seg.i1, src.seg.a);
            for c in 0..3 {
                gv[16 + 3 * i0 + c] += dmu[c] * (1.0 - a);
                gv[16 + 3 * i1 + c] += dmu[c] * a;
            }
        }
        og.depth += dmu.dot(&src.ray);
        og.view_grad[src.index] += (rg.d_mean2d[j][0].powi(2) + rg.d_mean2d[j][1].powi(2)).sqrt();
    }
}

/// Fused render plus everything its backward pass replays.
#[derive(Clone, Debug)]
pub struct RenderOutput {
    /// Fused image clamped to `[0, 1]`.
    pub image: Image,
    /// Fused image before the clamp; losses are taken on this.
    pub raw: Image,
    pub background: LayerRender,
    pub objects: LayerRender,
    pub rho: Vec<f64>,
    pub camera: CameraModel,
    pub t_us: f64,
    bg_splats: Vec<ProjectedGaussian>,
    bg_sources: Vec<usize>,
    bg_features: Vec<f64>,
    obj: ObjectLayerInput,
    obj_features: Vec<f64>,
}

pub fn render(
    scene: &GaussianScene,
    cam: &CameraModel,
    width: usize,
    height: usize,
    t_us: f64,
    overlap: Overlap,
    cfg: &RenderConfig,
) -> RenderOutput {
    if scene.is_empty() {
        log::warn!("render: scene has no Gaussians, returning a black frame");
    }
    let t = clamp_time(scene, t_us);
    let mut bg_splats = Vec::with_capacity(scene.background.len());
    let mut bg_sources = Vec::with_capacity(scene.background.len());
    let mut bg_features = Vec::with_capacity(3 * scene.background.len());
    for (i, g) in scene.background.iter().enumerate() {
        if let Some(p) = project_gaussian(&g.mean(), &g.covariance(), g.opacity(), cam, cfg) {
            bg_splats.push(p);
            bg_sources.push(i);
            bg_features.extend_from_slice(&g.c);
        }
    }
    let background = rasterize(&bg_splats, &bg_features, 3, width, height, cfg);
    let obj = object_splats(scene, cam, t, cfg);
    let obj_features = object_colors(scene, &obj);
    let objects = rasterize(&obj.splats, &obj_features, 3, width, height, cfg);
    let rho = match overlap {
        Overlap::Field(f) => {
            assert!(f.width == width && f.height == height, "overlap field size mismatch");
            f.rho(cam, t)
        }
        Overlap::Constant(r) => vec![r; width * height],
    };
    let fused = fuse(
        &background.color,
        &background.density,
        &objects.color,
        &objects.density,
        &rho,
        cfg.renormalize,
    );
    let raw = Image::from_data(width, height, 3, fused);
    RenderOutput {
        image: raw.clamped(),
        raw,
        background,
        objects,
        rho,
        camera: cam.clone(),
        t_us: t,
        bg_splats,
        bg_sources,
        bg_features,
        obj,
        obj_features,
    }
}

/// Gradients of a loss with respect to the scene and the overlap field, given
/// `∂loss/∂raw` (`H × W × 3`).
pub fn render_backward(
    scene: &GaussianScene,
    out: &RenderOutput,
    overlap: Overlap,
    d_raw: &[f64],
    cfg: &RenderConfig,
) -> (SceneGrad, Option<OverlapGrad>) {
    let fg = fuse_backward(
        &out.background.color,
        &out.background.density,
        &out.objects.color,
        &out.objects.density,
        &out.rho,
        cfg.renormalize,
        d_raw,
    );
    let mut grad = SceneGrad::zeros_like(scene);

    let rg = rasterize_backward(&out.background, &out.bg_splats, &out.bg_features, &fg.d_c_s, Some(&fg.d_sigma_s));
    for (j, &b) in out.bg_sources.iter().enumerate() {
        let g = &scene.background[b];
        let (dmu, dcov) = project_backward(
            &g.mean(),
            &g.covariance(),
            &out.bg_splats[j],
            &out.camera,
            rg.d_mean2d[j],
            rg.d_conic[j],
        );
        let (dq, ds) = covariance_backward(g, &dcov);
        let gv = &mut grad.background[b];
        for i in 0..3 {
            gv[i] += dmu[i];
            gv[7 + i] += ds[i];
            gv[11 + i] += rg.d_features[j * 3 + i];
        }
        for i in 0..4 {
            gv[3 + i] += dq[i];
        }
        let o = g.opacity();
        gv[10] += rg.d_opacity[j] * o * (1.0 - o);
        grad.bg_view_grad[b] += (rg.d_mean2d[j][0].powi(2) + rg.d_mean2d[j][1].powi(2)).sqrt();
    }

    if !out.obj.splats.is_empty() {
        let rg = rasterize_backward(&out.objects, &out.obj.splats, &out.obj_features, &fg.d_c_d, Some(&fg.d_sigma_d));
        object_backward(scene, &out.obj, &rg, &out.camera, out.t_us, &mut grad);
    }

    let og = match overlap {
        Overlap::Field(f) => Some(f.backward(&out.camera, out.t_us, &fg.d_rho)),
        Overlap::Constant(_) => None,
    };
    (grad, og)
}

fn plane_image(w: usize, h: usize, v: &[f64]) -> Image {
    Image::from_data(w, h, 1, v.to_vec())
}

/// Writes the layer colors, densities and ρ as PNG plus float PFM files.
pub fn dump_layers(out: &RenderOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (w, h) = (out.image.width, out.image.height);
    let layers = [
        ("c_s", Image::from_data(w, h, 3, out.background.color.clone())),
        ("c_d", Image::from_data(w, h, 3, out.objects.color.clone())),
        ("sigma_s", plane_image(w, h, &out.background.density)),
        ("sigma_d", plane_image(w, h, &out.objects.density)),
        ("rho", plane_image(w, h, &out.rho)),
    ];
    for (name, img) in layers {
        img.clamped().write_png(&dir.join(format!("{name}.png")))?;
        write_atomic(&dir.join(format!("{name}.pfm")), &img.encode_pfm())?;
    }
    Ok(())
}

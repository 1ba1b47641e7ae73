//! Held-out view metrics.

use crate::dataio::FrameSequence;
use crate::error::{Error, Result};
use crate::render::{psnr, render, ssim, Overlap, RenderConfig};
use crate::scene::GaussianScene;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalMetrics {
    pub psnr: f64,
    pub ssim: f64,
    /// `(timestamp, psnr, ssim)` per view.
    pub per_frame: Vec<(u64, f64, f64)>,
}

/// Renders every frame's pose and time and compares the clamped render with
/// the frame image.
pub fn evaluate(scene: &GaussianScene, overlap: Overlap, heldout: &FrameSequence, cfg: &RenderConfig) -> Result<EvalMetrics> {
    if heldout.is_empty() {
        return Err(Error::invalid("held-out set is empty"));
    }
    let mut per_frame = Vec::with_capacity(heldout.len());
    for f in &heldout.frames {
        let out = render(scene, &f.camera, heldout.width, heldout.height, f.timestamp_us as f64, overlap, cfg);
        per_frame.push((f.timestamp_us, psnr(&out.image, &f.image)?, ssim(&out.image, &f.image)?));
    }
    let n = per_frame.len() as f64;
    Ok(EvalMetrics {
        psnr: per_frame.iter().map(|p| p.1).sum::<f64>() / n,
        ssim: per_frame.iter().map(|p| p.2).sum::<f64>() / n,
        per_frame,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{CameraModel, Frame};
    use crate::image::Image;
    use crate::render::RenderOutput;
    use crate::scene::test_support::random_scene;

    fn seq(frames: Vec<(Image, CameraModel, u64)>) -> FrameSequence {
        let (w, h) = (frames[0].0.width, frames[0].0.height);
        FrameSequence::new(
            w,
            h,
            frames
                .into_iter()
                .map(|(image, camera, t)| Frame {
                    image,
                    camera,
                    timestamp_us: t,
                })
                .collect(),
        )
        .unwrap()
    }

    fn rendered(s: &GaussianScene, t: u64) -> (RenderOutput, CameraModel) {
        let cam = s.capture_camera(t as f64);
        (
            render(s, &cam, 24, 24, t as f64, Overlap::Constant(0.7), &RenderConfig::default()),
            cam,
        )
    }

    #[test]
    fn exact_views_hit_the_cap() {
        let s = random_scene(1, 12, 5, 24);
        let (o, cam) = rendered(&s, 30_000);
        let m = evaluate(
            &s,
            Overlap::Constant(0.7),
            &seq(vec![(o.image, cam, 30_000)]),
            &RenderConfig::default(),
        )
        .unwrap();
        assert_eq!(m.psnr, 100.0);
        assert!((m.ssim - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_heldout_is_an_error() {
        let s = random_scene(1, 3, 0, 8);
        let empty = FrameSequence {
            width: 8,
            height: 8,
            frames: vec![],
        };
        assert!(evaluate(&s, Overlap::Constant(0.0), &empty, &RenderConfig::default()).is_err());
    }

    #[test]
    fn matches_scalar_loop_oracle() {
        let s = random_scene(2, 15, 6, 24);
        let mut frames = Vec::new();
        let mut expect = Vec::new();
        for (k, t) in [10_000u64, 60_000].into_iter().enumerate() {
            let (o, cam) = rendered(&s, t);
            // Perturbed ground truth.
            let gt = Image::from_data(
                24,
                24,
                3,
                o.image
                    .data
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (v + 0.05 * ((i * (k + 3)) % 7) as f64 / 7.0).min(1.0))
                    .collect(),
            );
            let mut se = 0.0;
            for (a, b) in o.image.data.iter().zip(&gt.data) {
                se += (a - b) * (a - b);
            }
            expect.push(10.0 * (1.0 / (se / gt.data.len() as f64)).log10());
            frames.push((gt, cam, t));
        }
        let m = evaluate(&s, Overlap::Constant(0.7), &seq(frames), &RenderConfig::default()).unwrap();
        let mean = (expect[0] + expect[1]) / 2.0;
        assert!((m.psnr - mean).abs() < 1e-9, "{} vs {mean}", m.psnr);
        let ms = (m.per_frame[0].2 + m.per_frame[1].2) / 2.0;
        assert!((m.ssim - ms).abs() < 1e-12);
    }

    #[test]
    fn uniform_offset_is_twenty_db() {
        let a = Image::filled(8, 8, 3, 0.5);
        let b = Image::filled(8, 8, 3, 0.6);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }
}

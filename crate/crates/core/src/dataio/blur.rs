use crate::dataio::script::SceneScript;
use crate::dataio::types::{Frame, FrameSequence};
use crate::error::{Error, Result};
use crate::image::Image;

/// Per-pixel mean of equally sized images.
pub fn average_images(images: &[Image]) -> Image {
    assert!(!images.is_empty(), "average of no images");
    let mut out = Image::new(images[0].width, images[0].height, images[0].channels);
    for img in images {
        assert!(img.same_shape(&out), "image shape mismatch");
        out.data.iter_mut().zip(&img.data).for_each(|(o, v)| *o += v);
    }
    let inv = 1.0 / images.len() as f64;
    out.data.iter_mut().for_each(|v| *v *= inv);
    out
}

/// Sub-frame instants averaged into the blurred frame at `t`: `window`
/// consecutive samples at the script's sampling rate, centered on `t` and
/// clamped to the script duration.
pub fn blur_instants(script: &SceneScript, t: u64, window: usize) -> Vec<f64> {
    let dt = 1e6 / script.subfps;
    let half = (window as f64 - 1.0) / 2.0;
    (0..window)
        .map(|j| (t as f64 + (j as f64 - half) * dt).clamp(0.0, script.duration_us as f64))
        .collect()
}

/// Replaces each frame by the mean of `window` sub-frames rendered around its
/// timestamp. Timestamps and poses are preserved.
pub fn synthesize_blur(script: &SceneScript, frames: &FrameSequence, window: usize) -> Result<FrameSequence> {
    if window == 0 {
        return Err(Error::invalid("blur window must be at least 1"));
    }
    let available = (script.subfps / script.fps + 1e-9).floor() as usize;
    if window > available {
        return Err(Error::invalid(format!(
            "blur window {window} exceeds the {available} sub-frames available per frame"
        )));
    }
    if window == 1 {
        return Ok(frames.clone());
    }
    let out = frames
        .frames
        .iter()
        .map(|f| {
            let subs: Vec<Image> = blur_instants(script, f.timestamp_us, window)
                .into_iter()
                .map(|t| script.render_at(t).image)
                .collect();
            Frame {
                image: average_images(&subs),
                timestamp_us: f.timestamp_us,
                camera: f.camera.clone(),
            }
        })
        .collect();
    FrameSequence::new(frames.width, frames.height, out)
}

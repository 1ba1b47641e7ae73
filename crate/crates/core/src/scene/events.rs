//! References derived from the event stream: integrated brightness at a query
//! time and normal flow from local time-surface plane fits.

use nalgebra::{Matrix3, Vector3};

use crate::dataio::simulate::LOG_FLOOR;
use crate::dataio::{EventStream, Frame};
use crate::disentangle::EventVoxelGrid;
use crate::error::{Error, Result};
use crate::image::Image;

/// Intensity reconstructed from a reference frame plus the events after it.
#[derive(Clone, Debug, PartialEq)]
pub struct EventBrightnessMap {
    pub width: usize,
    pub height: usize,
    /// Channels per pixel: 1 for luminance, 3 for the per-channel variant.
    pub channels: usize,
    pub values: Vec<f64>,
    pub reference_t_us: u64,
    pub t_query_us: u64,
}

/// Net polarity per pixel over `(t0, t1]`.
pub fn polarity_sums(stream: &EventStream, t0: u64, t1: u64) -> Vec<i64> {
    let mut sums = vec![0i64; stream.width * stream.height];
    if t1 > t0 {
        for e in stream.between(t0, t1) {
            sums[e.y as usize * stream.width + e.x as usize] += i64::from(e.p);
        }
    }
    sums
}

fn integrate(base: &[f64], channels: usize, sums: &[i64], c: f64) -> Vec<f64> {
    base.iter()
        .enumerate()
        .map(|(i, &v)| (v.max(LOG_FLOOR).ln() + c * sums[i / channels] as f64).exp().clamp(0.0, 1.0))
        .collect()
}

fn check(frame: &Frame, stream: &EventStream, t_query: u64) -> Result<()> {
    if frame.timestamp_us > t_query {
        return Err(Error::invalid(format!(
            "no reference frame at or before t = {t_query} (frame at {})",
            frame.timestamp_us
        )));
    }
    if frame.image.width != stream.width || frame.image.height != stream.height {
        return Err(Error::invalid("frame and event sensor sizes differ"));
    }
    Ok(())
}

/// `L = clamp(exp(log max(I(t0), 1e-4) + C·Σp), 0, 1)` on frame luminance.
pub fn event_brightness(frame: &Frame, stream: &EventStream, t_query: u64) -> Result<EventBrightnessMap> {
    check(frame, stream, t_query)?;
    let sums = polarity_sums(stream, frame.timestamp_us, t_query);
    Ok(EventBrightnessMap {
        width: stream.width,
        height: stream.height,
        channels: 1,
        values: integrate(&frame.image.luminance(), 1, &sums, stream.contrast),
        reference_t_us: frame.timestamp_us,
        t_query_us: t_query,
    })
}

/// Same integration applied to each color channel of the reference frame.
/// Brightness events scale all channels together, so this carries the frame's
/// chroma forward in time.
pub fn event_brightness_rgb(frame: &Frame, stream: &EventStream, t_query: u64) -> Result<EventBrightnessMap> {
    check(frame, stream, t_query)?;
    let sums = polarity_sums(stream, frame.timestamp_us, t_query);
    let ch = frame.image.channels;
    Ok(EventBrightnessMap {
        width: stream.width,
        height: stream.height,
        channels: ch,
        values: integrate(&frame.image.data, ch, &sums, stream.contrast),
        reference_t_us: frame.timestamp_us,
        t_query_us: t_query,
    })
}

impl EventBrightnessMap {
    pub fn to_image(&self) -> Image {
        Image::from_data(self.width, self.height, self.channels, self.values.clone())
    }
}

/// Normal flow in pixels per second with a validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct EventFlowField {
    pub width: usize,
    pub height: usize,
    pub flow: Vec<[f64; 2]>,
    pub valid: Vec<bool>,
}

impl EventFlowField {
    pub fn num_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Fits `t ≈ a·x + b·y + d` to the latest-event times of the pixels within
/// `window_px` of each pixel; flow is `(a, b)/(a² + b²)`.
pub fn event_flow(grid: &EventVoxelGrid, window_px: usize, min_events: usize) -> Result<EventFlowField> {
    if grid.bins < 3 {
        return Err(Error::invalid(format!(
            "event flow needs at least 3 temporal bins, got {}",
            grid.bins
        )));
    }
    let (w, h) = (grid.width, grid.height);
    let r = window_px as isize;
    let mut flow = vec![[0.0; 2]; w * h];
    let mut valid = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let Some(tc) = grid.latest[y * w + x] else {
                continue;
            };
            let mut ata = Matrix3::zeros();
            let mut atb = Vector3::zeros();
            let mut n = 0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (xx, yy) = (x as isize + dx, y as isize + dy);
                    if xx < 0 || yy < 0 || xx >= w as isize || yy >= h as isize {
                        continue;
                    }
                    let Some(t) = grid.latest[yy as usize * w + xx as usize] else {
                        continue;
                    };
                    let row = Vector3::new(dx as f64, dy as f64, 1.0);
                    ata += row * row.transpose();
                    atb += row * ((t as f64 - tc as f64) * 1e-6);
                    n += 1;
                }
            }
            if n < min_events.max(3) {
                continue;
            }
            let Some(inv) = ata.try_inverse() else {
                continue;
            };
            // Reject near-collinear neighbourhoods.
            if ata.determinant().abs() < 1e-9 * ata.norm().powi(3) {
                continue;
            }
            let sol = inv * atb;
            let (a, b) = (sol.x, sol.y);
            let g2 = a * a + b * b;
            if !(g2 > 1e-18) || !g2.is_finite() {
                continue;
            }
            flow[y * w + x] = [a / g2, b / g2];
            valid[y * w + x] = true;
        }
    }
    Ok(EventFlowField {
        width: w,
        height: h,
        flow,
        valid,
    })
}

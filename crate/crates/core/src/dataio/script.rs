//! Procedural desk-scale scenes: a textured background plane, fronto-parallel
//! textured sprites moving along piecewise-linear 3D paths, and a translating
//! camera. Everything is analytic, so dense intensity samples, ground-truth
//! object masks and sharp reference frames come for free.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::types::{CameraModel, Frame, FrameSequence};
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Texture {
    Constant {
        rgb: [f64; 3],
    },
    Checker {
        a: [f64; 3],
        b: [f64; 3],
        period: f64,
    },
    /// Sinusoidal stripes blending `a` and `b` along direction `angle_deg`.
    Stripes {
        a: [f64; 3],
        b: [f64; 3],
        period: f64,
        #[serde(default)]
        angle_deg: f64,
    },
    /// Smooth value noise between `lo` and `hi`.
    Noise {
        seed: u64,
        scale: f64,
        #[serde(default = "default_octaves")]
        octaves: u32,
        lo: [f64; 3],
        hi: [f64; 3],
    },
}

fn default_octaves() -> u32 {
    2
}

impl Texture {
    pub fn sample(&self, x: f64, y: f64) -> [f64; 3] {
        match self {
            Texture::Constant { rgb } => *rgb,
            Texture::Checker { a, b, period } => {
                let i = (x / period).floor() as i64 + (y / period).floor() as i64;
                if i.rem_euclid(2) == 0 {
                    *a
                } else {
                    *b
                }
            }
            Texture::Stripes { a, b, period, angle_deg } => {
                let (s, c) = angle_deg.to_radians().sin_cos();
                let phase = (x * c + y * s) / period * std::f64::consts::TAU;
                let w = 0.5 + 0.5 * phase.sin();
                mix(a, b, w)
            }
            Texture::Noise {
                seed,
                scale,
                octaves,
                lo,
                hi,
            } => {
                let mut total = 0.0;
                let mut norm = 0.0;
                let mut amp = 1.0;
                let mut freq = 1.0 / scale;
                for o in 0..*octaves {
                    total += amp * value_noise(seed.wrapping_add(u64::from(o) * 0x9E37), x * freq, y * freq);
                    norm += amp;
                    amp *= 0.5;
                    freq *= 2.0;
                }
                mix(lo, hi, total / norm)
            }
        }
    }
}

fn mix(a: &[f64; 3], b: &[f64; 3], w: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * w, a[1] + (b[1] - a[1]) * w, a[2] + (b[2] - a[2]) * w]
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let mut h = seed ^ (ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^= h >> 33;
    h = h.wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    h ^= h >> 33;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let (sx, sy) = (smooth(x - fx), smooth(y - fy));
    let v00 = lattice(seed, ix, iy);
    let v10 = lattice(seed, ix + 1, iy);
    let v01 = lattice(seed, ix, iy + 1);
    let v11 = lattice(seed, ix + 1, iy + 1);
    let top = v00 + (v10 - v00) * sx;
    let bottom = v01 + (v11 - v01) * sx;
    top + (bottom - top) * sy
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathKey {
    pub t_us: u64,
    pub position: [f64; 3],
}

/// Piecewise-linear interpolation through `keys`, held constant outside them.
fn path_at(keys: &[PathKey], t: f64) -> [f64; 3] {
    let n = keys.partition_point(|k| (k.t_us as f64) <= t);
    if n == 0 {
        return keys[0].position;
    }
    if n >= keys.len() {
        return keys[keys.len() - 1].position;
    }
    let (k0, k1) = (&keys[n - 1], &keys[n]);
    let a = (t - k0.t_us as f64) / (k1.t_us as f64 - k0.t_us as f64);
    let (p, q) = (k0.position, k1.position);
    [p[0] + (q[0] - p[0]) * a, p[1] + (q[1] - p[1]) * a, p[2] + (q[2] - p[2]) * a]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shadow {
    /// World-space offset of the shadow footprint on the background plane.
    pub offset: [f64; 2],
    /// Fraction of background light removed at the footprint center.
    pub strength: f64,
    /// Width of the soft edge, world units.
    pub softness: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sprite {
    /// Object id (≥ 1) written into ground-truth masks.
    pub id: u32,
    pub texture: Texture,
    /// World-space width and height.
    pub size: [f64; 2],
    pub path: Vec<PathKey>,
    /// Optional `[appear, vanish)` interval in microseconds.
    #[serde(default)]
    pub visible_us: Option<[u64; 2]>,
    #[serde(default)]
    pub shadow: Option<Shadow>,
    #[serde(default)]
    pub flicker: Option<Flicker>,
}

/// Sinusoidal brightness modulation: gain `1 + amplitude * sin(2 pi t / period)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Flicker {
    pub amplitude: f64,
    pub period_us: f64,
}

impl Sprite {
    pub fn gain_at(&self, t: f64) -> f64 {
        self.flicker
            .as_ref()
            .map_or(1.0, |f| 1.0 + f.amplitude * (std::f64::consts::TAU * t / f.period_us).sin())
    }

    pub fn position_at(&self, t: f64) -> [f64; 3] {
        path_at(&self.path, t)
    }

    pub fn visible_at(&self, t: f64) -> bool {
        self.visible_us.is_none_or(|[a, b]| t >= a as f64 && t < b as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Background {
    /// World z of the background plane.
    pub depth: f64,
    pub texture: Texture,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneScript {
    pub width: usize,
    pub height: usize,
    pub duration_us: u64,
    /// Frame rate of the frame camera.
    pub fps: f64,
    /// Rate at which the dense intensity function is sampled for event
    /// generation and blur synthesis.
    pub subfps: f64,
    pub intrinsics: Intrinsics,
    pub background: Background,
    #[serde(default)]
    pub sprites: Vec<Sprite>,
    /// Camera optical-center path; the camera always looks down +z.
    #[serde(default)]
    pub camera: Vec<PathKey>,
    /// Samples per pixel side used when rendering.
    #[serde(default = "default_supersample")]
    pub supersample: usize,
}

fn default_supersample() -> usize {
    2
}

/// One rendered instant: RGB image plus the ground-truth object id per pixel
/// (0 = background).
#[derive(Clone, Debug)]
pub struct ScriptSample {
    pub image: Image,
    pub labels: Vec<u32>,
}

impl SceneScript {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("script has an empty image"));
        }
        if self.duration_us == 0 {
            return Err(Error::invalid("script has zero duration"));
        }
        if !(self.fps > 0.0) || !(self.subfps > 0.0) {
            return Err(Error::invalid("frame rate and sampling rate must be positive"));
        }
        if self.supersample == 0 {
            return Err(Error::invalid("supersample must be at least 1"));
        }
        if !(self.intrinsics.fx > 0.0 && self.intrinsics.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        for s in &self.sprites {
            if s.id == 0 {
                return Err(Error::invalid("sprite id 0 is reserved for the background"));
            }
            if s.path.is_empty() {
                return Err(Error::invalid(format!("sprite {} has an empty path", s.id)));
            }
            if s.path.windows(2).any(|w| w[1].t_us <= w[0].t_us) {
                return Err(Error::invalid(format!("sprite {} path keys not increasing", s.id)));
            }
            if let Some(f) = &s.flicker {
                if !(f.period_us > 0.0) || !(f.amplitude.abs() < 1.0) {
                    return Err(Error::invalid(format!(
                        "sprite {} flicker needs period > 0 and |amplitude| < 1",
                        s.id
                    )));
                }
            }
        }
        if self.camera.windows(2).any(|w| w[1].t_us <= w[0].t_us) {
            return Err(Error::invalid("camera path keys not increasing"));
        }
        Ok(())
    }

    pub fn base_camera(&self) -> CameraModel {
        let k = &self.intrinsics;
        CameraModel::new(k.fx, k.fy, k.cx, k.cy)
    }

    pub fn camera_center_at(&self, t: f64) -> [f64; 3] {
        if self.camera.is_empty() {
            [0.0; 3]
        } else {
            path_at(&self.camera, t)
        }
    }

    pub fn camera_at(&self, t: f64) -> CameraModel {
        self.base_camera().looking_forward_from(self.camera_center_at(t))
    }

    /// Frame timestamps `k·10⁶/fps` up to the duration.
    pub fn frame_times(&self) -> Vec<u64> {
        let mut out = Vec::new();
        let mut k = 0u64;
        loop {
            let t = (k as f64 * 1e6 / self.fps).round() as u64;
            if t > self.duration_us {
                break;
            }
            out.push(t);
            k += 1;
        }
        out
    }

    /// Dense sampling instants used by the event simulator.
    pub fn sample_times(&self) -> Vec<f64> {
        let dt = 1e6 / self.subfps;
        let n = (self.duration_us as f64 / dt).floor() as usize;
        (0..=n).map(|k| k as f64 * dt).collect()
    }

    fn shade(&self, center: [f64; 3], sprites: &[(usize, [f64; 3], f64)], u: f64, v: f64) -> ([f64; 3], u32) {
        let k = &self.intrinsics;
        let (du, dv) = ((u - k.cx) / k.fx, (v - k.cy) / k.fy);
        for &(i, p, gain) in sprites {
            let depth = p[2] - center[2];
            if depth <= 1e-6 {
                continue;
            }
            let s = &self.sprites[i];
            let (x, y) = (center[0] + du * depth - p[0], center[1] + dv * depth - p[1]);
            if x.abs() <= 0.5 * s.size[0] && y.abs() <= 0.5 * s.size[1] {
                return (s.texture.sample(x, y).map(|c| c * gain), s.id);
            }
        }
        let depth = self.background.depth - center[2];
        let (x, y) = (center[0] + du * depth, center[1] + dv * depth);
        let mut rgb = self.background.texture.sample(x, y);
        for &(i, p, _) in sprites {
            let s = &self.sprites[i];
            if let Some(sh) = &s.shadow {
                let ex = soft_box(x - p[0] - sh.offset[0], 0.5 * s.size[0], sh.softness);
                let ey = soft_box(y - p[1] - sh.offset[1], 0.5 * s.size[1], sh.softness);
                let f = 1.0 - sh.strength * ex * ey;
                rgb.iter_mut().for_each(|c| *c *= f);
            }
        }
        (rgb, 0)
    }

    /// Renders the scene at time `t` (microseconds, fractional allowed).
    pub fn render_at(&self, t: f64) -> ScriptSample {
        let center = self.camera_center_at(t);
        let mut sprites: Vec<(usize, [f64; 3], f64)> = self
            .sprites
            .iter()
            .enumerate()
            .filter(|(_, s)| s.visible_at(t))
            .map(|(i, s)| (i, s.position_at(t), s.gain_at(t)))
            .collect();
        sprites.sort_by(|a, b| a.1[2].total_cmp(&b.1[2]).then(a.0.cmp(&b.0)));

        let (w, h, ss) = (self.width, self.height, self.supersample);
        let inv = 1.0 / (ss * ss) as f64;
        let rows: Vec<(Vec<f64>, Vec<u32>)> = (0..h)
            .into_par_iter()
            .map(|y| {
                let mut rgb = vec![0.0; w * 3];
                let mut lab = vec![0u32; w];
                for x in 0..w {
                    let mut acc = [0.0; 3];
                    for sy in 0..ss {
                        for sx in 0..ss {
                            let u = x as f64 + (sx as f64 + 0.5) / ss as f64 - 0.5;
                            let v = y as f64 + (sy as f64 + 0.5) / ss as f64 - 0.5;
                            let (c, _) = self.shade(center, &sprites, u, v);
                            acc[0] += c[0];
                            acc[1] += c[1];
                            acc[2] += c[2];
                        }
                    }
                    for c in 0..3 {
                        rgb[x * 3 + c] = (acc[c] * inv).clamp(0.0, 1.0);
                    }
                    lab[x] = self.shade(center, &sprites, x as f64, y as f64).1;
                }
                (rgb, lab)
            })
            .collect();
        let mut data = Vec::with_capacity(w * h * 3);
        let mut labels = Vec::with_capacity(w * h);
        for (r, l) in rows {
            data.extend(r);
            labels.extend(l);
        }
        ScriptSample {
            image: Image::from_data(w, h, 3, data),
            labels,
        }
    }

    /// Sharp frames at the frame rate, with the script's camera poses.
    pub fn sharp_frames(&self) -> Result<FrameSequence> {
        self.validate()?;
        let frames = self
            .frame_times()
            .into_iter()
            .map(|t| Frame {
                image: self.render_at(t as f64).image,
                timestamp_us: t,
                camera: self.camera_at(t as f64),
            })
            .collect();
        FrameSequence::new(self.width, self.height, frames)
    }

    /// Ground-truth object-id masks at the frame timestamps.
    pub fn gt_masks(&self) -> Vec<Vec<u32>> {
        self.frame_times().into_iter().map(|t| self.render_at(t as f64).labels).collect()
    }

    /// Projected center of sprite `id` at time `t`, in pixels.
    pub fn sprite_pixel_center(&self, id: u32, t: f64) -> Option<(f64, f64)> {
        let s = self.sprites.iter().find(|s| s.id == id)?;
        let p = s.position_at(t);
        let c = self.camera_center_at(t);
        let depth = p[2] - c[2];
        let k = &self.intrinsics;
        Some((k.fx * (p[0] - c[0]) / depth + k.cx, k.fy * (p[1] - c[1]) / depth + k.cy))
    }
}

/// 1 inside `|d| <= half`, falling linearly to 0 over `soft`.
fn soft_box(d: f64, half: f64, soft: f64) -> f64 {
    let e = d.abs() - half;
    if e <= 0.0 {
        1.0
    } else if soft <= 0.0 || e >= soft {
        0.0
    } else {
        1.0 - e / soft
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_script() -> SceneScript {
        SceneScript {
            width: 16,
            height: 12,
            duration_us: 100_000,
            fps: 20.0,
            subfps: 200.0,
            intrinsics: Intrinsics {
                fx: 16.0,
                fy: 16.0,
                cx: 8.0,
                cy: 6.0,
            },
            background: Background {
                depth: 5.0,
                texture: Texture::Constant { rgb: [0.2, 0.3, 0.4] },
            },
            sprites: vec![Sprite {
                id: 1,
                texture: Texture::Constant { rgb: [1.0, 1.0, 1.0] },
                size: [0.6, 0.6],
                path: vec![
                    PathKey {
                        t_us: 0,
                        position: [-0.5, 0.0, 2.0],
                    },
                    PathKey {
                        t_us: 100_000,
                        position: [0.5, 0.0, 2.0],
                    },
                ],
                visible_us: None,
                shadow: None,
                flicker: None,
            }],
            camera: vec![],
            supersample: 1,
        }
    }

    #[test]
    fn frame_times_cover_duration() {
        let s = tiny_script();
        assert_eq!(s.frame_times(), vec![0, 50_000, 100_000]);
        assert_eq!(s.sample_times().len(), 21);
    }

    #[test]
    fn sprite_occludes_background_and_labels_it() {
        let s = tiny_script();
        let sample = s.render_at(50_000.0);
        // Sprite centered on the optical axis at t = 50 ms.
        let i = 6 * 16 + 8;
        assert_eq!(sample.labels[i], 1);
        assert_eq!(sample.image.pixel(8, 6), &[1.0, 1.0, 1.0]);
        assert_eq!(sample.labels[0], 0);
        let (u, v) = s.sprite_pixel_center(1, 50_000.0).unwrap();
        assert!((u - 8.0).abs() < 1e-12 && (v - 6.0).abs() < 1e-12);
    }

    #[test]
    fn path_interpolates_linearly() {
        let s = tiny_script();
        let p = s.sprites[0].position_at(25_000.0);
        assert!((p[0] + 0.25).abs() < 1e-12);
        assert_eq!(s.sprites[0].position_at(1e9), [0.5, 0.0, 2.0]);
    }

    #[test]
    fn script_json_round_trip() {
        let s = tiny_script();
        let text = serde_json::to_string(&s).unwrap();
        let back: SceneScript = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn noise_texture_is_bounded() {
        let t = Texture::Noise {
            seed: 3,
            scale: 0.5,
            octaves: 3,
            lo: [0.1, 0.1, 0.1],
            hi: [0.9, 0.8, 0.7],
        };
        for i in 0..200 {
            let c = t.sample(i as f64 * 0.037 - 3.0, i as f64 * 0.051);
            assert!(c[0] >= 0.1 && c[0] <= 0.9);
        }
    }
}

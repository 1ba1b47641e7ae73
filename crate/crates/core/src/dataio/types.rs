use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// One polarity event. Timestamps are integer microseconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Event {
    pub t: u64,
    pub x: u32,
    pub y: u32,
    pub p: i8,
}

impl Event {
    pub fn new(t: u64, x: u32, y: u32, p: i8) -> Self {
        Event { t, x, y, p }
    }
}

/// Time-sorted events from a `width × height` sensor with contrast threshold `contrast`.
#[derive(Clone, Debug, PartialEq)]
pub struct EventStream {
    pub events: Vec<Event>,
    pub width: usize,
    pub height: usize,
    pub contrast: f64,
}

impl EventStream {
    pub fn new(width: usize, height: usize, contrast: f64, events: Vec<Event>) -> Result<Self> {
        let s = EventStream {
            events,
            width,
            height,
            contrast,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.contrast > 0.0) {
            return Err(Error::invalid(format!(
                "contrast threshold must be positive, got {}",
                self.contrast
            )));
        }
        for (i, w) in self.events.windows(2).enumerate() {
            if w[1].t < w[0].t {
                return Err(Error::invalid(format!("event {} out of time order", i + 1)));
            }
        }
        for (i, e) in self.events.iter().enumerate() {
            if e.x as usize >= self.width || e.y as usize >= self.height {
                return Err(Error::invalid(format!("event {i} at ({}, {}) outside sensor", e.x, e.y)));
            }
            if e.p != 1 && e.p != -1 {
                return Err(Error::invalid(format!("event {i} has polarity {}", e.p)));
            }
        }
        Ok(())
    }

    /// Events with `t0 < t <= t1`.
    pub fn between(&self, t0: u64, t1: u64) -> &[Event] {
        let lo = self.events.partition_point(|e| e.t <= t0);
        let hi = self.events.partition_point(|e| e.t <= t1);
        &self.events[lo..hi.max(lo)]
    }

    /// Events with `t0 <= t < t1`.
    pub fn in_window(&self, t0: u64, t1: u64) -> &[Event] {
        let lo = self.events.partition_point(|e| e.t < t0);
        let hi = self.events.partition_point(|e| e.t < t1);
        &self.events[lo..hi.max(lo)]
    }

    pub fn span(&self) -> Option<(u64, u64)> {
        Some((self.events.first()?.t, self.events.last()?.t))
    }
}

/// Pinhole camera with world-to-camera pose `x_cam = R·x_world + T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Row-major rotation.
    #[serde(rename = "R")]
    pub r: [f64; 9],
    #[serde(rename = "T")]
    pub t: [f64; 3],
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        CameraModel {
            fx,
            fy,
            cx,
            cy,
            r: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            t: [0.0; 3],
        }
    }

    /// Identity-rotation camera whose optical center sits at `center` in world space.
    pub fn looking_forward_from(mut self, center: [f64; 3]) -> Self {
        self.r = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        self.t = [-center[0], -center[1], -center[2]];
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        let r = self.rotation();
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if err > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("camera rotation is not a proper orthonormal matrix"));
        }
        Ok(())
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        Matrix3::from_row_slice(&self.r)
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::from_column_slice(&self.t)
    }

    /// Optical center in world coordinates, `−Rᵀ·T`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation().transpose() * self.translation())
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.translation()
    }

    /// World-space direction of the ray through pixel `(u, v)`, scaled so its
    /// camera-space depth component is 1.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        let d = Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        self.rotation().transpose() * d
    }

    /// World point at camera-space depth `depth` along the ray through `(u, v)`.
    pub fn backproject(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        self.center() + self.ray(u, v) * depth
    }

    /// Pixel coordinates and depth of a world point.
    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64, f64) {
        let c = self.to_camera(p);
        (self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy, c.z)
    }

    /// Six numbers summarizing the pose: optical center and viewing direction.
    pub fn pose_summary(&self) -> [f64; 6] {
        let c = self.center();
        [c.x, c.y, c.z, self.r[6], self.r[7], self.r[8]]
    }

    /// Pose interpolation: linear in the optical center, slerp in rotation.
    /// Intrinsics are taken from `self`.
    pub fn interpolate(&self, other: &CameraModel, a: f64) -> CameraModel {
        if a <= 0.0 {
            return self.clone();
        }
        if a >= 1.0 {
            let mut c = other.clone();
            c.fx = self.fx;
            c.fy = self.fy;
            c.cx = self.cx;
            c.cy = self.cy;
            return c;
        }
        let q0 = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation()));
        let q1 = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(other.rotation()));
        let rot = if self.r == other.r {
            self.rotation()
        } else {
            q0.slerp(&q1, a).to_rotation_matrix().into_inner()
        };
        let center = self.center() * (1.0 - a) + other.center() * a;
        let t = -(rot * center);
        let mut r = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                r[i * 3 + j] = rot[(i, j)];
            }
        }
        CameraModel {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            r,
            t: [t.x, t.y, t.z],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub image: Image,
    pub timestamp_us: u64,
    pub camera: CameraModel,
}

/// Timestamped RGB frames with per-frame camera pose.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    pub frames: Vec<Frame>,
    pub width: usize,
    pub height: usize,
}

impl FrameSequence {
    pub fn new(width: usize, height: usize, frames: Vec<Frame>) -> Result<Self> {
        let s = FrameSequence { frames, width, height };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::invalid("empty sequence"));
        }
        for (i, f) in self.frames.iter().enumerate() {
            if f.image.width != self.width || f.image.height != self.height || f.image.channels != 3 {
                return Err(Error::invalid(format!(
                    "frame {i} is {}x{}x{}, expected {}x{}x3",
                    f.image.width, f.image.height, f.image.channels, self.width, self.height
                )));
            }
            f.camera.validate()?;
        }
        for (i, w) in self.frames.windows(2).enumerate() {
            if w[1].timestamp_us <= w[0].timestamp_us {
                return Err(Error::invalid(format!("frame {} timestamp not strictly increasing", i + 1)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn span(&self) -> (u64, u64) {
        (
            self.frames.first().map_or(0, |f| f.timestamp_us),
            self.frames.last().map_or(0, |f| f.timestamp_us),
        )
    }

    pub fn timestamps(&self) -> Vec<u64> {
        self.frames.iter().map(|f| f.timestamp_us).collect()
    }

    /// Index of the latest frame with timestamp `<= t`.
    pub fn latest_at_or_before(&self, t: u64) -> Option<usize> {
        let n = self.frames.partition_point(|f| f.timestamp_us <= t);
        n.checked_sub(1)
    }

    /// Camera pose at an arbitrary time, interpolated between the bracketing
    /// frames and held constant outside the sequence.
    pub fn camera_at(&self, t: f64) -> CameraModel {
        let n = self.frames.partition_point(|f| (f.timestamp_us as f64) <= t);
        if n == 0 {
            return self.frames[0].camera.clone();
        }
        if n >= self.frames.len() {
            return self.frames[self.frames.len() - 1].camera.clone();
        }
        let (f0, f1) = (&self.frames[n - 1], &self.frames[n]);
        let a = (t - f0.timestamp_us as f64) / (f1.timestamp_us as f64 - f0.timestamp_us as f64);
        f0.camera.interpolate(&f1.camera, a)
    }

    /// Sub-sequence made of the given frame indices.
    pub fn subset(&self, indices: &[usize]) -> FrameSequence {
        FrameSequence {
            frames: indices.iter().map(|&i| self.frames[i].clone()).collect(),
            width: self.width,
            height: self.height,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backproject_then_project_is_identity() {
        let cam = CameraModel::new(100.0, 90.0, 32.0, 30.0).looking_forward_from([0.3, -0.2, 0.1]);
        let p = cam.backproject(10.0, 44.0, 3.5);
        let (u, v, z) = cam.project(&p);
        assert!((u - 10.0).abs() < 1e-12 && (v - 44.0).abs() < 1e-12 && (z - 3.5).abs() < 1e-12);
    }

    #[test]
    fn between_is_half_open_on_the_left() {
        let s = EventStream::new(
            4,
            4,
            0.1,
            vec![Event::new(0, 0, 0, 1), Event::new(5, 1, 0, 1), Event::new(10, 2, 0, -1)],
        )
        .unwrap();
        assert_eq!(s.between(0, 10).len(), 2);
        assert_eq!(s.in_window(0, 10).len(), 2);
        assert_eq!(s.in_window(0, 11).len(), 3);
    }

    #[test]
    fn rejects_bad_rotation() {
        let mut cam = CameraModel::new(1.0, 1.0, 0.0, 0.0);
        cam.r[0] = 2.0;
        assert!(cam.validate().is_err());
    }

    #[test]
    fn interpolated_camera_moves_linearly() {
        let base = CameraModel::new(50.0, 50.0, 16.0, 16.0);
        let a = base.clone().looking_forward_from([0.0, 0.0, 0.0]);
        let b = base.looking_forward_from([1.0, 2.0, 0.0]);
        let m = a.interpolate(&b, 0.25);
        let c = m.center();
        assert!((c.x - 0.25).abs() < 1e-12 && (c.y - 0.5).abs() < 1e-12);
    }
}

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{Event, EventStream};
use crate::disentangle::{voxelize_events, EventVoxelGrid, SceneDecomposition};
use crate::error::{Error, Result};
use crate::fsutil::{read_json, write_json};
use crate::track::kalman::{ekf_predict, ekf_update, TrackState};
use crate::track::template::{gaussian_blur, match_in_image, parabolic_peak, Match, Template};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackConfig {
    pub step_us: u64,
    /// Acceleration noise std, pixels/s².
    pub q: f64,
    /// Measurement noise std, pixels.
    pub r: f64,
    /// Consecutive lost steps tolerated before the track ends.
    pub lost_limit: usize,
    pub radius_min: usize,
    pub radius_max: usize,
    /// Matches scoring below this count as lost.
    pub min_score: f64,
    /// The template is re-extracted when a match scores below this.
    pub refresh_score: f64,
    pub init_pos_std: f64,
    pub init_vel_std: f64,
    pub bins: usize,
    pub max_template: usize,
    /// Templates kept for matching. A new one is added when none scores
    /// above `refresh_score`.
    pub bank_size: usize,
    /// Event window length in steps, centered on the step time.
    pub window_steps: u64,
    /// Gaussian smoothing of event-count images before matching, pixels.
    pub blur_sigma: f64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        TrackConfig {
            step_us: 10_000,
            q: 50.0,
            r: 1.0,
            lost_limit: 5,
            radius_min: 4,
            radius_max: 32,
            min_score: 0.2,
            refresh_score: 0.6,
            init_pos_std: 2.0,
            init_vel_std: 50.0,
            bins: 4,
            max_template: 64,
            bank_size: 8,
            window_steps: 5,
            blur_sigma: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub t_us: u64,
    pub u: f64,
    pub v: f64,
    #[serde(rename = "P")]
    pub p: Vec<f64>,
    /// Velocity estimate, pixels/second.
    #[serde(default)]
    pub vel: [f64; 2],
    /// True when no measurement supported this point.
    #[serde(default)]
    pub coasted: bool,
}

impl TrackPoint {
    /// Point with zero covariance and velocity.
    pub fn simple(t_us: u64, u: f64, v: f64) -> Self {
        TrackPoint {
            t_us,
            u,
            v,
            p: vec![0.0; 16],
            vel: [0.0; 2],
            coasted: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub object_id: u32,
    pub step_us: u64,
    pub points: Vec<TrackPoint>,
}

impl Trajectory {
    pub fn span(&self) -> Option<(u64, u64)> {
        Some((self.points.first()?.t_us, self.points.last()?.t_us))
    }

    /// Pixel position at `t`, linearly interpolated and clamped to the span.
    pub fn position_at(&self, t: f64) -> Option<(f64, f64)> {
        let pts = &self.points;
        let first = pts.first()?;
        if t <= first.t_us as f64 || pts.len() == 1 {
            return Some((first.u, first.v));
        }
        let last = pts.last()?;
        if t >= last.t_us as f64 {
            return Some((last.u, last.v));
        }
        let i = pts.partition_point(|p| (p.t_us as f64) <= t);
        let (a, b) = (&pts[i - 1], &pts[i]);
        let w = (t - a.t_us as f64) / (b.t_us - a.t_us) as f64;
        Some((a.u + w * (b.u - a.u), a.v + w * (b.v - a.v)))
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.windows(2).any(|w| w[1].t_us <= w[0].t_us) {
            return Err(Error::invalid(format!("trajectory {} timestamps not increasing", self.object_id)));
        }
        if self.points.iter().any(|p| p.p.len() != 16) {
            return Err(Error::invalid("trajectory covariance must have 16 entries"));
        }
        Ok(())
    }

    pub fn file_name(object_id: u32) -> String {
        format!("trajectory_{object_id}.json")
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(Self::file_name(self.object_id)), self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let t: Trajectory = read_json(path)?;
        t.validate().map_err(|e| Error::data(path, None, e.to_string()))?;
        Ok(t)
    }
}

/// Template window geometry tied to an object position.
struct Anchor {
    template: Template,
    /// Object position minus template window center at extraction.
    offset: (f64, f64),
    /// Mean event time inside the template minus the extraction step time, s.
    lag_s: f64,
}

fn window_for(center: (f64, f64), w: usize, h: usize, gw: usize, gh: usize) -> (usize, usize) {
    let x0 = (center.0.round() as i64 - (w / 2) as i64).clamp(0, (gw - w) as i64);
    let y0 = (center.1.round() as i64 - (h / 2) as i64).clamp(0, (gh - h) as i64);
    (x0 as usize, y0 as usize)
}

/// Event window and its smoothed count image.
struct Observation<'a> {
    grid: EventVoxelGrid,
    image: Vec<f64>,
    events: &'a [Event],
    t_us: u64,
}

impl Observation<'_> {
    /// Mean timestamp of the window's events inside a box, relative to the
    /// step time. Zero when the box is empty.
    fn lag_s(&self, x0: usize, y0: usize, w: usize, h: usize) -> f64 {
        let (mut sum, mut n) = (0.0, 0usize);
        for e in self.events {
            let (x, y) = (e.x as usize, e.y as usize);
            if x >= x0 && x < x0 + w && y >= y0 && y < y0 + h {
                sum += e.t as f64 - self.t_us as f64;
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64 * 1e-6
        }
    }
}

fn observe<'a>(stream: &'a EventStream, t: u64, span: (u64, u64), cfg: &TrackConfig) -> Result<Observation<'a>> {
    let window = centered_window(t, cfg.step_us * cfg.window_steps.max(1), span);
    let grid = voxelize_events(stream, window, cfg.bins)?;
    let image = gaussian_blur(&grid.count_image(), grid.width, grid.height, cfg.blur_sigma);
    Ok(Observation {
        grid,
        image,
        events: stream.in_window(window.0, window.1),
        t_us: t,
    })
}

fn extract_anchor(obs: &Observation, pos: (f64, f64), w: usize, h: usize) -> Result<Anchor> {
    let grid = &obs.grid;
    let (x0, y0) = window_for(pos, w, h, grid.width, grid.height);
    let template = Template::extract_from(&obs.image, grid.width, grid, x0, y0, w, h)?;
    let cx = x0 as f64 + (w / 2) as f64;
    let cy = y0 as f64 + (h / 2) as f64;
    Ok(Anchor {
        template,
        offset: (pos.0 - cx, pos.1 - cy),
        lag_s: obs.lag_s(x0, y0, w, h),
    })
}

fn centered_window(t: u64, step: u64, span: (u64, u64)) -> (u64, u64) {
    let lo = t.saturating_sub(step / 2).max(span.0);
    let hi = (t + step - step / 2).min(span.1 + 1).max(lo + 1);
    (lo, hi)
}

fn point(s: &TrackState, coasted: bool) -> TrackPoint {
    TrackPoint {
        t_us: s.t_us,
        u: s.x[0],
        v: s.x[1],
        p: s.p_flat().to_vec(),
        vel: [s.x[2], s.x[3]],
        coasted,
    }
}

/// Matches one anchor around the prediction and converts the peak into a
/// position measurement.
fn measure(anchor: &Anchor, obs: &Observation, pred: &TrackState, radius: usize, min_score: f64) -> Option<((f64, f64), f64)> {
    let t = &anchor.template;
    if t.is_blank() {
        return None;
    }
    let (tw, th) = (t.width, t.height);
    let (wx, wy) = (pred.x[0] - anchor.offset.0, pred.x[1] - anchor.offset.1);
    let origin = (wx.round() as i64 - (tw / 2) as i64, wy.round() as i64 - (th / 2) as i64);
    match match_in_image(t, &obs.image, obs.grid.width, obs.grid.height, origin, radius) {
        Match::Found {
            x0, y0, score, neighbors, ..
        } if score >= min_score => {
            let sub = |a: Option<f64>, b: Option<f64>| match (a, b) {
                (Some(a), Some(b)) => parabolic_peak(a, score, b),
                _ => 0.0,
            };
            let cx = x0 as f64 + (tw / 2) as f64 + sub(neighbors[0], neighbors[1]);
            let cy = y0 as f64 + (th / 2) as f64 + sub(neighbors[2], neighbors[3]);
            // Both patches show the object at their mean event time, not at
            // their step time; undo the difference with the predicted velocity.
            let dt_content = obs.lag_s(x0, y0, tw, th) - anchor.lag_s;
            Some((
                (
                    cx + anchor.offset.0 - pred.x[2] * dt_content,
                    cy + anchor.offset.1 - pred.x[3] * dt_content,
                ),
                score,
            ))
        }
        _ => None,
    }
}

/// Tracks one object from its first mask centroid through the event stream.
/// Each step matches the template in an event window centered on the step
/// time, refines the peak to sub-pixel precision and feeds the filter. After
/// `lost_limit` consecutive misses the trajectory ends.
pub fn track_object(stream: &EventStream, decomp: &SceneDecomposition, object_id: u32, cfg: &TrackConfig) -> Result<Trajectory> {
    if !decomp.object_ids.contains(&object_id) {
        return Err(Error::invalid(format!("object {object_id} not in decomposition")));
    }
    if cfg.step_us == 0 {
        return Err(Error::invalid("tracking step must be positive"));
    }
    let f0 = decomp
        .first_frame_with(object_id)
        .ok_or_else(|| Error::invalid(format!("object {object_id} has an empty mask in every frame")))?;
    let start = decomp.centroid(f0, object_id).expect("non-empty mask");
    let t0 = decomp.timestamps[f0];
    let span_end = stream.span().map_or(t0, |(_, b)| b).max(*decomp.timestamps.last().expect("frames"));
    let span = (decomp.timestamps[0].min(t0), span_end);

    let bbox = decomp.bboxes[f0][&object_id];
    let (gw, gh) = (stream.width, stream.height);
    let size = |a: usize, b: usize, limit: usize| -> usize {
        let s = (b - a + 1 + 4).clamp(7, cfg.max_template.max(7)).min(limit);
        if s.is_multiple_of(2) {
            s - 1
        } else {
            s
        }
    };
    let (tw, th) = (size(bbox[0], bbox[2], gw), size(bbox[1], bbox[3], gh));

    let obs = observe(stream, t0, span, cfg)?;
    let mut bank = vec![extract_anchor(&obs, start, tw, th)?];
    let mut state = TrackState::new(start.0, start.1, cfg.init_pos_std, cfg.init_vel_std, t0);
    let mut points = vec![point(&state, bank[0].template.is_blank())];
    let dt = cfg.step_us as f64 * 1e-6;
    let mut lost = 0usize;
    let mut t = t0;
    while t + cfg.step_us <= span.1 {
        t += cfg.step_us;
        let pred = ekf_predict(&state, dt, cfg.q)?;
        let obs = observe(stream, t, span, cfg)?;
        if bank.iter().all(|a| a.template.is_blank()) {
            // Nothing to match yet; try to acquire a template at the prediction.
            bank = vec![extract_anchor(&obs, pred.position(), tw, th)?];
        }
        let sigma = pred.p[(0, 0)].max(pred.p[(1, 1)]).sqrt();
        let radius = ((3.0 * sigma).ceil() as usize).clamp(cfg.radius_min, cfg.radius_max);
        // Best score over the bank; ties keep the older template.
        let found =
            bank.iter()
                .filter_map(|a| measure(a, &obs, &pred, radius, cfg.min_score))
                .fold(None, |best: Option<((f64, f64), f64)>, m| match best {
                    Some(b) if b.1 >= m.1 => Some(b),
                    _ => Some(m),
                });
        match found {
            Some((z, score)) => {
                state = ekf_update(&pred, z, cfg.r)?.0;
                lost = 0;
                points.push(point(&state, false));
                if score < cfg.refresh_score {
                    if bank.len() >= cfg.bank_size.max(1) {
                        // The first template is never evicted; it pins the track.
                        bank.remove(1.min(bank.len() - 1));
                    }
                    bank.push(extract_anchor(&obs, state.position(), tw, th)?);
                }
            }
            None => {
                lost += 1;
                if lost > cfg.lost_limit {
                    break;
                }
                state = pred;
                points.push(point(&state, true));
            }
        }
    }
    Ok(Trajectory {
        object_id,
        step_us: cfg.step_us,
        points,
    })
}

/// Tracks every object of the decomposition, in parallel.
pub fn track_all(stream: &EventStream, decomp: &SceneDecomposition, cfg: &TrackConfig) -> Result<Vec<Trajectory>> {
    decomp
        .object_ids
        .par_iter()
        .map(|&id| track_object(stream, decomp, id, cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{fixtures, simulate_events, SceneScript};

    fn run(script: &SceneScript) -> (Trajectory, SceneDecomposition) {
        let frames = script.sharp_frames().unwrap();
        let stream = simulate_events(script, 0.15, 0).unwrap();
        let d = SceneDecomposition::from_masks(script.width, script.height, frames.timestamps(), script.gt_masks()).unwrap();
        (track_object(&stream, &d, 1, &TrackConfig::default()).unwrap(), d)
    }

    #[test]
    fn constant_velocity_error_after_burn_in() {
        let script = fixtures::constant_velocity(64, 40.0);
        let (tr, _) = run(&script);
        assert!(tr.validate().is_ok());
        for p in tr.points.iter().skip(10) {
            let (u, v) = script.sprite_pixel_center(1, p.t_us as f64).unwrap();
            let e = (p.u - u).hypot(p.v - v);
            assert!(e < 0.5, "t={} error {e}", p.t_us);
        }
    }

    #[test]
    fn vanished_object_terminates_within_lost_limit() {
        let script = fixtures::vanishing(64, 40.0, 500_000);
        let (tr, _) = run(&script);
        let cfg = TrackConfig::default();
        let last = tr.points.last().unwrap().t_us;
        assert!(last < 1_000_000, "track never ended");
        // The last events of the object stay visible for half a window.
        let half_window = cfg.step_us * cfg.window_steps / 2;
        assert!(
            last <= 500_000 + half_window + (cfg.lost_limit as u64 + 1) * cfg.step_us,
            "ended at {last}"
        );
    }

    #[test]
    fn stationary_speed_settles() {
        let (tr, _) = run(&fixtures::stationary(128));
        assert!(tr.points.len() > 20);
        for p in tr.points.iter().skip(20) {
            let s = p.vel[0].hypot(p.vel[1]);
            assert!(s < 1.0, "t={} speed {s}", p.t_us);
        }
    }

    #[test]
    fn timestamps_advance_by_step() {
        let (tr, _) = run(&fixtures::vanishing(48, 30.0, 300_000));
        assert!(tr.points.windows(2).all(|w| w[1].t_us == w[0].t_us + tr.step_us));
    }

    #[test]
    fn unknown_object_rejected() {
        let script = fixtures::constant_velocity(32, 10.0);
        let frames = script.sharp_frames().unwrap();
        let stream = simulate_events(&script, 0.15, 0).unwrap();
        let d = SceneDecomposition::from_masks(32, 32, frames.timestamps(), script.gt_masks()).unwrap();
        assert!(track_object(&stream, &d, 9, &TrackConfig::default()).is_err());
    }

    #[test]
    fn trajectory_json_round_trip() {
        let (tr, _) = run(&fixtures::vanishing(48, 30.0, 300_000));
        let dir = tempfile::tempdir().unwrap();
        tr.write(dir.path()).unwrap();
        let back = Trajectory::read(&dir.path().join(Trajectory::file_name(1))).unwrap();
        assert_eq!(back, tr);
    }
}

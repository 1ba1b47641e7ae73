//! Idealized event camera: every pixel keeps a reference log intensity and
//! fires one event each time the current log intensity moves a full contrast
//! threshold away from it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataio::script::SceneScript;
use crate::dataio::types::{Event, EventStream};
use crate::error::{Error, Result};

/// Floor applied before taking logs so black pixels stay finite.
pub const LOG_FLOOR: f64 = 1e-4;

#[inline]
pub fn log_intensity(i: f64) -> f64 {
    i.max(LOG_FLOOR).ln()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulatorConfig {
    pub contrast: f64,
    pub refractory_us: u64,
    /// Standard deviation of the per-pixel threshold perturbation, log units.
    pub contrast_jitter_std: f64,
    pub seed: u64,
}

impl SimulatorConfig {
    pub fn new(contrast: f64, refractory_us: u64) -> Self {
        SimulatorConfig {
            contrast,
            refractory_us,
            contrast_jitter_std: 0.0,
            seed: 0,
        }
    }
}

/// Streaming simulator fed with dense luminance samples in time order.
pub struct EventSimulator {
    width: usize,
    height: usize,
    cfg: SimulatorConfig,
    thresholds: Vec<f64>,
    reference: Vec<f64>,
    last_log: Vec<f64>,
    last_event: Vec<Option<u64>>,
    last_t: f64,
    events: Vec<Event>,
    dropped: usize,
}

impl EventSimulator {
    /// Starts the simulator from the first luminance sample, which sets every
    /// pixel's reference level.
    pub fn new(width: usize, height: usize, cfg: SimulatorConfig, t0: f64, luminance: &[f64]) -> Result<Self> {
        if !(cfg.contrast > 0.0) {
            return Err(Error::invalid(format!("contrast threshold must be positive, got {}", cfg.contrast)));
        }
        if luminance.len() != width * height {
            return Err(Error::invalid("luminance sample does not match sensor size"));
        }
        let thresholds = if cfg.contrast_jitter_std > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let normal = Normal::new(0.0, cfg.contrast_jitter_std).expect("finite std");
            (0..width * height)
                .map(|_| (cfg.contrast + normal.sample(&mut rng)).max(0.01 * cfg.contrast))
                .collect()
        } else {
            vec![cfg.contrast; width * height]
        };
        let logs: Vec<f64> = luminance.iter().map(|&v| log_intensity(v)).collect();
        Ok(EventSimulator {
            width,
            height,
            cfg,
            thresholds,
            reference: logs.clone(),
            last_log: logs,
            last_event: vec![None; width * height],
            last_t: t0,
            events: Vec::new(),
            dropped: 0,
        })
    }

    pub fn threshold(&self, x: usize, y: usize) -> f64 {
        self.thresholds[y * self.width + x]
    }

    /// Current reference log intensity of pixel `(x, y)`.
    pub fn reference(&self, x: usize, y: usize) -> f64 {
        self.reference[y * self.width + x]
    }

    /// Number of threshold crossings suppressed by the refractory period.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn push(&mut self, t: f64, luminance: &[f64]) -> Result<()> {
        if luminance.len() != self.width * self.height {
            return Err(Error::invalid("luminance sample does not match sensor size"));
        }
        if t <= self.last_t {
            return Err(Error::invalid("luminance samples must advance in time"));
        }
        let t_prev = self.last_t;
        for (i, &lum) in luminance.iter().enumerate() {
            let l = log_intensity(lum);
            let l_prev = self.last_log[i];
            let c = self.thresholds[i];
            loop {
                let diff = l - self.reference[i];
                let pol: i8 = if diff >= c {
                    1
                } else if diff <= -c {
                    -1
                } else {
                    break;
                };
                let level = self.reference[i] + f64::from(pol) * c;
                // Crossing instant by linear interpolation of log intensity.
                let a = if l != l_prev {
                    ((level - l_prev) / (l - l_prev)).clamp(0.0, 1.0)
                } else {
                    1.0
                };
                let tc = (t_prev + a * (t - t_prev)).round() as u64;
                self.reference[i] = level;
                let blocked = self.last_event[i].is_some_and(|le| tc.saturating_sub(le) < self.cfg.refractory_us);
                if blocked {
                    self.dropped += 1;
                    continue;
                }
                self.last_event[i] = Some(tc);
                self.events
                    .push(Event::new(tc, (i % self.width) as u32, (i / self.width) as u32, pol));
            }
            self.last_log[i] = l;
        }
        self.last_t = t;
        Ok(())
    }

    /// Sorted stream by `(t, y, x, p)`.
    pub fn finish(mut self) -> EventStream {
        self.events.sort_by_key(|e| (e.t, e.y, e.x, e.p));
        EventStream {
            events: self.events,
            width: self.width,
            height: self.height,
            contrast: self.cfg.contrast,
        }
    }
}

/// Renders the script at its sampling rate and runs the simulator over the
/// resulting luminance samples.
pub fn simulate_events(script: &SceneScript, contrast: f64, refractory_us: u64) -> Result<EventStream> {
    simulate_events_with(script, &SimulatorConfig::new(contrast, refractory_us))
}

pub fn simulate_events_with(script: &SceneScript, cfg: &SimulatorConfig) -> Result<EventStream> {
    script.validate()?;
    let times = script.sample_times();
    let first = script.render_at(times[0]).image.luminance();
    let mut sim = EventSimulator::new(script.width, script.height, cfg.clone(), times[0], &first)?;
    for &t in &times[1..] {
        sim.push(t, &script.render_at(t).image.luminance())?;
    }
    Ok(sim.finish())
}

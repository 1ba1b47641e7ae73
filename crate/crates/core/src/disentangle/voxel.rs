use crate::dataio::EventStream;
use crate::error::{Error, Result};

/// Signed polarity accumulation over `bins` equal slices of a time window,
/// plus per-pixel event counts and latest event timestamps.
#[derive(Clone, Debug, PartialEq)]
pub struct EventVoxelGrid {
    pub bins: usize,
    pub width: usize,
    pub height: usize,
    /// Half-open window `[t0, t1)` in microseconds.
    pub window: (u64, u64),
    /// Indexed `[b][y][x]`.
    pub grid: Vec<f64>,
    pub counts: Vec<u32>,
    pub latest: Vec<Option<u64>>,
}

impl EventVoxelGrid {
    #[inline]
    pub fn get(&self, b: usize, x: usize, y: usize) -> f64 {
        self.grid[(b * self.height + y) * self.width + x]
    }

    pub fn slice(&self, b: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.grid[b * n..(b + 1) * n]
    }

    #[inline]
    pub fn count(&self, x: usize, y: usize) -> u32 {
        self.counts[y * self.width + x]
    }

    pub fn total_count(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    pub fn duration_s(&self) -> f64 {
        (self.window.1 - self.window.0) as f64 * 1e-6
    }

    /// Event counts as a dense image.
    pub fn count_image(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| f64::from(c)).collect()
    }
}

pub fn voxelize_events(stream: &EventStream, window: (u64, u64), bins: usize) -> Result<EventVoxelGrid> {
    let (t0, t1) = window;
    if t0 >= t1 {
        return Err(Error::invalid(format!("empty voxel window ({t0}, {t1})")));
    }
    if bins == 0 {
        return Err(Error::invalid("voxel grid needs at least one bin"));
    }
    let (w, h) = (stream.width, stream.height);
    let mut grid = vec![0.0; bins * w * h];
    let mut counts = vec![0u32; w * h];
    let mut latest = vec![None; w * h];
    let span = (t1 - t0) as f64;
    for e in stream.in_window(t0, t1) {
        let b = ((bins as f64 * (e.t - t0) as f64 / span).floor() as usize).min(bins - 1);
        let px = e.y as usize * w + e.x as usize;
        grid[b * w * h + px] += f64::from(e.p);
        counts[px] += 1;
        latest[px] = Some(e.t);
    }
    Ok(EventVoxelGrid {
        bins,
        width: w,
        height: h,
        window,
        grid,
        counts,
        latest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Event;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_stream_gives_zero_grid() {
        let s = EventStream::new(4, 3, 0.2, vec![]).unwrap();
        let g = voxelize_events(&s, (0, 1000), 3).unwrap();
        assert!(g.grid.iter().all(|&v| v == 0.0));
        assert_eq!(g.grid.len(), 36);
    }

    #[test]
    fn single_event_lands_in_second_bin() {
        let s = EventStream::new(4, 4, 0.2, vec![Event::new(500, 2, 3, 1)]).unwrap();
        let g = voxelize_events(&s, (0, 1000), 2).unwrap();
        assert_eq!(g.get(1, 2, 3), 1.0);
        assert_eq!(g.grid.iter().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(g.latest[3 * 4 + 2], Some(500));
    }

    #[test]
    fn grid_sum_equals_polarity_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ev: Vec<Event> = (0..1000)
            .map(|_| {
                let p = if rng.random::<bool>() { 1 } else { -1 };
                Event::new(rng.random_range(0..10_000), rng.random_range(0..16), rng.random_range(0..9), p)
            })
            .collect();
        ev.sort_by_key(|e| (e.t, e.y, e.x, e.p));
        let s = EventStream::new(16, 9, 0.2, ev.clone()).unwrap();
        let g = voxelize_events(&s, (0, 10_000), 5).unwrap();
        let oracle: i64 = ev.iter().map(|e| i64::from(e.p)).sum();
        assert_eq!(g.grid.iter().sum::<f64>(), oracle as f64);
        assert_eq!(g.total_count(), 1000);
    }

    #[test]
    fn rejects_empty_window() {
        let s = EventStream::new(2, 2, 0.2, vec![]).unwrap();
        assert!(voxelize_events(&s, (5, 5), 2).is_err());
        assert!(voxelize_events(&s, (0, 5), 0).is_err());
    }
}

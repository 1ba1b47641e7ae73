//! Adaptive density control: clone small and split large Gaussians whose mean
//! image-space position gradient is high, and prune nearly transparent ones.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::scene::{logit, Gaussian3D, GaussianScene, SceneGrad};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensifyConfig {
    /// Iterations between density updates; 0 disables them.
    pub interval: usize,
    /// First iteration at which densification may run.
    pub start_iter: usize,
    /// Mean image-space mean-gradient norm above which a Gaussian grows.
    pub grad_threshold: f64,
    /// Projected standard deviation, pixels, up to which Gaussians are cloned
    /// instead of split.
    pub clone_max_px: f64,
    pub split_factor: f64,
    pub min_opacity: f64,
    pub max_gaussians: usize,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        DensifyConfig {
            interval: 100,
            start_iter: 100,
            grad_threshold: 2e-4,
            clone_max_px: 1.5,
            split_factor: 1.6,
            min_opacity: 0.005,
            max_gaussians: 6000,
        }
    }
}

/// Running sum and visible-count of the image-space gradient per Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct GradStats {
    pub background: Vec<(f64, u32)>,
    pub objects: BTreeMap<u32, Vec<(f64, u32)>>,
}

impl GradStats {
    pub fn new(scene: &GaussianScene) -> Self {
        GradStats {
            background: vec![(0.0, 0); scene.background.len()],
            objects: scene
                .objects
                .iter()
                .map(|(&id, o)| (id, vec![(0.0, 0); o.gaussians.len()]))
                .collect(),
        }
    }

    pub fn accumulate(&mut self, grad: &SceneGrad) {
        let add = |acc: &mut [(f64, u32)], g: &[f64]| {
            for (a, &v) in acc.iter_mut().zip(g) {
                if v > 0.0 {
                    a.0 += v;
                    a.1 += 1;
                }
            }
        };
        add(&mut self.background, &grad.bg_view_grad);
        for (id, acc) in self.objects.iter_mut() {
            if let Some(o) = grad.objects.get(id) {
                add(acc, &o.view_grad);
            }
        }
    }

    fn mean(a: (f64, u32)) -> f64 {
        if a.1 == 0 {
            0.0
        } else {
            a.0 / f64::from(a.1)
        }
    }
}

/// New scene plus, for each Gaussian list, the old index each new entry
/// descends from unchanged (`None` for fresh clones and split children).
#[derive(Clone, Debug)]
pub struct DensifyOutcome {
    pub scene: GaussianScene,
    pub background_sources: Vec<Option<usize>>,
    pub object_sources: BTreeMap<u32, Vec<Option<usize>>>,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Action {
    Keep,
    Prune,
    Clone,
    Split,
}

/// Splits `g` into two children drawn from its own distribution with scales
/// divided by `factor`. Child opacity is raised so the summed footprint mass
/// (opacity times area) matches the parent where it is not saturated.
fn split_children(g: &Gaussian3D, factor: f64, rng: &mut impl Rng) -> [Gaussian3D; 2] {
    let r = g.rotation();
    let sc = g.scales();
    let opacity = (g.opacity() * factor * factor / 2.0).min(0.99);
    let mut child = || {
        let z = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let off = r * Vector3::new(sc[0] * z.x, sc[1] * z.y, sc[2] * z.z);
        Gaussian3D {
            mu: [g.mu[0] + off.x, g.mu[1] + off.y, g.mu[2] + off.z],
            q: g.q,
            s: g.s.map(|s| s - factor.ln()),
            sigma: logit(opacity),
            c: g.c,
        }
    };
    [child(), child()]
}

fn apply<T: Clone>(items: &[T], actions: &[Action], mut children: impl FnMut(&T) -> [T; 2]) -> (Vec<T>, Vec<Option<usize>>) {
    let mut out = Vec::with_capacity(items.len());
    let mut src = Vec::with_capacity(items.len());
    for (i, (g, a)) in items.iter().zip(actions).enumerate() {
        if matches!(a, Action::Keep | Action::Clone) {
            out.push(g.clone());
            src.push(Some(i));
        }
    }
    for (g, a) in items.iter().zip(actions) {
        let fresh: Vec<T> = match a {
            Action::Clone => vec![g.clone()],
            Action::Split => children(g).into(),
            _ => continue,
        };
        src.extend(fresh.iter().map(|_| None));
        out.extend(fresh);
    }
    (out, src)
}

/// Prunes Gaussians below the opacity floor, then grows the highest-gradient
/// candidates (descending mean gradient, ties by position in the scene) until
/// `max_gaussians` is reached. Split positions are drawn from `rng`.
pub fn densify_prune(scene: &GaussianScene, stats: &GradStats, cfg: &DensifyConfig, rng: &mut impl Rng) -> DensifyOutcome {
    let cam = scene.capture_camera(scene.span().map_or(0.0, |(a, _)| a as f64));
    let px_size = |g: &Gaussian3D, world: Vector3<f64>| {
        let z = cam.to_camera(&world).z.max(1e-6);
        g.max_scale() * 0.5 * (cam.fx + cam.fy) / z
    };

    // (list, index) with list 0 the background and 1.. the objects in id order.
    let mut actions: Vec<Vec<Action>> = Vec::new();
    let mut sizes: Vec<Vec<f64>> = Vec::new();
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    let mut pruned = 0;
    let mut consider = |list: usize, opacity: f64, grad: f64, size: f64, actions: &mut Vec<Action>, sizes: &mut Vec<f64>| {
        let i = actions.len();
        if opacity < cfg.min_opacity {
            actions.push(Action::Prune);
            pruned += 1;
        } else {
            actions.push(Action::Keep);
            if grad > cfg.grad_threshold {
                candidates.push((grad, list, i));
            }
        }
        sizes.push(size);
    };

    let (mut a, mut s) = (Vec::new(), Vec::new());
    for (i, g) in scene.background.iter().enumerate() {
        consider(
            0,
            g.opacity(),
            GradStats::mean(stats.background[i]),
            px_size(g, g.mean()),
            &mut a,
            &mut s,
        );
    }
    actions.push(a);
    sizes.push(s);
    for (id, o) in &scene.objects {
        let (mut a, mut s) = (Vec::new(), Vec::new());
        let anchor = match o.trajectory.points.first() {
            Some(p) => scene.capture_camera(p.t_us as f64).backproject(p.u, p.v, o.depth),
            None => cam.backproject(cam.cx, cam.cy, o.depth),
        };
        for (i, g) in o.gaussians.iter().enumerate() {
            let grad = stats.objects.get(id).map_or(0.0, |v| GradStats::mean(v[i]));
            consider(
                actions.len(),
                g.g.opacity(),
                grad,
                px_size(&g.g, anchor + g.g.mean()),
                &mut a,
                &mut s,
            );
        }
        actions.push(a);
        sizes.push(s);
    }

    candidates.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let live = scene.num_gaussians() - pruned;
    let budget = cfg.max_gaussians.saturating_sub(live);
    let (mut cloned, mut split) = (0, 0);
    for &(_, list, i) in candidates.iter().take(budget) {
        if sizes[list][i] <= cfg.clone_max_px {
            actions[list][i] = Action::Clone;
            cloned += 1;
        } else {
            actions[list][i] = Action::Split;
            split += 1;
        }
    }

    let factor = cfg.split_factor;
    let (background, background_sources) = apply(&scene.background, &actions[0], |g| split_children(g, factor, rng));
    let mut out = scene.clone();
    out.background = background;
    let mut object_sources = BTreeMap::new();
    for (k, (id, o)) in scene.objects.iter().enumerate() {
        let (gs, src) = apply(&o.gaussians, &actions[k + 1], |parent| {
            split_children(&parent.g, factor, rng).map(|g| {
                let mut c = parent.clone();
                c.g = g;
                c
            })
        });
        out.objects.get_mut(id).expect("same ids").gaussians = gs;
        object_sources.insert(*id, src);
    }
    DensifyOutcome {
        scene: out,
        background_sources,
        object_sources,
        cloned,
        split,
        pruned,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{render, Overlap, RenderConfig};
    use crate::scene::test_support::random_scene;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quiet_stats(scene: &GaussianScene) -> GradStats {
        GradStats::new(scene)
    }

    #[test]
    fn quiet_scene_is_unchanged() {
        let s = random_scene(1, 20, 5, 32);
        let out = densify_prune(&s, &quiet_stats(&s), &DensifyConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(out.scene, s);
        assert_eq!(out.background_sources, (0..20).map(Some).collect::<Vec<_>>());
    }

    #[test]
    fn one_transparent_gaussian_is_pruned() {
        let mut s = random_scene(2, 20, 5, 32);
        s.background[7].sigma = logit(0.001);
        let out = densify_prune(&s, &quiet_stats(&s), &DensifyConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(out.scene.num_gaussians(), s.num_gaussians() - 1);
        assert_eq!(out.pruned, 1);
        assert!(!out.background_sources.contains(&Some(7)));
    }

    #[test]
    fn high_gradient_gaussians_grow_within_budget() {
        let s = random_scene(3, 20, 5, 32);
        let mut st = quiet_stats(&s);
        st.background.iter_mut().for_each(|a| *a = (1.0, 1));
        let cfg = DensifyConfig {
            max_gaussians: s.num_gaussians() + 4,
            ..Default::default()
        };
        let out = densify_prune(&s, &st, &cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(out.cloned + out.split, 4);
        assert_eq!(out.scene.num_gaussians(), s.num_gaussians() + 4);
        assert_eq!(out.background_sources.len(), out.scene.background.len());
    }

    #[test]
    fn split_preserves_render_mass() {
        let size = 32;
        let mut s = random_scene(4, 12, 0, size);
        for g in &mut s.background {
            g.sigma = logit(0.3);
        }
        let mut st = quiet_stats(&s);
        st.background.iter_mut().for_each(|a| *a = (1.0, 1));
        let cfg = DensifyConfig {
            clone_max_px: 0.0,
            ..Default::default()
        };
        let out = densify_prune(&s, &st, &cfg, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(out.split, 12);
        let rc = RenderConfig::default();
        let cam = s.cameras[0].camera.clone();
        let mass = |sc: &GaussianScene| {
            render(sc, &cam, size, size, 0.0, Overlap::Constant(0.0), &rc)
                .background
                .density
                .iter()
                .sum::<f64>()
        };
        let (a, b) = (mass(&s), mass(&out.scene));
        assert!((b - a).abs() < 0.2 * a, "mass {a} -> {b}");
    }

    #[test]
    fn seeded_densify_is_deterministic() {
        let s = random_scene(6, 15, 6, 32);
        let mut st = quiet_stats(&s);
        st.background.iter_mut().for_each(|a| *a = (1.0, 1));
        st.objects.values_mut().flatten().for_each(|a| *a = (1.0, 1));
        let cfg = DensifyConfig {
            clone_max_px: 2.5,
            ..Default::default()
        };
        let a = densify_prune(&s, &st, &cfg, &mut ChaCha8Rng::seed_from_u64(9));
        let b = densify_prune(&s, &st, &cfg, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a.scene, b.scene);
        assert!(a.cloned > 0 && a.split > 0);
    }
}

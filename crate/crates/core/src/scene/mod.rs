//! Gaussian scene representation, event-derived references and the
//! spatiotemporal consistency loss.

pub mod consistency;
pub mod events;
pub mod gaussian;
pub mod model;

pub use consistency::{
    build_target, build_targets, consistency_loss, object_mask_at, ConsistencyConfig, ConsistencyOutput, ConsistencyTarget,
};
pub use events::{event_brightness, event_brightness_rgb, event_flow, polarity_sums, EventBrightnessMap, EventFlowField};
pub use gaussian::{logit, sigmoid, Gaussian3D, Gaussian4D};
pub use model::{
    deform, estimate_object_depth, init_scene, CameraKey, GaussianScene, InitConfig, ObjectGrad, ObjectModel, PositionedGaussian, SceneGrad,
};

/// Seeded random scenes for gradient and invariance checks.
#[doc(hidden)]
pub mod test_support {
    use std::collections::BTreeMap;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::dataio::CameraModel;
    use crate::scene::{CameraKey, Gaussian3D, Gaussian4D, GaussianScene, ObjectModel};
    use crate::track::{TrackPoint, Trajectory};

    fn random_gaussian(rng: &mut ChaCha8Rng, cam: &CameraModel, size: usize, depth: (f64, f64), px: (f64, f64)) -> Gaussian3D {
        let z = rng.random_range(depth.0..depth.1);
        let u = rng.random_range(0.15..0.85) * size as f64;
        let v = rng.random_range(0.15..0.85) * size as f64;
        let p = cam.backproject(u, v, z);
        let s = |rng: &mut ChaCha8Rng| (rng.random_range(px.0..px.1) * z / cam.fx).ln();
        Gaussian3D {
            mu: [p.x, p.y, p.z],
            q: [
                rng.random_range(0.5..1.0),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            ],
            s: [s(rng), s(rng), s(rng)],
            sigma: rng.random_range(-1.0..1.5),
            c: [
                rng.random_range(0.05..0.95),
                rng.random_range(0.05..0.95),
                rng.random_range(0.05..0.95),
            ],
        }
    }

    /// `n_bg` background and `n_obj` object Gaussians (one object, id 1) in
    /// a `size × size` view over 100 ms with a slowly translating camera.
    pub fn random_scene(seed: u64, n_bg: usize, n_obj: usize, size: usize) -> GaussianScene {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = size as f64;
        let c = (f - 1.0) / 2.0;
        let cam0 = CameraModel::new(f, f, c, c).looking_forward_from([0.0, 0.0, 0.0]);
        let cam1 = CameraModel::new(f, f, c, c).looking_forward_from([0.05, 0.02, 0.0]);
        let background = (0..n_bg)
            .map(|_| random_gaussian(&mut rng, &cam0, size, (3.0, 5.0), (1.5, 4.0)))
            .collect();
        let mut objects = BTreeMap::new();
        if n_obj > 0 {
            let step = 10_000;
            let points: Vec<TrackPoint> = (0..11)
                .map(|k| TrackPoint::simple(k * step, 0.4 * f + 0.02 * f * k as f64, 0.45 * f + 0.01 * f * k as f64))
                .collect();
            let depth = 2.0;
            let anchor = cam0.backproject(points[0].u, points[0].v, depth);
            let gaussians = (0..n_obj)
                .map(|_| {
                    let mut g = random_gaussian(&mut rng, &cam0, size, (depth - 0.1, depth + 0.1), (1.5, 3.0));
                    // Keep object Gaussians near the anchor.
                    let off = [
                        rng.random_range(-0.1..0.1),
                        rng.random_range(-0.1..0.1),
                        rng.random_range(-0.05..0.05),
                    ];
                    g.mu = [off[0], off[1], off[2]];
                    let _ = anchor;
                    Gaussian4D {
                        g,
                        t_c: rng.random_range(30_000.0..70_000.0),
                        t_s: rng.random_range(30_000f64..80_000.0).ln(),
                        knots: (0..points.len())
                            .map(|_| {
                                [
                                    rng.random_range(-0.02..0.02),
                                    rng.random_range(-0.02..0.02),
                                    rng.random_range(-0.02..0.02),
                                ]
                            })
                            .collect(),
                    }
                })
                .collect();
            objects.insert(
                1,
                ObjectModel {
                    trajectory: Trajectory {
                        object_id: 1,
                        step_us: step,
                        points,
                    },
                    depth,
                    gaussians,
                },
            );
        }
        GaussianScene {
            background,
            objects,
            cameras: vec![
                CameraKey { t_us: 0, camera: cam0 },
                CameraKey {
                    t_us: 100_000,
                    camera: cam1,
                },
            ],
        }
    }
}

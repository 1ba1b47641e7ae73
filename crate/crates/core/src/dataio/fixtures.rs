//! Ready-made scene scripts used by tests, examples and the bundled data.

use crate::dataio::script::{Background, Flicker, Intrinsics, PathKey, SceneScript, Shadow, Sprite, Texture};

fn key(t_us: u64, position: [f64; 3]) -> PathKey {
    PathKey { t_us, position }
}

fn intrinsics(size: usize) -> Intrinsics {
    let f = size as f64;
    Intrinsics {
        fx: f,
        fy: f,
        cx: 0.5 * (f - 1.0),
        cy: 0.5 * (f - 1.0),
    }
}

fn noise_background() -> Background {
    Background {
        depth: 5.0,
        texture: Texture::Noise {
            seed: 17,
            scale: 0.45,
            octaves: 2,
            lo: [0.2, 0.21, 0.22],
            hi: [0.52, 0.5, 0.48],
        },
    }
}

fn bright_checker() -> Texture {
    Texture::Checker {
        a: [1.0, 0.95, 0.6],
        b: [0.85, 0.55, 0.2],
        period: 0.12,
    }
}

/// Bright textured square crossing a static noise background, fixed camera.
pub fn moving_sprite(size: usize) -> SceneScript {
    SceneScript {
        width: size,
        height: size,
        duration_us: 1_000_000,
        fps: 20.0,
        subfps: 400.0,
        intrinsics: intrinsics(size),
        background: noise_background(),
        sprites: vec![Sprite {
            id: 1,
            texture: bright_checker(),
            size: [0.8, 0.8],
            path: vec![key(0, [-0.9, -0.1, 2.5]), key(1_000_000, [0.9, 0.15, 2.5])],
            visible_us: None,
            shadow: None,
            flicker: None,
        }],
        camera: vec![],
        supersample: 2,
    }
}

/// Two sprites moving independently in opposite directions.
pub fn two_sprites(size: usize) -> SceneScript {
    let mut s = moving_sprite(size);
    s.sprites = vec![
        Sprite {
            id: 1,
            texture: bright_checker(),
            size: [0.6, 0.6],
            path: vec![key(0, [-0.9, -0.45, 2.5]), key(1_000_000, [0.9, -0.4, 2.5])],
            visible_us: None,
            shadow: None,
            flicker: None,
        },
        Sprite {
            id: 2,
            texture: Texture::Checker {
                a: [0.25, 0.6, 1.0],
                b: [0.05, 0.25, 0.75],
                period: 0.1,
            },
            size: [0.6, 0.6],
            path: vec![key(0, [0.8, 0.5, 2.5]), key(1_000_000, [-0.8, 0.45, 2.5])],
            visible_us: None,
            shadow: None,
            flicker: None,
        },
    ];
    s
}

/// Sprite moving at a constant image-plane velocity of `speed_px_s` along x.
pub fn constant_velocity(size: usize, speed_px_s: f64) -> SceneScript {
    let mut s = moving_sprite(size);
    let depth = 2.5;
    let f = s.intrinsics.fx;
    let dx = speed_px_s * depth / f;
    let x0 = -0.5 * dx;
    s.sprites[0].path = vec![key(0, [x0, 0.0, depth]), key(1_000_000, [x0 + dx, 0.0, depth])];
    s.sprites[0].size = [0.5, 0.5];
    s
}

/// Sprite that never moves.
/// Sprite that never moves. Its brightness flickers so it still produces
/// events, all at fixed pixels.
pub fn stationary(size: usize) -> SceneScript {
    let mut s = constant_velocity(size, 0.0);
    s.sprites[0].flicker = Some(Flicker {
        amplitude: 0.4,
        period_us: 100_000.0,
    });
    s
}

/// Constant-velocity sprite that disappears at `vanish_us`.
pub fn vanishing(size: usize, speed_px_s: f64, vanish_us: u64) -> SceneScript {
    let mut s = constant_velocity(size, speed_px_s);
    s.sprites[0].visible_us = Some([0, vanish_us]);
    s
}

/// Standard dynamic scene: slowly translating camera, one sprite casting a
/// soft shadow on the background, `frames` frames over two seconds.
pub fn standard_dynamic(size: usize, frames: usize) -> SceneScript {
    let duration_us = 2_000_000;
    let fps = (frames.max(2) - 1) as f64 / (duration_us as f64 * 1e-6);
    SceneScript {
        width: size,
        height: size,
        duration_us,
        fps,
        subfps: (fps * 8.0).max(200.0),
        intrinsics: intrinsics(size),
        background: noise_background(),
        sprites: vec![Sprite {
            id: 1,
            texture: bright_checker(),
            size: [0.7, 0.7],
            path: vec![
                key(0, [-0.8, -0.2, 2.5]),
                key(1_000_000, [0.0, 0.1, 2.4]),
                key(duration_us, [0.8, -0.05, 2.5]),
            ],
            visible_us: None,
            shadow: Some(Shadow {
                offset: [0.25, 0.3],
                strength: 0.5,
                softness: 0.15,
            }),
            flicker: None,
        }],
        camera: vec![key(0, [-0.15, 0.0, 0.0]), key(duration_us, [0.15, 0.05, 0.0])],
        supersample: 2,
    }
}

/// Static textured scene for overfitting checks.
pub fn static_scene(size: usize) -> SceneScript {
    SceneScript {
        width: size,
        height: size,
        duration_us: 100_000,
        fps: 10.0,
        subfps: 20.0,
        intrinsics: intrinsics(size),
        background: noise_background(),
        sprites: vec![],
        camera: vec![],
        supersample: 2,
    }
}

/// Random-walk scripts for simulator round-trip checks.
pub fn random_script(seed: u64, size: usize) -> SceneScript {
    let mut s = moving_sprite(size);
    let r = |k: u64| {
        let mut h = seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(k.wrapping_mul(0xC2B2_AE3D_27D4_EB4F));
        h ^= h >> 31;
        h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h ^= h >> 29;
        (h >> 11) as f64 / (1u64 << 53) as f64
    };
    s.duration_us = 200_000;
    s.subfps = 1000.0;
    s.background.texture = Texture::Noise {
        seed,
        scale: 0.3 + 0.4 * r(1),
        octaves: 2,
        lo: [0.1, 0.1, 0.1],
        hi: [0.6 + 0.3 * r(2), 0.7, 0.6],
    };
    let p0 = [r(3) - 0.5, r(4) - 0.5, 2.0 + r(5)];
    let p1 = [p0[0] + 0.4 * (r(6) - 0.5), p0[1] + 0.4 * (r(7) - 0.5), p0[2]];
    s.sprites[0].path = vec![key(0, p0), key(s.duration_us, p1)];
    s.camera = vec![key(0, [0.0; 3]), key(s.duration_us, [0.05 * (r(8) - 0.5), 0.0, 0.0])];
    s
}

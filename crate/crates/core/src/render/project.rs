//! EWA projection of a world-space Gaussian into the image plane, and its
//! analytic backward pass.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::dataio::CameraModel;
use crate::render::RenderConfig;

/// Splat in image space. `cov2d` and `conic` are stored as `[a, b, c]` for
/// the symmetric matrix `[[a, b], [b, c]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedGaussian {
    pub mean2d: [f64; 2],
    pub cov2d: [f64; 3],
    pub conic: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
    /// Half-extent of the truncation ellipse's bounding box, pixels.
    pub radius: f64,
}

fn jacobian(cam: &CameraModel, pc: &Vector3<f64>) -> Matrix2x3<f64> {
    let z = pc.z;
    Matrix2x3::new(cam.fx / z, 0.0, -cam.fx * pc.x / (z * z), 0.0, cam.fy / z, -cam.fy * pc.y / (z * z))
}

fn floor_eigen(m: Matrix2<f64>, floor: f64) -> Matrix2<f64> {
    let (a, b, c) = (m[(0, 0)], m[(0, 1)], m[(1, 1)]);
    let mid = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    if mid - rad >= floor {
        return m;
    }
    let eig = m.symmetric_eigen();
    let v = eig.eigenvectors;
    let l = eig.eigenvalues.map(|e| e.max(floor));
    v * Matrix2::from_diagonal(&l) * v.transpose()
}

/// Projects a Gaussian with world mean `mu`, world covariance `cov` and
/// activated opacity. Returns `None` when the mean is at or behind the near
/// plane.
pub fn project_gaussian(
    mu: &Vector3<f64>,
    cov: &Matrix3<f64>,
    opacity: f64,
    cam: &CameraModel,
    cfg: &RenderConfig,
) -> Option<ProjectedGaussian> {
    let w = cam.rotation();
    let pc = w * mu + cam.translation();
    if pc.z <= cfg.near {
        return None;
    }
    let j = jacobian(cam, &pc);
    let cc = w * cov * w.transpose();
    let mut c2 = j * cc * j.transpose();
    c2[(0, 0)] += cfg.cov_blur;
    c2[(1, 1)] += cfg.cov_blur;
    let c2 = floor_eigen(0.5 * (c2 + c2.transpose()), cfg.eig_floor);
    let (a, b, c) = (c2[(0, 0)], c2[(0, 1)], c2[(1, 1)]);
    let det = a * c - b * b;
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let lmax = 0.5 * (a + c) + (0.25 * (a - c) * (a - c) + b * b).sqrt();
    Some(ProjectedGaussian {
        mean2d: [cam.fx * pc.x / pc.z + cam.cx, cam.fy * pc.y / pc.z + cam.cy],
        cov2d: [a, b, c],
        conic: [c / det, -b / det, a / det],
        depth: pc.z,
        opacity,
        radius: cfg.sigma_cutoff * lmax.sqrt(),
    })
}

/// Chains image-space gradients back to world mean and covariance.
///
/// `d_conic` uses the full-matrix convention: `[g00, g01, g11]` with
/// `g10 = g01`. The returned covariance gradient is a full symmetric 3×3
/// matrix gradient in the same convention. The eigenvalue floor is treated as
/// identity.
pub fn project_backward(
    mu: &Vector3<f64>,
    cov: &Matrix3<f64>,
    proj: &ProjectedGaussian,
    cam: &CameraModel,
    d_mean2d: [f64; 2],
    d_conic: [f64; 3],
) -> (Vector3<f64>, Matrix3<f64>) {
    let w = cam.rotation();
    let pc = w * mu + cam.translation();
    let (x, y, z) = (pc.x, pc.y, pc.z);
    let j = jacobian(cam, &pc);
    let cc = w * cov * w.transpose();

    let [a, b, c] = proj.conic;
    let q = Matrix2::new(a, b, b, c);
    let gq = Matrix2::new(d_conic[0], d_conic[1], d_conic[1], d_conic[2]);
    let g = -(q * gq * q);

    let d_cc = j.transpose() * g * j;
    let d_j = 2.0 * g * j * cc;
    let d_cov = w.transpose() * d_cc * w;

    let (fx, fy) = (cam.fx, cam.fy);
    let z2 = z * z;
    let z3 = z2 * z;
    let mut dpc = Vector3::zeros();
    dpc.x += d_mean2d[0] * fx / z;
    dpc.y += d_mean2d[1] * fy / z;
    dpc.z += -d_mean2d[0] * fx * x / z2 - d_mean2d[1] * fy * y / z2;
    dpc.z += d_j[(0, 0)] * (-fx / z2) + d_j[(1, 1)] * (-fy / z2);
    dpc.x += d_j[(0, 2)] * (-fx / z2);
    dpc.z += d_j[(0, 2)] * (2.0 * fx * x / z3);
    dpc.y += d_j[(1, 2)] * (-fy / z2);
    dpc.z += d_j[(1, 2)] * (2.0 * fy * y / z3);

    (w.transpose() * dpc, d_cov)
}

/// Pixel displacement Jacobian `∂(u, v)/∂x_world` at a world point.
pub fn projection_jacobian(cam: &CameraModel, p: &Vector3<f64>) -> Matrix2x3<f64> {
    let pc = cam.to_camera(p);
    jacobian(cam, &pc) * cam.rotation()
}

pub fn project_point(cam: &CameraModel, p: &Vector3<f64>) -> Vector2<f64> {
    let (u, v, _) = cam.project(p);
    Vector2::new(u, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Gaussian3D;

    fn cam() -> CameraModel {
        CameraModel::new(60.0, 55.0, 15.5, 16.0)
    }

    #[test]
    fn on_axis_projects_to_principal_point() {
        let p = project_gaussian(
            &Vector3::new(0.0, 0.0, 3.0),
            &(Matrix3::identity() * 0.01),
            0.5,
            &cam(),
            &RenderConfig::default(),
        )
        .unwrap();
        assert_eq!(p.mean2d, [15.5, 16.0]);
    }

    #[test]
    fn isotropic_covariance_matches_focal_scale() {
        let (f, s, z) = (50.0, 0.07, 4.0);
        let cam = CameraModel::new(f, f, 16.0, 16.0);
        let p = project_gaussian(
            &Vector3::new(0.0, 0.0, z),
            &(Matrix3::identity() * s * s),
            1.0,
            &cam,
            &RenderConfig::default(),
        )
        .unwrap();
        let e = (f * s / z).powi(2);
        assert!((p.cov2d[0] - e).abs() < 1e-6 && (p.cov2d[2] - e).abs() < 1e-6 && p.cov2d[1].abs() < 1e-12);
    }

    #[test]
    fn behind_camera_is_culled() {
        assert!(project_gaussian(
            &Vector3::new(0.0, 0.0, -1.0),
            &Matrix3::identity(),
            0.5,
            &cam(),
            &RenderConfig::default()
        )
        .is_none());
    }

    #[test]
    fn eigenvalue_floor_applies() {
        let cfg = RenderConfig::default();
        let p = project_gaussian(
            &Vector3::new(0.0, 0.0, 2.0),
            &Matrix3::from_diagonal(&Vector3::new(1e-14, 1e-2, 1e-2)),
            0.5,
            &cam(),
            &cfg,
        )
        .unwrap();
        assert!(p.cov2d[0] >= cfg.eig_floor * (1.0 - 1e-12));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut cam = cam();
        cam = cam.looking_forward_from([0.1, -0.2, -0.3]);
        let g = Gaussian3D {
            mu: [0.3, -0.1, 2.5],
            q: [0.8, 0.3, -0.2, 0.1],
            s: [-2.0, -2.5, -1.8],
            sigma: 0.0,
            c: [0.0; 3],
        };
        let cfg = RenderConfig::default();
        // Arbitrary linear functional of the projected quantities.
        let wm = [0.7, -1.3];
        let wq = [2.0, -0.5, 1.5];
        let f = |g: &Gaussian3D| {
            let p = project_gaussian(&g.mean(), &g.covariance(), 1.0, &cam, &cfg).unwrap();
            wm[0] * p.mean2d[0] + wm[1] * p.mean2d[1] + wq[0] * p.conic[0] + 2.0 * wq[1] * p.conic[1] + wq[2] * p.conic[2]
        };
        let p = project_gaussian(&g.mean(), &g.covariance(), 1.0, &cam, &cfg).unwrap();
        let (dmu, dcov) = project_backward(&g.mean(), &g.covariance(), &p, &cam, wm, wq);
        let (dq, ds) = crate::scene::gaussian::covariance_backward(&g, &dcov);
        let mut analytic = dmu.as_slice().to_vec();
        analytic.extend_from_slice(&dq);
        analytic.extend_from_slice(&ds);
        let h = 1e-5;
        let mut idx = 0;
        for (lo, hi) in [(0, 3), (3, 7), (7, 10)] {
            for i in lo..hi {
                let mut a = g.to_array();
                let mut b = g.to_array();
                a[i] += h;
                b[i] -= h;
                let fd = (f(&Gaussian3D::from_array(&a)) - f(&Gaussian3D::from_array(&b))) / (2.0 * h);
                let an = analytic[idx];
                assert!((fd - an).abs() <= 1e-5 * (1.0 + fd.abs()), "param {i}: fd {fd} analytic {an}");
                idx += 1;
            }
        }
    }
}

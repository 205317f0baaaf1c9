//! Virtual-camera priors: subsampled spiral trajectories, optical-axis
//! intersection, plane-normal up estimation, and circle sampling.

use crate::error::{Error, Result};
use crate::geometry::{look_at, Mat3, Pose, Vec3};
use crate::scenes::rigs::spiral_points;

/// Every `stride`-th camera of a `total_points` spiral trajectory, looking
/// at the origin: `total / stride` cameras at indices 0, stride, 2 stride...
pub fn sample_prior_spiral(
    total_points: usize,
    stride: usize,
    radius: f64,
    turns: f64,
) -> Result<Vec<Pose>> {
    if total_points == 0 || stride == 0 {
        return Err(Error::InvalidArgument("spiral needs total_points, stride >= 1".into()));
    }
    let pts = spiral_points(total_points, radius, turns, -0.25, 0.95);
    let k = total_points / stride;
    let mut poses = Vec::with_capacity(k);
    for i in 0..k {
        let p = pts[i * stride];
        poses.push(look_at(&p, &Vec3::zeros(), &Vec3::new(0.0, 1.0, 0.0))?);
    }
    Ok(poses)
}

/// Indices selected by the spiral subsampling (exposed for verification).
pub fn spiral_indices(total_points: usize, stride: usize) -> Vec<usize> {
    (0..total_points / stride).map(|k| k * stride).collect()
}

/// Least-squares closest point to a set of lines (origin, unit direction).
pub fn estimate_origin_from_axes(axes: &[(Vec3, Vec3)]) -> Result<Vec3> {
    if axes.len() < 2 {
        return Err(Error::InvalidArgument("need at least two axes".into()));
    }
    let mut a = Mat3::zeros();
    let mut b = Vec3::zeros();
    for (origin, dir) in axes {
        let d = dir.normalize();
        let proj = Mat3::identity() - d * d.transpose();
        a += proj;
        b += proj * origin;
    }
    // parallel axes leave the normal system rank deficient
    if a.determinant().abs() < 1e-9 {
        return Err(Error::DegenerateGeometry("axes are (nearly) parallel".into()));
    }
    a.lu()
        .solve(&b)
        .ok_or_else(|| Error::DegenerateGeometry("axis system not solvable".into()))
}

/// Unit normal of the best-fit plane through the camera centers, oriented so
/// its mean cosine with the camera forward axes is negative.
pub fn estimate_up(centers: &[Vec3], forwards: &[Vec3]) -> Result<Vec3> {
    if centers.len() < 3 {
        return Err(Error::InvalidArgument("need at least three camera centers".into()));
    }
    let mean = centers.iter().sum::<Vec3>() / centers.len() as f64;
    let mut cov = Mat3::zeros();
    for c in centers {
        let d = c - mean;
        cov += d * d.transpose();
    }
    let eig = nalgebra::SymmetricEigen::new(cov);
    // ascending order is not guaranteed; find smallest and middle eigenvalue
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|x, y| eig.eigenvalues[*x].partial_cmp(&eig.eigenvalues[*y]).unwrap());
    let smallest = eig.eigenvalues[idx[0]].max(0.0);
    let middle = eig.eigenvalues[idx[1]];
    if middle <= 1e-12 * eig.eigenvalues[idx[2]].max(1e-300) || middle <= 1e-18 {
        return Err(Error::DegenerateGeometry("camera centers are collinear".into()));
    }
    let _ = smallest;
    let mut normal: Vec3 = eig.eigenvectors.column(idx[0]).into_owned().normalize();
    let mean_cos: f64 =
        forwards.iter().map(|f| normal.dot(&f.normalize())).sum::<f64>() / forwards.len() as f64;
    if mean_cos > 0.0 {
        normal = -normal;
    }
    Ok(normal)
}

/// `k` look-at cameras evenly spaced on the circle around `origin` in the
/// plane orthogonal to `up`.
pub fn sample_prior_circle(k: usize, origin: &Vec3, up: &Vec3, radius: f64) -> Result<Vec<Pose>> {
    if k == 0 {
        return Err(Error::InvalidArgument("need at least one camera".into()));
    }
    let n = up.normalize();
    let aux = if n.x.abs() < 0.9 { Vec3::new(1.0, 0.0, 0.0) } else { Vec3::new(0.0, 1.0, 0.0) };
    let e1 = n.cross(&aux).normalize();
    let e2 = n.cross(&e1);
    let mut poses = Vec::with_capacity(k);
    for i in 0..k {
        let angle = 2.0 * std::f64::consts::PI * i as f64 / k as f64;
        let center = origin + (e1 * angle.cos() + e2 * angle.sin()) * radius;
        poses.push(look_at(&center, origin, &n)?);
    }
    Ok(poses)
}

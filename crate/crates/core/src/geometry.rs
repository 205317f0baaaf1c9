//! Pinhole cameras, rigid poses, ray generation, image-plane projection and
//! frustum contraction.
//!
//! Conventions, fixed once and asserted by the round-trip tests:
//! - right-handed camera frame, forward along -z, +x right, +y up;
//! - pixel (i, j) means column i, row j, sampled at the pixel center
//!   (i + 0.5, j + 0.5); row 0 is the top image row;
//! - depth of a camera-space point is measured along the forward axis,
//!   i.e. `depth = -z`;
//! - normalized image coordinates span [-1, 1]^2 with (-1, -1) at the
//!   minimum pixel corner and (1, 1) at the maximum corner.

use crate::error::{Error, Result};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Pinhole intrinsics in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub focal_x: f64,
    pub focal_y: f64,
    pub center_x: f64,
    pub center_y: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(
        focal_x: f64,
        focal_y: f64,
        center_x: f64,
        center_y: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if !(focal_x > 0.0 && focal_y > 0.0) {
            return Err(Error::InvalidArgument("focal lengths must be positive".into()));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("image dimensions must be >= 1".into()));
        }
        if !(0.0..=width as f64).contains(&center_x) || !(0.0..=height as f64).contains(&center_y) {
            return Err(Error::InvalidArgument("principal point outside image".into()));
        }
        Ok(Intrinsics { focal_x, focal_y, center_x, center_y, width, height })
    }

    /// Symmetric intrinsics with a given horizontal field of view (radians).
    pub fn symmetric(width: usize, height: usize, fov_x: f64) -> Result<Self> {
        let focal = width as f64 / 2.0 / (fov_x / 2.0).tan();
        Intrinsics::new(focal, focal, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }
}

/// Rigid camera-to-world transform: `world = rotation * cam + translation`.
/// The translation is the camera origin in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Pose {
    pub fn identity() -> Self {
        Pose { rotation: Mat3::identity(), translation: Vec3::zeros() }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        let pose = Pose { rotation, translation };
        pose.validate(1e-6)?;
        Ok(pose)
    }

    /// Checks orthonormality and positive determinant within `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let gram = self.rotation.transpose() * self.rotation;
        let err = (gram - Mat3::identity()).abs().max();
        if err > tol {
            return Err(Error::DegenerateGeometry(format!(
                "rotation not orthonormal (max deviation {err:.3e})"
            )));
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() > tol {
            return Err(Error::DegenerateGeometry(format!("rotation determinant {det} != +1")));
        }
        Ok(())
    }

    /// Camera forward axis (-z of the camera frame) in world coordinates.
    pub fn forward(&self) -> Vec3 {
        -self.rotation.column(2)
    }

    pub fn cam_to_world(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn world_to_cam(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    /// Apply this pose as a transform to a point (alias of `cam_to_world`).
    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.cam_to_world(p)
    }

    /// Compose two transforms: apply `self` first, then `next`.
    pub fn then(&self, next: &Pose) -> Pose {
        Pose {
            rotation: next.rotation * self.rotation,
            translation: next.rotation * self.translation + next.translation,
        }
    }
}

/// A ray with unit direction and positive sampling bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3, t_near: f64, t_far: f64) -> Result<Self> {
        let norm = direction.norm();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::DegenerateGeometry("ray direction has zero norm".into()));
        }
        if !(0.0 <= t_near && t_near < t_far) {
            return Err(Error::InvalidArgument(format!(
                "ray bounds must satisfy 0 <= t_near < t_far, got [{t_near}, {t_far}]"
            )));
        }
        Ok(Ray { origin, direction: direction / norm, t_near, t_far })
    }

    #[inline]
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// Intrinsics plus pose; the unit every view-related API works with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, pose: Pose) -> Self {
        Camera { intrinsics, pose }
    }
}

/// Pose looking from `eye` toward `target`, with `up_hint` fixing the roll.
pub fn look_at(eye: &Vec3, target: &Vec3, up_hint: &Vec3) -> Result<Pose> {
    let forward = target - eye;
    if forward.norm() < 1e-12 {
        return Err(Error::DegenerateGeometry("look_at eye equals target".into()));
    }
    let f = forward.normalize();
    let side = f.cross(up_hint);
    if side.norm() < 1e-9 {
        return Err(Error::DegenerateGeometry(
            "look_at up hint parallel to view direction".into(),
        ));
    }
    let s = side.normalize();
    let u = s.cross(&f);
    // camera axes in world coordinates: +x = s, +y = u, +z = -f
    let rotation = Mat3::from_columns(&[s, u, -f]);
    Ok(Pose { rotation, translation: *eye })
}

/// Ray through the center of pixel (i, j), bounded by [t_near, t_far].
pub fn generate_ray(cam: &Camera, i: usize, j: usize, t_near: f64, t_far: f64) -> Result<Ray> {
    let intr = &cam.intrinsics;
    if i >= intr.width || j >= intr.height {
        return Err(Error::OutOfBounds(format!(
            "pixel ({i}, {j}) outside {}x{} image",
            intr.width, intr.height
        )));
    }
    let px = i as f64 + 0.5;
    let py = j as f64 + 0.5;
    let dir_cam = Vec3::new(
        (px - intr.center_x) / intr.focal_x,
        -(py - intr.center_y) / intr.focal_y,
        -1.0,
    );
    let dir_world = cam.pose.rotation * dir_cam;
    Ray::new(cam.pose.translation, dir_world, t_near, t_far)
}

/// Rays for every pixel, row-major.
pub fn generate_rays(cam: &Camera, t_near: f64, t_far: f64) -> Result<Vec<Ray>> {
    let intr = &cam.intrinsics;
    let mut rays = Vec::with_capacity(intr.width * intr.height);
    for j in 0..intr.height {
        for i in 0..intr.width {
            rays.push(generate_ray(cam, i, j, t_near, t_far)?);
        }
    }
    Ok(rays)
}

/// Depth of a camera-space point along the forward (-z) axis.
#[inline]
pub fn depth_of(point: &Vec3) -> f64 {
    -point.z
}

/// Project a camera-space point to normalized image coordinates in [-1,1]^2.
pub fn project(point: &Vec3, intr: &Intrinsics) -> Result<[f64; 2]> {
    let depth = depth_of(point);
    if depth <= 0.0 {
        return Err(Error::OutOfBounds(format!("projection of non-positive depth {depth}")));
    }
    Ok(project_unchecked(point, depth, intr))
}

#[inline]
fn project_unchecked(point: &Vec3, depth: f64, intr: &Intrinsics) -> [f64; 2] {
    let u_px = intr.focal_x * (point.x / depth) + intr.center_x;
    let v_px = intr.focal_y * (-point.y / depth) + intr.center_y;
    [
        2.0 * u_px / intr.width as f64 - 1.0,
        2.0 * v_px / intr.height as f64 - 1.0,
    ]
}

/// Depth clamp margin used by [`contract`] when clamping is enabled.
pub const CONTRACT_EPS: f64 = 1e-6;

/// Contract a camera-space point into the frustum cube [-1,1]^3:
/// (normalized image coordinates, affine depth mapping of [t_n, t_f]).
///
/// With `clamp` set, depths outside (t_n, t_f) are clamped to the bounds with
/// a margin of [`CONTRACT_EPS`]; otherwise they are an error. Clamping is a
/// safety net: samplers generate points inside the bounds.
pub fn contract(
    point: &Vec3,
    intr: &Intrinsics,
    t_near: f64,
    t_far: f64,
    clamp: bool,
) -> Result<[f64; 3]> {
    debug_assert!(t_near < t_far);
    let depth = depth_of(point);
    let depth = if depth <= t_near || depth >= t_far {
        if !clamp {
            return Err(Error::OutOfBounds(format!(
                "depth {depth} outside ({t_near}, {t_far})"
            )));
        }
        depth.clamp(t_near + CONTRACT_EPS, t_far - CONTRACT_EPS)
    } else {
        depth
    };
    // Project with the clamped depth so behind-camera points stay finite.
    let uv = project_unchecked(point, depth, intr);
    let w = 2.0 * (depth - t_near) / (t_far - t_near) - 1.0;
    Ok([uv[0], uv[1], w])
}

/// Transform mapping source-camera coordinates to target-camera coordinates.
pub fn relative_pose(source: &Pose, target: &Pose) -> Pose {
    let rotation = target.rotation.transpose() * source.rotation;
    let translation = target.rotation.transpose() * (source.translation - target.translation);
    Pose { rotation, translation }
}

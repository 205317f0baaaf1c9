//! Camera rigs: points on an Archimedean spiral over the sphere, and evenly
//! spaced circles, all looking at the origin.

use crate::error::Result;
use crate::geometry::{look_at, Pose, Vec3};

/// `total` points along a spiral over the sphere of the given radius:
/// elevation sweeps linearly while the azimuth completes `turns` revolutions.
pub fn spiral_points(
    total: usize,
    radius: f64,
    turns: f64,
    elev_lo: f64,
    elev_hi: f64,
) -> Vec<Vec3> {
    (0..total)
        .map(|i| {
            let s = if total > 1 { i as f64 / (total - 1) as f64 } else { 0.0 };
            let elev = elev_lo + (elev_hi - elev_lo) * s;
            let azim = 2.0 * std::f64::consts::PI * turns * s;
            Vec3::new(
                radius * elev.cos() * azim.cos(),
                radius * elev.sin(),
                radius * elev.cos() * azim.sin(),
            )
        })
        .collect()
}

/// `k` points evenly spaced on a circle of constant elevation.
pub fn circle_points(k: usize, radius: f64, elevation: f64, phase: f64) -> Vec<Vec3> {
    (0..k)
        .map(|i| {
            let azim = phase + 2.0 * std::f64::consts::PI * i as f64 / k as f64;
            Vec3::new(
                radius * elevation.cos() * azim.cos(),
                radius * elevation.sin(),
                radius * elevation.cos() * azim.sin(),
            )
        })
        .collect()
}

/// Look-at-origin poses for a list of camera centers (world up hint +y).
pub fn origin_facing_poses(centers: &[Vec3]) -> Result<Vec<Pose>> {
    centers
        .iter()
        .map(|c| look_at(c, &Vec3::zeros(), &Vec3::new(0.0, 1.0, 0.0)))
        .collect()
}

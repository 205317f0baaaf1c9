//! Procedural analytic scenes with exact density and color, used as ground
//! truth for quadrature and fitting benchmarks.

use crate::field::RadianceField;
use crate::geometry::{Camera, Vec3};
use crate::renderer::{render_image, RenderConfig, RenderKey, RenderedImage};
use crate::rng::{stream_rng, Stream};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PrimitiveShape {
    Sphere,
    Box,
}

/// A soft-edged primitive: density ramps from the full amplitude inside to
/// zero at the surface over a shell of width `softness * size`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: PrimitiveShape,
    pub center: [f64; 3],
    /// Sphere: radius in x. Box: half extents.
    pub size: [f64; 3],
    pub density: f64,
    pub color: [f64; 3],
    /// Shell width as a fraction of the primitive size.
    pub softness: f64,
}

impl Primitive {
    fn signed_distance(&self, x: &Vec3) -> f64 {
        let c = Vec3::new(self.center[0], self.center[1], self.center[2]);
        match self.shape {
            PrimitiveShape::Sphere => (x - c).norm() - self.size[0],
            PrimitiveShape::Box => {
                let d = x - c;
                let q = Vec3::new(
                    d.x.abs() - self.size[0],
                    d.y.abs() - self.size[1],
                    d.z.abs() - self.size[2],
                );
                let outside = Vec3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
                let inside = q.x.max(q.y).max(q.z).min(0.0);
                outside + inside
            }
        }
    }

    fn shell_width(&self) -> f64 {
        let size = match self.shape {
            PrimitiveShape::Sphere => self.size[0],
            PrimitiveShape::Box => self.size[0].min(self.size[1]).min(self.size[2]),
        };
        (self.softness * size).max(1e-6)
    }

    /// Density contribution: amplitude inside, smoothstep over the shell.
    pub fn density_at(&self, x: &Vec3) -> f64 {
        let d = self.signed_distance(x);
        let w = self.shell_width();
        let u = (-d / w).clamp(0.0, 1.0);
        self.density * u * u * (3.0 - 2.0 * u)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalyticScene {
    pub primitives: Vec<Primitive>,
    pub background: [f64; 3],
}

impl AnalyticScene {
    pub fn empty() -> Self {
        AnalyticScene { primitives: vec![], background: [1.0, 1.0, 1.0] }
    }

    /// Exact field: density is the primitive sum, color the density-weighted
    /// blend.
    pub fn field(&self, x: &Vec3) -> ([f64; 3], f64) {
        let mut sigma = 0.0;
        let mut rgb = [0.0; 3];
        for p in &self.primitives {
            let d = p.density_at(x);
            if d > 0.0 {
                sigma += d;
                for ch in 0..3 {
                    rgb[ch] += d * p.color[ch];
                }
            }
        }
        if sigma > 0.0 {
            for v in rgb.iter_mut() {
                *v /= sigma;
            }
        }
        (rgb, sigma)
    }
}

impl RadianceField for AnalyticScene {
    fn eval(&self, x: &Vec3, _d: &Vec3) -> ([f64; 3], f64) {
        self.field(x)
    }
}

/// Deterministic high-sample reference render of an analytic scene.
pub fn render_ground_truth(
    scene: &AnalyticScene,
    cam: &Camera,
    t_near: f64,
    t_far: f64,
    samples: usize,
) -> crate::error::Result<RenderedImage> {
    let cfg = RenderConfig {
        n_coarse: samples,
        n_importance: 0,
        jitter: false,
        background: scene.background,
        grad_skip: 0.0,
    };
    render_image(scene, cam, t_near, t_far, &cfg, &RenderKey::new(0, 0), 0)
}

/// Seeded random scene: a few soft primitives inside the unit ball.
pub fn random_scene(seed: u64, scene_index: u64, max_primitives: usize, softness: f64) -> AnalyticScene {
    let mut rng = stream_rng(seed, Stream::SceneGen, &[scene_index]);
    let count = rng.gen_range(1..=max_primitives.max(1));
    let mut primitives = Vec::with_capacity(count);
    for _ in 0..count {
        let shape = if rng.gen::<f64>() < 0.6 { PrimitiveShape::Sphere } else { PrimitiveShape::Box };
        let r = 0.2 + 0.25 * rng.gen::<f64>();
        let max_center = (0.9 - r).max(0.05);
        let dir = Vec3::new(
            rng.gen::<f64>() * 2.0 - 1.0,
            rng.gen::<f64>() * 2.0 - 1.0,
            rng.gen::<f64>() * 2.0 - 1.0,
        );
        let center = if dir.norm() > 1e-6 {
            dir.normalize() * (rng.gen::<f64>() * max_center)
        } else {
            Vec3::zeros()
        };
        let size = match shape {
            PrimitiveShape::Sphere => [r, r, r],
            PrimitiveShape::Box => [
                r * (0.6 + 0.4 * rng.gen::<f64>()),
                r * (0.6 + 0.4 * rng.gen::<f64>()),
                r * (0.6 + 0.4 * rng.gen::<f64>()),
            ],
        };
        primitives.push(Primitive {
            shape,
            center: [center.x, center.y, center.z],
            size,
            density: 25.0 + 35.0 * rng.gen::<f64>(),
            color: [
                0.1 + 0.8 * rng.gen::<f64>(),
                0.1 + 0.8 * rng.gen::<f64>(),
                0.1 + 0.8 * rng.gen::<f64>(),
            ],
            softness,
        });
    }
    AnalyticScene { primitives, background: [1.0, 1.0, 1.0] }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{look_at, Intrinsics, Pose};

    fn centered_sphere(softness: f64) -> AnalyticScene {
        AnalyticScene {
            primitives: vec![Primitive {
                shape: PrimitiveShape::Sphere,
                center: [0.0; 3],
                size: [0.5, 0.5, 0.5],
                density: 40.0,
                color: [0.8, 0.25, 0.1],
                softness,
            }],
            background: [1.0, 1.0, 1.0],
        }
    }

    #[test]
    fn field_far_and_center() {
        let scene = centered_sphere(0.1);
        let (_, sigma) = scene.field(&Vec3::new(2.0, 0.0, 0.0));
        assert_eq!(sigma, 0.0);
        let (rgb, sigma) = scene.field(&Vec3::zeros());
        assert_eq!(sigma, 40.0);
        assert_eq!(rgb, [0.8, 0.25, 0.1]);
    }

    #[test]
    fn overlap_blends_by_density() {
        let mut scene = centered_sphere(0.1);
        scene.primitives.push(Primitive {
            shape: PrimitiveShape::Sphere,
            center: [0.2, 0.0, 0.0],
            size: [0.5, 0.5, 0.5],
            density: 20.0,
            color: [0.0, 0.0, 1.0],
            softness: 0.1,
        });
        // the midpoint of the two centers is deep inside both
        let (rgb, sigma) = scene.field(&Vec3::new(0.1, 0.0, 0.0));
        assert!((sigma - 60.0).abs() < 1e-12);
        let want = [
            (40.0 * 0.8) / 60.0,
            (40.0 * 0.25) / 60.0,
            (40.0 * 0.1 + 20.0) / 60.0,
        ];
        for ch in 0..3 {
            assert!((rgb[ch] - want[ch]).abs() < 1e-12);
        }
    }

    #[test]
    fn field_is_continuous() {
        // finite-difference Lipschitz probe across the shell
        let scene = centered_sphere(0.15);
        let base = Vec3::new(0.47, 0.05, -0.05);
        let dir = base.normalize();
        let h = 1e-5;
        let w = scene.primitives[0].shell_width();
        let lipschitz = 40.0 * 1.5 / w; // max |smoothstep'| = 1.5/w times amplitude
        for k in -5i32..=5 {
            let x = base + dir * (k as f64 * 0.01);
            let (_, s0) = scene.field(&x);
            let (_, s1) = scene.field(&(x + dir * h));
            assert!(((s1 - s0) / h).abs() <= lipschitz * 1.01 + 1e-9);
        }
    }

    #[test]
    fn empty_scene_renders_background() {
        let scene = AnalyticScene { primitives: vec![], background: [0.3, 0.5, 0.7] };
        let intr = Intrinsics::symmetric(6, 6, 0.9).unwrap();
        let cam = Camera::new(intr, Pose::identity());
        let img = render_ground_truth(&scene, &cam, 1.0, 3.0, 32).unwrap();
        for px in img.colors.data.chunks_exact(3) {
            assert_eq!(px, [0.3, 0.5, 0.7]);
        }
    }

    #[test]
    fn centered_sphere_render_is_radially_symmetric() {
        let scene = centered_sphere(0.1);
        let intr = Intrinsics::symmetric(32, 32, 0.9).unwrap();
        let pose = look_at(&Vec3::new(0.0, 0.0, 2.0), &Vec3::zeros(), &Vec3::new(0.0, 1.0, 0.0))
            .unwrap();
        let cam = Camera::new(intr, pose);
        let img = render_ground_truth(&scene, &cam, 1.0, 3.0, 256).unwrap().colors;
        let mut max_asym: f64 = 0.0;
        for r in 0..32 {
            for c in 0..32 {
                for ch in 0..3 {
                    let v = img.get(r, c, ch);
                    max_asym = max_asym.max((v - img.get(r, 31 - c, ch)).abs());
                    max_asym = max_asym.max((v - img.get(31 - r, c, ch)).abs());
                    max_asym = max_asym.max((v - img.get(c, r, ch)).abs());
                }
            }
        }
        assert!(max_asym < 1e-3, "asymmetry {max_asym}");
    }

    #[test]
    fn ground_truth_samples_converged() {
        let scene = centered_sphere(0.12);
        let intr = Intrinsics::symmetric(16, 16, 0.9).unwrap();
        let pose = look_at(&Vec3::new(0.3, 0.4, 2.0), &Vec3::zeros(), &Vec3::new(0.0, 1.0, 0.0))
            .unwrap();
        let cam = Camera::new(intr, pose);
        let a = render_ground_truth(&scene, &cam, 1.0, 3.0, 512).unwrap().colors;
        let b = render_ground_truth(&scene, &cam, 1.0, 3.0, 1024).unwrap().colors;
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() < 1e-4);
        }
    }

    #[test]
    fn random_scene_is_seed_deterministic() {
        let a = random_scene(9, 0, 3, 0.05);
        let b = random_scene(9, 0, 3, 0.05);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = random_scene(9, 1, 3, 0.05);
        assert_ne!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&c).unwrap());
    }
}

//! Corner scenes, ray casting and two-path rendering.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::geometry::CameraIntrinsics;
use crate::signal::{max_distance, ModulationConfig, NoiseModel, PathComponent};

use std::f64::consts::PI;

pub type Vec3 = [f64; 3];

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainLabel {
    Source,
    Target,
}

/// Ranges that scenes of one domain are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainParams {
    pub label: DomainLabel,
    /// Sensor noise; `None` keeps observations noise-free.
    pub noise: Option<NoiseModel>,
    pub g_mpi: (f64, f64),
    pub albedo: (f64, f64),
    /// Direct amplitude of a unit-albedo surface at 1 m, sensor units.
    pub strength: f64,
}

impl DomainParams {
    pub fn source() -> Self {
        Self {
            label: DomainLabel::Source,
            noise: Some(NoiseModel::default()),
            g_mpi: (0.1, 0.4),
            albedo: (0.3, 1.0),
            strength: 8000.0,
        }
    }

    /// Stronger interreflection and darker materials than [`Self::source`].
    pub fn target() -> Self {
        Self {
            label: DomainLabel::Target,
            noise: Some(NoiseModel::default()),
            g_mpi: (0.45, 0.6),
            albedo: (0.1, 0.8),
            strength: 8000.0,
        }
    }

    pub fn for_label(label: DomainLabel) -> Self {
        match label {
            DomainLabel::Source => Self::source(),
            DomainLabel::Target => Self::target(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (g0, g1) = self.g_mpi;
        ensure!(0.0 <= g0 && g0 <= g1 && g1 <= 0.6, "g_mpi range must lie in [0, 0.6], got {:?}", self.g_mpi);
        let (a0, a1) = self.albedo;
        ensure!(0.05 <= a0 && a0 <= a1 && a1 <= 1.0, "albedo range must lie in [0.05, 1], got {:?}", self.albedo);
        ensure!(self.strength > 0.0, "source strength must be positive");
        if let Some(n) = self.noise {
            ensure!(n.gain > 0.0, "noise gain must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Surface {
    /// Points with `normal . p == offset`; the normal is unit length.
    Plane { normal: Vec3, offset: f64 },
    Sphere { center: Vec3, radius: f64 },
    /// Axis-aligned box.
    Box { min: Vec3, max: Vec3 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub surface: Surface,
    pub albedo: f64,
}

/// A room corner with optional objects. The camera sits at the origin;
/// `rotation` maps camera-frame rays into the world frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub objects: Vec<SceneObject>,
    pub g_mpi: f64,
    pub strength: f64,
    pub rotation: [Vec3; 3],
}

pub const IDENTITY: [Vec3; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Distance over which indirect light decays away from a corner, meters.
pub const CORNER_FALLOFF: f64 = 1.0;

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(!self.objects.is_empty(), "scene has no surfaces");
        ensure!((0.0..=0.6).contains(&self.g_mpi), "g_mpi must lie in [0, 0.6], got {}", self.g_mpi);
        ensure!(self.strength > 0.0, "source strength must be positive");
        for o in &self.objects {
            ensure!((0.05..=1.0).contains(&o.albedo), "albedo must lie in [0.05, 1], got {}", o.albedo);
            match &o.surface {
                Surface::Plane { normal, offset } => {
                    ensure!((norm(*normal) - 1.0).abs() < 1e-9, "plane normal must be unit length");
                    ensure!(*offset != 0.0, "planes must not pass through the camera");
                }
                Surface::Sphere { center, radius } => {
                    ensure!(*radius > 0.0 && norm(*center) > *radius, "spheres must lie in front of the camera")
                }
                Surface::Box { min, max } => {
                    ensure!((0..3).all(|a| min[a] < max[a]), "box extents must be positive");
                    ensure!(
                        (0..3).any(|a| min[a] > 0.0 || max[a] < 0.0),
                        "boxes must not contain the camera"
                    );
                }
            }
        }
        Ok(())
    }

    fn world_ray(&self, camera_ray: Vec3) -> Vec3 {
        let r = &self.rotation;
        [dot(r[0], camera_ray), dot(r[1], camera_ray), dot(r[2], camera_ray)]
    }
}

/// A frontal wall at `z`, handy for tests.
pub fn frontal_wall(z: f64, albedo: f64, g_mpi: f64) -> SceneSpec {
    SceneSpec {
        objects: vec![SceneObject {
            surface: Surface::Plane {
                normal: [0.0, 0.0, -1.0],
                offset: -z,
            },
            albedo,
        }],
        g_mpi,
        strength: 8000.0,
        rotation: IDENTITY,
    }
}

fn rotation_yaw_pitch(yaw: f64, pitch: f64) -> [Vec3; 3] {
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    // R = R_y(yaw) * R_x(pitch)
    [[cy, sy * sp, sy * cp], [0.0, cp, -sp], [-sy, cy * sp, cy * cp]]
}

/// Draws a random corner scene.
pub fn sample_scene<R: Rng + ?Sized>(domain: &DomainParams, rng: &mut R) -> Result<SceneSpec> {
    domain.validate()?;
    let (a0, a1) = domain.albedo;
    let albedo = |rng: &mut R| if a1 > a0 { rng.random_range(a0..=a1) } else { a0 };
    let back = rng.random_range(2.0..3.5);
    let floor = rng.random_range(0.6..1.2);
    let mut objects = vec![
        SceneObject {
            surface: Surface::Plane {
                normal: [0.0, 0.0, -1.0],
                offset: -back,
            },
            albedo: albedo(rng),
        },
        SceneObject {
            // Image y points down, so the floor lies at positive y.
            surface: Surface::Plane {
                normal: [0.0, -1.0, 0.0],
                offset: -floor,
            },
            albedo: albedo(rng),
        },
    ];
    if rng.random_bool(0.7) {
        let side = rng.random_range(0.6..1.3);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        objects.push(SceneObject {
            surface: Surface::Plane {
                normal: [-sign, 0.0, 0.0],
                offset: -side,
            },
            albedo: albedo(rng),
        });
    }
    for _ in 0..rng.random_range(0..=4) {
        let size = rng.random_range(0.1..0.35);
        let z = rng.random_range(1.2..(back - 0.4).max(1.3));
        let x = rng.random_range(-0.35..0.35) * z;
        // Objects rest on the floor or float in mid air.
        let y = if rng.random_bool(0.5) { floor - size } else { rng.random_range(-0.3..floor - size) };
        let surface = if rng.random_bool(0.5) {
            Surface::Sphere {
                center: [x, y, z],
                radius: size,
            }
        } else {
            let hx = size * rng.random_range(0.6..1.2);
            let hz = size * rng.random_range(0.6..1.2);
            Surface::Box {
                min: [x - hx, y - size, z - hz],
                max: [x + hx, y + size, z + hz],
            }
        };
        objects.push(SceneObject {
            surface,
            albedo: albedo(rng),
        });
    }
    let (g0, g1) = domain.g_mpi;
    let g_mpi = if g1 > g0 { rng.random_range(g0..=g1) } else { g0 };
    let rotation = rotation_yaw_pitch(
        rng.random_range(-8.0f64..8.0).to_radians(),
        rng.random_range(-5.0f64..5.0).to_radians(),
    );
    let scene = SceneSpec {
        objects,
        g_mpi,
        strength: domain.strength,
        rotation,
    };
    scene.validate()?;
    Ok(scene)
}

/// Nearest intersection along one pixel's ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub distance: f64,
    pub object: usize,
    /// World-frame hit point.
    pub point: Vec3,
}

const EPS: f64 = 1e-9;

fn intersect(surface: &Surface, dir: Vec3) -> Option<f64> {
    match *surface {
        Surface::Plane { normal, offset } => {
            let den = dot(normal, dir);
            if den.abs() < EPS {
                return None;
            }
            let t = offset / den;
            (t > EPS).then_some(t)
        }
        Surface::Sphere { center, radius } => {
            let b = dot(dir, center);
            let c = dot(center, center) - radius * radius;
            let disc = b * b - c;
            if disc < 0.0 {
                return None;
            }
            let s = disc.sqrt();
            [b - s, b + s].into_iter().find(|&t| t > EPS)
        }
        Surface::Box { min, max } => {
            let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
            for a in 0..3 {
                if dir[a].abs() < EPS {
                    if 0.0 < min[a] || 0.0 > max[a] {
                        return None;
                    }
                    continue;
                }
                let (mut lo, mut hi) = (min[a] / dir[a], max[a] / dir[a]);
                if lo > hi {
                    std::mem::swap(&mut lo, &mut hi);
                }
                t0 = t0.max(lo);
                t1 = t1.min(hi);
            }
            if t0 > t1 {
                return None;
            }
            [t0, t1].into_iter().find(|&t| t > EPS)
        }
    }
}

/// Nearest positive hit per pixel, row-major; `None` marks a miss.
pub fn raycast_scene(scene: &SceneSpec, intrinsics: &CameraIntrinsics) -> Result<Vec<Option<Hit>>> {
    scene.validate()?;
    Ok(intrinsics
        .rays()
        .into_iter()
        .map(|ray| {
            let dir = scene.world_ray(ray);
            scene
                .objects
                .iter()
                .enumerate()
                .filter_map(|(i, o)| intersect(&o.surface, dir).map(|t| (t, i)))
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(t, object)| Hit {
                    distance: t,
                    object,
                    point: scale(dir, t),
                })
        })
        .collect())
}

/// Per-pixel components: the direct path and, when `g_mpi > 0`, one
/// indirect path through the nearest other plane.
///
/// The indirect path leaves the camera, reaches the foot point `y` of that
/// plane, bounces to the hit `x` and returns, so its equivalent distance is
/// `(|y| + |y - x| + |x|) / 2`. Its amplitude scales with `g_mpi`, both
/// albedos and a falloff with the distance to the plane. The extra delay is
/// capped below half a period of the lowest frequency so the recovered
/// phase stays between the two path phases.
pub fn render_components(
    scene: &SceneSpec,
    hits: &[Option<Hit>],
    config: &ModulationConfig,
) -> Result<Vec<Vec<PathComponent>>> {
    config.validate()?;
    let f_min = config.frequencies.iter().copied().fold(f64::INFINITY, f64::min);
    // Delay at which the phase gap reaches pi at f_min.
    let max_delay = 0.999 * max_distance(f_min) / 2.0;
    let planes: Vec<(usize, Vec3, f64, f64)> = scene
        .objects
        .iter()
        .enumerate()
        .filter_map(|(i, o)| match o.surface {
            Surface::Plane { normal, offset } => Some((i, normal, offset, o.albedo)),
            _ => None,
        })
        .collect();
    Ok(hits
        .iter()
        .map(|hit| {
            let Some(h) = hit else { return Vec::new() };
            let albedo = scene.objects[h.object].albedo;
            let d = h.distance;
            let a_dir = scene.strength * albedo / (d * d);
            let mut comps = vec![PathComponent::at_distance(a_dir, a_dir, d, config)];
            if scene.g_mpi > 0.0 {
                let nearest = planes
                    .iter()
                    .filter(|p| p.0 != h.object)
                    .map(|&(_, n, off, a)| ((dot(n, h.point) - off), n, a))
                    .min_by(|a, b| a.0.abs().total_cmp(&b.0.abs()));
                if let Some((signed, n, a2)) = nearest {
                    let gap = signed.abs();
                    let foot = sub(h.point, scale(n, signed));
                    let d_ind = 0.5 * (norm(foot) + gap + d);
                    let delay = (d_ind - d).min(max_delay);
                    let d_ind = d + delay;
                    let falloff = 1.0 / (1.0 + (gap / CORNER_FALLOFF).powi(2));
                    let a_ind = scene.g_mpi * albedo * a2 * scene.strength * falloff / (d_ind * d_ind);
                    if a_ind > 0.0 && delay > 0.0 {
                        comps.push(PathComponent::at_distance(a_ind, a_ind, d_ind, config));
                    }
                }
            }
            comps
        })
        .collect())
}

/// Indirect-path delay limit in radians at `f`, for tests.
pub fn phase_gap(delay: f64, frequency: f64) -> f64 {
    4.0 * PI * frequency * delay / crate::signal::SPEED_OF_LIGHT
}

//! Synthetic beating-shell phantom: an ellipsoidal wall around a bright
//! pool that contracts in-plane over the cycle and optionally twists about
//! the long axis, with analytic (exactly invertible) motion so every frame
//! carries ground truth.

use crate::pipeline::FrameBundle;
use crate::volume::Grid3;
use crate::{Error, Result};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

pub const DEFAULT_DILATION_MM: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub outer_radii_mm: [f64; 3],
    pub wall_thickness_mm: f64,
    /// peak in-plane contraction: the radial scale reaches 1 - amplitude at mid-cycle
    pub amplitude: f64,
    /// apex-to-base twist at peak contraction, degrees
    pub twist_max_deg: f64,
    pub frames: usize,
    pub wall_intensity: f64,
    pub pool_intensity: f64,
    pub background_intensity: f64,
    /// amplitude of the angular wall texture (gives the CT channel tangential signal)
    pub texture_amplitude: f64,
    pub noise_sigma: f64,
    pub n_landmarks: usize,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: [64, 64, 32],
            spacing: [1.0, 1.0, 2.0],
            outer_radii_mm: [20.0, 20.0, 24.0],
            wall_thickness_mm: 6.0,
            amplitude: 0.15,
            twist_max_deg: 0.0,
            frames: 20,
            wall_intensity: 100.0,
            pool_intensity: 300.0,
            background_intensity: -50.0,
            texture_amplitude: 30.0,
            noise_sigma: 5.0,
            n_landmarks: 4,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d < 2) {
            return Err(Error::InvalidArgument("dims must all be >= 2".into()));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidArgument("spacing must be positive".into()));
        }
        if self.outer_radii_mm.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::InvalidArgument("outer radii must be positive".into()));
        }
        let min_r = self.outer_radii_mm.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(self.wall_thickness_mm > 0.0 && self.wall_thickness_mm < min_r) {
            return Err(Error::InvalidArgument(format!(
                "wall thickness {} must be in (0, min outer radius {})",
                self.wall_thickness_mm, min_r
            )));
        }
        if !(0.0..1.0).contains(&self.amplitude) {
            return Err(Error::InvalidArgument(format!(
                "amplitude must be in [0,1), got {}",
                self.amplitude
            )));
        }
        if self.frames < 2 {
            return Err(Error::InvalidArgument("frames must be >= 2".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidArgument("noise sigma must be >= 0".into()));
        }
        Ok(())
    }

    /// Shell center: middle of the voxel-center bounding box.
    pub fn center(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for a in 0..3 {
            c[a] = 0.5 * (self.dims[a] - 1) as f64 * self.spacing[a];
        }
        c
    }

    /// In-plane radial scale at frame t: 1 at t = 0, 1 - amplitude at mid-cycle.
    pub fn scale(&self, t: usize) -> f64 {
        let phase = 2.0 * PI * t as f64 / self.frames as f64;
        1.0 - self.amplitude * (1.0 - phase.cos()) / 2.0
    }

    /// Twist angle (radians) at height z and frame t: proportional to
    /// normalized height over the shell's z extent and to the contraction phase.
    fn twist(&self, z: f64, t: usize) -> f64 {
        let phase = 2.0 * PI * t as f64 / self.frames as f64;
        let c = self.center();
        let rz = self.outer_radii_mm[2];
        let h = ((z - (c[2] - rz)) / (2.0 * rz)).clamp(0.0, 1.0);
        self.twist_max_deg.to_radians() * h * (1.0 - phase.cos()) / 2.0
    }
}

/// Frame-t position of a frame-0 material point: in-plane scaling toward the
/// axis, then height-dependent rotation about the z axis through the center.
pub fn motion(spec: &PhantomSpec, t: usize, p: [f64; 3]) -> [f64; 3] {
    let c = spec.center();
    let s = spec.scale(t);
    // keep the no-motion cases exactly identity (no rounding drift)
    let (x, y) = if s == 1.0 {
        (p[0], p[1])
    } else {
        (c[0] + s * (p[0] - c[0]), c[1] + s * (p[1] - c[1]))
    };
    let z = p[2];
    let th = spec.twist(z, t);
    if th == 0.0 {
        return [x, y, z];
    }
    let (sin, cos) = th.sin_cos();
    [
        c[0] + cos * (x - c[0]) - sin * (y - c[1]),
        c[1] + sin * (x - c[0]) + cos * (y - c[1]),
        z,
    ]
}

/// Closed-form inverse of `motion` (z is invariant under both steps, so the
/// twist angle is known at the deformed point): inverse rotation, then
/// inverse scaling.
pub fn motion_inverse(spec: &PhantomSpec, t: usize, q: [f64; 3]) -> [f64; 3] {
    let c = spec.center();
    let z = q[2];
    let th = spec.twist(z, t);
    let (x, y) = if th == 0.0 {
        (q[0], q[1])
    } else {
        let (sin, cos) = (-th).sin_cos();
        (
            c[0] + cos * (q[0] - c[0]) - sin * (q[1] - c[1]),
            c[1] + sin * (q[0] - c[0]) + cos * (q[1] - c[1]),
        )
    };
    let s = spec.scale(t);
    if s == 1.0 {
        return [x, y, z];
    }
    [c[0] + (x - c[0]) / s, c[1] + (y - c[1]) / s, z]
}

struct Scene {
    spec: PhantomSpec,
    // wall texture harmonics: (angular frequency, z coefficient, phase, amplitude)
    harmonics: Vec<(f64, f64, f64, f64)>,
    amp_norm: f64,
}

impl Scene {
    fn new(spec: &PhantomSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(500));
        let mut harmonics = Vec::new();
        for _ in 0..3 {
            harmonics.push((
                rng.gen_range(2..=5) as f64,
                rng.gen_range(-2.0..2.0),
                rng.gen_range(0.0..2.0 * PI),
                rng.gen_range(0.5..1.0),
            ));
        }
        let amp_norm: f64 = harmonics.iter().map(|h| h.3).sum();
        Self { spec: spec.clone(), harmonics, amp_norm }
    }

    fn ellipsoid_norm(&self, p: [f64; 3], radii: [f64; 3]) -> f64 {
        let c = self.spec.center();
        (0..3).map(|a| ((p[a] - c[a]) / radii[a]).powi(2)).sum()
    }

    fn inner_radii(&self) -> [f64; 3] {
        let mut r = self.spec.outer_radii_mm;
        for v in &mut r {
            *v -= self.spec.wall_thickness_mm;
        }
        r
    }

    fn in_shell(&self, p: [f64; 3]) -> bool {
        self.ellipsoid_norm(p, self.spec.outer_radii_mm) <= 1.0
            && self.ellipsoid_norm(p, self.inner_radii()) >= 1.0
    }

    fn in_pool(&self, p: [f64; 3]) -> bool {
        self.ellipsoid_norm(p, self.inner_radii()) < 1.0
    }

    fn texture(&self, p: [f64; 3]) -> f64 {
        let c = self.spec.center();
        let phi = (p[1] - c[1]).atan2(p[0] - c[0]);
        let zn = (p[2] - c[2]) / self.spec.outer_radii_mm[2];
        let mut v = 0.0;
        for &(freq, zc, phase, amp) in &self.harmonics {
            v += amp * (freq * phi + zc * zn + phase).sin();
        }
        self.spec.texture_amplitude * v / self.amp_norm
    }

    /// Noise-free intensity of the undeformed (frame-0) scene.
    fn intensity0(&self, p: [f64; 3]) -> f64 {
        if self.in_pool(p) {
            self.spec.pool_intensity
        } else if self.in_shell(p) {
            self.spec.wall_intensity + self.texture(p)
        } else {
            self.spec.background_intensity
        }
    }
}

fn gaussian(rng: &mut impl Rng, sigma: f64) -> f64 {
    // Box-Muller; good enough for additive image noise
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    sigma * (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Ground-truth landmark tracks: points[landmark][frame], world mm.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GroundTruth {
    pub names: Vec<String>,
    pub tracks: Vec<Vec<[f64; 3]>>,
}

/// Seed landmarks on the mid-wall surface, in an equatorial band so they sit
/// well inside the volume.
pub fn landmark_seeds(spec: &PhantomSpec) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(900));
    let c = spec.center();
    let mut mid = spec.outer_radii_mm;
    for v in &mut mid {
        *v -= 0.5 * spec.wall_thickness_mm;
    }
    (0..spec.n_landmarks)
        .map(|_| {
            let theta = rng.gen_range(PI / 3.0..2.0 * PI / 3.0);
            let phi = rng.gen_range(0.0..2.0 * PI);
            [
                c[0] + mid[0] * theta.sin() * phi.cos(),
                c[1] + mid[1] * theta.sin() * phi.sin(),
                c[2] + mid[2] * theta.cos(),
            ]
        })
        .collect()
}

/// Generates the full cycle: each frame is the frame-0 scene pulled back
/// through the inverse motion (no resampling error), with per-frame seeded
/// noise on the CT channel. Returns the frame bundles and the analytic
/// landmark tracks.
pub fn generate(spec: &PhantomSpec) -> Result<(Vec<FrameBundle>, GroundTruth)> {
    spec.validate()?;
    let scene = Scene::new(spec);
    let [nx, ny, nz] = spec.dims;
    let template = Grid3::zeros(spec.dims, spec.spacing, [0.0; 3])?;

    let mut bundles = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let mut ct = template.clone();
        let mut mask = template.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(1000 + t as u64));
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let x = ct.voxel_center(i, j, k);
                    let p0 = motion_inverse(spec, t, x);
                    let noise = if spec.noise_sigma > 0.0 {
                        gaussian(&mut rng, spec.noise_sigma)
                    } else {
                        0.0
                    };
                    ct.set(i, j, k, scene.intensity0(p0) + noise);
                    if scene.in_shell(p0) {
                        mask.set(i, j, k, 1.0);
                    }
                }
            }
        }
        bundles.push(FrameBundle::derive(t, spec.frames, ct, mask, DEFAULT_DILATION_MM)?);
    }

    let seeds = landmark_seeds(spec);
    let tracks = seeds
        .iter()
        .map(|&p| (0..spec.frames).map(|t| motion(spec, t, p)).collect())
        .collect();
    let names = (0..spec.n_landmarks).map(|i| format!("lm{i}")).collect();
    Ok((bundles, GroundTruth { names, tracks }))
}

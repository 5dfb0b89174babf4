//! Analytic flow phantoms.
//!
//! Four families stand in for patient-specific CFD models, one per
//! compartment:
//!
//! | family          | compartment      | flow                                          |
//! |-----------------|------------------|-----------------------------------------------|
//! | `tube-jet`      | aortic           | Poiseuille tube with optional stenotic jet    |
//! | `branch-slow`   | cerebrovascular  | 2-4 thin slow tubes meeting at a bifurcation  |
//! | `cavity-vortex` | cardiac          | swirl inside an ellipsoidal cavity            |
//! | `dual-lumen`    | dissection       | inlet splitting into two curved channels      |
//!
//! Geometry is expressed in voxel units, velocities in cm/s. Magnitude is 1.0
//! on fluid and 0.05 on background; velocity is zero outside the lumen.

use std::fmt;
use std::io;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::fileio::atomic_write;
use crate::seed;
use crate::volume::{
    Compartment, FlowSample, FluidMask, ScalarField, VectorField, VolumeError, VolumeGrid,
};

pub const FLUID_MAGNITUDE: f32 = 1.0;
pub const BACKGROUND_MAGNITUDE: f32 = 0.05;
/// VENC must exceed the peak component by this factor.
pub const VENC_MARGIN: f64 = 1.05;
pub const DEFAULT_VENC_CANDIDATES: [f32; 7] = [25.0, 50.0, 100.0, 150.0, 200.0, 300.0, 400.0];

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("unknown phantom family '{0}'")]
    UnknownFamily(String),
    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),
    #[error("geometry does not fit the grid: {0}")]
    GeometryExceedsGrid(String),
    #[error("amplitude schedule is empty")]
    EmptySchedule,
    #[error("amplitude {0} outside (0, 1]")]
    BadAmplitude(f32),
    #[error("schedule has {got} entries, expected {expected}")]
    ScheduleLength { expected: usize, got: usize },
    #[error("venc candidates must be non-empty, positive and ascending")]
    BadCandidates,
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    TubeJet,
    BranchSlow,
    CavityVortex,
    DualLumen,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::TubeJet,
        Family::BranchSlow,
        Family::CavityVortex,
        Family::DualLumen,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::TubeJet => "tube-jet",
            Family::BranchSlow => "branch-slow",
            Family::CavityVortex => "cavity-vortex",
            Family::DualLumen => "dual-lumen",
        }
    }

    pub fn compartment(self) -> Compartment {
        match self {
            Family::TubeJet => Compartment::Aortic,
            Family::BranchSlow => Compartment::Cerebrovascular,
            Family::CavityVortex => Compartment::Cardiac,
            Family::DualLumen => Compartment::Dissection,
        }
    }

    pub fn from_compartment(c: Compartment) -> Self {
        match c {
            Compartment::Aortic => Family::TubeJet,
            Compartment::Cerebrovascular => Family::BranchSlow,
            Compartment::Cardiac => Family::CavityVortex,
            Compartment::Dissection => Family::DualLumen,
        }
    }

    /// Default peak speed in cm/s.
    pub fn default_peak(self) -> f32 {
        match self {
            Family::TubeJet => 120.0,
            Family::BranchSlow => 25.0,
            Family::CavityVortex => 60.0,
            Family::DualLumen => 100.0,
        }
    }

    /// Default isotropic spacing in mm.
    pub fn default_dx(self) -> f32 {
        match self {
            Family::TubeJet => 1.0,
            Family::BranchSlow => 0.5,
            Family::CavityVortex => 1.5,
            Family::DualLumen => 1.0,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = PhantomError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s.trim())
            .ok_or_else(|| PhantomError::UnknownFamily(s.to_string()))
    }
}

/// Parameters of one phantom "model". All lengths in voxels.
///
/// `radius` is the lumen radius for `tube-jet`, `branch-slow` and
/// `dual-lumen`, and the radius of peak swirl speed for `cavity-vortex`.
/// `tilt` rotates the main axis away from z by that many radians, around an
/// azimuth drawn from `seed`. `stenosis` only affects `tube-jet`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub family: Family,
    pub grid: VolumeGrid,
    pub peak_speed: f32,
    pub radius: f32,
    pub stenosis: f32,
    pub tilt: f32,
    pub seed: u64,
}

impl PhantomSpec {
    /// Family defaults for `grid`, with radius, peak, stenosis and tilt
    /// jittered from `seed` so that different seeds give distinct models.
    pub fn default_for(family: Family, grid: VolumeGrid, seed: u64) -> Self {
        let n = grid.dims().into_iter().min().unwrap() as f32;
        let mut rng = seed::rng(seed::derive_seed(seed, 100));
        let mut jitter = |lo: f32, hi: f32| rng.gen_range(lo..hi);
        let (radius, stenosis) = match family {
            Family::TubeJet => (0.20 * n * jitter(0.9, 1.1), jitter(0.0, 0.35)),
            Family::BranchSlow => (jitter(2.5, 3.0), 0.0),
            Family::CavityVortex => (0.18 * n * jitter(0.9, 1.1), 0.0),
            Family::DualLumen => (0.11 * n * jitter(0.9, 1.1), 0.0),
        };
        Self {
            family,
            grid,
            peak_speed: family.default_peak() * jitter(0.85, 1.0),
            radius,
            stenosis,
            tilt: jitter(0.0, 0.35),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        let bad = |m: String| Err(PhantomError::InvalidSpec(m));
        if !(self.peak_speed > 0.0 && self.peak_speed.is_finite()) {
            return bad(format!("peak_speed {} must be positive", self.peak_speed));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return bad(format!("radius {} must be positive", self.radius));
        }
        if !(0.0..1.0).contains(&self.stenosis) {
            return bad(format!("stenosis {} outside [0, 1)", self.stenosis));
        }
        if !(self.tilt.is_finite() && self.tilt.abs() <= std::f32::consts::FRAC_PI_4) {
            return bad(format!("tilt {} outside [-pi/4, pi/4]", self.tilt));
        }
        let n = self.grid.dims().into_iter().min().unwrap() as f32;
        let fits = |cond: bool, what: &str| {
            if cond {
                Ok(())
            } else {
                Err(PhantomError::GeometryExceedsGrid(format!(
                    "{} radius {} in grid {:?}: {what}",
                    self.family,
                    self.radius,
                    self.grid.dims()
                )))
            }
        };
        match self.family {
            Family::TubeJet => fits(2.0 * self.radius + 2.0 <= n, "lumen wider than grid"),
            Family::BranchSlow => {
                if self.radius > 3.0 {
                    return bad(format!("branch radius {} exceeds 3 voxels", self.radius));
                }
                fits(4.0 * self.radius + 8.0 <= n, "branches do not fit")
            }
            Family::CavityVortex => fits(self.radius < 0.25 * n, "vortex core exceeds cavity"),
            Family::DualLumen => fits(
                2.0 * (2.0 * self.radius + 2.0) + 2.0 <= n,
                "two lumens do not fit side by side",
            ),
        }
    }
}

/// Straight piece of a vessel centerline. Radius and peak speed vary linearly
/// from `a` to `b`; flow runs from `a` to `b`.
#[derive(Debug, Clone, Copy)]
struct Segment {
    a: [f64; 3],
    b: [f64; 3],
    radius: [f64; 2],
    peak: [f64; 2],
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn unit(a: [f64; 3]) -> [f64; 3] {
    scale(a, 1.0 / norm(a))
}

/// Rotation taking +z to the direction at polar angle `tilt`, azimuth `phi`,
/// applied to an arbitrary vector.
fn tilt_rotate(v: [f64; 3], tilt: f64, phi: f64) -> [f64; 3] {
    // R = Rz(phi) * Ry(tilt) * Rz(-phi)
    let rz = |v: [f64; 3], a: f64| {
        let (s, c) = a.sin_cos();
        [c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]]
    };
    let ry = |v: [f64; 3], a: f64| {
        let (s, c) = a.sin_cos();
        [c * v[0] + s * v[2], v[1], -s * v[0] + c * v[2]]
    };
    rz(ry(rz(v, -phi), tilt), phi)
}

/// Voxel-centre coordinates of the grid centre (integer voxel so that a
/// centred axis passes exactly through voxel centres).
fn centre(grid: &VolumeGrid) -> [f64; 3] {
    let [nx, ny, nz] = grid.dims();
    [(nx / 2) as f64, (ny / 2) as f64, (nz / 2) as f64]
}

struct Vessel {
    segments: Vec<Segment>,
}

impl Vessel {
    /// Axial speed and flow direction at `p`, or `None` outside the lumen.
    fn sample(&self, p: [f64; 3]) -> Option<(f64, [f64; 3])> {
        let mut best: Option<(f64, &Segment, f64)> = None;
        for seg in &self.segments {
            let ab = sub(seg.b, seg.a);
            let len2 = dot(ab, ab);
            let t = (dot(sub(p, seg.a), ab) / len2).clamp(0.0, 1.0);
            let closest = add(seg.a, scale(ab, t));
            let d = norm(sub(p, closest));
            if best.map_or(true, |(bd, _, _)| d < bd) {
                best = Some((d, seg, t));
            }
        }
        let (d, seg, t) = best?;
        let radius = seg.radius[0] + t * (seg.radius[1] - seg.radius[0]);
        if d >= radius {
            return None;
        }
        let peak = seg.peak[0] + t * (seg.peak[1] - seg.peak[0]);
        let rr = d / radius;
        Some((peak * (1.0 - rr * rr), unit(sub(seg.b, seg.a))))
    }
}

/// Axial Poiseuille profile `peak * (1 - (r/R)^2)`, zero at and beyond the wall.
pub fn poiseuille(r: f64, radius: f64, peak: f64) -> f64 {
    if r >= radius {
        0.0
    } else {
        peak * (1.0 - (r / radius).powi(2))
    }
}

/// Swirl speed `peak * (r/R) * exp(1 - r/R)`, maximal (= peak) at `r = R`.
pub fn swirl_speed(r: f64, core_radius: f64, peak: f64) -> f64 {
    let q = r / core_radius;
    peak * q * (1.0 - q).exp()
}

fn tube_jet(spec: &PhantomSpec, phi: f64) -> Vec<Vessel> {
    let c = centre(&spec.grid);
    let dir = tilt_rotate([0.0, 0.0, 1.0], spec.tilt as f64, phi);
    let [nx, ny, nz] = spec.grid.dims();
    let half = 0.5 * ((nx * nx + ny * ny + nz * nz) as f64).sqrt() + 2.0;
    let r0 = spec.radius as f64;
    let peak = spec.peak_speed as f64;
    let sev = spec.stenosis as f64;
    let width = 0.12 * nz as f64;
    // Narrowing R(s) = R (1 - sev * exp(-(s/w)^2)); mass conservation scales
    // the local peak by (R / R(s))^2, i.e. 1/(1-sev)^2 at the throat.
    let pieces = if sev > 0.0 { 96 } else { 1 };
    let at = |s: f64| {
        let rs = r0 * (1.0 - sev * (-(s / width).powi(2)).exp());
        (add(c, scale(dir, s)), rs, peak * (r0 / rs).powi(2))
    };
    let segments = (0..pieces)
        .map(|i| {
            let s0 = -half + 2.0 * half * i as f64 / pieces as f64;
            let s1 = -half + 2.0 * half * (i + 1) as f64 / pieces as f64;
            let (a, ra, pa) = at(s0);
            let (b, rb, pb) = at(s1);
            Segment {
                a,
                b,
                radius: [ra, rb],
                peak: [pa, pb],
            }
        })
        .collect();
    vec![Vessel { segments }]
}

fn branch_slow(spec: &PhantomSpec, rng: &mut impl Rng) -> Vec<Vessel> {
    let c = centre(&spec.grid);
    let [nx, ny, nz] = spec.grid.dims().map(|d| d as f64);
    let r = spec.radius as f64;
    let peak = spec.peak_speed as f64;
    let margin = r + 3.0;
    let bif = [
        c[0] + rng.gen_range(-2.0..2.0),
        c[1] + rng.gen_range(-2.0..2.0),
        nz * rng.gen_range(0.35..0.5),
    ];
    let inlet = [
        c[0] + rng.gen_range(-0.15..0.15) * nx,
        c[1] + rng.gen_range(-0.15..0.15) * ny,
        -2.0,
    ];
    let tubes = rng.gen_range(2..=4usize);
    let mut vessels = vec![Vessel {
        segments: vec![Segment {
            a: inlet,
            b: bif,
            radius: [r, r],
            peak: [peak, peak],
        }],
    }];
    let children = tubes - 1;
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    for k in 0..children {
        let ang = phase + std::f64::consts::TAU * k as f64 / children as f64;
        let spread = rng.gen_range(0.25..0.42);
        let exit = [
            (c[0] + spread * nx * ang.cos()).clamp(margin, nx - 1.0 - margin),
            (c[1] + spread * ny * ang.sin()).clamp(margin, ny - 1.0 - margin),
            nz + 2.0,
        ];
        let child_r = r * rng.gen_range(0.85..1.0);
        let child_peak = peak * rng.gen_range(0.6..0.95);
        vessels.push(Vessel {
            segments: vec![Segment {
                a: bif,
                b: exit,
                radius: [child_r, child_r],
                peak: [child_peak, child_peak],
            }],
        });
    }
    vessels
}

fn dual_lumen(spec: &PhantomSpec, phi: f64, rng: &mut impl Rng) -> Vec<Vessel> {
    let c = centre(&spec.grid);
    let nz = spec.grid.nz() as f64;
    let r = spec.radius as f64;
    let peak = spec.peak_speed as f64;
    let split = nz * rng.gen_range(0.25..0.35);
    let sep = r + 1.5;
    let amp = rng.gen_range(0.5..1.5) * r;
    let ramp = 0.15 * nz;
    let offset = |z: f64, side: f64| -> [f64; 3] {
        let t = ((z - split) / ramp).clamp(0.0, 1.0);
        let s = t * t * (3.0 - 2.0 * t) * sep;
        let bend = if z > split {
            amp * (std::f64::consts::PI * (z - split) / (nz - split)).sin()
        } else {
            0.0
        };
        let local = [side * s, bend, z - c[2]];
        add(c, tilt_rotate(local, spec.tilt as f64, phi))
    };
    let inlet = Vessel {
        segments: vec![Segment {
            a: offset(-2.0, 0.0),
            b: offset(split, 0.0),
            radius: [r * 1.15, r * 1.15],
            peak: [0.8 * peak, 0.8 * peak],
        }],
    };
    let channel = |side: f64, p: f64| {
        let steps = 48;
        let z0 = split;
        let z1 = nz + 2.0;
        Vessel {
            segments: (0..steps)
                .map(|i| {
                    let za = z0 + (z1 - z0) * i as f64 / steps as f64;
                    let zb = z0 + (z1 - z0) * (i + 1) as f64 / steps as f64;
                    Segment {
                        a: offset(za, side),
                        b: offset(zb, side),
                        radius: [r, r],
                        peak: [p, p],
                    }
                })
                .collect(),
        }
    };
    vec![inlet, channel(-1.0, peak), channel(1.0, 0.45 * peak)]
}

/// Rasterizes tube-like vessels; where lumens overlap the faster one wins.
fn rasterize_vessels(grid: &VolumeGrid, vessels: &[Vessel]) -> (Vec<bool>, [Vec<f32>; 3]) {
    let n = grid.len();
    let mut fluid = vec![false; n];
    let mut v = [vec![0.0f32; n], vec![0.0f32; n], vec![0.0f32; n]];
    for i in 0..n {
        let [x, y, z] = grid.coords(i);
        let p = [x as f64, y as f64, z as f64];
        let mut best: Option<(f64, [f64; 3])> = None;
        for vessel in vessels {
            if let Some((speed, dir)) = vessel.sample(p) {
                if best.map_or(true, |(s, _)| speed > s) {
                    best = Some((speed, dir));
                }
            }
        }
        if let Some((speed, dir)) = best {
            fluid[i] = true;
            for c in 0..3 {
                v[c][i] = (speed * dir[c]) as f32;
            }
        }
    }
    (fluid, v)
}

fn cavity_vortex(spec: &PhantomSpec, phi: f64, rng: &mut impl Rng) -> (Vec<bool>, [Vec<f32>; 3]) {
    let grid = &spec.grid;
    let c = centre(grid);
    let [nx, ny, nz] = grid.dims().map(|d| d as f64);
    let semi = [
        0.42 * nx * rng.gen_range(0.9..1.0),
        0.36 * ny * rng.gen_range(0.9..1.0),
        0.32 * nz * rng.gen_range(0.9..1.0),
    ];
    let axis = tilt_rotate([0.0, 0.0, 1.0], spec.tilt as f64, phi);
    let core = spec.radius as f64;
    let peak = spec.peak_speed as f64;
    let n = grid.len();
    let mut fluid = vec![false; n];
    let mut v = [vec![0.0f32; n], vec![0.0f32; n], vec![0.0f32; n]];
    for i in 0..n {
        let [x, y, z] = grid.coords(i);
        let d = sub([x as f64, y as f64, z as f64], c);
        let e = (0..3).map(|k| (d[k] / semi[k]).powi(2)).sum::<f64>();
        if e >= 1.0 {
            continue;
        }
        fluid[i] = true;
        let radial = sub(d, scale(axis, dot(d, axis)));
        let r = norm(radial);
        if r == 0.0 {
            continue;
        }
        let speed = swirl_speed(r, core, peak);
        let tangent = scale(cross(axis, radial), 1.0 / r);
        for k in 0..3 {
            v[k][i] = (speed * tangent[k]) as f32;
        }
    }
    (fluid, v)
}

/// Builds the noise-free frame for `spec` at full amplitude. The returned
/// sample's VENC is chosen with [`choose_venc`] from the default candidates.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<FlowSample, PhantomError> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed);
    let phi = rng.gen_range(0.0..std::f64::consts::TAU);
    let grid = spec.grid;
    let (fluid, [vx, vy, vz]) = match spec.family {
        Family::TubeJet => rasterize_vessels(&grid, &tube_jet(spec, phi)),
        Family::BranchSlow => rasterize_vessels(&grid, &branch_slow(spec, &mut rng)),
        Family::DualLumen => rasterize_vessels(&grid, &dual_lumen(spec, phi, &mut rng)),
        Family::CavityVortex => cavity_vortex(spec, phi, &mut rng),
    };
    let magnitude = fluid
        .iter()
        .map(|&f| if f { FLUID_MAGNITUDE } else { BACKGROUND_MAGNITUDE })
        .collect();
    let velocity = VectorField::new(grid, vx, vy, vz)?;
    let venc = choose_venc(velocity.max_abs_component(), &DEFAULT_VENC_CANDIDATES)?;
    if venc.saturated {
        log::warn!("{}: peak velocity saturates the VENC candidates", spec.family);
    }
    Ok(FlowSample::new(
        ScalarField::new(grid, magnitude)?,
        velocity,
        FluidMask::new(grid, fluid)?,
        venc.venc,
        spec.family.compartment(),
        0,
    )?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VencChoice {
    pub venc: f32,
    /// No candidate cleared the margin; `venc` is the largest candidate and the
    /// frame will alias.
    pub saturated: bool,
}

/// Smallest candidate `>= 1.05 * max_abs_component`, or the largest candidate
/// flagged as saturated.
pub fn choose_venc(max_abs_component: f32, candidates: &[f32]) -> Result<VencChoice, PhantomError> {
    if candidates.is_empty()
        || candidates.iter().any(|c| !(*c > 0.0 && c.is_finite()))
        || candidates.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(PhantomError::BadCandidates);
    }
    let need = VENC_MARGIN * max_abs_component as f64;
    Ok(match candidates.iter().find(|&&c| c as f64 >= need) {
        Some(&venc) => VencChoice {
            venc,
            saturated: false,
        },
        None => VencChoice {
            venc: *candidates.last().unwrap(),
            saturated: true,
        },
    })
}

/// Per-frame amplitude scaling of the base velocity field.
#[derive(Debug, Clone, PartialEq)]
pub enum AmplitudeSchedule {
    /// One factor in (0, 1] per frame.
    Explicit(Vec<f32>),
    /// Systolic-peak waveform `0.15 + 0.85 exp(-((t - 0.2)/0.12)^2)` sampled
    /// at `t = frame / n_frames`.
    Cardiac,
}

impl AmplitudeSchedule {
    pub fn factors(&self, n_frames: usize) -> Result<Vec<f32>, PhantomError> {
        let f = match self {
            AmplitudeSchedule::Explicit(v) => {
                if v.is_empty() {
                    return Err(PhantomError::EmptySchedule);
                }
                if v.len() != n_frames {
                    return Err(PhantomError::ScheduleLength {
                        expected: n_frames,
                        got: v.len(),
                    });
                }
                v.clone()
            }
            AmplitudeSchedule::Cardiac => {
                if n_frames == 0 {
                    return Err(PhantomError::EmptySchedule);
                }
                (0..n_frames)
                    .map(|k| {
                        let t = k as f64 / n_frames as f64;
                        (0.15 + 0.85 * (-((t - 0.2) / 0.12).powi(2)).exp()) as f32
                    })
                    .collect()
            }
        };
        if let Some(&a) = f.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
            return Err(PhantomError::BadAmplitude(a));
        }
        Ok(f)
    }
}

/// Frame `t` is the base field scaled by `schedule[t]`, with its own VENC.
pub fn generate_sequence(
    spec: &PhantomSpec,
    n_frames: usize,
    schedule: &AmplitudeSchedule,
    venc_candidates: &[f32],
) -> Result<Vec<FlowSample>, PhantomError> {
    let factors = schedule.factors(n_frames)?;
    let base = generate_phantom(spec)?;
    factors
        .iter()
        .enumerate()
        .map(|(t, &a)| {
            let velocity = base.velocity.scaled(a);
            let venc = choose_venc(velocity.max_abs_component(), venc_candidates)?;
            if venc.saturated {
                log::warn!(
                    "{} frame {t}: max |v| {:.1} cm/s exceeds every VENC candidate",
                    spec.family,
                    velocity.max_abs_component()
                );
            }
            Ok(FlowSample::new(
                base.magnitude.clone(),
                velocity,
                base.mask.clone(),
                venc.venc,
                base.compartment,
                t as u32,
            )?)
        })
        .collect()
}

/// One manifest line: `path,compartment,frame,venc`.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: String,
    pub compartment: Compartment,
    pub frame: u32,
    pub venc: f32,
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    entries
        .iter()
        .map(|e| format!("{},{},{},{}\n", e.path, e.compartment, e.frame, e.venc))
        .collect()
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>, PhantomError> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: &str| PhantomError::Manifest {
            line: k + 1,
            msg: msg.to_string(),
        };
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(err("expected path,compartment,frame,venc"));
        }
        out.push(ManifestEntry {
            path: parts[0].to_string(),
            compartment: parts[1].parse().map_err(|_| err("bad compartment"))?,
            frame: parts[2].parse().map_err(|_| err("bad frame"))?,
            venc: parts[3].parse().map_err(|_| err("bad venc"))?,
        });
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), PhantomError> {
    atomic_write(path, format_manifest(entries).as_bytes())?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, PhantomError> {
    parse_manifest(&std::fs::read_to_string(path)?)
}

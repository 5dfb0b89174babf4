//! Voxel grids and the fields defined on them.
//!
//! Every field stores its samples x-fastest; [`VolumeGrid::linear_index`] is
//! the single definition of that layout and everything else (FFT, convolution,
//! file I/O) goes through it.

mod f4dv;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use f4dv::{
    decode_volume, encode_volume, read_sample, read_volume, write_sample, write_volume, F4dvError,
    Field, FieldRef, F4DV_MAGIC, F4DV_VERSION,
};

#[derive(Debug, Error, PartialEq)]
pub enum VolumeError {
    #[error("grid dimensions must be positive, got {0}x{1}x{2}")]
    EmptyGrid(usize, usize, usize),
    #[error("grid spacing must be positive and finite, got {0}")]
    BadSpacing(f32),
    #[error("voxel ({x},{y},{z}) outside grid {nx}x{ny}x{nz}")]
    OutOfRange {
        x: usize,
        y: usize,
        z: usize,
        nx: usize,
        ny: usize,
        nz: usize,
    },
    #[error("array of length {got} does not match grid with {expected} voxels")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite value at voxel {0}")]
    NonFinite(usize),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("venc must be positive and finite, got {0}")]
    BadVenc(f32),
    #[error("unknown compartment '{0}'")]
    UnknownCompartment(String),
    #[error("grid {0:?} not divisible by factor {1}")]
    NotDivisible([usize; 3], usize),
}

/// Uniform isotropic voxel lattice. `dx` is the spacing in millimetres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeGrid {
    nx: usize,
    ny: usize,
    nz: usize,
    dx: f32,
}

impl VolumeGrid {
    pub fn new(nx: usize, ny: usize, nz: usize, dx: f32) -> Result<Self, VolumeError> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(VolumeError::EmptyGrid(nx, ny, nz));
        }
        if !(dx > 0.0 && dx.is_finite()) {
            return Err(VolumeError::BadSpacing(dx));
        }
        Ok(Self { nx, ny, nz, dx })
    }

    pub fn cubic(n: usize, dx: f32) -> Result<Self, VolumeError> {
        Self::new(n, n, n, dx)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn nz(&self) -> usize {
        self.nz
    }

    pub fn dx(&self) -> f32 {
        self.dx
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Bounds-checked `x + nx * (y + ny * z)`.
    pub fn linear_index(&self, x: usize, y: usize, z: usize) -> Result<usize, VolumeError> {
        if x >= self.nx || y >= self.ny || z >= self.nz {
            return Err(VolumeError::OutOfRange {
                x,
                y,
                z,
                nx: self.nx,
                ny: self.ny,
                nz: self.nz,
            });
        }
        Ok(self.index(x, y, z))
    }

    /// Unchecked variant of [`linear_index`](Self::linear_index) for hot loops.
    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.nx && y < self.ny && z < self.nz);
        x + self.nx * (y + self.ny * z)
    }

    /// Inverse of [`index`](Self::index).
    #[inline]
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let x = i % self.nx;
        let yz = i / self.nx;
        [x, yz % self.ny, yz / self.ny]
    }

    /// Grid with every dimension divided by `factor` and spacing multiplied by it.
    pub fn coarsened(&self, factor: usize) -> Result<Self, VolumeError> {
        if factor == 0 || self.dims().iter().any(|d| d % factor != 0) {
            return Err(VolumeError::NotDivisible(self.dims(), factor));
        }
        Self::new(
            self.nx / factor,
            self.ny / factor,
            self.nz / factor,
            self.dx * factor as f32,
        )
    }
}

fn check_values(grid: &VolumeGrid, values: &[f32]) -> Result<(), VolumeError> {
    if values.len() != grid.len() {
        return Err(VolumeError::LengthMismatch {
            expected: grid.len(),
            got: values.len(),
        });
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(VolumeError::NonFinite(i));
    }
    Ok(())
}

/// Scalar f32 samples on a grid (magnitude images).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: VolumeGrid,
    values: Vec<f32>,
}

impl ScalarField {
    pub fn new(grid: VolumeGrid, values: Vec<f32>) -> Result<Self, VolumeError> {
        check_values(&grid, &values)?;
        Ok(Self { grid, values })
    }

    pub fn filled(grid: VolumeGrid, value: f32) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn grid(&self) -> &VolumeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }
}

/// Three-component velocity in cm/s.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: VolumeGrid,
    vx: Vec<f32>,
    vy: Vec<f32>,
    vz: Vec<f32>,
}

impl VectorField {
    pub fn new(
        grid: VolumeGrid,
        vx: Vec<f32>,
        vy: Vec<f32>,
        vz: Vec<f32>,
    ) -> Result<Self, VolumeError> {
        check_values(&grid, &vx)?;
        check_values(&grid, &vy)?;
        check_values(&grid, &vz)?;
        Ok(Self { grid, vx, vy, vz })
    }

    pub fn from_components(grid: VolumeGrid, [vx, vy, vz]: [Vec<f32>; 3]) -> Result<Self, VolumeError> {
        Self::new(grid, vx, vy, vz)
    }

    pub fn zeros(grid: VolumeGrid) -> Self {
        let n = grid.len();
        Self {
            grid,
            vx: vec![0.0; n],
            vy: vec![0.0; n],
            vz: vec![0.0; n],
        }
    }

    pub fn grid(&self) -> &VolumeGrid {
        &self.grid
    }

    pub fn vx(&self) -> &[f32] {
        &self.vx
    }

    pub fn vy(&self) -> &[f32] {
        &self.vy
    }

    pub fn vz(&self) -> &[f32] {
        &self.vz
    }

    pub fn components(&self) -> [&[f32]; 3] {
        [&self.vx, &self.vy, &self.vz]
    }

    pub fn into_components(self) -> [Vec<f32>; 3] {
        [self.vx, self.vy, self.vz]
    }

    pub fn at(&self, i: usize) -> [f32; 3] {
        [self.vx[i], self.vy[i], self.vz[i]]
    }

    pub fn speed(&self, i: usize) -> f32 {
        let [x, y, z] = self.at(i);
        (x * x + y * y + z * z).sqrt()
    }

    pub fn max_abs_component(&self) -> f32 {
        self.components()
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0f32, |m, v| m.max(v.abs()))
    }

    /// Every component multiplied by `s`.
    pub fn scaled(&self, s: f32) -> Self {
        let f = |c: &[f32]| c.iter().map(|v| v * s).collect::<Vec<_>>();
        Self {
            grid: self.grid,
            vx: f(&self.vx),
            vy: f(&self.vy),
            vz: f(&self.vz),
        }
    }
}

/// Complex signal in double precision. Not persisted, so there is no need to
/// narrow it to f32.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    pub grid: VolumeGrid,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexField {
    pub fn new(grid: VolumeGrid, re: Vec<f64>, im: Vec<f64>) -> Result<Self, VolumeError> {
        for part in [&re, &im] {
            if part.len() != grid.len() {
                return Err(VolumeError::LengthMismatch {
                    expected: grid.len(),
                    got: part.len(),
                });
            }
        }
        Ok(Self { grid, re, im })
    }

    pub fn zeros(grid: VolumeGrid) -> Self {
        Self {
            grid,
            re: vec![0.0; grid.len()],
            im: vec![0.0; grid.len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluidMask {
    grid: VolumeGrid,
    fluid: Vec<bool>,
}

impl FluidMask {
    pub fn new(grid: VolumeGrid, fluid: Vec<bool>) -> Result<Self, VolumeError> {
        if fluid.len() != grid.len() {
            return Err(VolumeError::LengthMismatch {
                expected: grid.len(),
                got: fluid.len(),
            });
        }
        Ok(Self { grid, fluid })
    }

    pub fn grid(&self) -> &VolumeGrid {
        &self.grid
    }

    pub fn fluid(&self) -> &[bool] {
        &self.fluid
    }

    pub fn count(&self) -> usize {
        self.fluid.iter().filter(|f| **f).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.fluid.len() as f64
    }
}

/// Cardiovascular domain a sample belongs to. Each phantom family stands in
/// for one of them; `Dissection` is the held-out domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Compartment {
    Cardiac,
    Aortic,
    Cerebrovascular,
    Dissection,
}

impl Compartment {
    pub const ALL: [Compartment; 4] = [
        Compartment::Cardiac,
        Compartment::Aortic,
        Compartment::Cerebrovascular,
        Compartment::Dissection,
    ];

    pub fn code(self) -> u8 {
        match self {
            Compartment::Cardiac => 0,
            Compartment::Aortic => 1,
            Compartment::Cerebrovascular => 2,
            Compartment::Dissection => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Compartment::Cardiac => "cardiac",
            Compartment::Aortic => "aortic",
            Compartment::Cerebrovascular => "cerebrovascular",
            Compartment::Dissection => "dissection",
        }
    }
}

impl fmt::Display for Compartment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Compartment {
    type Err = VolumeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cardiac" => Ok(Compartment::Cardiac),
            "aortic" | "aorta" => Ok(Compartment::Aortic),
            "cerebrovascular" | "cerebro" => Ok(Compartment::Cerebrovascular),
            "dissection" => Ok(Compartment::Dissection),
            other => Err(VolumeError::UnknownCompartment(other.to_string())),
        }
    }
}

/// One time frame of one flow model.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSample {
    pub magnitude: ScalarField,
    pub velocity: VectorField,
    pub mask: FluidMask,
    /// Velocity encoding in cm/s.
    pub venc: f32,
    pub compartment: Compartment,
    pub frame: u32,
}

impl FlowSample {
    /// Checks that all fields share one grid and that `venc` is usable.
    /// Aliasing (`|v| > venc`) is rejected later, at signal encoding.
    pub fn new(
        magnitude: ScalarField,
        velocity: VectorField,
        mask: FluidMask,
        venc: f32,
        compartment: Compartment,
        frame: u32,
    ) -> Result<Self, VolumeError> {
        if magnitude.grid() != velocity.grid() || mask.grid() != velocity.grid() {
            return Err(VolumeError::GridMismatch);
        }
        if !(venc > 0.0 && venc.is_finite()) {
            return Err(VolumeError::BadVenc(venc));
        }
        Ok(Self {
            magnitude,
            velocity,
            mask,
            venc,
            compartment,
            frame,
        })
    }

    pub fn grid(&self) -> &VolumeGrid {
        self.velocity.grid()
    }

    /// True when every velocity component is strictly inside `(-venc, venc)`.
    pub fn alias_free(&self) -> bool {
        self.velocity.max_abs_component() < self.venc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_index_examples() {
        let g = VolumeGrid::new(2, 3, 4, 1.0).unwrap();
        assert_eq!(g.linear_index(0, 0, 0).unwrap(), 0);
        assert_eq!(g.linear_index(1, 2, 3).unwrap(), 23);
        assert!(matches!(
            g.linear_index(1, 2, 4),
            Err(VolumeError::OutOfRange { .. })
        ));
    }

    #[test]
    fn linear_index_is_a_bijection() {
        let g = VolumeGrid::new(3, 5, 2, 1.0).unwrap();
        let mut seen = vec![false; g.len()];
        for z in 0..2 {
            for y in 0..5 {
                for x in 0..3 {
                    let i = g.linear_index(x, y, z).unwrap();
                    assert!(!seen[i]);
                    seen[i] = true;
                    assert_eq!(g.coords(i), [x, y, z]);
                }
            }
        }
        assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn rejects_bad_grids_and_values() {
        assert!(VolumeGrid::new(0, 1, 1, 1.0).is_err());
        assert!(VolumeGrid::new(1, 1, 1, 0.0).is_err());
        let g = VolumeGrid::cubic(2, 1.0).unwrap();
        assert!(ScalarField::new(g, vec![0.0; 7]).is_err());
        let mut v = vec![0.0; 8];
        v[3] = f32::NAN;
        assert_eq!(ScalarField::new(g, v), Err(VolumeError::NonFinite(3)));
    }

    #[test]
    fn coarsened_grid() {
        let g = VolumeGrid::cubic(12, 1.5).unwrap();
        let c = g.coarsened(2).unwrap();
        assert_eq!(c.dims(), [6, 6, 6]);
        assert_eq!(c.dx(), 3.0);
        assert!(VolumeGrid::new(5, 4, 4, 1.0).unwrap().coarsened(2).is_err());
    }

    #[test]
    fn compartment_codes_round_trip() {
        for c in Compartment::ALL {
            assert_eq!(Compartment::from_code(c.code()), Some(c));
            assert_eq!(c.name().parse::<Compartment>().unwrap(), c);
        }
        assert!("brain".parse::<Compartment>().is_err());
    }
}

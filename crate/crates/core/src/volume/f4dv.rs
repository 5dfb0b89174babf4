//! F4DV volume container.
//!
//! ```text
//! "F4DV" | version u32 = 1 | nx ny nz u32 | dx f32 (mm) | field_count u16
//! per field: name_len u16 | name (UTF-8) | kind u8 | payload
//!   kind 0: scalar, nx*ny*nz f32
//!   kind 1: vector, three consecutive f32 arrays vx, vy, vz
//!   kind 2: mask, nx*ny*nz u8 (0 or 1)
//! ```
//! All integers and floats little-endian.

use std::collections::HashSet;
use std::io;
use std::path::Path;

use thiserror::Error;

use super::{Compartment, FlowSample, FluidMask, ScalarField, VectorField, VolumeError, VolumeGrid};
use crate::fileio::{atomic_write, put_f32s, ByteReader};

pub const F4DV_MAGIC: &[u8; 4] = b"F4DV";
pub const F4DV_VERSION: u32 = 1;

const KIND_SCALAR: u8 = 0;
const KIND_VECTOR: u8 = 1;
const KIND_MASK: u8 = 2;

#[derive(Debug, Error)]
pub enum F4dvError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("bad-magic")]
    BadMagic,
    #[error("bad-version: {0}")]
    BadVersion(u32),
    #[error("truncated")]
    Truncated,
    #[error("trailing bytes after last field")]
    TrailingBytes,
    #[error("unknown field kind {0}")]
    BadKind(u8),
    #[error("mask byte {0} is neither 0 nor 1")]
    BadMaskByte(u8),
    #[error("field name is not UTF-8")]
    BadName,
    #[error("field name '{0}' longer than 255 bytes")]
    NameTooLong(String),
    #[error("duplicate field name '{0}'")]
    DuplicateName(String),
    #[error("field '{0}' is not on the container grid")]
    GridMismatch(String),
    #[error("too many fields")]
    TooManyFields,
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

#[derive(Debug, Clone, Copy)]
pub enum FieldRef<'a> {
    Scalar(&'a ScalarField),
    Vector(&'a VectorField),
    Mask(&'a FluidMask),
}

impl FieldRef<'_> {
    fn grid(&self) -> &VolumeGrid {
        match self {
            FieldRef::Scalar(f) => f.grid(),
            FieldRef::Vector(f) => f.grid(),
            FieldRef::Mask(f) => f.grid(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Scalar(ScalarField),
    Vector(VectorField),
    Mask(FluidMask),
}

impl Field {
    pub fn as_ref(&self) -> FieldRef<'_> {
        match self {
            Field::Scalar(f) => FieldRef::Scalar(f),
            Field::Vector(f) => FieldRef::Vector(f),
            Field::Mask(f) => FieldRef::Mask(f),
        }
    }
}

/// Serializes the named fields. All validation happens before anything
/// touches the filesystem.
pub fn encode_volume(fields: &[(&str, FieldRef<'_>)], grid: &VolumeGrid) -> Result<Vec<u8>, F4dvError> {
    let mut names = HashSet::new();
    for (name, field) in fields {
        if name.len() > 255 {
            return Err(F4dvError::NameTooLong(name.to_string()));
        }
        if !names.insert(*name) {
            return Err(F4dvError::DuplicateName(name.to_string()));
        }
        if field.grid() != grid {
            return Err(F4dvError::GridMismatch(name.to_string()));
        }
    }
    let count = u16::try_from(fields.len()).map_err(|_| F4dvError::TooManyFields)?;

    let mut out = Vec::new();
    out.extend_from_slice(F4DV_MAGIC);
    out.extend_from_slice(&F4DV_VERSION.to_le_bytes());
    for d in grid.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&grid.dx().to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for (name, field) in fields {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        match field {
            FieldRef::Scalar(f) => {
                out.push(KIND_SCALAR);
                put_f32s(&mut out, f.values());
            }
            FieldRef::Vector(f) => {
                out.push(KIND_VECTOR);
                for c in f.components() {
                    put_f32s(&mut out, c);
                }
            }
            FieldRef::Mask(f) => {
                out.push(KIND_MASK);
                out.extend(f.fluid().iter().map(|&b| b as u8));
            }
        }
    }
    Ok(out)
}

pub fn write_volume(
    path: &Path,
    fields: &[(&str, FieldRef<'_>)],
    grid: &VolumeGrid,
) -> Result<(), F4dvError> {
    let bytes = encode_volume(fields, grid)?;
    atomic_write(path, &bytes)?;
    Ok(())
}

pub fn decode_volume(bytes: &[u8]) -> Result<(VolumeGrid, Vec<(String, Field)>), F4dvError> {
    let mut r = ByteReader::new(bytes);
    let magic = r.take(4).ok_or(F4dvError::Truncated)?;
    if magic != F4DV_MAGIC {
        return Err(F4dvError::BadMagic);
    }
    let version = r.u32().ok_or(F4dvError::Truncated)?;
    if version != F4DV_VERSION {
        return Err(F4dvError::BadVersion(version));
    }
    let mut dims = [0usize; 3];
    for d in dims.iter_mut() {
        *d = r.u32().ok_or(F4dvError::Truncated)? as usize;
    }
    let dx = r.f32().ok_or(F4dvError::Truncated)?;
    let grid = VolumeGrid::new(dims[0], dims[1], dims[2], dx)?;
    let n = grid.len();
    let count = r.u16().ok_or(F4dvError::Truncated)?;

    let mut fields = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = r.u16().ok_or(F4dvError::Truncated)? as usize;
        let name = r.take(name_len).ok_or(F4dvError::Truncated)?;
        let name = std::str::from_utf8(name)
            .map_err(|_| F4dvError::BadName)?
            .to_string();
        let kind = r.u8().ok_or(F4dvError::Truncated)?;
        let field = match kind {
            KIND_SCALAR => {
                let v = r.f32_vec(n).ok_or(F4dvError::Truncated)?;
                Field::Scalar(ScalarField::new(grid, v)?)
            }
            KIND_VECTOR => {
                let vx = r.f32_vec(n).ok_or(F4dvError::Truncated)?;
                let vy = r.f32_vec(n).ok_or(F4dvError::Truncated)?;
                let vz = r.f32_vec(n).ok_or(F4dvError::Truncated)?;
                Field::Vector(VectorField::new(grid, vx, vy, vz)?)
            }
            KIND_MASK => {
                let raw = r.take(n).ok_or(F4dvError::Truncated)?;
                let mut fluid = Vec::with_capacity(n);
                for &b in raw {
                    match b {
                        0 => fluid.push(false),
                        1 => fluid.push(true),
                        other => return Err(F4dvError::BadMaskByte(other)),
                    }
                }
                Field::Mask(FluidMask::new(grid, fluid)?)
            }
            other => return Err(F4dvError::BadKind(other)),
        };
        fields.push((name, field));
    }
    if r.remaining() != 0 {
        return Err(F4dvError::TrailingBytes);
    }
    Ok((grid, fields))
}

pub fn read_volume(path: &Path) -> Result<(VolumeGrid, Vec<(String, Field)>), F4dvError> {
    let bytes = std::fs::read(path)?;
    decode_volume(&bytes)
}

/// Writes a sample as the three fields `magnitude`, `velocity`, `mask`.
/// VENC, compartment and frame live in the manifest, not the container.
pub fn write_sample(path: &Path, sample: &FlowSample) -> Result<(), F4dvError> {
    write_volume(
        path,
        &[
            ("magnitude", FieldRef::Scalar(&sample.magnitude)),
            ("velocity", FieldRef::Vector(&sample.velocity)),
            ("mask", FieldRef::Mask(&sample.mask)),
        ],
        sample.grid(),
    )
}

/// Reads a file written by [`write_sample`].
pub fn read_sample(
    path: &Path,
    venc: f32,
    compartment: Compartment,
    frame: u32,
) -> Result<FlowSample, F4dvError> {
    let (_, fields) = read_volume(path)?;
    let mut magnitude = None;
    let mut velocity = None;
    let mut mask = None;
    for (name, field) in fields {
        match (name.as_str(), field) {
            ("magnitude", Field::Scalar(f)) => magnitude = Some(f),
            ("velocity", Field::Vector(f)) => velocity = Some(f),
            ("mask", Field::Mask(f)) => mask = Some(f),
            _ => {}
        }
    }
    let missing = |what: &str| {
        F4dvError::Io(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("{}: missing '{what}' field", path.display()),
        ))
    };
    Ok(FlowSample::new(
        magnitude.ok_or_else(|| missing("magnitude"))?,
        velocity.ok_or_else(|| missing("velocity"))?,
        mask.ok_or_else(|| missing("mask"))?,
        venc,
        compartment,
        frame,
    )?)
}

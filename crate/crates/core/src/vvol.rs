//! VVOL: the toolkit's self-describing binary volume format.
//!
//! Layout (all little-endian):
//!
//! | bytes | field                                     |
//! |-------|-------------------------------------------|
//! | 0..4  | magic `"VVOL"`                            |
//! | 4..8  | u32 version = 1                           |
//! | 8     | u8 dtype: 0 = u8, 1 = f32                 |
//! | 9     | u8 kind: 0 = scalar, 1 = vec3, 2 = bins3  |
//! | 10..12| u16 pad = 0                               |
//! | 12..24| u32 x 3 dims (nx, ny, nz)                 |
//! | 24..36| f32 x 3 spacing in mm                     |
//! | 36..  | payload, x-fastest order                  |
//!
//! Round-trips are bitwise identical for every kind.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::volume::{Volume, VolumeData, VolumeKind};

const MAGIC: [u8; 4] = *b"VVOL";
const VERSION: u32 = 1;

/// Total header size in bytes.
pub const HEADER_LEN: usize = 36;

fn dtype_code(kind: VolumeKind) -> u8 {
    if kind.is_f32() {
        1
    } else {
        0
    }
}

fn kind_code(kind: VolumeKind) -> u8 {
    match kind {
        VolumeKind::ScalarF32 | VolumeKind::ScalarU8 => 0,
        VolumeKind::Vec3F32 => 1,
        VolumeKind::Bins3U8 => 2,
    }
}

fn decode_kind(dtype: u8, kind: u8) -> Result<VolumeKind> {
    match (dtype, kind) {
        (0, 0) => Ok(VolumeKind::ScalarU8),
        (1, 0) => Ok(VolumeKind::ScalarF32),
        (1, 1) => Ok(VolumeKind::Vec3F32),
        (0, 2) => Ok(VolumeKind::Bins3U8),
        (d, _) if d > 1 => Err(Error::UnknownDtype(d)),
        (_, k) if k > 2 => Err(Error::UnknownKind(k)),
        (d, k) => Err(Error::Invariant(format!("dtype {d} incompatible with kind {k}"))),
    }
}

/// Serializes a volume. The volume is re-validated first, so e.g. a mask
/// holding a stray value 2 is rejected rather than written.
pub fn save_vvol(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    v.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u8(dtype_code(v.kind()))?;
    w.write_u8(kind_code(v.kind()))?;
    w.write_u16::<LittleEndian>(0)?;
    for d in v.dims() {
        w.write_u32::<LittleEndian>(d as u32)?;
    }
    for s in v.spacing() {
        w.write_f32::<LittleEndian>(s)?;
    }
    match v.data() {
        VolumeData::U8(d) => w.write_all(d)?,
        VolumeData::F32(d) => {
            for &x in d {
                w.write_f32::<LittleEndian>(x)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_vvol(path: impl AsRef<Path>) -> Result<Volume> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::TruncatedPayload { expected: HEADER_LEN, got: 0 })?;
    if magic != MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dtype = r.read_u8()?;
    let kind = r.read_u8()?;
    let _pad = r.read_u16::<LittleEndian>()?;
    let kind = decode_kind(dtype, kind)?;
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = r.read_u32::<LittleEndian>()? as usize;
    }
    let mut spacing = [0f32; 3];
    for s in &mut spacing {
        *s = r.read_f32::<LittleEndian>()?;
    }
    let n = dims[0] * dims[1] * dims[2] * kind.components();
    let data = if kind.is_f32() {
        let mut buf = vec![0u8; n * 4];
        read_payload(&mut r, &mut buf)?;
        let mut d = vec![0f32; n];
        for (i, c) in buf.chunks_exact(4).enumerate() {
            d[i] = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        }
        VolumeData::F32(d)
    } else {
        let mut d = vec![0u8; n];
        read_payload(&mut r, &mut d)?;
        VolumeData::U8(d)
    };
    Volume::new(dims, spacing, kind, data)
}

fn read_payload(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    let mut got = 0usize;
    while got < buf.len() {
        match r.read(&mut buf[got..])? {
            0 => return Err(Error::TruncatedPayload { expected: buf.len(), got }),
            n => got += n,
        }
    }
    Ok(())
}

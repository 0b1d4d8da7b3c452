//! Patch extraction and stitching for patch-wise training and inference.
//!
//! Boundary patches are shifted inward (clamped) so that every patch lies
//! fully inside the volume; nothing is ever zero-padded. Stitching averages
//! overlapping voxels with uniform weights, which is deterministic and
//! order-independent.

use crate::error::{Error, Result};
use crate::volume::{Volume, VolumeData};

/// Cubic patch layout over a volume.
#[derive(Debug, Clone)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub overlap: usize,
    pub origins: Vec<[usize; 3]>,
}

/// Per-axis corner coordinates: stride `size - overlap` from zero, with a
/// final origin clamped to `dim - size` whenever the strided grid would not
/// reach the far face.
fn axis_origins(dim: usize, size: usize, overlap: usize) -> Result<Vec<usize>> {
    if size == 0 {
        return Err(Error::invalid("patch size must be positive"));
    }
    if size > dim {
        return Err(Error::invalid(format!("patch size {size} exceeds volume dim {dim}")));
    }
    if overlap >= size {
        return Err(Error::invalid(format!("overlap {overlap} must be smaller than patch size {size}")));
    }
    let step = size - overlap;
    let mut origins = Vec::new();
    let mut o = 0usize;
    loop {
        origins.push(o);
        if o + size >= dim {
            break;
        }
        o = (o + step).min(dim - size);
    }
    Ok(origins)
}

pub fn plan_patches(dims: [usize; 3], size: usize, overlap: usize) -> Result<PatchGrid> {
    let xs = axis_origins(dims[0], size, overlap)?;
    let ys = axis_origins(dims[1], size, overlap)?;
    let zs = axis_origins(dims[2], size, overlap)?;
    let mut origins = Vec::with_capacity(xs.len() * ys.len() * zs.len());
    for &z in &zs {
        for &y in &ys {
            for &x in &xs {
                origins.push([x, y, z]);
            }
        }
    }
    Ok(PatchGrid { patch_size: size, overlap, origins })
}

/// Copies the cubic sub-block starting at `origin`.
pub fn crop(v: &Volume, origin: [usize; 3], size: usize) -> Result<Volume> {
    let dims = v.dims();
    for a in 0..3 {
        if origin[a] + size > dims[a] {
            return Err(Error::invalid(format!(
                "patch at {:?} size {} exceeds dims {:?}",
                origin, size, dims
            )));
        }
    }
    let c = v.kind().components();
    let mut out = Volume::zeros([size; 3], v.spacing(), v.kind());
    for z in 0..size {
        for y in 0..size {
            let src = c * v.index(origin[0], origin[1] + y, origin[2] + z);
            let dst = c * out.index(0, y, z);
            let n = c * size;
            match (v.data(), &mut out) {
                (VolumeData::F32(s), o) => {
                    o.f32_data_mut()[dst..dst + n].copy_from_slice(&s[src..src + n]);
                }
                (VolumeData::U8(s), o) => {
                    o.u8_data_mut()[dst..dst + n].copy_from_slice(&s[src..src + n]);
                }
            }
        }
    }
    Ok(out)
}

/// Splits a volume into clamped overlapping patches covering every voxel.
pub fn extract_patches(v: &Volume, size: usize, overlap: usize) -> Result<Vec<([usize; 3], Volume)>> {
    let grid = plan_patches(v.dims(), size, overlap)?;
    grid.origins
        .iter()
        .map(|&o| Ok((o, crop(v, o, size)?)))
        .collect()
}

/// Reassembles patches into a volume of the given dims. Overlapping voxels
/// are averaged with uniform weights; a voxel covered by no patch is an
/// error.
pub fn stitch_patches(patches: &[([usize; 3], Volume)], dims: [usize; 3]) -> Result<Volume> {
    let (_, first) = patches
        .first()
        .ok_or_else(|| Error::invalid("stitch_patches requires at least one patch"))?;
    let kind = first.kind();
    let spacing = first.spacing();
    let c = kind.components();
    let n = dims[0] * dims[1] * dims[2];

    // f64 accumulation keeps k identical values averaging back to the exact
    // value for any realistic overlap count.
    let mut acc = vec![0f64; n * c];
    let mut cnt = vec![0u32; n];
    for (origin, p) in patches {
        if p.kind() != kind {
            return Err(Error::dim_mismatch("mixed patch kinds"));
        }
        let size = p.dims();
        for a in 0..3 {
            if origin[a] + size[a] > dims[a] {
                return Err(Error::invalid(format!("patch at {:?} exceeds dims {:?}", origin, dims)));
            }
        }
        for z in 0..size[2] {
            for y in 0..size[1] {
                for x in 0..size[0] {
                    let pi = p.index(x, y, z);
                    let oi = (origin[0] + x) + dims[0] * ((origin[1] + y) + dims[1] * (origin[2] + z));
                    cnt[oi] += 1;
                    for k in 0..c {
                        let val = match p.data() {
                            VolumeData::F32(d) => d[c * pi + k] as f64,
                            VolumeData::U8(d) => d[c * pi + k] as f64,
                        };
                        acc[c * oi + k] += val;
                    }
                }
            }
        }
    }
    if let Some(hole) = cnt.iter().position(|&k| k == 0) {
        let z = hole / (dims[0] * dims[1]);
        let y = (hole / dims[0]) % dims[1];
        let x = hole % dims[0];
        return Err(Error::invalid(format!("voxel ({x}, {y}, {z}) not covered by any patch")));
    }
    let mut out = Volume::zeros(dims, spacing, kind);
    match &mut out {
        v if kind.is_f32() => {
            let d = v.f32_data_mut();
            for i in 0..n {
                let k = cnt[i] as f64;
                for j in 0..c {
                    d[c * i + j] = (acc[c * i + j] / k) as f32;
                }
            }
        }
        v => {
            let d = v.u8_data_mut();
            for i in 0..n {
                let k = cnt[i] as f64;
                for j in 0..c {
                    d[c * i + j] = (acc[c * i + j] / k).round() as u8;
                }
            }
        }
    }
    out.validate()?;
    Ok(out)
}

//! Per-voxel vessel orientation fields.
//!
//! The label-construction pipeline: thin the vessel mask to a centerline,
//! estimate a tangent at every centerline voxel by windowed PCA, propagate
//! tangents to all vessel voxels by exact nearest neighbor, then quantize
//! the projected in-plane angles into six 30-degree bins per orthogonal
//! plane. Tangents are axial (v and -v indistinguishable), so every vector
//! is hemisphere-canonicalized before use.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::skeleton::{connected_components26, skeletonize};
use crate::vec3::{canonicalize, normalize};
use crate::volume::{project_to_plane, Volume, VolumeKind, PLANES};

/// A vec3 volume paired with the mask of voxels on which it is defined.
/// Vectors are unit-norm and hemisphere-canonical on the mask, zero outside.
#[derive(Debug, Clone)]
pub struct OrientationField {
    pub field: Volume,
    pub mask: Volume,
}

impl OrientationField {
    pub fn new(field: Volume, mask: Volume) -> Result<Self> {
        if field.kind() != VolumeKind::Vec3F32 {
            return Err(Error::invalid("orientation field must be vec3-f32"));
        }
        if field.dims() != mask.dims() {
            return Err(Error::dim_mismatch("orientation field and mask dims differ"));
        }
        Ok(OrientationField { field, mask })
    }

    /// Checks unit norm (tolerance 1e-4) on the mask and zero outside.
    pub fn validate(&self) -> Result<()> {
        for i in 0..self.mask.voxels() {
            let v = self.field.vec_at(i);
            let n = crate::vec3::norm(v);
            if self.mask.u8_data()[i] != 0 {
                if (n - 1.0).abs() > 1e-4 {
                    return Err(Error::invariant(format!("non-unit vector {v:?} on mask at {i}")));
                }
            } else if n != 0.0 {
                return Err(Error::invariant(format!("nonzero vector outside mask at {i}")));
            }
        }
        Ok(())
    }
}

/// Diagnostics from tangent estimation.
#[derive(Debug, Clone, Default)]
pub struct TangentReport {
    /// Voxels whose tangent came from the PCA window.
    pub from_pca: usize,
    /// Voxels filled from the nearest defined skeleton voxel.
    pub filled_from_neighbor: usize,
    /// Voxels in components with no defined tangent at all, set to (0,0,1).
    pub default_fallbacks: usize,
}

/// Principal eigenvector of a symmetric PSD 3x3 matrix by power iteration.
/// Deterministic: starts from the axis with the largest diagonal entry.
fn principal_eigenvector(c: &[[f64; 3]; 3]) -> [f64; 3] {
    let mut start = 0;
    for a in 1..3 {
        if c[a][a] > c[start][start] {
            start = a;
        }
    }
    let mut v = [0.0f64; 3];
    v[start] = 1.0;
    for _ in 0..128 {
        let w = [
            c[0][0] * v[0] + c[0][1] * v[1] + c[0][2] * v[2],
            c[1][0] * v[0] + c[1][1] * v[1] + c[1][2] * v[2],
            c[2][0] * v[0] + c[2][1] * v[1] + c[2][2] * v[2],
        ];
        let n = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
        if n < 1e-300 {
            break; // zero matrix: any direction is "principal"
        }
        let w = [w[0] / n, w[1] / n, w[2] / n];
        let delta = (w[0] - v[0]).abs() + (w[1] - v[1]).abs() + (w[2] - v[2]).abs();
        let delta_neg = (w[0] + v[0]).abs() + (w[1] + v[1]).abs() + (w[2] + v[2]).abs();
        v = w;
        if delta.min(delta_neg) < 1e-14 {
            break;
        }
    }
    v
}

/// Estimates a unit tangent at every skeleton voxel as the principal
/// direction of skeleton-voxel coordinates within a Chebyshev window of the
/// given radius. Voxels with fewer than two other skeleton voxels in the
/// window are filled from the nearest defined voxel of the same component;
/// components with no defined voxel fall back to (0,0,1).
pub fn estimate_tangents(skeleton: &Volume, window_radius: usize) -> Result<(OrientationField, TangentReport)> {
    skeleton.validate()?;
    let dims = skeleton.dims();
    let data = skeleton.u8_data();
    let voxels: Vec<usize> = (0..data.len()).filter(|&i| data[i] != 0).collect();
    let mut field = Volume::zeros(dims, skeleton.spacing(), VolumeKind::Vec3F32);
    let mut report = TangentReport::default();
    let r = window_radius as i64;

    let mut defined = vec![false; data.len()];
    for &i in &voxels {
        let [x, y, z] = skeleton.coords(i);
        // Gather skeleton coordinates in the window (the center included).
        let mut pts: Vec<[f64; 3]> = Vec::new();
        for dz in -r..=r {
            for dy in -r..=r {
                for dx in -r..=r {
                    let (px, py, pz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                    if px < 0 || py < 0 || pz < 0
                        || px >= dims[0] as i64 || py >= dims[1] as i64 || pz >= dims[2] as i64
                    {
                        continue;
                    }
                    let j = px as usize + dims[0] * (py as usize + dims[1] * pz as usize);
                    if data[j] != 0 {
                        pts.push([px as f64, py as f64, pz as f64]);
                    }
                }
            }
        }
        if pts.len() < 3 {
            continue; // fewer than 2 neighbors: filled below
        }
        let n = pts.len() as f64;
        let mut mean = [0.0f64; 3];
        for p in &pts {
            for a in 0..3 {
                mean[a] += p[a];
            }
        }
        for a in 0..3 {
            mean[a] /= n;
        }
        let mut cov = [[0.0f64; 3]; 3];
        for p in &pts {
            let d = [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]];
            for a in 0..3 {
                for b in 0..3 {
                    cov[a][b] += d[a] * d[b];
                }
            }
        }
        let e = principal_eigenvector(&cov);
        let t = canonicalize([e[0] as f32, e[1] as f32, e[2] as f32]);
        if let Some(t) = normalize(t, 1e-12) {
            field.set_vec_at(i, t);
            defined[i] = true;
            report.from_pca += 1;
        }
    }

    // Fill undefined voxels from the nearest defined voxel in their own
    // 26-connected component; ties broken by flat index.
    let (labels, _) = connected_components26(skeleton);
    let defined_list: Vec<usize> = voxels.iter().copied().filter(|&i| defined[i]).collect();
    for &i in &voxels {
        if defined[i] {
            continue;
        }
        let [x, y, z] = skeleton.coords(i);
        let mut best: Option<(i64, usize)> = None;
        for &j in &defined_list {
            if labels[j] != labels[i] {
                continue;
            }
            let [jx, jy, jz] = skeleton.coords(j);
            let d = (jx as i64 - x as i64).pow(2)
                + (jy as i64 - y as i64).pow(2)
                + (jz as i64 - z as i64).pow(2);
            if best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, j));
            }
        }
        match best {
            Some((_, j)) => {
                let t = field.vec_at(j);
                field.set_vec_at(i, t);
                report.filled_from_neighbor += 1;
            }
            None => {
                field.set_vec_at(i, [0.0, 0.0, 1.0]);
                report.default_fallbacks += 1;
            }
        }
    }

    let of = OrientationField::new(field, skeleton.clone())?;
    Ok((of, report))
}

/// Propagates skeleton orientations to every mask voxel: each voxel receives
/// the orientation of its Euclidean-nearest skeleton voxel, ties broken by
/// smallest flat index. Exact (integer squared distances).
pub fn propagate_nn(skeleton_orient: &OrientationField, mask: &Volume) -> Result<OrientationField> {
    mask.validate()?;
    if skeleton_orient.field.dims() != mask.dims() {
        return Err(Error::dim_mismatch("skeleton and mask dims differ"));
    }
    let dims = mask.dims();
    let sites: Vec<(usize, [i64; 3])> = (0..skeleton_orient.mask.voxels())
        .filter(|&i| skeleton_orient.mask.u8_data()[i] != 0)
        .map(|i| {
            let [x, y, z] = mask.coords(i);
            (i, [x as i64, y as i64, z as i64])
        })
        .collect();
    if sites.is_empty() {
        if mask.mask_count() > 0 {
            return Err(Error::invalid("empty skeleton with nonempty mask"));
        }
        let field = Volume::zeros(dims, mask.spacing(), VolumeKind::Vec3F32);
        return OrientationField::new(field, mask.clone());
    }

    let mdata = mask.u8_data();
    let nx = dims[0];
    let nxy = dims[0] * dims[1];
    let out: Vec<[f32; 3]> = (0..mask.voxels())
        .into_par_iter()
        .map(|i| {
            if mdata[i] == 0 {
                return [0.0, 0.0, 0.0];
            }
            let x = (i % nx) as i64;
            let y = ((i / nx) % dims[1]) as i64;
            let z = (i / nxy) as i64;
            let mut best_d = i64::MAX;
            let mut best_site = usize::MAX;
            for &(j, [sx, sy, sz]) in &sites {
                let d = (sx - x).pow(2) + (sy - y).pow(2) + (sz - z).pow(2);
                // Sites are visited in flat-index order, so strict < keeps
                // the smallest flat index on ties.
                if d < best_d {
                    best_d = d;
                    best_site = j;
                }
            }
            skeleton_orient.field.vec_at(best_site)
        })
        .collect();

    let mut field = Volume::zeros(dims, mask.spacing(), VolumeKind::Vec3F32);
    for (i, v) in out.into_iter().enumerate() {
        field.set_vec_at(i, v);
    }
    OrientationField::new(field, mask.clone())
}

/// Angle-to-bin map: floor(angle / 30deg) + 1, for angles in [0, 180).
#[inline]
pub fn bin_for_angle(angle_deg: f64) -> u8 {
    debug_assert!((0.0..180.0).contains(&angle_deg));
    (angle_deg / 30.0).floor() as u8 + 1
}

/// Quantizes an orientation field into per-plane bins: project onto each
/// orthogonal plane, bucket the in-plane angle into {1..6}; degenerate
/// projections and off-mask voxels get 0.
pub fn quantize(orient: &OrientationField) -> Result<Volume> {
    let dims = orient.field.dims();
    let mut out = Volume::zeros(dims, orient.field.spacing(), VolumeKind::Bins3U8);
    let n = orient.mask.voxels();
    let mdata = orient.mask.u8_data();
    for i in 0..n {
        if mdata[i] == 0 {
            continue;
        }
        let v = orient.field.vec_at(i);
        for plane in PLANES {
            let bin = match project_to_plane(v, plane)? {
                Some(angle) => bin_for_angle(angle),
                None => 0,
            };
            out.u8_data_mut()[3 * i + plane.channel()] = bin;
        }
    }
    Ok(out)
}

/// Converts a mean cosine distance (1 - cos) into degrees: arccos(1 - c).
pub fn cosdist_to_degrees(c: f64) -> Result<f64> {
    if !(0.0..=2.0).contains(&c) {
        return Err(Error::invalid(format!("cosine distance {c} outside [0, 2]")));
    }
    Ok((1.0 - c).acos().to_degrees())
}

/// Full label pipeline for a binary vessel mask: skeletonize, estimate
/// centerline tangents, propagate to all vessel voxels, quantize.
pub fn orientation_labels(
    mask: &Volume,
    tangent_window_radius: usize,
) -> Result<(OrientationField, Volume, TangentReport)> {
    let skel = skeletonize(mask)?;
    let (skel_orient, report) = estimate_tangents(&skel, tangent_window_radius)?;
    let field = propagate_nn(&skel_orient, mask)?;
    let bins = quantize(&field)?;
    Ok((field, bins, report))
}

/// Mean cosine distance between two orientation fields over the mask voxels
/// where both are defined: mean of (1 - <a, b> / (|a| |b|)).
pub fn mean_cosine_distance(a: &Volume, b: &Volume, mask: &Volume) -> f64 {
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for i in 0..mask.voxels() {
        if mask.u8_data()[i] == 0 {
            continue;
        }
        let va = a.vec_at(i);
        let vb = b.vec_at(i);
        let na = crate::vec3::norm(va) as f64;
        let nb = crate::vec3::norm(vb) as f64;
        if na < 1e-8 || nb < 1e-8 {
            continue;
        }
        sum += 1.0 - crate::vec3::dot(va, vb) as f64 / (na * nb);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

//! Topology-preserving 3D thinning.
//!
//! A 6-subiteration directional thinning: each full cycle visits the six
//! face directions in a fixed order and deletes border voxels that are
//! *simple* (removable without changing the topology of the object) and not
//! curve endpoints. Deletions inside a subiteration are applied sequentially
//! with the simplicity test re-evaluated against the partially thinned
//! image, which is the standard guarantee that 26-connectivity of every
//! input component is preserved.
//!
//! Simplicity uses the local characterization of Bertrand & Malandain: a
//! voxel is simple iff the foreground in its 26-neighborhood forms exactly
//! one 26-connected component, and the background in its 18-neighborhood
//! forms exactly one 6-connected component touching a face neighbor.

use crate::error::Result;
use crate::volume::{Volume, VolumeKind};

/// Offsets of the 26-neighborhood, index = (dx+1) + 3*(dy+1) + 9*(dz+1),
/// with the center (index 13) never set.
type Nbhd = [bool; 27];

#[inline]
fn nbhd_index(dx: i32, dy: i32, dz: i32) -> usize {
    ((dx + 1) + 3 * (dy + 1) + 9 * (dz + 1)) as usize
}

struct Grid {
    dims: [usize; 3],
    data: Vec<bool>,
}

impl Grid {
    #[inline]
    fn get(&self, x: i64, y: i64, z: i64) -> bool {
        if x < 0
            || y < 0
            || z < 0
            || x >= self.dims[0] as i64
            || y >= self.dims[1] as i64
            || z >= self.dims[2] as i64
        {
            return false;
        }
        self.data[x as usize + self.dims[0] * (y as usize + self.dims[1] * z as usize)]
    }

    fn neighborhood(&self, x: i64, y: i64, z: i64) -> Nbhd {
        let mut nb = [false; 27];
        for dz in -1i32..=1 {
            for dy in -1i32..=1 {
                for dx in -1i32..=1 {
                    if dx == 0 && dy == 0 && dz == 0 {
                        continue;
                    }
                    nb[nbhd_index(dx, dy, dz)] =
                        self.get(x + dx as i64, y + dy as i64, z + dz as i64);
                }
            }
        }
        nb
    }
}

fn offset_of(idx: usize) -> (i32, i32, i32) {
    let dx = (idx % 3) as i32 - 1;
    let dy = ((idx / 3) % 3) as i32 - 1;
    let dz = (idx / 9) as i32 - 1;
    (dx, dy, dz)
}

fn count26(nb: &Nbhd) -> usize {
    nb.iter().filter(|&&b| b).count()
}

/// Number of 26-connected components of the foreground within the
/// 26-neighborhood (center excluded).
fn foreground_components26(nb: &Nbhd) -> usize {
    let mut seen = [false; 27];
    let mut comps = 0;
    for start in 0..27 {
        if start == 13 || !nb[start] || seen[start] {
            continue;
        }
        comps += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            let (ix, iy, iz) = offset_of(i);
            for j in 0..27 {
                if j == 13 || seen[j] || !nb[j] {
                    continue;
                }
                let (jx, jy, jz) = offset_of(j);
                let d = (ix - jx).abs().max((iy - jy).abs()).max((iz - jz).abs());
                if d == 1 {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    comps
}

/// Number of 6-connected components of the background restricted to the
/// 18-neighborhood that contain a face neighbor of the center.
fn background_components6(nb: &Nbhd) -> usize {
    let in_n18 = |idx: usize| {
        let (dx, dy, dz) = offset_of(idx);
        let l1 = dx.abs() + dy.abs() + dz.abs();
        l1 == 1 || l1 == 2
    };
    let mut seen = [false; 27];
    let mut comps = 0;
    for start in 0..27 {
        if start == 13 || nb[start] || !in_n18(start) || seen[start] {
            continue;
        }
        // Components are seeded only from face neighbors; a background edge
        // voxel not 6-reachable from any face neighbor does not count.
        let (sx, sy, sz) = offset_of(start);
        if sx.abs() + sy.abs() + sz.abs() != 1 {
            continue;
        }
        comps += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            let (ix, iy, iz) = offset_of(i);
            for j in 0..27 {
                if j == 13 || seen[j] || nb[j] || !in_n18(j) {
                    continue;
                }
                let (jx, jy, jz) = offset_of(j);
                let d = (ix - jx).abs() + (iy - jy).abs() + (iz - jz).abs();
                if d == 1 {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    comps
}

fn is_simple(nb: &Nbhd) -> bool {
    foreground_components26(nb) == 1 && background_components6(nb) == 1
}

fn is_endpoint(nb: &Nbhd) -> bool {
    count26(nb) == 1
}

/// The six face directions, visited in this fixed order within each cycle.
const DIRECTIONS: [(i32, i32, i32); 6] =
    [(0, -1, 0), (0, 1, 0), (1, 0, 0), (-1, 0, 0), (0, 0, 1), (0, 0, -1)];

/// Thins a binary mask to a centerline while preserving the 26-connectivity
/// of every input component. The output is a subset of the input; isolated
/// voxels and curve endpoints are retained.
pub fn skeletonize(mask: &Volume) -> Result<Volume> {
    mask.validate()?;
    let dims = mask.dims();
    let mut grid = Grid {
        dims,
        data: mask.u8_data().iter().map(|&v| v != 0).collect(),
    };
    let (nx, ny, nz) = (dims[0] as i64, dims[1] as i64, dims[2] as i64);

    let mut candidates: Vec<usize> = Vec::new();
    loop {
        let mut deleted_in_cycle = 0usize;
        for &(dx, dy, dz) in &DIRECTIONS {
            // Border points of this direction that are currently deletable.
            candidates.clear();
            for z in 0..nz {
                for y in 0..ny {
                    for x in 0..nx {
                        let flat = (x + nx * (y + ny * z)) as usize;
                        if !grid.data[flat] {
                            continue;
                        }
                        if grid.get(x + dx as i64, y + dy as i64, z + dz as i64) {
                            continue; // not a border point for this direction
                        }
                        let nb = grid.neighborhood(x, y, z);
                        if count26(&nb) == 0 || is_endpoint(&nb) {
                            continue;
                        }
                        if is_simple(&nb) {
                            candidates.push(flat);
                        }
                    }
                }
            }
            // Sequential deletion with re-checking keeps topology intact even
            // when candidates are neighbors of each other.
            for &flat in &candidates {
                let x = (flat % dims[0]) as i64;
                let y = ((flat / dims[0]) % dims[1]) as i64;
                let z = (flat / (dims[0] * dims[1])) as i64;
                let nb = grid.neighborhood(x, y, z);
                if count26(&nb) == 0 || is_endpoint(&nb) || !is_simple(&nb) {
                    continue;
                }
                grid.data[flat] = false;
                deleted_in_cycle += 1;
            }
        }
        if deleted_in_cycle == 0 {
            break;
        }
    }

    let mut out = Volume::zeros(dims, mask.spacing(), VolumeKind::ScalarU8);
    for (o, &b) in out.u8_data_mut().iter_mut().zip(&grid.data) {
        *o = b as u8;
    }
    Ok(out)
}

/// Labels 26-connected components of a mask; returns (labels, count) where
/// labels are 1-based and 0 means background.
pub fn connected_components26(mask: &Volume) -> (Vec<u32>, usize) {
    let dims = mask.dims();
    let data = mask.u8_data();
    let n = data.len();
    let mut labels = vec![0u32; n];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..n {
        if data[start] == 0 || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let c = mask.coords(i);
            for dz in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if dx == 0 && dy == 0 && dz == 0 {
                            continue;
                        }
                        let x = c[0] as i64 + dx;
                        let y = c[1] as i64 + dy;
                        let z = c[2] as i64 + dz;
                        if x < 0 || y < 0 || z < 0
                            || x >= dims[0] as i64 || y >= dims[1] as i64 || z >= dims[2] as i64
                        {
                            continue;
                        }
                        let j = x as usize + dims[0] * (y as usize + dims[1] * z as usize);
                        if data[j] != 0 && labels[j] == 0 {
                            labels[j] = next;
                            stack.push(j);
                        }
                    }
                }
            }
        }
    }
    (labels, next as usize)
}

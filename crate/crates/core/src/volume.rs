//! Dense 3D volumes with physical spacing.
//!
//! One canonical memory layout is used everywhere: flat arrays in x-fastest
//! order (`index = x + nx*(y + ny*z)`), with vec3 and per-plane bin channels
//! interleaved per voxel. Every filter and convolution oracle in the test
//! suite is written directly against these raw indices.

use crate::error::{Error, Result};
use crate::vec3::Vec3;

/// What one voxel of a [`Volume`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeKind {
    /// One f32 per voxel: images, probability maps, feature maps.
    ScalarF32,
    /// One u8 per voxel restricted to {0,1}: binary masks.
    ScalarU8,
    /// Interleaved (vx, vy, vz) f32 per voxel: orientation fields.
    Vec3F32,
    /// Three u8 bins per voxel, one per orthogonal plane, each in {0..6}.
    Bins3U8,
}

impl VolumeKind {
    /// Values stored per voxel.
    pub fn components(self) -> usize {
        match self {
            VolumeKind::ScalarF32 | VolumeKind::ScalarU8 => 1,
            VolumeKind::Vec3F32 | VolumeKind::Bins3U8 => 3,
        }
    }

    pub fn is_f32(self) -> bool {
        matches!(self, VolumeKind::ScalarF32 | VolumeKind::Vec3F32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum VolumeData {
    U8(Vec<u8>),
    F32(Vec<f32>),
}

impl VolumeData {
    pub fn len(&self) -> usize {
        match self {
            VolumeData::U8(v) => v.len(),
            VolumeData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Dense 3D grid of scalars, vectors, or bin triples.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f32; 3],
    kind: VolumeKind,
    data: VolumeData,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing: [f32; 3], kind: VolumeKind, data: VolumeData) -> Result<Self> {
        let v = Volume { dims, spacing, kind, data };
        v.validate()?;
        Ok(v)
    }

    /// All-zero volume of the given kind.
    pub fn zeros(dims: [usize; 3], spacing: [f32; 3], kind: VolumeKind) -> Self {
        let n = dims[0] * dims[1] * dims[2] * kind.components();
        let data = if kind.is_f32() {
            VolumeData::F32(vec![0.0; n])
        } else {
            VolumeData::U8(vec![0; n])
        };
        Volume { dims, spacing, kind, data }
    }

    pub fn scalar_f32(dims: [usize; 3], spacing: [f32; 3], data: Vec<f32>) -> Result<Self> {
        Self::new(dims, spacing, VolumeKind::ScalarF32, VolumeData::F32(data))
    }

    pub fn mask(dims: [usize; 3], spacing: [f32; 3], data: Vec<u8>) -> Result<Self> {
        Self::new(dims, spacing, VolumeKind::ScalarU8, VolumeData::U8(data))
    }

    pub fn vec3(dims: [usize; 3], spacing: [f32; 3], data: Vec<f32>) -> Result<Self> {
        Self::new(dims, spacing, VolumeKind::Vec3F32, VolumeData::F32(data))
    }

    pub fn bins3(dims: [usize; 3], spacing: [f32; 3], data: Vec<u8>) -> Result<Self> {
        Self::new(dims, spacing, VolumeKind::Bins3U8, VolumeData::U8(data))
    }

    /// Checks every documented invariant: payload length, positive spacing,
    /// masks restricted to {0,1}, bins restricted to {0..6}.
    pub fn validate(&self) -> Result<()> {
        let n = self.voxels() * self.kind.components();
        if self.data.len() != n {
            return Err(Error::invariant(format!(
                "data length {} != dims product {} for {:?}",
                self.data.len(),
                n,
                self.kind
            )));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::invariant(format!("non-positive spacing {:?}", self.spacing)));
        }
        match (&self.kind, &self.data) {
            (VolumeKind::ScalarF32 | VolumeKind::Vec3F32, VolumeData::F32(_)) => {}
            (VolumeKind::ScalarU8, VolumeData::U8(d)) => {
                if let Some(&bad) = d.iter().find(|&&v| v > 1) {
                    return Err(Error::invariant(format!("mask value {bad} outside {{0,1}}")));
                }
            }
            (VolumeKind::Bins3U8, VolumeData::U8(d)) => {
                if let Some(&bad) = d.iter().find(|&&v| v > 6) {
                    return Err(Error::invariant(format!("bin value {bad} outside {{0..6}}")));
                }
            }
            _ => {
                return Err(Error::invariant(format!(
                    "storage type does not match kind {:?}",
                    self.kind
                )))
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn kind(&self) -> VolumeKind {
        self.kind
    }

    pub fn voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn data(&self) -> &VolumeData {
        &self.data
    }

    /// Flat voxel index in x-fastest order.
    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        debug_assert!(x < self.dims[0] && y < self.dims[1] && z < self.dims[2]);
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    /// (x, y, z) of a flat voxel index.
    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let x = idx % self.dims[0];
        let y = (idx / self.dims[0]) % self.dims[1];
        let z = idx / (self.dims[0] * self.dims[1]);
        [x, y, z]
    }

    /// Borrow the payload as f32; panics if the volume stores u8.
    #[track_caller]
    pub fn f32_data(&self) -> &[f32] {
        match &self.data {
            VolumeData::F32(v) => v,
            VolumeData::U8(_) => panic!("volume of kind {:?} holds u8 data", self.kind),
        }
    }

    #[track_caller]
    pub fn f32_data_mut(&mut self) -> &mut [f32] {
        match &mut self.data {
            VolumeData::F32(v) => v,
            VolumeData::U8(_) => panic!("volume of kind {:?} holds u8 data", self.kind),
        }
    }

    /// Borrow the payload as u8; panics if the volume stores f32.
    #[track_caller]
    pub fn u8_data(&self) -> &[u8] {
        match &self.data {
            VolumeData::U8(v) => v,
            VolumeData::F32(_) => panic!("volume of kind {:?} holds f32 data", self.kind),
        }
    }

    #[track_caller]
    pub fn u8_data_mut(&mut self) -> &mut [u8] {
        match &mut self.data {
            VolumeData::U8(v) => v,
            VolumeData::F32(_) => panic!("volume of kind {:?} holds f32 data", self.kind),
        }
    }

    /// Vector value at a voxel of a vec3 volume.
    #[inline]
    pub fn vec_at(&self, idx: usize) -> Vec3 {
        let d = self.f32_data();
        [d[3 * idx], d[3 * idx + 1], d[3 * idx + 2]]
    }

    #[inline]
    pub fn set_vec_at(&mut self, idx: usize, v: Vec3) {
        let d = self.f32_data_mut();
        d[3 * idx] = v[0];
        d[3 * idx + 1] = v[1];
        d[3 * idx + 2] = v[2];
    }

    /// Number of foreground voxels of a mask.
    pub fn mask_count(&self) -> usize {
        self.u8_data().iter().filter(|&&v| v != 0).count()
    }

    /// Nearest-neighbor downsampling by an integer factor.
    ///
    /// Output dims are `ceil(dim/factor)`, `out[x,y,z] = in[x*f, y*f, z*f]`,
    /// and spacing is multiplied by the factor. Works on every kind.
    pub fn downsample_nearest(&self, factor: usize) -> Result<Volume> {
        if factor == 0 {
            return Err(Error::invalid("downsample factor must be >= 1"));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let od = [
            self.dims[0].div_ceil(factor),
            self.dims[1].div_ceil(factor),
            self.dims[2].div_ceil(factor),
        ];
        let sp = [
            self.spacing[0] * factor as f32,
            self.spacing[1] * factor as f32,
            self.spacing[2] * factor as f32,
        ];
        let c = self.kind.components();
        let n = od[0] * od[1] * od[2];
        let mut out = Volume::zeros(od, sp, self.kind);
        for oi in 0..n {
            let x = oi % od[0];
            let y = (oi / od[0]) % od[1];
            let z = oi / (od[0] * od[1]);
            let si = self.index(x * factor, y * factor, z * factor);
            match (&self.data, &mut out.data) {
                (VolumeData::F32(s), VolumeData::F32(d)) => {
                    d[c * oi..c * oi + c].copy_from_slice(&s[c * si..c * si + c]);
                }
                (VolumeData::U8(s), VolumeData::U8(d)) => {
                    d[c * oi..c * oi + c].copy_from_slice(&s[c * si..c * si + c]);
                }
                _ => unreachable!(),
            }
        }
        Ok(out)
    }
}

/// The three orthogonal planes used for projection and oriented filtering.
///
/// Axis convention (fixed for the whole toolkit): transverse = (x, y),
/// coronal = (x, z), sagittal = (y, z); in-plane angles are measured
/// counter-clockwise from the first axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Plane {
    Transverse,
    Coronal,
    Sagittal,
}

/// Bin-channel order of `Bins3U8` volumes.
pub const PLANES: [Plane; 3] = [Plane::Transverse, Plane::Coronal, Plane::Sagittal];

impl Plane {
    /// Indices of the plane's (first, second) axes into (x, y, z).
    pub fn axes(self) -> (usize, usize) {
        match self {
            Plane::Transverse => (0, 1),
            Plane::Coronal => (0, 2),
            Plane::Sagittal => (1, 2),
        }
    }

    /// Index of the plane's normal axis.
    pub fn normal_axis(self) -> usize {
        match self {
            Plane::Transverse => 2,
            Plane::Coronal => 1,
            Plane::Sagittal => 0,
        }
    }

    /// Channel slot of this plane in a `Bins3U8` volume.
    pub fn channel(self) -> usize {
        match self {
            Plane::Transverse => 0,
            Plane::Coronal => 1,
            Plane::Sagittal => 2,
        }
    }
}

/// In-plane residuals shorter than this are treated as degenerate: the
/// projected angle of a near-normal vector is meaningless noise.
pub const DEGENERATE_PROJECTION_NORM: f32 = 0.2;

/// Projects a unit vector onto one orthogonal plane and returns the axial
/// angle of the in-plane residual in degrees, in [0, 180), measured from the
/// plane's first axis. Returns `Ok(None)` when the in-plane norm falls below
/// [`DEGENERATE_PROJECTION_NORM`]; errors when the input is not unit length
/// (tolerance 1e-4).
pub fn project_to_plane(v: Vec3, plane: Plane) -> Result<Option<f64>> {
    let n = crate::vec3::norm(v);
    if (n - 1.0).abs() > 1e-4 {
        return Err(Error::invalid(format!("project_to_plane expects a unit vector, |v| = {n}")));
    }
    let (a0, a1) = plane.axes();
    let u = v[a0] as f64;
    let w = v[a1] as f64;
    if (u * u + w * w).sqrt() < DEGENERATE_PROJECTION_NORM as f64 {
        return Ok(None);
    }
    let mut angle = w.atan2(u).to_degrees();
    if angle < 0.0 {
        angle += 180.0;
    }
    if angle >= 180.0 {
        angle -= 180.0;
    }
    Ok(Some(angle))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zeros_has_right_len() {
        let v = Volume::zeros([2, 3, 4], [1.0; 3], VolumeKind::Vec3F32);
        assert_eq!(v.f32_data().len(), 2 * 3 * 4 * 3);
        v.validate().unwrap();
    }

    #[test]
    fn mask_rejects_value_two() {
        let err = Volume::mask([1, 1, 2], [1.0; 3], vec![0, 2]).unwrap_err();
        assert!(matches!(err, Error::Invariant(_)));
    }

    #[test]
    fn bins_reject_seven() {
        let err = Volume::bins3([1, 1, 1], [1.0; 3], vec![1, 2, 7]).unwrap_err();
        assert!(matches!(err, Error::Invariant(_)));
    }

    #[test]
    fn rejects_bad_spacing() {
        let err = Volume::scalar_f32([1, 1, 1], [1.0, 0.0, 1.0], vec![0.0]).unwrap_err();
        assert!(matches!(err, Error::Invariant(_)));
    }

    #[test]
    fn index_is_x_fastest() {
        let v = Volume::zeros([4, 3, 2], [1.0; 3], VolumeKind::ScalarF32);
        assert_eq!(v.index(1, 0, 0), 1);
        assert_eq!(v.index(0, 1, 0), 4);
        assert_eq!(v.index(0, 0, 1), 12);
        assert_eq!(v.coords(v.index(3, 2, 1)), [3, 2, 1]);
    }

    #[test]
    fn downsample_factor_one_is_identity() {
        let mut v = Volume::zeros([3, 3, 3], [1.0; 3], VolumeKind::ScalarF32);
        v.f32_data_mut()[5] = 2.5;
        assert_eq!(v.downsample_nearest(1).unwrap(), v);
    }

    #[test]
    fn downsample_corner_sample() {
        let mut v = Volume::zeros([4, 4, 4], [1.0; 3], VolumeKind::ScalarF32);
        let i = v.index(0, 0, 0);
        v.f32_data_mut()[i] = 7.0;
        let d = v.downsample_nearest(2).unwrap();
        assert_eq!(d.dims(), [2, 2, 2]);
        assert_eq!(d.f32_data()[0], 7.0);
        assert_eq!(d.spacing(), [2.0; 3]);
    }

    #[test]
    fn downsample_zero_errors() {
        let v = Volume::zeros([2, 2, 2], [1.0; 3], VolumeKind::ScalarF32);
        assert!(v.downsample_nearest(0).is_err());
    }

    /// Brute-force index-mapping oracle on a checkerboard and on odd dims.
    #[test]
    fn downsample_matches_bruteforce_oracle() {
        let dims = [5, 7, 3];
        let mut v = Volume::zeros(dims, [1.0; 3], VolumeKind::ScalarU8);
        for z in 0..3 {
            for y in 0..7 {
                for x in 0..5 {
                    let i = x + 5 * (y + 7 * z);
                    v.u8_data_mut()[i] = ((x + y + z) % 2) as u8;
                }
            }
        }
        for factor in 1..=3usize {
            let d = v.downsample_nearest(factor).unwrap();
            let od = d.dims();
            assert_eq!(od, [5usize.div_ceil(factor), 7usize.div_ceil(factor), 3usize.div_ceil(factor)]);
            for z in 0..od[2] {
                for y in 0..od[1] {
                    for x in 0..od[0] {
                        let got = d.u8_data()[d.index(x, y, z)];
                        let want = v.u8_data()[v.index(x * factor, y * factor, z * factor)];
                        assert_eq!(got, want);
                    }
                }
            }
        }
    }

    #[test]
    fn project_axis_aligned() {
        let a = project_to_plane([1.0, 0.0, 0.0], Plane::Transverse).unwrap().unwrap();
        assert_relative_eq!(a, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn project_degenerate_normal() {
        let a = project_to_plane([0.0, 0.0, 1.0], Plane::Transverse).unwrap();
        assert!(a.is_none());
    }

    #[test]
    fn project_diagonal_45() {
        let s = std::f32::consts::FRAC_1_SQRT_2;
        let a = project_to_plane([s, s, 0.0], Plane::Transverse).unwrap().unwrap();
        assert_relative_eq!(a, 45.0, epsilon = 1e-4);
    }

    #[test]
    fn project_rejects_non_unit() {
        assert!(project_to_plane([2.0, 0.0, 0.0], Plane::Transverse).is_err());
    }

    #[test]
    fn project_is_axial() {
        // Antipodal vectors give identical angles.
        let v = [0.6f32, -0.64, 0.48];
        let n = crate::vec3::norm(v);
        let v = crate::vec3::scale(v, 1.0 / n);
        let w = [-v[0], -v[1], -v[2]];
        for p in PLANES {
            let a = project_to_plane(v, p).unwrap();
            let b = project_to_plane(w, p).unwrap();
            match (a, b) {
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-4, "{a} vs {b}"),
                (None, None) => {}
                _ => panic!("axial mismatch"),
            }
        }
    }
}

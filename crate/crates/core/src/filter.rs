//! Oriented Gaussian filter bank and the probability-gated data selector.
//!
//! For each orthogonal plane there are six rectangular and six ellipsoid
//! Gaussian kernels, one per 30-degree orientation bin (bin k is centered at
//! (2k-1) * 15 degrees, measured from the plane's first axis). The data
//! selector leaves a voxel untouched when its vessel probability is at or
//! below the threshold delta, and otherwise replaces it with the mean of the
//! rectangular and ellipsoid responses of the bin-matched kernels, averaged
//! over the planes whose bin is defined. Both the forward map and its exact
//! adjoint (needed for training) are implemented; with the selector held
//! fixed, the map is linear in the features.
//!
//! All sampling, normalization, and boundary handling is defined on the raw
//! x-fastest voxel grid so a per-voxel brute-force evaluation can serve as a
//! full oracle in the tests.

use num_traits::Float;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::{Plane, Volume, VolumeKind, PLANES};

pub const DEFAULT_M: usize = 3;
pub const DEFAULT_SIGMA_LONG: f64 = 2.5;
pub const DEFAULT_SIGMA_SHORT: f64 = 1.0;
pub const DEFAULT_BOX_LENGTH: f64 = 7.0;
pub const DEFAULT_DELTA: f32 = 0.1;

/// How the per-plane kernel responses are combined on selected voxels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CombineMode {
    /// Mean of (R + E)/2 over the planes with a defined bin. Unit DC gain:
    /// a constant input stays constant on both selector branches.
    Normalized,
    /// Literal sum of (R + E) over the planes with a defined bin.
    RawSum,
}

impl CombineMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "normalized" => Ok(CombineMode::Normalized),
            "raw_sum" => Ok(CombineMode::RawSum),
            other => Err(Error::Config(format!("unknown ofm_combine value '{other}'"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            CombineMode::Normalized => "normalized",
            CombineMode::RawSum => "raw_sum",
        }
    }
}

/// The 6+6+1 sampled 2D kernels shared by all three planes (each plane
/// applies them in its own axis frame, so the sampled values coincide).
#[derive(Debug, Clone)]
pub struct KernelBank {
    pub m: usize,
    pub sigma_long: f64,
    pub sigma_short: f64,
    pub box_length: f64,
    rect: [Vec<f64>; 6],
    ellip: [Vec<f64>; 6],
    /// Isotropic fallback (sigma_short) for selected voxels whose bins are
    /// undefined on all three planes.
    iso: Vec<f64>,
}

/// Kernel side length is 2m+1; entries are indexed `(dv+m)*side + (du+m)`
/// where `du` runs along the plane's first axis.
#[inline]
fn kernel_index(m: usize, du: i64, dv: i64) -> usize {
    let side = 2 * m as i64 + 1;
    ((dv + m as i64) * side + (du + m as i64)) as usize
}

/// Bin-center angle in degrees: 15, 45, 75, 105, 135, 165.
pub fn bin_center_deg(bin: u8) -> f64 {
    debug_assert!((1..=6).contains(&bin));
    (2.0 * bin as f64 - 1.0) * 15.0
}

fn normalized(mut k: Vec<f64>) -> Vec<f64> {
    let s: f64 = k.iter().sum();
    for v in &mut k {
        *v /= s;
    }
    k
}

/// Builds the kernel bank. The ellipsoid kernel for bin k is an anisotropic
/// Gaussian with sigma_long along the bin-center direction and sigma_short
/// across it; the rectangular kernel is a box of `box_length` along the
/// direction with a sigma_short Gaussian profile across it. Each kernel is
/// sampled at integer offsets and normalized to sum 1.
pub fn build_bank(m: usize, sigma_long: f64, sigma_short: f64, box_length: f64) -> Result<KernelBank> {
    if m < 1 {
        return Err(Error::invalid("kernel half-size m must be >= 1"));
    }
    if !(sigma_long > 0.0) || !(sigma_short > 0.0) {
        return Err(Error::invalid("kernel sigmas must be positive"));
    }
    if !(box_length > 0.0) || box_length > (2 * m + 1) as f64 {
        return Err(Error::invalid(format!(
            "box_length must lie in (0, {}]",
            2 * m + 1
        )));
    }
    let side = 2 * m + 1;
    let mut rect: [Vec<f64>; 6] = Default::default();
    let mut ellip: [Vec<f64>; 6] = Default::default();
    for bin in 1..=6u8 {
        let theta = bin_center_deg(bin).to_radians();
        let (sin_t, cos_t) = theta.sin_cos();
        let mut rk = vec![0.0; side * side];
        let mut ek = vec![0.0; side * side];
        for dv in -(m as i64)..=m as i64 {
            for du in -(m as i64)..=m as i64 {
                let u = du as f64 * cos_t + dv as f64 * sin_t;
                let v = -(du as f64) * sin_t + dv as f64 * cos_t;
                let across = (-v * v / (2.0 * sigma_short * sigma_short)).exp();
                let i = kernel_index(m, du, dv);
                rk[i] = if u.abs() <= box_length / 2.0 { across } else { 0.0 };
                ek[i] = (-u * u / (2.0 * sigma_long * sigma_long)).exp() * across;
            }
        }
        rect[bin as usize - 1] = normalized(rk);
        ellip[bin as usize - 1] = normalized(ek);
    }
    let mut iso = vec![0.0; side * side];
    for dv in -(m as i64)..=m as i64 {
        for du in -(m as i64)..=m as i64 {
            let r2 = (du * du + dv * dv) as f64;
            iso[kernel_index(m, du, dv)] = (-r2 / (2.0 * sigma_short * sigma_short)).exp();
        }
    }
    Ok(KernelBank {
        m,
        sigma_long,
        sigma_short,
        box_length,
        rect,
        ellip,
        iso: normalized(iso),
    })
}

impl KernelBank {
    pub fn side(&self) -> usize {
        2 * self.m + 1
    }

    /// Rectangular kernel for (plane, bin). The sampled values are identical
    /// across planes; the plane argument documents the application frame.
    pub fn rect(&self, _plane: Plane, bin: u8) -> &[f64] {
        &self.rect[bin as usize - 1]
    }

    pub fn ellip(&self, _plane: Plane, bin: u8) -> &[f64] {
        &self.ellip[bin as usize - 1]
    }

    pub fn iso(&self) -> &[f64] {
        &self.iso
    }

    fn cast<T: Float>(&self) -> CastBank<T> {
        let c = |k: &Vec<f64>| k.iter().map(|&v| T::from(v).unwrap()).collect();
        CastBank {
            m: self.m,
            rect: std::array::from_fn(|i| c(&self.rect[i])),
            ellip: std::array::from_fn(|i| c(&self.ellip[i])),
            iso: c(&self.iso),
        }
    }

    /// All 36 kernels as a stacked volume of dims (side, side, 36):
    /// slice index = plane_channel * 12 + (bin - 1) * 2 + {0 rect, 1 ellip}.
    pub fn dump(&self) -> Volume {
        let side = self.side();
        let mut out = Volume::zeros([side, side, 36], [1.0; 3], VolumeKind::ScalarF32);
        for plane in PLANES {
            for bin in 1..=6u8 {
                for (which, kern) in [self.rect(plane, bin), self.ellip(plane, bin)]
                    .into_iter()
                    .enumerate()
                {
                    let z = plane.channel() * 12 + (bin as usize - 1) * 2 + which;
                    for row in 0..side {
                        for col in 0..side {
                            let i = out.index(col, row, z);
                            out.f32_data_mut()[i] = kern[row * side + col] as f32;
                        }
                    }
                }
            }
        }
        out
    }
}

pub(crate) struct CastBank<T> {
    pub m: usize,
    pub rect: [Vec<T>; 6],
    pub ellip: [Vec<T>; 6],
    pub iso: Vec<T>,
}

/// Symmetric boundary fold with edge repeat: ... 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
#[inline]
pub(crate) fn fold(mut i: i64, n: usize) -> usize {
    let n = n as i64;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Single-voxel 2D kernel response within the slice through `pos` of the
/// given plane (correlation; every bank kernel is centrally symmetric, so
/// this coincides with convolution).
#[inline]
pub(crate) fn plane_response_at<T: Float>(
    data: &[T],
    dims: [usize; 3],
    pos: [usize; 3],
    plane: Plane,
    kernel: &[T],
    m: usize,
) -> T {
    let (a0, a1) = plane.axes();
    let mut acc = T::zero();
    let mut c = pos;
    for dv in -(m as i64)..=m as i64 {
        c[a1] = fold(pos[a1] as i64 + dv, dims[a1]);
        for du in -(m as i64)..=m as i64 {
            c[a0] = fold(pos[a0] as i64 + du, dims[a0]);
            let idx = c[0] + dims[0] * (c[1] + dims[1] * c[2]);
            acc = acc + kernel[kernel_index(m, du, dv)] * data[idx];
        }
    }
    acc
}

/// 2D filtering of every slice along the plane's normal axis (mirror
/// boundaries, output dims = input dims).
pub fn apply_plane_filter(feat: &Volume, plane: Plane, kernel: &[f64], m: usize) -> Result<Volume> {
    if feat.kind() != VolumeKind::ScalarF32 {
        return Err(Error::invalid("apply_plane_filter expects a scalar-f32 volume"));
    }
    if kernel.len() != (2 * m + 1) * (2 * m + 1) {
        return Err(Error::invalid("kernel length does not match m"));
    }
    let dims = feat.dims();
    let (a0, a1) = plane.axes();
    if dims[a0] < 2 * m + 1 || dims[a1] < 2 * m + 1 {
        return Err(Error::invalid(format!(
            "volume dims {dims:?} thinner than kernel side {} on plane axes",
            2 * m + 1
        )));
    }
    let k: Vec<f32> = kernel.iter().map(|&v| v as f32).collect();
    let data = feat.f32_data();
    let nx = dims[0];
    let out: Vec<f32> = (0..feat.voxels())
        .into_par_iter()
        .with_min_len(nx)
        .map(|i| {
            let pos = [i % nx, (i / nx) % dims[1], i / (nx * dims[1])];
            plane_response_at(data, dims, pos, plane, &k, m)
        })
        .collect();
    Volume::scalar_f32(dims, feat.spacing(), out)
}

/// Selector inputs for the oriented filter: the stage-1 vessel probability
/// map, the quantized per-plane orientation bins, and the gate threshold.
#[derive(Debug, Clone)]
pub struct SelectorInputs {
    pub prob: Volume,
    pub bins: Volume,
    pub delta: f32,
}

impl SelectorInputs {
    pub fn new(prob: Volume, bins: Volume, delta: f32) -> Result<Self> {
        if prob.kind() != VolumeKind::ScalarF32 {
            return Err(Error::invalid("selector prob must be scalar-f32"));
        }
        if bins.kind() != VolumeKind::Bins3U8 {
            return Err(Error::invalid("selector bins must be bins3-u8"));
        }
        if prob.dims() != bins.dims() {
            return Err(Error::dim_mismatch("selector prob and bins dims differ"));
        }
        Ok(SelectorInputs { prob, bins, delta })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.prob.dims()
    }

    /// Selector at a coarser pyramid level (nearest-neighbor downsampling of
    /// both the probability map and the bins).
    pub fn downsample(&self, factor: usize) -> Result<SelectorInputs> {
        Ok(SelectorInputs {
            prob: self.prob.downsample_nearest(factor)?,
            bins: self.bins.downsample_nearest(factor)?,
            delta: self.delta,
        })
    }
}

/// Borrowed selector state used by the generic kernels.
#[derive(Clone, Copy)]
pub(crate) struct SelectorRef<'a> {
    pub prob: &'a [f32],
    pub bins: &'a [u8],
    pub delta: f32,
}

impl<'a> SelectorRef<'a> {
    pub(crate) fn of(sel: &'a SelectorInputs) -> Self {
        SelectorRef {
            prob: sel.prob.f32_data(),
            bins: sel.bins.u8_data(),
            delta: sel.delta,
        }
    }
}

#[inline]
fn two<T: Float>() -> T {
    T::from(2.0).unwrap()
}

/// Forward oriented filtering of one scalar field (gather; deterministic
/// under any parallel split of the output range).
pub(crate) fn ofm_forward_t<T: Float + Send + Sync>(
    feat: &[T],
    dims: [usize; 3],
    sel: SelectorRef<'_>,
    bank: &CastBank<T>,
    mode: CombineMode,
) -> Vec<T> {
    let nx = dims[0];
    let nxy = dims[0] * dims[1];
    (0..feat.len())
        .into_par_iter()
        .with_min_len(nx)
        .map(|i| {
            if sel.prob[i] <= sel.delta {
                return feat[i];
            }
            let pos = [i % nx, (i / nx) % dims[1], i / nxy];
            let mut acc = T::zero();
            let mut planes_defined = 0usize;
            for plane in PLANES {
                let bin = sel.bins[3 * i + plane.channel()];
                if bin == 0 {
                    continue;
                }
                planes_defined += 1;
                let r = plane_response_at(feat, dims, pos, plane, &bank.rect[bin as usize - 1], bank.m);
                let e = plane_response_at(feat, dims, pos, plane, &bank.ellip[bin as usize - 1], bank.m);
                acc = acc + (r + e) / two();
            }
            if planes_defined == 0 {
                // All bins degenerate: isotropic smoothing on the transverse
                // plane stands in for both kernel families.
                let iso = plane_response_at(feat, dims, pos, Plane::Transverse, &bank.iso, bank.m);
                return match mode {
                    CombineMode::Normalized => iso,
                    CombineMode::RawSum => two::<T>() * iso,
                };
            }
            match mode {
                CombineMode::Normalized => acc / T::from(planes_defined).unwrap(),
                CombineMode::RawSum => two::<T>() * acc,
            }
        })
        .collect()
}

/// Exact adjoint of [`ofm_forward_t`] with the selector held fixed
/// (scatter; runs sequentially so the f32 add order is fixed).
pub(crate) fn ofm_backward_t<T: Float>(
    grad_out: &[T],
    dims: [usize; 3],
    sel: SelectorRef<'_>,
    bank: &CastBank<T>,
    mode: CombineMode,
) -> Vec<T> {
    let nx = dims[0];
    let nxy = dims[0] * dims[1];
    let m = bank.m;
    let mut grad_in = vec![T::zero(); grad_out.len()];
    let mut scatter = |g: T, pos: [usize; 3], plane: Plane, kernel: &[T], grad_in: &mut [T]| {
        let (a0, a1) = plane.axes();
        let mut c = pos;
        for dv in -(m as i64)..=m as i64 {
            c[a1] = fold(pos[a1] as i64 + dv, dims[a1]);
            for du in -(m as i64)..=m as i64 {
                c[a0] = fold(pos[a0] as i64 + du, dims[a0]);
                let idx = c[0] + dims[0] * (c[1] + dims[1] * c[2]);
                grad_in[idx] = grad_in[idx] + kernel[kernel_index(m, du, dv)] * g;
            }
        }
    };
    for i in 0..grad_out.len() {
        let g = grad_out[i];
        if sel.prob[i] <= sel.delta {
            grad_in[i] = grad_in[i] + g;
            continue;
        }
        let pos = [i % nx, (i / nx) % dims[1], i / nxy];
        let defined: Vec<Plane> = PLANES
            .iter()
            .copied()
            .filter(|p| sel.bins[3 * i + p.channel()] != 0)
            .collect();
        if defined.is_empty() {
            let w = match mode {
                CombineMode::Normalized => g,
                CombineMode::RawSum => two::<T>() * g,
            };
            scatter(w, pos, Plane::Transverse, &bank.iso, &mut grad_in);
            continue;
        }
        let w = match mode {
            CombineMode::Normalized => g / (two::<T>() * T::from(defined.len()).unwrap()),
            CombineMode::RawSum => g,
        };
        for plane in defined {
            let bin = sel.bins[3 * i + plane.channel()] as usize - 1;
            scatter(w, pos, plane, &bank.rect[bin], &mut grad_in);
            scatter(w, pos, plane, &bank.ellip[bin], &mut grad_in);
        }
    }
    grad_in
}

fn check_ofm_args(feat: &Volume, sel: &SelectorInputs, bank: &KernelBank) -> Result<()> {
    if feat.kind() != VolumeKind::ScalarF32 {
        return Err(Error::invalid("oriented_filter expects a scalar-f32 volume"));
    }
    if sel.dims() != feat.dims() {
        return Err(Error::dim_mismatch(format!(
            "selector dims {:?} != feature dims {:?}",
            sel.dims(),
            feat.dims()
        )));
    }
    let dims = feat.dims();
    if dims.iter().any(|&d| d < bank.side()) {
        return Err(Error::invalid(format!(
            "volume dims {dims:?} thinner than kernel side {}",
            bank.side()
        )));
    }
    Ok(())
}

/// Per-voxel data selection: identity where the vessel probability is at or
/// below delta, bin-matched oriented filtering elsewhere.
pub fn oriented_filter(
    feat: &Volume,
    sel: &SelectorInputs,
    bank: &KernelBank,
    mode: CombineMode,
) -> Result<Volume> {
    check_ofm_args(feat, sel, bank)?;
    let cast = bank.cast::<f32>();
    let out = ofm_forward_t(feat.f32_data(), feat.dims(), SelectorRef::of(sel), &cast, mode);
    Volume::scalar_f32(feat.dims(), feat.spacing(), out)
}

/// Adjoint of [`oriented_filter`] with the selector held fixed: satisfies
/// `<A f, g> == <f, At g>` for all f, g.
pub fn oriented_filter_backward(
    grad_out: &Volume,
    sel: &SelectorInputs,
    bank: &KernelBank,
    mode: CombineMode,
) -> Result<Volume> {
    check_ofm_args(grad_out, sel, bank)?;
    let cast = bank.cast::<f32>();
    let out = ofm_backward_t(grad_out.f32_data(), grad_out.dims(), SelectorRef::of(sel), &cast, mode);
    Volume::scalar_f32(grad_out.dims(), grad_out.spacing(), out)
}

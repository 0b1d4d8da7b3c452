//! Channel-major dense tensors for the micro networks.

use num_traits::Float;

use crate::volume::{Volume, VolumeKind};

/// Scalar type of the network math. f32 in production, f64 in the
/// finite-difference oracles.
pub trait Scalar: Float + Send + Sync + std::fmt::Debug + 'static {}
impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand for lossless constant conversion.
#[inline]
pub fn c<T: Scalar>(x: f64) -> T {
    T::from(x).unwrap()
}

/// Dense [channels][z][y][x] tensor; within a channel the layout matches
/// [`Volume`] (x-fastest).
#[derive(Debug, Clone)]
pub struct Tensor<T> {
    pub channels: usize,
    pub dims: [usize; 3],
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(channels: usize, dims: [usize; 3]) -> Self {
        Tensor {
            channels,
            dims,
            data: vec![T::zero(); channels * dims[0] * dims[1] * dims[2]],
        }
    }

    #[inline]
    pub fn voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Channel c as a contiguous slice.
    #[inline]
    pub fn channel(&self, ch: usize) -> &[T] {
        let n = self.voxels();
        &self.data[ch * n..(ch + 1) * n]
    }

    #[inline]
    pub fn channel_mut(&mut self, ch: usize) -> &mut [T] {
        let n = self.voxels();
        &mut self.data[ch * n..(ch + 1) * n]
    }

    pub fn from_scalar_volume(v: &Volume) -> Tensor<T> {
        debug_assert_eq!(v.kind(), VolumeKind::ScalarF32);
        Tensor {
            channels: 1,
            dims: v.dims(),
            data: v.f32_data().iter().map(|&x| c(x as f64)).collect(),
        }
    }

    /// One channel back into a scalar volume.
    pub fn to_scalar_volume(&self, ch: usize, spacing: [f32; 3]) -> Volume {
        let data: Vec<f32> = self.channel(ch).iter().map(|x| x.to_f64().unwrap() as f32).collect();
        Volume::scalar_f32(self.dims, spacing, data).expect("tensor channel is a valid volume")
    }

    /// Three channels into an interleaved vec3 volume.
    pub fn to_vec3_volume(&self, spacing: [f32; 3]) -> Volume {
        debug_assert_eq!(self.channels, 3);
        let n = self.voxels();
        let mut out = vec![0f32; 3 * n];
        for ch in 0..3 {
            let s = self.channel(ch);
            for i in 0..n {
                out[3 * i + ch] = s[i].to_f64().unwrap() as f32;
            }
        }
        Volume::vec3(self.dims, spacing, out).expect("tensor channels form a valid volume")
    }

    /// Interleaved vec3 volume into a 3-channel tensor.
    pub fn from_vec3_volume(v: &Volume) -> Tensor<T> {
        debug_assert_eq!(v.kind(), VolumeKind::Vec3F32);
        let n = v.voxels();
        let d = v.f32_data();
        let mut t = Tensor::zeros(3, v.dims());
        for ch in 0..3 {
            let s = t.channel_mut(ch);
            for i in 0..n {
                s[i] = c(d[3 * i + ch] as f64);
            }
        }
        t
    }
}

//! Network layers: 3^3 and 1^3 convolutions, activations, nearest-neighbor
//! upsampling, concatenation - each with its exact backward pass.
//!
//! Stride-1 convolutions use mirror (reflect) padding; stride-2 uses zero
//! padding. Backward passes are exact adjoints of the forward index
//! arithmetic including the boundary folds, which is what the adjoint and
//! finite-difference tests below pin down.

use rayon::prelude::*;

use crate::rng::SplitMix64;

use super::tensor::{c, Scalar, Tensor};

/// Mirror fold with edge repeat (matches the filter module).
#[inline]
fn fold(i: i64, n: usize) -> usize {
    crate::filter::fold(i, n)
}

/// 3x3x3 convolution. Weight layout: `w[((co*ci + i)*27) + tap]` with
/// `tap = (dz+1)*9 + (dy+1)*3 + (dx+1)`.
#[derive(Debug, Clone)]
pub struct Conv3<T> {
    pub ci: usize,
    pub co: usize,
    pub stride: usize,
    pub w: Vec<T>,
    pub b: Vec<T>,
}

const TAPS: [(i64, i64, i64); 27] = {
    let mut taps = [(0i64, 0i64, 0i64); 27];
    let mut i = 0;
    while i < 27 {
        taps[i] = ((i / 9) as i64 - 1, ((i / 3) % 3) as i64 - 1, (i % 3) as i64 - 1);
        i += 1;
    }
    taps
};

impl<T: Scalar> Conv3<T> {
    pub fn new(ci: usize, co: usize, stride: usize, rng: &mut SplitMix64) -> Self {
        debug_assert!(stride == 1 || stride == 2);
        let fan_in = (ci * 27) as f64;
        let limit = (6.0 / fan_in).sqrt();
        let w = (0..co * ci * 27).map(|_| c(rng.uniform(-limit, limit))).collect();
        Conv3 { ci, co, stride, w, b: vec![T::zero(); co] }
    }

    pub fn out_dims(&self, dims: [usize; 3]) -> [usize; 3] {
        match self.stride {
            1 => dims,
            _ => [dims[0].div_ceil(2), dims[1].div_ceil(2), dims[2].div_ceil(2)],
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.channels, self.ci, "conv3 input channels");
        let dims = x.dims;
        let od = self.out_dims(dims);
        let mut y = Tensor::zeros(self.co, od);
        let n_out = od[0] * od[1] * od[2];
        let [nx, ny, _nz] = dims;
        let [ox, oy, _oz] = od;
        y.data
            .par_chunks_mut(n_out)
            .enumerate()
            .for_each(|(co, out_ch)| {
                for v in out_ch.iter_mut() {
                    *v = self.b[co];
                }
                for ci in 0..self.ci {
                    let src = x.channel(ci);
                    let wbase = (co * self.ci + ci) * 27;
                    for (tap, &(dz, dy, dx)) in TAPS.iter().enumerate() {
                        let wv = self.w[wbase + tap];
                        if self.stride == 1 {
                            for z in 0..od[2] {
                                let sz = fold(z as i64 + dz, dims[2]);
                                for yy in 0..oy {
                                    let sy = fold(yy as i64 + dy, ny);
                                    let srow = &src[(sz * ny + sy) * nx..(sz * ny + sy) * nx + nx];
                                    let orow = &mut out_ch[(z * oy + yy) * ox..(z * oy + yy) * ox + ox];
                                    // Interior fast path; the two edge columns fold.
                                    match dx {
                                        -1 => {
                                            orow[0] = orow[0] + wv * srow[0];
                                            for xx in 1..ox {
                                                orow[xx] = orow[xx] + wv * srow[xx - 1];
                                            }
                                        }
                                        0 => {
                                            for xx in 0..ox {
                                                orow[xx] = orow[xx] + wv * srow[xx];
                                            }
                                        }
                                        _ => {
                                            for xx in 0..ox - 1 {
                                                orow[xx] = orow[xx] + wv * srow[xx + 1];
                                            }
                                            orow[ox - 1] = orow[ox - 1] + wv * srow[nx - 1];
                                        }
                                    }
                                }
                            }
                        } else {
                            for z in 0..od[2] {
                                let sz = 2 * z as i64 + dz;
                                if sz < 0 || sz >= dims[2] as i64 {
                                    continue;
                                }
                                for yy in 0..oy {
                                    let sy = 2 * yy as i64 + dy;
                                    if sy < 0 || sy >= ny as i64 {
                                        continue;
                                    }
                                    let srow = &src[(sz as usize * ny + sy as usize) * nx..];
                                    let orow =
                                        &mut out_ch[(z * oy + yy) * ox..(z * oy + yy) * ox + ox];
                                    for xx in 0..ox {
                                        let sx = 2 * xx as i64 + dx;
                                        if sx >= 0 && sx < nx as i64 {
                                            orow[xx] = orow[xx] + wv * srow[sx as usize];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            });
        y
    }

    /// Returns (grad_x, grad_w, grad_b).
    pub fn backward(&self, x: &Tensor<T>, gy: &Tensor<T>) -> (Tensor<T>, Vec<T>, Vec<T>) {
        assert_eq!(gy.channels, self.co);
        let dims = x.dims;
        let od = self.out_dims(dims);
        assert_eq!(gy.dims, od);
        let n_in = x.voxels();
        let [nx, ny, nz] = dims;
        let [ox, oy, oz] = od;

        let grad_b: Vec<T> = (0..self.co)
            .map(|co| gy.channel(co).iter().fold(T::zero(), |a, &g| a + g))
            .collect();

        // grad_w: dot products of gy with the shifted input, per (co, ci, tap).
        let mut grad_w = vec![T::zero(); self.w.len()];
        grad_w
            .par_chunks_mut(self.ci * 27)
            .enumerate()
            .for_each(|(co, wchunk)| {
                let g = gy.channel(co);
                for ci in 0..self.ci {
                    let src = x.channel(ci);
                    for (tap, &(dz, dy, dx)) in TAPS.iter().enumerate() {
                        let mut acc = T::zero();
                        for z in 0..oz {
                            for yy in 0..oy {
                                for xx in 0..ox {
                                    let (sx, sy, sz) = if self.stride == 1 {
                                        (
                                            fold(xx as i64 + dx, nx) as i64,
                                            fold(yy as i64 + dy, ny) as i64,
                                            fold(z as i64 + dz, nz) as i64,
                                        )
                                    } else {
                                        (2 * xx as i64 + dx, 2 * yy as i64 + dy, 2 * z as i64 + dz)
                                    };
                                    if sx < 0 || sy < 0 || sz < 0
                                        || sx >= nx as i64 || sy >= ny as i64 || sz >= nz as i64
                                    {
                                        continue;
                                    }
                                    let si = (sz as usize * ny + sy as usize) * nx + sx as usize;
                                    let gi = (z * oy + yy) * ox + xx;
                                    acc = acc + g[gi] * src[si];
                                }
                            }
                        }
                        wchunk[ci * 27 + tap] = acc;
                    }
                }
            });

        // grad_x: scatter the adjoint reads, one task per input channel.
        let mut grad_x = Tensor::zeros(self.ci, dims);
        grad_x
            .data
            .par_chunks_mut(n_in)
            .enumerate()
            .for_each(|(ci, gx)| {
                for co in 0..self.co {
                    let g = gy.channel(co);
                    let wbase = (co * self.ci + ci) * 27;
                    for (tap, &(dz, dy, dx)) in TAPS.iter().enumerate() {
                        let wv = self.w[wbase + tap];
                        for z in 0..oz {
                            for yy in 0..oy {
                                for xx in 0..ox {
                                    let (sx, sy, sz) = if self.stride == 1 {
                                        (
                                            fold(xx as i64 + dx, nx) as i64,
                                            fold(yy as i64 + dy, ny) as i64,
                                            fold(z as i64 + dz, nz) as i64,
                                        )
                                    } else {
                                        (2 * xx as i64 + dx, 2 * yy as i64 + dy, 2 * z as i64 + dz)
                                    };
                                    if sx < 0 || sy < 0 || sz < 0
                                        || sx >= nx as i64 || sy >= ny as i64 || sz >= nz as i64
                                    {
                                        continue;
                                    }
                                    let si = (sz as usize * ny + sy as usize) * nx + sx as usize;
                                    let gi = (z * oy + yy) * ox + xx;
                                    gx[si] = gx[si] + wv * g[gi];
                                }
                            }
                        }
                    }
                }
            });
        (grad_x, grad_w, grad_b)
    }
}

/// Pointwise (1x1x1) convolution: a per-voxel channel mix.
#[derive(Debug, Clone)]
pub struct Conv1<T> {
    pub ci: usize,
    pub co: usize,
    pub w: Vec<T>, // [co][ci]
    pub b: Vec<T>,
}

impl<T: Scalar> Conv1<T> {
    pub fn new(ci: usize, co: usize, rng: &mut SplitMix64) -> Self {
        let limit = (6.0 / ci as f64).sqrt();
        let w = (0..co * ci).map(|_| c(rng.uniform(-limit, limit))).collect();
        Conv1 { ci, co, w, b: vec![T::zero(); co] }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.channels, self.ci, "conv1 input channels");
        let n = x.voxels();
        let mut y = Tensor::zeros(self.co, x.dims);
        y.data.par_chunks_mut(n).enumerate().for_each(|(co, out_ch)| {
            for v in out_ch.iter_mut() {
                *v = self.b[co];
            }
            for ci in 0..self.ci {
                let wv = self.w[co * self.ci + ci];
                let src = x.channel(ci);
                for i in 0..n {
                    out_ch[i] = out_ch[i] + wv * src[i];
                }
            }
        });
        y
    }

    pub fn backward(&self, x: &Tensor<T>, gy: &Tensor<T>) -> (Tensor<T>, Vec<T>, Vec<T>) {
        let n = x.voxels();
        let grad_b: Vec<T> = (0..self.co)
            .map(|co| gy.channel(co).iter().fold(T::zero(), |a, &g| a + g))
            .collect();
        let mut grad_w = vec![T::zero(); self.w.len()];
        for co in 0..self.co {
            let g = gy.channel(co);
            for ci in 0..self.ci {
                let src = x.channel(ci);
                let mut acc = T::zero();
                for i in 0..n {
                    acc = acc + g[i] * src[i];
                }
                grad_w[co * self.ci + ci] = acc;
            }
        }
        let mut grad_x = Tensor::zeros(self.ci, x.dims);
        grad_x.data.par_chunks_mut(n).enumerate().for_each(|(ci, gx)| {
            for co in 0..self.co {
                let wv = self.w[co * self.ci + ci];
                let g = gy.channel(co);
                for i in 0..n {
                    gx[i] = gx[i] + wv * g[i];
                }
            }
        });
        (grad_x, grad_w, grad_b)
    }
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    Tensor {
        channels: x.channels,
        dims: x.dims,
        data: x.data.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect(),
    }
}

pub fn relu_backward<T: Scalar>(x: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    Tensor {
        channels: x.channels,
        dims: x.dims,
        data: x
            .data
            .iter()
            .zip(&gy.data)
            .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
            .collect(),
    }
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    Tensor {
        channels: x.channels,
        dims: x.dims,
        data: x.data.iter().map(|&v| T::one() / (T::one() + (-v).exp())).collect(),
    }
}

/// Backward through sigmoid given its *output* y: gx = gy * y * (1 - y).
pub fn sigmoid_backward<T: Scalar>(y: &Tensor<T>, gy: &Tensor<T>) -> Tensor<T> {
    Tensor {
        channels: y.channels,
        dims: y.dims,
        data: y
            .data
            .iter()
            .zip(&gy.data)
            .map(|(&y, &g)| g * y * (T::one() - y))
            .collect(),
    }
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    assert_eq!(a.channels, b.channels);
    assert_eq!(a.dims, b.dims);
    Tensor {
        channels: a.channels,
        dims: a.dims,
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| x + y).collect(),
    }
}

/// Nearest-neighbor x2 upsampling: out[z,y,x] = in[z/2, y/2, x/2].
pub fn upsample_nearest2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [nx, ny, nz] = x.dims;
    let od = [2 * nx, 2 * ny, 2 * nz];
    let mut y = Tensor::zeros(x.channels, od);
    for ch in 0..x.channels {
        let src = x.channel(ch);
        let dst = y.channel_mut(ch);
        for z in 0..od[2] {
            for yy in 0..od[1] {
                let srow = &src[(z / 2 * ny + yy / 2) * nx..];
                let drow = &mut dst[(z * od[1] + yy) * od[0]..(z * od[1] + yy) * od[0] + od[0]];
                for xx in 0..od[0] {
                    drow[xx] = srow[xx / 2];
                }
            }
        }
    }
    y
}

pub fn upsample_nearest2_backward<T: Scalar>(in_dims: [usize; 3], gy: &Tensor<T>) -> Tensor<T> {
    let [nx, ny, _nz] = in_dims;
    let od = gy.dims;
    let mut gx = Tensor::zeros(gy.channels, in_dims);
    for ch in 0..gy.channels {
        let g = gy.channel(ch);
        let dst = gx.channel_mut(ch);
        for z in 0..od[2] {
            for yy in 0..od[1] {
                let grow = &g[(z * od[1] + yy) * od[0]..];
                let di_base = (z / 2 * ny + yy / 2) * nx;
                for xx in 0..od[0] {
                    let di = di_base + xx / 2;
                    dst[di] = dst[di] + grow[xx];
                }
            }
        }
    }
    gx
}

/// Channel concatenation [a; b].
pub fn concat<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    assert_eq!(a.dims, b.dims);
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor { channels: a.channels + b.channels, dims: a.dims, data }
}

/// Splits a concat gradient back into the two inputs' gradients.
pub fn concat_backward<T: Scalar>(a_channels: usize, gy: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let n = gy.voxels();
    let (ga, gb) = gy.data.split_at(a_channels * n);
    (
        Tensor { channels: a_channels, dims: gy.dims, data: ga.to_vec() },
        Tensor { channels: gy.channels - a_channels, dims: gy.dims, data: gb.to_vec() },
    )
}

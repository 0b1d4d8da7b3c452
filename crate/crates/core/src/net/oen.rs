//! Orientation estimation network: a residual depth-2 encoder-decoder with
//! two heads - a 3-channel orientation head normalized to unit vectors and
//! hemisphere-canonicalized, and a 1-channel sigmoid vessel-probability
//! head.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::vec3::canonicalize;

use super::adam::ParamSlot;
use super::layers::*;
use super::model_io::ModelEntry;
use super::tensor::{c, Scalar, Tensor};

/// Pre-normalization magnitudes at or below this pass through unscaled (the
/// loss excludes such voxels).
pub const NORM_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct OrientNet<T> {
    pub base: usize,
    stem: Conv3<T>,
    b1a: Conv3<T>,
    b1b: Conv3<T>,
    down: Conv3<T>,
    b2a: Conv3<T>,
    b2b: Conv3<T>,
    upc: Conv1<T>,
    fuse: Conv3<T>,
    head_orient: Conv1<T>,
    head_prob: Conv1<T>,
}

/// Every intermediate needed by the hand-derived backward pass.
pub struct OenCache<T> {
    x_in: Tensor<T>,
    t0: Tensor<T>,
    x0: Tensor<T>,
    t1: Tensor<T>,
    a1: Tensor<T>,
    r1: Tensor<T>,
    s1: Tensor<T>,
    t3: Tensor<T>,
    x2: Tensor<T>,
    t4: Tensor<T>,
    a2: Tensor<T>,
    r2: Tensor<T>,
    us: Tensor<T>,
    t6: Tensor<T>,
    cat: Tensor<T>,
    t7: Tensor<T>,
    d1: Tensor<T>,
    raw: Tensor<T>,
    prob: Tensor<T>,
}

pub struct OenOutput<T> {
    /// 3 channels, unit-norm and canonical wherever the raw magnitude
    /// exceeds [`NORM_FLOOR`].
    pub orient: Tensor<T>,
    /// 1 channel in (0, 1).
    pub prob: Tensor<T>,
}

impl<T: Scalar> OrientNet<T> {
    pub fn new(base: usize, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let c1 = base;
        let c2 = 2 * base;
        OrientNet {
            base,
            stem: Conv3::new(1, c1, 1, &mut rng),
            b1a: Conv3::new(c1, c1, 1, &mut rng),
            b1b: Conv3::new(c1, c1, 1, &mut rng),
            down: Conv3::new(c1, c2, 2, &mut rng),
            b2a: Conv3::new(c2, c2, 1, &mut rng),
            b2b: Conv3::new(c2, c2, 1, &mut rng),
            upc: Conv1::new(c2, c1, &mut rng),
            fuse: Conv3::new(c2, c1, 1, &mut rng),
            head_orient: Conv1::new(c1, 3, &mut rng),
            head_prob: Conv1::new(c1, 1, &mut rng),
        }
    }

    pub fn check_dims(dims: [usize; 3]) -> Result<()> {
        if dims.iter().any(|&d| d % 4 != 0 || d < 8) {
            return Err(Error::invalid(format!(
                "orient net needs dims divisible by 4 and >= 8, got {dims:?}"
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x_in: &Tensor<T>) -> Result<(OenOutput<T>, OenCache<T>)> {
        Self::check_dims(x_in.dims)?;
        if x_in.channels != 1 {
            return Err(Error::invalid("orient net expects a single input channel"));
        }
        let t0 = self.stem.forward(x_in);
        let x0 = relu(&t0);
        let t1 = self.b1a.forward(&x0);
        let a1 = relu(&t1);
        let t2 = self.b1b.forward(&a1);
        let r1 = add(&t2, &x0);
        let s1 = relu(&r1);
        let t3 = self.down.forward(&s1);
        let x2 = relu(&t3);
        let t4 = self.b2a.forward(&x2);
        let a2 = relu(&t4);
        let t5 = self.b2b.forward(&a2);
        let r2 = add(&t5, &x2);
        let bott = relu(&r2);
        let us = upsample_nearest2(&bott);
        let t6 = self.upc.forward(&us);
        let u1 = relu(&t6);
        let cat = concat(&s1, &u1);
        let t7 = self.fuse.forward(&cat);
        let d1 = relu(&t7);
        let raw = self.head_orient.forward(&d1);
        let orient = normalize_canonicalize(&raw);
        let pl = self.head_prob.forward(&d1);
        let prob = sigmoid(&pl);
        let cache = OenCache {
            x_in: x_in.clone(),
            t0,
            x0,
            t1,
            a1,
            r1,
            s1,
            t3,
            x2,
            t4,
            a2,
            r2,
            us,
            t6,
            cat,
            t7,
            d1,
            raw,
            prob: prob.clone(),
        };
        Ok((OenOutput { orient, prob }, cache))
    }

    /// Backward pass. `g_orient` is the loss gradient with respect to the
    /// canonical unit orientation output; `g_prob` with respect to the
    /// post-sigmoid probability. Returns parameter gradients aligned with
    /// [`Self::param_slots`].
    pub fn backward(&self, cache: &OenCache<T>, g_orient: &Tensor<T>, g_prob: &Tensor<T>) -> Vec<Vec<T>> {
        let g_pl = sigmoid_backward(&cache.prob, g_prob);
        let (g_d1_a, gw_hp, gb_hp) = self.head_prob.backward(&cache.d1, &g_pl);
        let g_raw = normalize_canonicalize_backward(&cache.raw, g_orient);
        let (g_d1_b, gw_ho, gb_ho) = self.head_orient.backward(&cache.d1, &g_raw);
        let g_d1 = add(&g_d1_a, &g_d1_b);
        let g_t7 = relu_backward(&cache.t7, &g_d1);
        let (g_cat, gw_fuse, gb_fuse) = self.fuse.backward(&cache.cat, &g_t7);
        let (g_s1_cat, g_u1) = concat_backward(self.base, &g_cat);
        let g_t6 = relu_backward(&cache.t6, &g_u1);
        let (g_us, gw_upc, gb_upc) = self.upc.backward(&cache.us, &g_t6);
        let half = [cache.x2.dims[0], cache.x2.dims[1], cache.x2.dims[2]];
        let g_bott = upsample_nearest2_backward(half, &g_us);
        let g_r2 = relu_backward(&cache.r2, &g_bott);
        let (g_a2, gw_b2b, gb_b2b) = self.b2b.backward(&cache.a2, &g_r2);
        let g_t4 = relu_backward(&cache.t4, &g_a2);
        let (g_x2_conv, gw_b2a, gb_b2a) = self.b2a.backward(&cache.x2, &g_t4);
        let g_x2 = add(&g_x2_conv, &g_r2); // residual shortcut
        let g_t3 = relu_backward(&cache.t3, &g_x2);
        let (g_s1_down, gw_down, gb_down) = self.down.backward(&cache.s1, &g_t3);
        let g_s1 = add(&g_s1_cat, &g_s1_down);
        let g_r1 = relu_backward(&cache.r1, &g_s1);
        let (g_a1, gw_b1b, gb_b1b) = self.b1b.backward(&cache.a1, &g_r1);
        let g_t1 = relu_backward(&cache.t1, &g_a1);
        let (g_x0_conv, gw_b1a, gb_b1a) = self.b1a.backward(&cache.x0, &g_t1);
        let g_x0 = add(&g_x0_conv, &g_r1);
        let g_t0 = relu_backward(&cache.t0, &g_x0);
        let (_, gw_stem, gb_stem) = self.stem.backward(&cache.x_in, &g_t0);
        vec![
            gw_stem, gb_stem, gw_b1a, gb_b1a, gw_b1b, gb_b1b, gw_down, gb_down, gw_b2a, gb_b2a,
            gw_b2b, gb_b2b, gw_upc, gb_upc, gw_fuse, gb_fuse, gw_ho, gb_ho, gw_hp, gb_hp,
        ]
    }

    pub fn param_slots(&mut self) -> Vec<ParamSlot<'_, T>> {
        let c1 = self.base;
        let c2 = 2 * self.base;
        vec![
            ParamSlot { name: "oen.stem.w", shape: vec![c1, 1, 3, 3, 3], data: &mut self.stem.w },
            ParamSlot { name: "oen.stem.b", shape: vec![c1], data: &mut self.stem.b },
            ParamSlot { name: "oen.b1a.w", shape: vec![c1, c1, 3, 3, 3], data: &mut self.b1a.w },
            ParamSlot { name: "oen.b1a.b", shape: vec![c1], data: &mut self.b1a.b },
            ParamSlot { name: "oen.b1b.w", shape: vec![c1, c1, 3, 3, 3], data: &mut self.b1b.w },
            ParamSlot { name: "oen.b1b.b", shape: vec![c1], data: &mut self.b1b.b },
            ParamSlot { name: "oen.down.w", shape: vec![c2, c1, 3, 3, 3], data: &mut self.down.w },
            ParamSlot { name: "oen.down.b", shape: vec![c2], data: &mut self.down.b },
            ParamSlot { name: "oen.b2a.w", shape: vec![c2, c2, 3, 3, 3], data: &mut self.b2a.w },
            ParamSlot { name: "oen.b2a.b", shape: vec![c2], data: &mut self.b2a.b },
            ParamSlot { name: "oen.b2b.w", shape: vec![c2, c2, 3, 3, 3], data: &mut self.b2b.w },
            ParamSlot { name: "oen.b2b.b", shape: vec![c2], data: &mut self.b2b.b },
            ParamSlot { name: "oen.upc.w", shape: vec![c1, c2], data: &mut self.upc.w },
            ParamSlot { name: "oen.upc.b", shape: vec![c1], data: &mut self.upc.b },
            ParamSlot { name: "oen.fuse.w", shape: vec![c1, c2, 3, 3, 3], data: &mut self.fuse.w },
            ParamSlot { name: "oen.fuse.b", shape: vec![c1], data: &mut self.fuse.b },
            ParamSlot { name: "oen.head_orient.w", shape: vec![3, c1], data: &mut self.head_orient.w },
            ParamSlot { name: "oen.head_orient.b", shape: vec![3], data: &mut self.head_orient.b },
            ParamSlot { name: "oen.head_prob.w", shape: vec![1, c1], data: &mut self.head_prob.w },
            ParamSlot { name: "oen.head_prob.b", shape: vec![1], data: &mut self.head_prob.b },
        ]
    }

    pub fn to_entries(&mut self) -> Vec<ModelEntry> {
        self.param_slots()
            .into_iter()
            .map(|s| ModelEntry {
                name: s.name.to_string(),
                shape: s.shape,
                data: s.data.iter().map(|v| v.to_f64().unwrap() as f32).collect(),
            })
            .collect()
    }

    pub fn from_entries(entries: &[ModelEntry]) -> Result<OrientNet<T>> {
        let stem = entries
            .iter()
            .find(|e| e.name == "oen.stem.w")
            .ok_or_else(|| Error::ModelFormat("not an orientation model (oen.stem.w missing)".into()))?;
        let base = stem.shape[0];
        let mut net = OrientNet::new(base, 0);
        for slot in net.param_slots() {
            let e = entries
                .iter()
                .find(|e| e.name == slot.name)
                .ok_or_else(|| Error::ModelFormat(format!("missing entry '{}'", slot.name)))?;
            if e.shape != slot.shape {
                return Err(Error::ModelFormat(format!(
                    "entry '{}' has shape {:?}, expected {:?}",
                    slot.name, e.shape, slot.shape
                )));
            }
            *slot.data = e.data.iter().map(|&v| c(v as f64)).collect();
        }
        Ok(net)
    }
}

/// Per-voxel unit normalization followed by hemisphere canonicalization.
/// Voxels with magnitude <= NORM_FLOOR pass through unchanged.
pub fn normalize_canonicalize<T: Scalar>(raw: &Tensor<T>) -> Tensor<T> {
    debug_assert_eq!(raw.channels, 3);
    let n = raw.voxels();
    let mut out = raw.clone();
    for i in 0..n {
        let v = [
            raw.data[i].to_f64().unwrap(),
            raw.data[n + i].to_f64().unwrap(),
            raw.data[2 * n + i].to_f64().unwrap(),
        ];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm <= NORM_FLOOR {
            continue;
        }
        let u = canonicalize([
            (v[0] / norm) as f32,
            (v[1] / norm) as f32,
            (v[2] / norm) as f32,
        ]);
        out.data[i] = c(u[0] as f64);
        out.data[n + i] = c(u[1] as f64);
        out.data[2 * n + i] = c(u[2] as f64);
    }
    out
}

/// Backward of [`normalize_canonicalize`]: for out = s * raw/|raw| with the
/// piecewise-constant canonical sign s, the Jacobian is s(I - u u^T)/|raw|.
pub fn normalize_canonicalize_backward<T: Scalar>(raw: &Tensor<T>, g_out: &Tensor<T>) -> Tensor<T> {
    let n = raw.voxels();
    let mut g = g_out.clone();
    for i in 0..n {
        let v = [
            raw.data[i].to_f64().unwrap(),
            raw.data[n + i].to_f64().unwrap(),
            raw.data[2 * n + i].to_f64().unwrap(),
        ];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm <= NORM_FLOOR {
            continue; // pass-through
        }
        let u = [v[0] / norm, v[1] / norm, v[2] / norm];
        let cu = canonicalize([u[0] as f32, u[1] as f32, u[2] as f32]);
        // Sign applied by canonicalization at this voxel.
        let s = if (cu[2] as f64 - u[2]).abs() + (cu[1] as f64 - u[1]).abs() > 1e-6 * (1.0 + u[1].abs() + u[2].abs())
        {
            -1.0
        } else if u[2] == 0.0 && u[1] == 0.0 && (cu[0] as f64 - u[0]).abs() > 1e-12 {
            -1.0
        } else {
            1.0
        };
        let go = [
            g_out.data[i].to_f64().unwrap(),
            g_out.data[n + i].to_f64().unwrap(),
            g_out.data[2 * n + i].to_f64().unwrap(),
        ];
        let udotg = u[0] * go[0] + u[1] * go[1] + u[2] * go[2];
        for ch in 0..3 {
            g.data[ch * n + i] = c(s * (go[ch] - u[ch] * udotg) / norm);
        }
    }
    g
}

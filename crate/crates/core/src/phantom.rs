//! Synthetic tubular phantoms with analytic ground truth.
//!
//! Each phantom is a set of tubes swept along parametric curves (straight
//! lines, circular arcs, helices, quadratic Beziers). The mask is the set of
//! voxel centers within the tube radius of the curve polyline, and the
//! ground-truth orientation at a voxel is the analytic curve tangent at the
//! nearest curve sample - an oracle that is independent of the
//! skeleton-based label pipeline it is used to validate.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::orient::OrientationField;
use crate::rng::SplitMix64;
use crate::vec3::{canonicalize, normalize, Vec3};
use crate::volume::{Volume, VolumeKind};
use crate::vvol::save_vvol;

/// Target arc-length spacing between consecutive curve samples, in voxels.
const SAMPLE_STEP: f64 = 0.5;

/// A tube: a densely sampled curve with per-sample analytic tangents.
#[derive(Debug, Clone)]
pub struct TubeSpec {
    /// Curve samples in voxel coordinates, consecutive points <= 1 apart.
    pub points: Vec<Vec3>,
    /// Unit tangent at each sample, hemisphere-canonicalized.
    pub tangents: Vec<Vec3>,
    /// Tube radius in voxels.
    pub radius: f32,
    /// Foreground intensity in (0, 1].
    pub intensity: f32,
}

impl TubeSpec {
    fn from_parametric(
        f: impl Fn(f64) -> ([f64; 3], [f64; 3]),
        t0: f64,
        t1: f64,
        steps: usize,
        radius: f32,
        intensity: f32,
    ) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::invalid("tube radius must be positive"));
        }
        if !(intensity > 0.0 && intensity <= 1.0) {
            return Err(Error::invalid("tube intensity must lie in (0, 1]"));
        }
        let steps = steps.max(2);
        let mut points = Vec::with_capacity(steps);
        let mut tangents = Vec::with_capacity(steps);
        for k in 0..steps {
            let t = t0 + (t1 - t0) * k as f64 / (steps - 1) as f64;
            let (p, d) = f(t);
            let tangent = normalize([d[0] as f32, d[1] as f32, d[2] as f32], 1e-12)
                .ok_or_else(|| Error::invalid("curve has a zero-derivative sample"))?;
            points.push([p[0] as f32, p[1] as f32, p[2] as f32]);
            tangents.push(canonicalize(tangent));
        }
        let spec = TubeSpec { points, tangents, radius, intensity };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 2 {
            return Err(Error::invalid("curve needs at least 2 points"));
        }
        for w in self.points.windows(2) {
            let d = [w[1][0] - w[0][0], w[1][1] - w[0][1], w[1][2] - w[0][2]];
            if crate::vec3::norm(d) > 1.0 {
                return Err(Error::invalid("consecutive curve samples more than 1 voxel apart"));
            }
        }
        Ok(())
    }

    /// Straight segment from `a` to `b`.
    pub fn line(a: [f64; 3], b: [f64; 3], radius: f32, intensity: f32) -> Result<Self> {
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2) + (b[2] - a[2]).powi(2)).sqrt();
        let steps = (len / SAMPLE_STEP).ceil() as usize + 1;
        let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        Self::from_parametric(
            |t| ([a[0] + t * d[0], a[1] + t * d[1], a[2] + t * d[2]], d),
            0.0,
            1.0,
            steps,
            radius,
            intensity,
        )
    }

    /// Circular arc around `center`, in the plane spanned by orthonormal
    /// `u`, `v`, sweeping `angle0..angle1` radians at curve radius `rc`.
    pub fn arc(
        center: [f64; 3],
        u: [f64; 3],
        v: [f64; 3],
        rc: f64,
        angle0: f64,
        angle1: f64,
        radius: f32,
        intensity: f32,
    ) -> Result<Self> {
        let len = rc * (angle1 - angle0).abs();
        let steps = (len / SAMPLE_STEP).ceil() as usize + 1;
        Self::from_parametric(
            |t| {
                let (s, c) = t.sin_cos();
                let p = [
                    center[0] + rc * (c * u[0] + s * v[0]),
                    center[1] + rc * (c * u[1] + s * v[1]),
                    center[2] + rc * (c * u[2] + s * v[2]),
                ];
                let d = [
                    rc * (-s * u[0] + c * v[0]),
                    rc * (-s * u[1] + c * v[1]),
                    rc * (-s * u[2] + c * v[2]),
                ];
                (p, d)
            },
            angle0,
            angle1,
            steps,
            radius,
            intensity,
        )
    }

    /// Helix x = cx + R cos t, y = cy + R sin t, z = cz + c t.
    pub fn helix(
        center: [f64; 3],
        helix_radius: f64,
        pitch_per_radian: f64,
        t0: f64,
        t1: f64,
        radius: f32,
        intensity: f32,
    ) -> Result<Self> {
        let speed = (helix_radius * helix_radius + pitch_per_radian * pitch_per_radian).sqrt();
        let steps = (speed * (t1 - t0).abs() / SAMPLE_STEP).ceil() as usize + 1;
        Self::from_parametric(
            |t| {
                let (s, c) = t.sin_cos();
                let p = [
                    center[0] + helix_radius * c,
                    center[1] + helix_radius * s,
                    center[2] + pitch_per_radian * t,
                ];
                let d = [-helix_radius * s, helix_radius * c, pitch_per_radian];
                (p, d)
            },
            t0,
            t1,
            steps,
            radius,
            intensity,
        )
    }

    /// Quadratic Bezier with control points `p0`, `p1`, `p2`.
    pub fn bezier(p0: [f64; 3], p1: [f64; 3], p2: [f64; 3], radius: f32, intensity: f32) -> Result<Self> {
        // Chord-based step estimate; the curve is no longer than the polygon.
        let poly_len = |a: [f64; 3], b: [f64; 3]| {
            ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2) + (b[2] - a[2]).powi(2)).sqrt()
        };
        let len = poly_len(p0, p1) + poly_len(p1, p2);
        let steps = (len / SAMPLE_STEP).ceil() as usize * 2 + 2;
        Self::from_parametric(
            |t| {
                let omt = 1.0 - t;
                let p = [
                    omt * omt * p0[0] + 2.0 * omt * t * p1[0] + t * t * p2[0],
                    omt * omt * p0[1] + 2.0 * omt * t * p1[1] + t * t * p2[1],
                    omt * omt * p0[2] + 2.0 * omt * t * p1[2] + t * t * p2[2],
                ];
                let d = [
                    2.0 * omt * (p1[0] - p0[0]) + 2.0 * t * (p2[0] - p1[0]),
                    2.0 * omt * (p1[1] - p0[1]) + 2.0 * t * (p2[1] - p1[1]),
                    2.0 * omt * (p1[2] - p0[2]) + 2.0 * t * (p2[2] - p1[2]),
                ];
                (p, d)
            },
            0.0,
            1.0,
            steps,
            radius,
            intensity,
        )
    }
}

/// One generated phantom: the noisy image, the binary mask, and the
/// analytic orientation field defined exactly on the mask.
#[derive(Debug, Clone)]
pub struct PhantomSample {
    pub image: Volume,
    pub mask: Volume,
    pub orient: OrientationField,
    pub specs: Vec<TubeSpec>,
}

fn check_bounds(spec: &TubeSpec, dims: [usize; 3]) -> Result<()> {
    for p in &spec.points {
        for a in 0..3 {
            if p[a] - spec.radius < 0.0 || p[a] + spec.radius > (dims[a] - 1) as f32 {
                return Err(Error::invalid(format!(
                    "curve point {p:?} with radius {} exits dims {dims:?}",
                    spec.radius
                )));
            }
        }
    }
    Ok(())
}

fn dist2_point_segment(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let den = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
    let t = if den > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / den).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]];
    (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)
}

/// Rasterizes one tube: mask = voxel centers within `radius` of the curve
/// polyline; orientation = tangent of the nearest curve sample
/// (ties broken by smallest sample index).
pub fn rasterize_tube(spec: &TubeSpec, dims: [usize; 3]) -> Result<(Volume, OrientationField)> {
    spec.validate()?;
    check_bounds(spec, dims)?;
    let mut mask = Volume::zeros(dims, [1.0; 3], VolumeKind::ScalarU8);
    let mut field = Volume::zeros(dims, [1.0; 3], VolumeKind::Vec3F32);
    let mut best_d2 = vec![f64::INFINITY; mask.voxels()];
    rasterize_tube_into(spec, &mut mask, &mut field, &mut best_d2)?;
    let of = OrientationField::new(field, mask.clone())?;
    Ok((mask, of))
}

/// Shared rasterizer used for multi-tube volumes: `best_d2` carries the
/// nearest-sample distance seen so far so overlapping tubes resolve each
/// voxel to the globally nearest curve sample.
fn rasterize_tube_into(
    spec: &TubeSpec,
    mask: &mut Volume,
    field: &mut Volume,
    best_d2: &mut [f64],
) -> Result<()> {
    let dims = mask.dims();
    let r = spec.radius as f64;
    let r2 = r * r;
    for s in 0..spec.points.len() - 1 {
        let a = spec.points[s];
        let b = spec.points[s + 1];
        let a64 = [a[0] as f64, a[1] as f64, a[2] as f64];
        let b64 = [b[0] as f64, b[1] as f64, b[2] as f64];
        // Inflated bounding box of the segment.
        let lo = |i: usize| ((a[i].min(b[i]) as f64 - r).floor().max(0.0)) as usize;
        let hi = |i: usize| ((a[i].max(b[i]) as f64 + r).ceil() as usize).min(dims[i] - 1);
        for z in lo(2)..=hi(2) {
            for y in lo(1)..=hi(1) {
                for x in lo(0)..=hi(0) {
                    let p = [x as f64, y as f64, z as f64];
                    let d2 = dist2_point_segment(p, a64, b64);
                    if d2 > r2 {
                        continue;
                    }
                    let i = x + dims[0] * (y + dims[1] * z);
                    mask.u8_data_mut()[i] = 1;
                    // Nearest *sample* decides the tangent.
                    for (j, q) in [(s, a64), (s + 1, b64)] {
                        let ds = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                        // Strict < keeps the earliest sample on ties.
                        if ds < best_d2[i] {
                            best_d2[i] = ds;
                            field.set_vec_at(i, spec.tangents[j]);
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

/// Rendering parameters for [`render_image`].
#[derive(Debug, Clone)]
pub struct RenderParams {
    pub intensity: f32,
    pub background: f32,
    pub noise_sigma: f32,
    /// Sigma of the 3x3x3 smoothing Gaussian; 0 disables smoothing.
    pub smooth_sigma: f32,
    pub seed: u64,
}

impl Default for RenderParams {
    fn default() -> Self {
        RenderParams {
            intensity: 0.8,
            background: 0.15,
            noise_sigma: 0.02,
            smooth_sigma: 0.7,
            seed: 0,
        }
    }
}

/// 3x3x3 Gaussian smoothing with mirror boundaries (separable).
fn smooth_3x3x3(v: &mut Vec<f32>, dims: [usize; 3], sigma: f32) {
    let s2 = 2.0 * (sigma as f64) * (sigma as f64);
    let mut k = [(-1.0f64 / s2).exp(), 1.0, (-1.0f64 / s2).exp()];
    let sum: f64 = k.iter().sum();
    for w in &mut k {
        *w /= sum;
    }
    let kernel = [k[0] as f32, k[1] as f32, k[2] as f32];
    let [nx, ny, nz] = dims;
    let idx = |x: usize, y: usize, z: usize| x + nx * (y + ny * z);
    let reflect = |i: i64, n: usize| -> usize {
        if i < 0 {
            (-i - 1) as usize
        } else if i >= n as i64 {
            2 * n - 1 - i as usize
        } else {
            i as usize
        }
    };
    for axis in 0..3 {
        let mut out = vec![0.0f32; v.len()];
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let mut acc = 0.0f32;
                    for (t, &w) in kernel.iter().enumerate() {
                        let o = t as i64 - 1;
                        let (sx, sy, sz) = match axis {
                            0 => (reflect(x as i64 + o, nx), y, z),
                            1 => (x, reflect(y as i64 + o, ny), z),
                            _ => (x, y, reflect(z as i64 + o, nz)),
                        };
                        acc += w * v[idx(sx, sy, sz)];
                    }
                    out[idx(x, y, z)] = acc;
                }
            }
        }
        *v = out;
    }
}

/// Renders a mask into a noisy image: two-level step field (background /
/// intensity), optional 3x3x3 Gaussian smoothing, additive Gaussian noise,
/// clamp to [0, 1]. Bitwise deterministic for a given seed.
pub fn render_image(mask: &Volume, params: &RenderParams) -> Result<Volume> {
    if params.noise_sigma < 0.0 {
        return Err(Error::invalid("noise_sigma must be >= 0"));
    }
    if !(0.0 <= params.background && params.background < params.intensity && params.intensity <= 1.0) {
        return Err(Error::invalid("need 0 <= background < intensity <= 1"));
    }
    let dims = mask.dims();
    let mut img: Vec<f32> = mask
        .u8_data()
        .iter()
        .map(|&m| if m != 0 { params.intensity } else { params.background })
        .collect();
    render_field(&mut img, dims, params);
    Volume::scalar_f32(dims, mask.spacing(), img)
}

fn render_field(img: &mut Vec<f32>, dims: [usize; 3], params: &RenderParams) {
    if params.smooth_sigma > 0.0 {
        smooth_3x3x3(img, dims, params.smooth_sigma);
    }
    if params.noise_sigma > 0.0 {
        let mut rng = SplitMix64::new(params.seed);
        for v in img.iter_mut() {
            *v += params.noise_sigma * rng.next_normal() as f32;
        }
    }
    for v in img.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Dataset generation parameters; ranges are sampled per tube.
#[derive(Debug, Clone)]
pub struct PhantomParams {
    pub dims: [usize; 3],
    pub tubes_per_volume: usize,
    pub radius_range: (f32, f32),
    pub intensity_range: (f32, f32),
    pub background_range: (f32, f32),
    pub noise_sigma: f32,
    pub smooth_sigma: f32,
}

impl Default for PhantomParams {
    fn default() -> Self {
        PhantomParams {
            dims: [64, 64, 64],
            tubes_per_volume: 2,
            radius_range: (1.0, 4.0),
            intensity_range: (0.55, 0.95),
            background_range: (0.05, 0.25),
            noise_sigma: 0.02,
            smooth_sigma: 0.7,
        }
    }
}

/// Draws one random tube that fits inside the volume. The four curve
/// families are sampled uniformly; parameters are rejection-sampled until
/// the curve fits with its radius margin (bounded retries).
fn random_tube(params: &PhantomParams, rng: &mut SplitMix64) -> Result<TubeSpec> {
    let d = params.dims;
    let radius = rng.uniform(params.radius_range.0 as f64, params.radius_range.1 as f64) as f32;
    let intensity =
        rng.uniform(params.intensity_range.0 as f64, params.intensity_range.1 as f64) as f32;
    let m = radius as f64 + 1.5; // margin from the walls
    let span = |a: usize| (d[a] - 1) as f64;
    for _ in 0..64 {
        let family = rng.index(4);
        let spec = match family {
            0 => {
                let p = |rng: &mut SplitMix64| {
                    [
                        rng.uniform(m, span(0) - m),
                        rng.uniform(m, span(1) - m),
                        rng.uniform(m, span(2) - m),
                    ]
                };
                let a = p(rng);
                let mut b = p(rng);
                // Keep lines reasonably long so tangents are informative.
                let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2) + (b[2] - a[2]).powi(2)).sqrt();
                if len < span(0) * 0.4 {
                    let scale = span(0) * 0.4 / len.max(1e-6);
                    for i in 0..3 {
                        b[i] = a[i] + (b[i] - a[i]) * scale;
                    }
                }
                TubeSpec::line(a, b, radius, intensity)
            }
            1 => {
                let rc = rng.uniform(span(0) * 0.25, span(0) * 0.6);
                let center = [
                    rng.uniform(m, span(0) - m),
                    rng.uniform(m, span(1) - m),
                    rng.uniform(m, span(2) - m),
                ];
                let (u, v) = random_frame(rng);
                let a0 = rng.uniform(0.0, std::f64::consts::PI);
                let sweep = rng.uniform(0.6, 1.8);
                TubeSpec::arc(center, u, v, rc, a0, a0 + sweep, radius, intensity)
            }
            2 => {
                let hr = rng.uniform(span(0) * 0.12, span(0) * 0.3);
                let pitch = rng.uniform(span(2) * 0.08, span(2) * 0.2);
                let center = [
                    rng.uniform(m + hr, span(0) - m - hr).max(m),
                    rng.uniform(m + hr, span(1) - m - hr).max(m),
                    rng.uniform(m, span(2) * 0.35),
                ];
                let t1 = rng.uniform(1.5, 3.5);
                TubeSpec::helix(center, hr, pitch, 0.0, t1, radius, intensity)
            }
            _ => {
                let p = |rng: &mut SplitMix64| {
                    [
                        rng.uniform(m, span(0) - m),
                        rng.uniform(m, span(1) - m),
                        rng.uniform(m, span(2) - m),
                    ]
                };
                TubeSpec::bezier(p(rng), p(rng), p(rng), radius, intensity)
            }
        };
        if let Ok(spec) = spec {
            if check_bounds(&spec, d).is_ok() {
                return Ok(spec);
            }
        }
    }
    // Guaranteed-fit fallback: axis-aligned line through the middle.
    TubeSpec::line(
        [m, span(1) / 2.0, span(2) / 2.0],
        [span(0) - m, span(1) / 2.0, span(2) / 2.0],
        radius,
        intensity,
    )
}

fn random_frame(rng: &mut SplitMix64) -> ([f64; 3], [f64; 3]) {
    // Random orthonormal pair via Gram-Schmidt on random normals.
    loop {
        let a = [rng.next_normal(), rng.next_normal(), rng.next_normal()];
        let na = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
        if na < 1e-3 {
            continue;
        }
        let u = [a[0] / na, a[1] / na, a[2] / na];
        let b = [rng.next_normal(), rng.next_normal(), rng.next_normal()];
        let d = b[0] * u[0] + b[1] * u[1] + b[2] * u[2];
        let w = [b[0] - d * u[0], b[1] - d * u[1], b[2] - d * u[2]];
        let nw = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
        if nw < 1e-3 {
            continue;
        }
        return (u, [w[0] / nw, w[1] / nw, w[2] / nw]);
    }
}

/// Generates one phantom deterministically from its seed.
pub fn generate_sample(params: &PhantomParams, seed: u64) -> Result<PhantomSample> {
    let mut rng = SplitMix64::new(seed);
    let dims = params.dims;
    let mut mask = Volume::zeros(dims, [1.0; 3], VolumeKind::ScalarU8);
    let mut field = Volume::zeros(dims, [1.0; 3], VolumeKind::Vec3F32);
    let mut best_d2 = vec![f64::INFINITY; mask.voxels()];
    let mut specs = Vec::with_capacity(params.tubes_per_volume);
    let mut step = vec![0.0f32; mask.voxels()];
    let background = rng.uniform(params.background_range.0 as f64, params.background_range.1 as f64) as f32;
    for v in step.iter_mut() {
        *v = background;
    }
    for _ in 0..params.tubes_per_volume {
        let spec = random_tube(params, &mut rng)?;
        rasterize_tube_into(&spec, &mut mask, &mut field, &mut best_d2)?;
        specs.push(spec);
    }
    // Per-tube intensities; overlaps take the brightest tube.
    for spec in &specs {
        let r2 = (spec.radius as f64) * (spec.radius as f64);
        for s in 0..spec.points.len() - 1 {
            let a = spec.points[s];
            let b = spec.points[s + 1];
            let a64 = [a[0] as f64, a[1] as f64, a[2] as f64];
            let b64 = [b[0] as f64, b[1] as f64, b[2] as f64];
            let lo = |i: usize| ((a[i].min(b[i]) as f64 - spec.radius as f64).floor().max(0.0)) as usize;
            let hi = |i: usize| {
                ((a[i].max(b[i]) as f64 + spec.radius as f64).ceil() as usize).min(dims[i] - 1)
            };
            for z in lo(2)..=hi(2) {
                for y in lo(1)..=hi(1) {
                    for x in lo(0)..=hi(0) {
                        let p = [x as f64, y as f64, z as f64];
                        if dist2_point_segment(p, a64, b64) <= r2 {
                            let i = x + dims[0] * (y + dims[1] * z);
                            step[i] = step[i].max(spec.intensity);
                        }
                    }
                }
            }
        }
    }
    let render = RenderParams {
        intensity: 1.0,
        background: 0.0,
        noise_sigma: params.noise_sigma,
        smooth_sigma: params.smooth_sigma,
        seed: rng.next_u64(),
    };
    render_field(&mut step, dims, &render);
    let image = Volume::scalar_f32(dims, [1.0; 3], step)?;
    let orient = OrientationField::new(field, mask.clone())?;
    Ok(PhantomSample { image, mask, orient, specs })
}

/// Manifest line layout: `image<TAB>mask<TAB>orient<TAB>seed`.
pub const MANIFEST_NAME: &str = "manifest.tsv";

/// Writes `count` phantoms as VVOL triples plus a manifest. Sample i uses
/// seed `seed ^ i`, so regenerating any subset is independent of the rest.
pub fn gen_dataset(
    count: usize,
    params: &PhantomParams,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<PathBuf> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let mut manifest = String::new();
    for i in 0..count {
        let sample_seed = seed ^ i as u64;
        let sample = generate_sample(params, sample_seed)?;
        let image_name = format!("sample_{i:04}_image.vvol");
        let mask_name = format!("sample_{i:04}_mask.vvol");
        let orient_name = format!("sample_{i:04}_orient.vvol");
        save_vvol(&sample.image, out_dir.join(&image_name))?;
        save_vvol(&sample.mask, out_dir.join(&mask_name))?;
        save_vvol(&sample.orient.field, out_dir.join(&orient_name))?;
        writeln!(manifest, "{image_name}\t{mask_name}\t{orient_name}\t{sample_seed}")
            .expect("string write");
    }
    let path = out_dir.join(MANIFEST_NAME);
    std::fs::write(&path, manifest)?;
    Ok(path)
}

/// A dataset entry resolved against the manifest location.
#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub mask: PathBuf,
    pub orient: PathBuf,
    pub seed: u64,
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let text = std::fs::read_to_string(path)?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 4 {
            return Err(Error::invalid(format!(
                "manifest line {}: expected 4 tab-separated fields",
                lineno + 1
            )));
        }
        let seed = parts[3]
            .parse::<u64>()
            .map_err(|_| Error::invalid(format!("manifest line {}: bad seed", lineno + 1)))?;
        entries.push(ManifestEntry {
            image: base.join(parts[0]),
            mask: base.join(parts[1]),
            orient: base.join(parts[2]),
            seed,
        });
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::connected_components26;

    #[test]
    fn straight_tube_has_constant_axis_orientation() {
        let spec = TubeSpec::line([8.0, 8.0, 3.0], [8.0, 8.0, 28.0], 2.0, 0.9).unwrap();
        let (mask, orient) = rasterize_tube(&spec, [17, 17, 32]).unwrap();
        assert!(mask.mask_count() > 0);
        orient.validate().unwrap();
        for i in 0..mask.voxels() {
            if mask.u8_data()[i] != 0 {
                assert_eq!(orient.field.vec_at(i), [0.0, 0.0, 1.0]);
            }
        }
    }

    #[test]
    fn helix_orientation_matches_analytic_derivative() {
        let spec = TubeSpec::helix([16.0, 16.0, 4.0], 8.0, 3.0, 0.0, 3.0, 1.5, 0.9).unwrap();
        let (mask, orient) = rasterize_tube(&spec, [32, 32, 32]).unwrap();
        assert!(mask.mask_count() > 0);
        // At each curve sample's nearest voxel, the stored orientation must
        // equal the canonical analytic tangent of that sample.
        for (k, p) in spec.points.iter().enumerate() {
            let v = [p[0].round() as usize, p[1].round() as usize, p[2].round() as usize];
            let i = mask.index(v[0], v[1], v[2]);
            if mask.u8_data()[i] == 0 {
                continue;
            }
            let got = orient.field.vec_at(i);
            let ang = crate::vec3::axial_angle_deg(got, spec.tangents[k]);
            assert!(ang < 15.0, "sample {k}: {got:?} vs {:?} ({ang} deg)", spec.tangents[k]);
        }
    }

    #[test]
    fn subvoxel_radius_gives_one_voxel_line() {
        // Axis through voxel centers: only those centers are within 0.4.
        let spec = TubeSpec::line([4.0, 4.0, 2.0], [4.0, 4.0, 12.0], 0.4, 0.9).unwrap();
        let (mask, _) = rasterize_tube(&spec, [9, 9, 15]).unwrap();
        // Brute-force distance check over the whole volume.
        for i in 0..mask.voxels() {
            let [x, y, z] = mask.coords(i);
            let inside = x == 4 && y == 4 && (2..=12).contains(&z);
            assert_eq!(mask.u8_data()[i] == 1, inside, "voxel ({x},{y},{z})");
        }
    }

    #[test]
    fn mask_matches_bruteforce_distance_oracle() {
        let spec = TubeSpec::bezier(
            [6.0, 6.0, 5.0],
            [24.0, 10.0, 20.0],
            [10.0, 26.0, 40.0],
            2.3,
            0.8,
        )
        .unwrap();
        let dims = [33, 33, 46];
        let (mask, _) = rasterize_tube(&spec, dims).unwrap();
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let p = [x as f64, y as f64, z as f64];
                    let mut d2 = f64::INFINITY;
                    for w in spec.points.windows(2) {
                        let a = [w[0][0] as f64, w[0][1] as f64, w[0][2] as f64];
                        let b = [w[1][0] as f64, w[1][1] as f64, w[1][2] as f64];
                        d2 = d2.min(dist2_point_segment(p, a, b));
                    }
                    let inside = d2 <= (spec.radius as f64).powi(2);
                    let i = mask.index(x, y, z);
                    assert_eq!(mask.u8_data()[i] == 1, inside, "voxel ({x},{y},{z})");
                }
            }
        }
    }

    #[test]
    fn out_of_bounds_curve_rejected() {
        let spec = TubeSpec::line([2.0, 2.0, 0.0], [2.0, 2.0, 30.0], 2.0, 0.9).unwrap();
        assert!(rasterize_tube(&spec, [16, 16, 16]).is_err());
    }

    #[test]
    fn render_noiseless_unsmoothed_is_step_field() {
        let spec = TubeSpec::line([5.0, 5.0, 2.0], [5.0, 5.0, 12.0], 1.5, 0.9).unwrap();
        let (mask, _) = rasterize_tube(&spec, [11, 11, 15]).unwrap();
        let params = RenderParams {
            intensity: 0.9,
            background: 0.1,
            noise_sigma: 0.0,
            smooth_sigma: 0.0,
            seed: 1,
        };
        let img = render_image(&mask, &params).unwrap();
        for i in 0..mask.voxels() {
            let want = if mask.u8_data()[i] != 0 { 0.9 } else { 0.1 };
            assert_eq!(img.f32_data()[i], want);
        }
    }

    #[test]
    fn render_same_seed_is_bitwise_identical() {
        let spec = TubeSpec::line([5.0, 5.0, 2.0], [5.0, 5.0, 12.0], 1.5, 0.9).unwrap();
        let (mask, _) = rasterize_tube(&spec, [11, 11, 15]).unwrap();
        let params = RenderParams { seed: 99, ..Default::default() };
        let a = render_image(&mask, &params).unwrap();
        let b = render_image(&mask, &params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn render_noise_std_matches_spec() {
        // >= 1e5 background voxels with noise well away from the clamp.
        let dims = [50, 50, 50];
        let mask = Volume::zeros(dims, [1.0; 3], VolumeKind::ScalarU8);
        let clean = RenderParams {
            intensity: 0.9,
            background: 0.4,
            noise_sigma: 0.0,
            smooth_sigma: 0.0,
            seed: 3,
        };
        let noisy = RenderParams { noise_sigma: 0.05, ..clean.clone() };
        let a = render_image(&mask, &clean).unwrap();
        let b = render_image(&mask, &noisy).unwrap();
        let n = mask.voxels();
        let mut sum = 0.0f64;
        let mut sum2 = 0.0f64;
        for i in 0..n {
            let d = (b.f32_data()[i] - a.f32_data()[i]) as f64;
            sum += d;
            sum2 += d * d;
        }
        let mean = sum / n as f64;
        let std = (sum2 / n as f64 - mean * mean).sqrt();
        assert!((std - 0.05).abs() < 0.005, "noise std {std}");
    }

    #[test]
    fn render_rejects_negative_sigma() {
        let mask = Volume::zeros([4, 4, 4], [1.0; 3], VolumeKind::ScalarU8);
        let params = RenderParams { noise_sigma: -0.1, ..Default::default() };
        assert!(render_image(&mask, &params).is_err());
    }

    #[test]
    fn dataset_empty_and_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let params = PhantomParams { dims: [24, 24, 24], ..Default::default() };
        let m = gen_dataset(0, &params, 7, dir.path().join("empty")).unwrap();
        assert_eq!(std::fs::read_to_string(&m).unwrap(), "");

        let m1 = gen_dataset(2, &params, 7, dir.path().join("a")).unwrap();
        let m2 = gen_dataset(2, &params, 7, dir.path().join("b")).unwrap();
        let e1 = read_manifest(&m1).unwrap();
        let e2 = read_manifest(&m2).unwrap();
        assert_eq!(e1.len(), 2);
        for (a, b) in e1.iter().zip(&e2) {
            for (pa, pb) in [(&a.image, &b.image), (&a.mask, &b.mask), (&a.orient, &b.orient)] {
                assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap());
            }
            assert_eq!(a.seed, b.seed);
        }
    }

    #[test]
    fn dataset_component_count_bounded_by_tubes() {
        let dir = tempfile::tempdir().unwrap();
        let params = PhantomParams {
            dims: [40, 40, 40],
            tubes_per_volume: 3,
            ..Default::default()
        };
        let m = gen_dataset(4, &params, 11, dir.path()).unwrap();
        for e in read_manifest(&m).unwrap() {
            let mask = crate::vvol::load_vvol(&e.mask).unwrap();
            let (_, n) = connected_components26(&mask);
            assert!((1..=3).contains(&n), "component count {n}");
        }
    }

    #[test]
    fn samples_have_valid_canonical_orientation() {
        let params = PhantomParams { dims: [32, 32, 32], tubes_per_volume: 2, ..Default::default() };
        for seed in [1u64, 2, 3] {
            let s = generate_sample(&params, seed).unwrap();
            s.orient.validate().unwrap();
            for i in 0..s.mask.voxels() {
                if s.mask.u8_data()[i] != 0 {
                    let v = s.orient.field.vec_at(i);
                    assert_eq!(v, canonicalize(v), "voxel {i} not canonical");
                }
            }
        }
    }
}

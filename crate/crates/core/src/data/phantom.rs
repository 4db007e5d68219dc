//! Synthetic head-scan phantoms: branching tubes and ellipsoidal lesions over a
//! smooth textured background.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{SampleMeta, VolumeSample, BACKGROUND, TUMOR, VESSEL};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    /// `(D, H, W)` voxel counts.
    pub grid_shape: [usize; 3],
    pub n_vessels: usize,
    pub radius_range: (f64, f64),
    /// Scale of the random direction changes along a vessel.
    pub tortuosity: f64,
    pub n_lesions: usize,
    pub lesion_radius_range: (f64, f64),
    pub vessel_intensity_range: (f64, f64),
    pub lesion_intensity_range: (f64, f64),
    pub parenchyma_intensity_range: (f64, f64),
    pub blur_sigma: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            grid_shape: [64, 64, 32],
            n_vessels: 6,
            radius_range: (1.0, 3.0),
            tortuosity: 0.3,
            n_lesions: 1,
            lesion_radius_range: (3.0, 7.0),
            vessel_intensity_range: (160.0, 220.0),
            lesion_intensity_range: (110.0, 150.0),
            parenchyma_intensity_range: (40.0, 90.0),
            blur_sigma: 0.6,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if let Some(n) = self.grid_shape.iter().find(|&&n| n < 16) {
            return bad(format!("grid extents must be ≥ 16, got {n}"));
        }
        if self.n_vessels == 0 && self.n_lesions == 0 {
            return bad("a phantom needs at least one vessel or lesion".into());
        }
        let (rmin, rmax) = self.radius_range;
        if !(rmin >= 1.0 && rmin <= rmax) {
            return bad(format!("radius range ({rmin}, {rmax}) must satisfy 1 ≤ min ≤ max"));
        }
        let (lmin, lmax) = self.lesion_radius_range;
        if !(lmin >= 1.0 && lmin <= lmax) {
            return bad(format!("lesion radius range ({lmin}, {lmax}) must satisfy 1 ≤ min ≤ max"));
        }
        for (name, (lo, hi)) in [
            ("vessel", self.vessel_intensity_range),
            ("lesion", self.lesion_intensity_range),
            ("parenchyma", self.parenchyma_intensity_range),
        ] {
            if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
                return bad(format!("{name} intensity range ({lo}, {hi}) must be non-negative and non-empty"));
            }
        }
        if !(self.tortuosity >= 0.0 && self.tortuosity.is_finite()) {
            return bad(format!("tortuosity must be ≥ 0, got {}", self.tortuosity));
        }
        if !(self.blur_sigma >= 0.0 && self.blur_sigma.is_finite()) {
            return bad(format!("blur sigma must be ≥ 0, got {}", self.blur_sigma));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

type P3 = [f64; 3];

fn sub(a: P3, b: P3) -> P3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: P3, b: P3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalized(a: P3) -> P3 {
    let n = dot(a, a).sqrt().max(1e-12);
    [a[0] / n, a[1] / n, a[2] / n]
}

fn gaussian3(rng: &mut impl Rng) -> P3 {
    [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)]
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

struct Canvas {
    shape: [usize; 3],
    labels: Vec<u8>,
    intensity: Vec<f64>,
}

impl Canvas {
    fn inside(&self, p: P3) -> bool {
        (0..3).all(|a| p[a] >= 0.0 && p[a] <= (self.shape[a] - 1) as f64)
    }

    /// Voxels within a tapered capsule around segment `a → b`.
    fn capsule(&mut self, a: P3, b: P3, ra: f64, rb: f64, label: u8, value: f64) {
        let r = ra.max(rb);
        let ab = sub(b, a);
        let len2 = dot(ab, ab).max(1e-12);
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for ax in 0..3 {
            let m = a[ax].min(b[ax]) - r;
            let n = a[ax].max(b[ax]) + r;
            lo[ax] = m.floor().max(0.0) as usize;
            hi[ax] = (n.ceil().max(0.0) as usize).min(self.shape[ax] - 1);
        }
        for z in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for x in lo[2]..=hi[2] {
                    let p = [z as f64, y as f64, x as f64];
                    let t = (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0);
                    let q = [a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]];
                    let d = sub(p, q);
                    let rad = ra + t * (rb - ra);
                    if dot(d, d) <= rad * rad {
                        let i = (z * self.shape[1] + y) * self.shape[2] + x;
                        self.labels[i] = label;
                        self.intensity[i] = value;
                    }
                }
            }
        }
    }
}

/// Random-walk centerline from `start` heading along `dir` until it leaves
/// the grid or reaches `max_len` voxels of arc length.
fn centerline(canvas: &Canvas, start: P3, dir: P3, tortuosity: f64, max_len: f64, rng: &mut impl Rng) -> Vec<P3> {
    const STEP: f64 = 1.5;
    let mut pts = vec![start];
    let mut p = start;
    let mut d = normalized(dir);
    let mut drift = [0.0; 3];
    let mut len = 0.0;
    while len < max_len {
        let g = gaussian3(rng);
        for a in 0..3 {
            drift[a] = 0.7 * drift[a] + 0.3 * g[a];
        }
        d = normalized([d[0] + tortuosity * drift[0], d[1] + tortuosity * drift[1], d[2] + tortuosity * drift[2]]);
        let next = [p[0] + STEP * d[0], p[1] + STEP * d[1], p[2] + STEP * d[2]];
        if !canvas.inside(next) {
            break;
        }
        pts.push(next);
        p = next;
        len += STEP;
    }
    pts
}

fn draw_tube(canvas: &mut Canvas, pts: &[P3], r0: f64, r1: f64, value: f64) {
    let n = pts.len().saturating_sub(1).max(1) as f64;
    for (i, w) in pts.windows(2).enumerate() {
        let ra = r0 + (r1 - r0) * i as f64 / n;
        let rb = r0 + (r1 - r0) * (i + 1) as f64 / n;
        canvas.capsule(w[0], w[1], ra, rb, VESSEL, value);
    }
}

/// Point on a random face of the grid with an inward direction.
fn boundary_start(shape: [usize; 3], rng: &mut impl Rng) -> (P3, P3) {
    let mut p = [0.0; 3];
    for a in 0..3 {
        p[a] = rng.random_range(0.2..0.8) * (shape[a] - 1) as f64;
    }
    let axis = rng.random_range(0..3);
    p[axis] = if rng.random::<bool>() { 0.0 } else { (shape[axis] - 1) as f64 };
    let center = shape.map(|n| (n - 1) as f64 / 2.0);
    let j = gaussian3(rng);
    let inward = normalized(sub(center, p));
    (p, normalized([inward[0] + 0.5 * j[0], inward[1] + 0.5 * j[1], inward[2] + 0.5 * j[2]]))
}

/// Separable Gaussian filter with clamped borders.
pub(crate) fn gaussian_blur(v: &mut [f64], shape: [usize; 3], sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    let k: Vec<f64> = k.iter().map(|x| x / s).collect();
    let strides = [shape[1] * shape[2], shape[2], 1];
    let mut line = Vec::new();
    for axis in 0..3 {
        let n = shape[axis];
        let others: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
        for i in 0..shape[others[0]] {
            for j in 0..shape[others[1]] {
                let base = i * strides[others[0]] + j * strides[others[1]];
                line.clear();
                line.extend((0..n).map(|t| v[base + t * strides[axis]]));
                for t in 0..n {
                    let mut acc = 0.0;
                    for (o, &w) in k.iter().enumerate() {
                        let idx = (t as isize + o as isize - r).clamp(0, n as isize - 1) as usize;
                        acc += w * line[idx];
                    }
                    v[base + t * strides[axis]] = acc;
                }
            }
        }
    }
}

/// Renders one phantom; a pure function of the spec.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<VolumeSample> {
    spec.validate()?;
    let shape = spec.grid_shape;
    let n: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // smooth background texture spanning the parenchyma range
    let mut texture: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    gaussian_blur(&mut texture, shape, 2.0);
    let (tmin, tmax) = texture.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let (plo, phi) = spec.parenchyma_intensity_range;
    let span = (tmax - tmin).max(1e-12);
    let texture: Vec<f64> = texture.iter().map(|v| plo + (phi - plo) * (v - tmin) / span).collect();

    let mut canvas = Canvas { shape, labels: vec![BACKGROUND; n], intensity: texture.clone() };

    for _ in 0..spec.n_lesions {
        let radii: P3 = std::array::from_fn(|_| uniform(&mut rng, spec.lesion_radius_range));
        let c: P3 = std::array::from_fn(|a| {
            let m = radii[a].min((shape[a] / 2) as f64 - 1.0);
            rng.random_range(m..(shape[a] as f64 - 1.0 - m).max(m + 1e-9))
        });
        let value = uniform(&mut rng, spec.lesion_intensity_range);
        for z in 0..shape[0] {
            for y in 0..shape[1] {
                for x in 0..shape[2] {
                    let p = [z as f64, y as f64, x as f64];
                    let q: f64 = (0..3).map(|a| ((p[a] - c[a]) / radii[a]).powi(2)).sum();
                    if q <= 1.0 {
                        let i = (z * shape[1] + y) * shape[2] + x;
                        canvas.labels[i] = TUMOR;
                        // keep some texture inside the lesion
                        canvas.intensity[i] = value + 0.3 * (texture[i] - (plo + phi) / 2.0);
                    }
                }
            }
        }
    }

    let max_len = 2.0 * shape.iter().copied().max().unwrap_or(16) as f64;
    for _ in 0..spec.n_vessels {
        let (start, dir) = boundary_start(shape, &mut rng);
        let trunk = centerline(&canvas, start, dir, spec.tortuosity, max_len, &mut rng);
        let r0 = uniform(&mut rng, spec.radius_range);
        let r1 = uniform(&mut rng, (spec.radius_range.0, r0));
        let value = uniform(&mut rng, spec.vessel_intensity_range);
        draw_tube(&mut canvas, &trunk, r0, r1, value);
        if trunk.len() >= 8 && rng.random::<f64>() < 0.7 {
            let at = rng.random_range(trunk.len() / 4..3 * trunk.len() / 4);
            let along = normalized(sub(trunk[at + 1], trunk[at]));
            let side = normalized(gaussian3(&mut rng));
            let bdir = normalized([along[0] + side[0], along[1] + side[1], along[2] + side[2]]);
            let local = r0 + (r1 - r0) * at as f64 / trunk.len() as f64;
            let rb = (0.7 * local).max(spec.radius_range.0);
            let branch = centerline(&canvas, trunk[at], bdir, spec.tortuosity, max_len / 2.0, &mut rng);
            draw_tube(&mut canvas, &branch, rb, spec.radius_range.0, value);
        }
    }

    let mut image = canvas.intensity;
    gaussian_blur(&mut image, shape, spec.blur_sigma);
    let meta = SampleMeta { spec_hash: Some(spec.hash()), seed: Some(spec.seed), ..Default::default() };
    VolumeSample::new(shape, image.into_iter().map(|v| v.max(0.0) as f32).collect(), canvas.labels, meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blur_preserves_constants() {
        let mut v = vec![3.5; 16 * 16 * 16];
        gaussian_blur(&mut v, [16, 16, 16], 1.3);
        assert!(v.iter().all(|x| (x - 3.5).abs() < 1e-12));
    }

    #[test]
    fn hash_tracks_every_field() {
        let a = PhantomSpec::default();
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), a.clone().with_seed(1).hash());
    }
}

//! Synthetic head-like volumes with a known age dependence.
//!
//! An anatomical phantom is an off-centre ellipsoid whose outer shell
//! (intensity [`SHELL_VALUE`]) thins with age, whose interior carries a
//! smooth texture that grows stronger with age, and whose off-centre cavity
//! widens with age. The cavity sits to one side, so the three planes see
//! different structure. Background stays exactly zero.
//!
//! A variance-only phantom keeps the geometry fixed and adds an age-scaled
//! texture made of whole cosine periods along every axis. Each line of
//! voxels sums that texture to zero, so mean projections carry no age
//! signal while standard-deviation projections do.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Volume3D;

pub const AGE_MIN: f32 = 44.0;
pub const AGE_MAX: f32 = 82.0;
pub const SHELL_VALUE: f32 = 0.8;
pub const INTERIOR_VALUE: f32 = 0.3;
/// Head radii as fractions of the grid size along x, y and z.
pub const HEAD_RADII: [f64; 3] = [0.40, 0.34, 0.38];
/// Shell thickness, in units of the normalised radius, at the youngest and
/// oldest age.
pub const SHELL_THICKNESS: [f64; 2] = [0.24, 0.10];
/// Cavity centre offset and base radii, as fractions of the grid size.
pub const CAVITY_OFFSET: [f64; 3] = [0.12, 0.05, 0.0];
pub const CAVITY_RADII: [f64; 3] = [0.08, 0.14, 0.10];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    #[default]
    Anatomical,
    VarianceOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomParams {
    pub dims: [usize; 3],
    /// Standard deviation of additive Gaussian noise.
    pub noise: f32,
    pub kind: PhantomKind,
    /// Random per-subject shift and size change, unrelated to age.
    pub jitter: bool,
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            dims: [64, 64, 52],
            noise: 0.03,
            kind: PhantomKind::Anatomical,
            jitter: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub volume: Volume3D,
    pub age: f32,
    pub seed: u64,
}

/// Position of `age` within the supported range, in `[0, 1]`.
pub fn age_fraction(age: f32) -> f64 {
    ((age - AGE_MIN) / (AGE_MAX - AGE_MIN)) as f64
}

pub fn shell_thickness(age: f32) -> f64 {
    let u = age_fraction(age);
    SHELL_THICKNESS[0] + (SHELL_THICKNESS[1] - SHELL_THICKNESS[0]) * u
}

/// Texture of whole cosine periods along every axis, in `[-1, 1]`.
struct Texture {
    freq: [[f64; 3]; 2],
    phase: [[f64; 3]; 2],
}

impl Texture {
    fn sample(dims: [usize; 3], rng: &mut impl Rng) -> Self {
        let mut freq = [[0.0; 3]; 2];
        let mut phase = [[0.0; 3]; 2];
        for t in 0..2 {
            for a in 0..3 {
                // whole periods, and at least 3 samples per period
                let max_k = (dims[a] / 3).clamp(1, 5);
                let k = rng.random_range(1..=max_k);
                freq[t][a] = TAU * k as f64 / dims[a] as f64;
                phase[t][a] = rng.random_range(0.0..TAU);
            }
        }
        Self { freq, phase }
    }

    fn at(&self, p: [f64; 3]) -> f64 {
        (0..2)
            .map(|t| (0..3).map(|a| (self.freq[t][a] * p[a] + self.phase[t][a]).cos()).product::<f64>())
            .sum::<f64>()
            / 2.0
    }
}

pub fn generate_phantom(age: f32, seed: u64, params: &PhantomParams) -> Result<Phantom> {
    if !(AGE_MIN..=AGE_MAX).contains(&age) {
        return Err(Error::AgeOutOfRange(age));
    }
    let dims = params.dims;
    if dims.iter().any(|&d| d < 4) {
        return Err(Error::Dimension(format!("phantom grid {dims:?} is too small")));
    }
    if !(params.noise >= 0.0 && params.noise.is_finite()) {
        return Err(Error::Parameter(format!("noise {} must be non-negative", params.noise)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (shift, size) = if params.jitter {
        let s: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.03..0.03));
        (s, rng.random_range(0.95..1.05))
    } else {
        ([0.0; 3], 1.0)
    };
    let texture = Texture::sample(dims, &mut rng);
    let d: [f64; 3] = dims.map(|v| v as f64);
    let centre: [f64; 3] = std::array::from_fn(|a| (d[a] - 1.0) / 2.0 + shift[a] * d[a]);
    let radii: [f64; 3] = std::array::from_fn(|a| HEAD_RADII[a] * d[a] * size);

    let (u, thickness, amplitude) = match params.kind {
        PhantomKind::Anatomical => (age_fraction(age), shell_thickness(age), 0.04 + 0.20 * age_fraction(age)),
        PhantomKind::VarianceOnly => (0.5, shell_thickness((AGE_MIN + AGE_MAX) / 2.0), 0.20 * age_fraction(age)),
    };
    let cavity_c: [f64; 3] = std::array::from_fn(|a| centre[a] + CAVITY_OFFSET[a] * d[a]);
    let cavity_r: [f64; 3] = std::array::from_fn(|a| CAVITY_RADII[a] * d[a] * (0.6 + 0.8 * u));
    let noise = Normal::new(0.0, params.noise as f64).expect("validated noise");

    let n = dims[0] * dims[1] * dims[2];
    let mut data = Vec::with_capacity(n);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = [x as f64, y as f64, z as f64];
                let rho = norm_radius(p, centre, radii);
                let in_cavity = norm_radius(p, cavity_c, cavity_r) < 1.0;
                let base = if rho > 1.0 {
                    0.0
                } else if rho >= 1.0 - thickness {
                    SHELL_VALUE as f64
                } else if in_cavity {
                    0.0
                } else {
                    match params.kind {
                        PhantomKind::Anatomical => INTERIOR_VALUE as f64 + amplitude * texture.at(p),
                        PhantomKind::VarianceOnly => INTERIOR_VALUE as f64,
                    }
                };
                let v = match params.kind {
                    PhantomKind::Anatomical if rho <= 1.0 && params.noise > 0.0 => {
                        (base + noise.sample(&mut rng)).clamp(0.0, 1.0)
                    }
                    PhantomKind::Anatomical => base,
                    PhantomKind::VarianceOnly => {
                        let mut v = base + amplitude * texture.at(p);
                        if params.noise > 0.0 {
                            v += noise.sample(&mut rng);
                        }
                        v
                    }
                };
                data.push(v as f32);
            }
        }
    }
    Ok(Phantom {
        volume: Volume3D::new(dims, data)?,
        age,
        seed,
    })
}

fn norm_radius(p: [f64; 3], c: [f64; 3], r: [f64; 3]) -> f64 {
    (0..3).map(|a| ((p[a] - c[a]) / r[a]).powi(2)).sum::<f64>().sqrt()
}

/// Relative bin weights over `[44, 82]`, split into equal-width bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgeHistogram {
    pub weights: Vec<f64>,
}

impl AgeHistogram {
    pub fn uniform(bins: usize) -> Self {
        Self {
            weights: vec![1.0; bins.max(1)],
        }
    }

    /// Mass concentrated at younger ages with a long tail towards old age.
    pub fn right_skewed(bins: usize) -> Self {
        let bins = bins.max(1);
        let weights = (0..bins)
            .map(|i| {
                let t = (i as f64 + 0.5) / bins as f64;
                t.powf(1.5) * (-6.0 * t).exp() + 0.01
            })
            .collect();
        Self { weights }
    }

    pub fn bins(&self) -> usize {
        self.weights.len()
    }

    pub fn bin_edges(&self, i: usize) -> (f32, f32) {
        let w = (AGE_MAX - AGE_MIN) / self.bins() as f32;
        (AGE_MIN + w * i as f32, AGE_MIN + w * (i + 1) as f32)
    }

    /// Integer counts per bin summing to `n`, each within one of its exact
    /// share. Rounding the cumulative share spreads the leftover subjects
    /// evenly over the bins instead of piling them into the first ones.
    pub fn counts(&self, n: usize) -> Result<Vec<usize>> {
        let total: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) || total <= 0.0 {
            return Err(Error::Parameter("histogram weights must be non-negative with a positive sum".into()));
        }
        let mut cum = 0.0;
        let mut prev = 0usize;
        let mut counts = Vec::with_capacity(self.bins());
        for (i, w) in self.weights.iter().enumerate() {
            cum += w;
            let edge = if i + 1 == self.bins() {
                n
            } else {
                ((cum / total * n as f64 + 0.5).floor() as usize).min(n)
            };
            counts.push(edge - prev);
            prev = edge;
        }
        Ok(counts)
    }

    /// `n` ages whose histogram follows the weights, in shuffled order.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<f32>> {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ages = Vec::with_capacity(n);
        for (i, c) in self.counts(n)?.into_iter().enumerate() {
            let (lo, hi) = self.bin_edges(i);
            for _ in 0..c {
                ages.push(rng.random_range(lo..hi).clamp(AGE_MIN, AGE_MAX));
            }
        }
        ages.shuffle(&mut rng);
        Ok(ages)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> PhantomParams {
        PhantomParams {
            dims: [32, 28, 24],
            noise: 0.0,
            jitter: false,
            ..PhantomParams::default()
        }
    }

    #[test]
    fn deterministic_and_age_checked() {
        let p = PhantomParams {
            dims: [20, 20, 16],
            ..PhantomParams::default()
        };
        assert_eq!(generate_phantom(60.0, 3, &p).unwrap(), generate_phantom(60.0, 3, &p).unwrap());
        assert_ne!(generate_phantom(60.0, 3, &p).unwrap(), generate_phantom(60.0, 4, &p).unwrap());
        assert!(matches!(generate_phantom(43.5, 1, &p), Err(Error::AgeOutOfRange(_))));
        assert!(matches!(generate_phantom(90.0, 1, &p), Err(Error::AgeOutOfRange(_))));
    }

    #[test]
    fn values_stay_in_unit_range() {
        let ph = generate_phantom(70.0, 9, &PhantomParams { dims: [24, 24, 20], noise: 0.2, ..Default::default() }).unwrap();
        assert!(ph.volume.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(ph.volume.data()[0], 0.0);
    }

    #[test]
    fn histogram_counts_exact() {
        let h = AgeHistogram::uniform(38);
        let c = h.counts(500).unwrap();
        assert_eq!(c.iter().sum::<usize>(), 500);
        assert!(c.iter().all(|&k| k == 13 || k == 14));
        let ages = h.sample(500, 1).unwrap();
        assert!(ages.iter().all(|a| (AGE_MIN..=AGE_MAX).contains(a)));
        // few subjects still span the whole range
        let few = h.sample(10, 1).unwrap();
        let (lo, hi) = few.iter().fold((f32::MAX, f32::MIN), |(l, u), &a| (l.min(a), u.max(a)));
        assert!(lo < 50.0 && hi > 76.0, "{few:?}");
    }

    #[test]
    fn shell_thins_with_age() {
        assert!(shell_thickness(44.0) > shell_thickness(82.0));
        let young = generate_phantom(44.0, 1, &quiet()).unwrap();
        let old = generate_phantom(82.0, 1, &quiet()).unwrap();
        let count = |v: &Volume3D| v.data().iter().filter(|&&x| x == SHELL_VALUE).count();
        assert!(count(&young.volume) > count(&old.volume));
    }
}

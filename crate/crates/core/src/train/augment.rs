//! Random affine and elastic perturbations of projection images.
//!
//! Output pixel `q` reads the input at `A^-1 (q - c - d(q)) + c`, where `c` is
//! the image centre, `A = scale * shear * rotation` acts on `(x = col, y = row)`
//! and `d` is a smooth displacement field. Sampling is bilinear and positions
//! outside the image read as zero.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::AugmentParams;
use super::dataset::{Dataset, Sample};
use crate::error::Result;
use crate::projection::{Channel, Image2D, Plane, ProjectionSet};

/// Control-point displacements of a `grid x grid` lattice spanning the image.
#[derive(Clone, Debug, PartialEq)]
pub struct ElasticField {
    pub grid: usize,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
}

impl ElasticField {
    /// Displacement at pixel `(r, c)` of an `h x w` image.
    fn at(&self, r: usize, c: usize, h: usize, w: usize) -> (f64, f64) {
        let g = self.grid;
        let gy = if h > 1 { r as f64 * (g - 1) as f64 / (h - 1) as f64 } else { 0.0 };
        let gx = if w > 1 { c as f64 * (g - 1) as f64 / (w - 1) as f64 } else { 0.0 };
        let (y0, x0) = ((gy.floor() as usize).min(g - 2), (gx.floor() as usize).min(g - 2));
        let (fy, fx) = (gy - y0 as f64, gx - x0 as f64);
        let lerp = |v: &[f64]| {
            let a = v[y0 * g + x0] * (1.0 - fx) + v[y0 * g + x0 + 1] * fx;
            let b = v[(y0 + 1) * g + x0] * (1.0 - fx) + v[(y0 + 1) * g + x0 + 1] * fx;
            a * (1.0 - fy) + b * fy
        };
        (lerp(&self.dx), lerp(&self.dy))
    }
}

/// One sampled perturbation.
#[derive(Clone, Debug, PartialEq)]
pub struct Transform {
    pub scale: f64,
    pub rotation_deg: f64,
    pub shear_deg: f64,
    pub elastic: Option<ElasticField>,
}

impl Transform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation_deg: 0.0,
            shear_deg: 0.0,
            elastic: None,
        }
    }

    pub fn rotation(deg: f64) -> Self {
        Self {
            rotation_deg: deg,
            ..Self::identity()
        }
    }

    pub fn sample(params: &AugmentParams, rng: &mut impl Rng) -> Self {
        let mut uniform = |r: [f64; 2]| if r[0] < r[1] { rng.random_range(r[0]..=r[1]) } else { r[0] };
        let scale = uniform(params.scale);
        let rotation_deg = uniform(params.rotation_deg);
        let shear_deg = uniform(params.shear_deg);
        let elastic = if params.elastic_sigma > 0.0 {
            let n = params.elastic_grid * params.elastic_grid;
            let normal = Normal::new(0.0, params.elastic_sigma).expect("validated sigma");
            let dx = (0..n).map(|_| normal.sample(rng)).collect();
            let dy = (0..n).map(|_| normal.sample(rng)).collect();
            Some(ElasticField {
                grid: params.elastic_grid,
                dx,
                dy,
            })
        } else {
            None
        };
        Self {
            scale,
            rotation_deg,
            shear_deg,
            elastic,
        }
    }

    /// Forward linear part on `(x, y)`.
    pub fn matrix(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let t = self.shear_deg.to_radians().tan();
        let k = self.scale;
        // k * [[1, t], [0, 1]] * [[c, -s], [s, c]]
        [[k * (c + t * s), k * (t * c - s)], [k * s, k * c]]
    }

    /// Inverse of [`Transform::matrix`], built factor by factor.
    fn inverse_matrix(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let t = self.shear_deg.to_radians().tan();
        let k = 1.0 / self.scale;
        // (1/k) * [[c, s], [-s, c]] * [[1, -t], [0, 1]]
        [[k * c, k * (s - c * t)], [-k * s, k * (s * t + c)]]
    }
}

fn bilinear(img: &Image2D, y: f64, x: f64) -> f64 {
    let (h, w) = img.dims();
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let mut acc = 0.0;
    for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
        if wy == 0.0 {
            continue;
        }
        let r = y0 as i64 + dy;
        if r < 0 || r >= h as i64 {
            continue;
        }
        for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
            if wx == 0.0 {
                continue;
            }
            let c = x0 as i64 + dx;
            if c < 0 || c >= w as i64 {
                continue;
            }
            acc += img.get(r as usize, c as usize) as f64 * wy * wx;
        }
    }
    acc
}

pub fn augment_image(img: &Image2D, t: &Transform) -> Image2D {
    let (h, w) = img.dims();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let inv = t.inverse_matrix();
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let (mut u, mut v) = (c as f64 - cx, r as f64 - cy);
            if let Some(field) = &t.elastic {
                let (dx, dy) = field.at(r, c, h, w);
                u -= dx;
                v -= dy;
            }
            let sx = inv[0][0] * u + inv[0][1] * v + cx;
            let sy = inv[1][0] * u + inv[1][1] * v + cy;
            out.push(bilinear(img, sy, sx) as f32);
        }
    }
    Image2D::new(h, w, out).expect("finite bilinear output")
}

/// Perturbs a subject: one transform per plane, shared by all of that
/// plane's channels.
pub fn augment_set(set: &ProjectionSet, params: &AugmentParams, rng: &mut impl Rng) -> Result<ProjectionSet> {
    let mut channels: Vec<Channel> = Vec::with_capacity(set.len());
    for plane in Plane::ALL {
        let in_plane: Vec<&Channel> = set.channels().iter().filter(|c| c.id.plane == plane).collect();
        if in_plane.is_empty() {
            continue;
        }
        let t = Transform::sample(params, rng);
        for ch in in_plane {
            channels.push(Channel {
                id: ch.id,
                image: augment_image(&ch.image, &t),
            });
        }
    }
    ProjectionSet::new(set.subject_id.clone(), channels)
}

/// Originals followed by `copies` perturbed versions of every sample.
/// The input is left untouched.
pub fn build_augmented_dataset(
    ds: &Dataset,
    params: &AugmentParams,
    copies: usize,
    rng: &mut impl Rng,
) -> Result<Dataset> {
    let mut samples = ds.samples().to_vec();
    samples.reserve(copies * ds.len());
    for k in 1..=copies {
        for s in ds.samples() {
            samples.push(Sample {
                id: format!("{}+aug{k}", s.id),
                age: s.age,
                set: augment_set(&s.set, params, rng)?,
            });
        }
    }
    Dataset::new(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(h: usize, w: usize) -> Image2D {
        Image2D::new(h, w, (0..h * w).map(|i| (i as f32 * 0.731).sin()).collect()).unwrap()
    }

    #[test]
    fn identity_is_bit_exact() {
        for (h, w) in [(1, 1), (5, 8), (64, 52)] {
            let img = ramp(h, w);
            assert_eq!(augment_image(&img, &Transform::identity()), img);
        }
    }

    #[test]
    fn zero_elastic_field_is_identity() {
        let img = ramp(9, 7);
        let t = Transform {
            elastic: Some(ElasticField {
                grid: 3,
                dx: vec![0.0; 9],
                dy: vec![0.0; 9],
            }),
            ..Transform::identity()
        };
        assert_eq!(augment_image(&img, &t), img);
    }

    #[test]
    fn inverse_matrix_inverts() {
        let t = Transform {
            scale: 1.03,
            rotation_deg: -4.0,
            shear_deg: 2.5,
            elastic: None,
        };
        let (a, b) = (t.matrix(), t.inverse_matrix());
        for i in 0..2 {
            for j in 0..2 {
                let p: f64 = (0..2).map(|k| a[i][k] * b[k][j]).sum();
                assert!((p - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn integer_translation_by_elastic_field() {
        let img = ramp(6, 6);
        let t = Transform {
            elastic: Some(ElasticField {
                grid: 2,
                dx: vec![1.0; 4],
                dy: vec![0.0; 4],
            }),
            ..Transform::identity()
        };
        let out = augment_image(&img, &t);
        for r in 0..6 {
            assert_eq!(out.get(r, 0), 0.0);
            for c in 1..6 {
                assert_eq!(out.get(r, c), img.get(r, c - 1));
            }
        }
    }

    #[test]
    fn seeded_sampling_is_deterministic() {
        let p = AugmentParams::default();
        let a = Transform::sample(&p, &mut ChaCha8Rng::seed_from_u64(4));
        let b = Transform::sample(&p, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
        assert!((0.95..=1.05).contains(&a.scale));
        assert!(a.rotation_deg.abs() <= 5.0 && a.shear_deg.abs() <= 3.0);
        assert_eq!(a.elastic.as_ref().unwrap().dx.len(), 64);
    }
}

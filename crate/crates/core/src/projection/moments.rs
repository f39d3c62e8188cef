//! Single-pass per-pixel moments across the slices of one axis.
//!
//! Updates follow the Welford/Terriberry recurrences for central moment sums
//! M2..M4; partitions of the slice range combine with the pairwise merge
//! formulas, so any fixed split gives the same result up to rounding.

use super::{Image2D, Plane, PlaneGeometry};
use crate::error::{Error, Result};
use crate::volume::Volume3D;

/// Per-pixel running count, mean and central moment sums.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentAccumulator {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    m3: Vec<f64>,
    m4: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentImages {
    pub mean: Image2D,
    pub std: Image2D,
    pub skew: Image2D,
    pub kurt: Image2D,
}

#[inline(always)]
fn update2(n: f64, x: f64, mean: &mut f64, m2: &mut f64) {
    let delta = x - *mean;
    let delta_n = delta / n;
    *mean += delta_n;
    *m2 += delta * delta_n * (n - 1.0);
}

#[inline(always)]
fn update4(n: f64, x: f64, mean: &mut f64, m2: &mut f64, m3: &mut f64, m4: &mut f64) {
    let n1 = n - 1.0;
    let delta = x - *mean;
    let delta_n = delta / n;
    let delta_n2 = delta_n * delta_n;
    let term1 = delta * delta_n * n1;
    *mean += delta_n;
    *m4 += term1 * delta_n2 * (n * n - 3.0 * n + 3.0) + 6.0 * delta_n2 * *m2 - 4.0 * delta_n * *m3;
    *m3 += term1 * delta_n * (n - 2.0) - 3.0 * delta_n * *m2;
    *m2 += term1;
}

impl MomentAccumulator {
    pub fn new(pixels: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; pixels],
            m2: vec![0.0; pixels],
            m3: vec![0.0; pixels],
            m4: vec![0.0; pixels],
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn pixels(&self) -> usize {
        self.mean.len()
    }

    pub fn m2(&self) -> &[f64] {
        &self.m2
    }

    /// Adds one slice (one value per pixel).
    pub fn push_slice(&mut self, slice: &[f32]) -> Result<()> {
        if slice.len() != self.pixels() {
            return Err(Error::Shape(format!(
                "slice of {} pixels pushed into accumulator of {}",
                slice.len(),
                self.pixels()
            )));
        }
        self.count += 1;
        let n = self.count as f64;
        for (i, &x) in slice.iter().enumerate() {
            update4(n, x as f64, &mut self.mean[i], &mut self.m2[i], &mut self.m3[i], &mut self.m4[i]);
        }
        Ok(())
    }

    /// Combines the statistics of two disjoint sets of slices.
    pub fn merge(&mut self, other: &MomentAccumulator) -> Result<()> {
        if other.pixels() != self.pixels() {
            return Err(Error::Shape(format!(
                "cannot merge accumulators of {} and {} pixels",
                self.pixels(),
                other.pixels()
            )));
        }
        if other.count == 0 {
            return Ok(());
        }
        if self.count == 0 {
            *self = other.clone();
            return Ok(());
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        for i in 0..self.pixels() {
            let (ma, m2a, m3a, m4a) = (self.mean[i], self.m2[i], self.m3[i], self.m4[i]);
            let (mb, m2b, m3b, m4b) = (other.mean[i], other.m2[i], other.m3[i], other.m4[i]);
            let d = mb - ma;
            let d2 = d * d;
            self.mean[i] = ma + d * nb / n;
            self.m2[i] = m2a + m2b + d2 * na * nb / n;
            self.m3[i] = m3a + m3b + d2 * d * na * nb * (na - nb) / (n * n)
                + 3.0 * d * (na * m2b - nb * m2a) / n;
            self.m4[i] = m4a
                + m4b
                + d2 * d2 * na * nb * (na * na - na * nb + nb * nb) / (n * n * n)
                + 6.0 * d2 * (na * na * m2b + nb * nb * m2a) / (n * n)
                + 4.0 * d * (na * m3b - nb * m3a) / n;
        }
        self.count += other.count;
        Ok(())
    }

    /// Population moments. Pixels with zero spread (or fewer than two slices)
    /// get skew = kurt = 0.
    pub fn finalize(&self, h: usize, w: usize) -> Result<MomentImages> {
        if self.count == 0 {
            return Err(Error::EmptyAxis);
        }
        if h * w != self.pixels() {
            return Err(Error::Shape(format!("{h}x{w} image from {} pixels", self.pixels())));
        }
        let n = self.count as f64;
        let p = self.pixels();
        let (mut mean, mut std, mut skew, mut kurt) =
            (Vec::with_capacity(p), Vec::with_capacity(p), Vec::with_capacity(p), Vec::with_capacity(p));
        for i in 0..p {
            let var = self.m2[i] / n;
            mean.push(self.mean[i] as f32);
            std.push(var.max(0.0).sqrt() as f32);
            if self.count < 2 || is_degenerate(var, self.mean[i]) {
                skew.push(0.0);
                kurt.push(0.0);
            } else {
                skew.push((self.m3[i] / n / var.powf(1.5)) as f32);
                kurt.push((self.m4[i] / n / (var * var) - 3.0) as f32);
            }
        }
        Ok(MomentImages {
            mean: Image2D::new(h, w, mean)?,
            std: Image2D::new(h, w, std)?,
            skew: Image2D::new(h, w, skew)?,
            kurt: Image2D::new(h, w, kurt)?,
        })
    }
}

#[inline]
fn is_degenerate(var: f64, mean: f64) -> bool {
    var <= 1e-20 * mean.abs().max(1.0).powi(2)
}

/// Walks every voxel once in a cache-friendly order, calling
/// `f(slice_count_after_update, pixel, value)`. Each pixel sees its slices in
/// increasing slice order.
#[inline(always)]
fn walk(vol: &Volume3D, plane: Plane, mut f: impl FnMut(f64, usize, f64)) {
    let [nx, ny, nz] = vol.dims();
    let data = vol.data();
    match plane {
        Plane::Sagittal => {
            // slice = x, pixel = (row z, col y)
            for z in 0..nz {
                let block = &data[z * nx * ny..(z + 1) * nx * ny];
                for x in 0..nx {
                    let n = (x + 1) as f64;
                    for y in 0..ny {
                        f(n, z * ny + y, block[y * nx + x] as f64);
                    }
                }
            }
        }
        Plane::Coronal => {
            // slice = y, pixel = (row z, col x)
            for z in 0..nz {
                for y in 0..ny {
                    let n = (y + 1) as f64;
                    let row = &data[nx * (y + ny * z)..nx * (y + ny * z) + nx];
                    for (x, &v) in row.iter().enumerate() {
                        f(n, z * nx + x, v as f64);
                    }
                }
            }
        }
        Plane::Axial => {
            // slice = z, pixel = (row y, col x)
            for z in 0..nz {
                let n = (z + 1) as f64;
                for (i, &v) in data[z * nx * ny..(z + 1) * nx * ny].iter().enumerate() {
                    f(n, i, v as f64);
                }
            }
        }
    }
}

/// Accumulates all slices of `vol` along `plane`.
pub fn accumulate(vol: &Volume3D, plane: Plane) -> MomentAccumulator {
    let geo = PlaneGeometry::of(vol.dims(), plane);
    let mut acc = MomentAccumulator::new(geo.pixels());
    {
        let MomentAccumulator { mean, m2, m3, m4, .. } = &mut acc;
        walk(vol, plane, |n, i, x| update4(n, x, &mut mean[i], &mut m2[i], &mut m3[i], &mut m4[i]));
    }
    acc.count = geo.slices as u64;
    acc
}

/// Mean, std, skew and excess kurtosis images across the slices of one axis.
pub fn project_moments(vol: &Volume3D, plane: Plane) -> Result<MomentImages> {
    let geo = PlaneGeometry::of(vol.dims(), plane);
    if geo.slices == 0 {
        return Err(Error::EmptyAxis);
    }
    accumulate(vol, plane).finalize(geo.h, geo.w)
}

/// Same as the slice-range split of [`accumulate`], merged left to right.
/// Results agree with the single pass up to rounding.
pub fn accumulate_partitioned(vol: &Volume3D, plane: Plane, parts: usize) -> Result<MomentAccumulator> {
    let geo = PlaneGeometry::of(vol.dims(), plane);
    let parts = parts.clamp(1, geo.slices.max(1));
    let mut total = MomentAccumulator::new(geo.pixels());
    let mut buf = vec![0.0f32; geo.pixels()];
    for p in 0..parts {
        let lo = p * geo.slices / parts;
        let hi = (p + 1) * geo.slices / parts;
        let mut acc = MomentAccumulator::new(geo.pixels());
        for k in lo..hi {
            geo.gather_slice(vol, k, &mut buf);
            acc.push_slice(&buf)?;
        }
        total.merge(&acc)?;
    }
    Ok(total)
}

/// Mean and std only: a cheaper two-moment pass producing bit-identical
/// mean/std to [`project_moments`].
pub fn project_mean_std(vol: &Volume3D, plane: Plane) -> Result<(Image2D, Image2D)> {
    let geo = PlaneGeometry::of(vol.dims(), plane);
    if geo.slices == 0 {
        return Err(Error::EmptyAxis);
    }
    let mut mean = vec![0.0f64; geo.pixels()];
    let mut m2 = vec![0.0f64; geo.pixels()];
    walk(vol, plane, |n, i, x| update2(n, x, &mut mean[i], &mut m2[i]));
    let n = geo.slices as f64;
    let std = m2.iter().map(|&s| (s / n).max(0.0).sqrt() as f32).collect();
    let mean = mean.into_iter().map(|m| m as f32).collect();
    Ok((Image2D::new(geo.h, geo.w, mean)?, Image2D::new(geo.h, geo.w, std)?))
}

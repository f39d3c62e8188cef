//! Principal "eigen slices" along one axis.
//!
//! Slices are observations. The decomposition runs on the n x n slice Gram
//! matrix of the mean-centred slices (n = slice count), which is far smaller
//! than the pixel covariance.

use super::{Image2D, Plane, PlaneGeometry};
use crate::error::{Error, Result};
use crate::volume::Volume3D;

#[derive(Clone, Debug, PartialEq)]
pub struct EigenSlices {
    pub images: Vec<Image2D>,
    /// Fraction of total variance per component, non-increasing.
    pub explained_variance: Vec<f64>,
    /// Eigenvalues of the centred Gram matrix, non-increasing.
    pub eigenvalues: Vec<f64>,
}

/// Eigen-decomposition of a symmetric row-major matrix by cyclic Jacobi
/// rotations. Returns eigenvalues sorted non-increasing and the matching
/// unit eigenvectors (one `Vec` per eigenvalue).
pub fn symmetric_eigen(n: usize, matrix: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    assert_eq!(matrix.len(), n * n);
    let mut a = matrix.to_vec();
    let mut v = vec![0.0f64; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale || scale == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = order
        .iter()
        .map(|&i| (0..n).map(|k| v[k * n + i]).collect())
        .collect();
    (values, vectors)
}

/// Top-`k` principal slices along `plane`, unit norm, sign chosen so the
/// largest-magnitude pixel is positive. Components with no variance are
/// all-zero images with explained variance 0.
pub fn eigen_slices(vol: &Volume3D, plane: Plane, k: usize) -> Result<EigenSlices> {
    let geo = PlaneGeometry::of(vol.dims(), plane);
    let n = geo.slices;
    if k == 0 || k > n {
        return Err(Error::Parameter(format!(
            "eigen slice count {k} outside 1..={n} for the {plane} axis"
        )));
    }
    let p = geo.pixels();
    let mut rows = vec![0.0f64; n * p];
    let mut buf = vec![0.0f32; p];
    for s in 0..n {
        geo.gather_slice(vol, s, &mut buf);
        for (dst, &v) in rows[s * p..(s + 1) * p].iter_mut().zip(&buf) {
            *dst = v as f64;
        }
    }
    let mut mean = vec![0.0f64; p];
    for s in 0..n {
        for (m, &x) in mean.iter_mut().zip(&rows[s * p..(s + 1) * p]) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    for s in 0..n {
        for (x, m) in rows[s * p..(s + 1) * p].iter_mut().zip(&mean) {
            *x -= m;
        }
    }

    let mut gram = vec![0.0f64; n * n];
    // gram = rows * rows^T
    unsafe {
        matrixmultiply::dgemm(
            n, p, n, 1.0,
            rows.as_ptr(), p as isize, 1,
            rows.as_ptr(), 1, p as isize,
            0.0,
            gram.as_mut_ptr(), n as isize, 1,
        );
    }
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (gram[i * n + j] + gram[j * n + i]);
            gram[i * n + j] = s;
            gram[j * n + i] = s;
        }
    }
    let trace: f64 = (0..n).map(|i| gram[i * n + i]).sum();
    let (values, vectors) = symmetric_eigen(n, &gram);
    let lambda_max = values.first().copied().unwrap_or(0.0).max(0.0);

    let mut images = Vec::with_capacity(k);
    let mut explained = Vec::with_capacity(k);
    let mut eigenvalues = Vec::with_capacity(k);
    for i in 0..k {
        let lambda = values[i].max(0.0);
        if trace <= 0.0 || lambda <= 1e-12 * lambda_max || lambda_max == 0.0 {
            images.push(Image2D::zeros(geo.h, geo.w));
            explained.push(0.0);
            eigenvalues.push(0.0);
            continue;
        }
        let u = &vectors[i];
        let mut dir = vec![0.0f64; p];
        for (s, &us) in u.iter().enumerate() {
            for (d, &x) in dir.iter_mut().zip(&rows[s * p..(s + 1) * p]) {
                *d += us * x;
            }
        }
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        let peak = dir
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(0.0);
        let sign = if peak < 0.0 { -1.0 } else { 1.0 };
        let data = dir.iter().map(|&d| (sign * d / norm) as f32).collect();
        images.push(Image2D::new(geo.h, geo.w, data)?);
        explained.push((lambda / trace).clamp(0.0, 1.0));
        eigenvalues.push(lambda);
    }
    Ok(EigenSlices {
        images,
        explained_variance: explained,
        eigenvalues,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_on_diagonalizable_2x2() {
        let (vals, vecs) = symmetric_eigen(2, &[2.0, 1.0, 1.0, 2.0]);
        assert!((vals[0] - 3.0).abs() < 1e-12);
        assert!((vals[1] - 1.0).abs() < 1e-12);
        assert!((vecs[0][0].abs() - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rank_one_volume() {
        let coeff = [0.5f32, 2.0, -1.0, 3.0];
        let pattern = |x: usize, y: usize| 1.0 + (x as f32) * 0.3 - (y as f32) * 0.7;
        let v = Volume3D::from_fn([3, 5, 4], |x, y, z| coeff[z] * pattern(x, y)).unwrap();
        let e = eigen_slices(&v, Plane::Axial, 2).unwrap();
        assert!((e.explained_variance[0] - 1.0).abs() < 1e-9);
        assert_eq!(e.explained_variance[1], 0.0);
        assert!(e.images[1].data().iter().all(|&x| x == 0.0));
        // proportional to the pattern
        let img = &e.images[0];
        let ratio = img.get(0, 0) / pattern(0, 0);
        for y in 0..5 {
            for x in 0..3 {
                assert!((img.get(y, x) - ratio * pattern(x, y)).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn constant_volume_all_zero() {
        let v = Volume3D::new([3, 3, 3], vec![2.0; 27]).unwrap();
        let e = eigen_slices(&v, Plane::Coronal, 3).unwrap();
        assert!(e.explained_variance.iter().all(|&f| f == 0.0));
        assert!(e.images.iter().all(|im| im.data().iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn k_out_of_range() {
        let v = Volume3D::new([3, 3, 2], vec![1.0; 18]).unwrap();
        assert!(matches!(eigen_slices(&v, Plane::Axial, 0), Err(Error::Parameter(_))));
        assert!(matches!(eigen_slices(&v, Plane::Axial, 3), Err(Error::Parameter(_))));
    }
}

//! Brute-force reference computations shared by the integration tests.
//! None of these reuse the library's numeric paths.

#![allow(dead_code, clippy::needless_range_loop)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

/// Naive inverse 2-D DFT (normalized) of a real spectrum; returns the
/// complex spatial raster as (re, im) pairs, row-major.
pub fn naive_idft2(spec: &[f64], w: usize, h: usize) -> Vec<(f64, f64)> {
    let mut out = vec![(0.0, 0.0); w * h];
    for y in 0..h {
        for x in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for v in 0..h {
                for u in 0..w {
                    let ph = 2.0
                        * PI
                        * (u as f64 * x as f64 / w as f64 + v as f64 * y as f64 / h as f64);
                    re += spec[v * w + u] * ph.cos();
                    im += spec[v * w + u] * ph.sin();
                }
            }
            let n = (w * h) as f64;
            out[y * w + x] = (re / n, im / n);
        }
    }
    out
}

/// Magnitude of the circular convolution of a real image with a complex
/// kernel, computed directly in the spatial domain.
pub fn circular_conv_magnitude(
    image: &[f64],
    kernel: &[(f64, f64)],
    w: usize,
    h: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for j in 0..h {
                for i in 0..w {
                    let kx = (x + w - i) % w;
                    let ky = (y + h - j) % h;
                    let (kr, ki) = kernel[ky * w + kx];
                    let v = image[j * w + i];
                    re += v * kr;
                    im += v * ki;
                }
            }
            out[y * w + x] = (re * re + im * im).sqrt();
        }
    }
    out
}

/// Cyclic Jacobi eigensolver for a symmetric matrix. Returns eigenvalues
/// sorted descending with matching unit eigenvectors.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        let scale: f64 = (0..n).map(|i| m[i][i] * m[i][i]).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum().max(0.0) * 2.0 - 1.0;
                let t = if theta == 0.0 {
                    1.0
                } else {
                    t / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j][j].partial_cmp(&m[i][i]).unwrap());
    let values = order.iter().map(|&i| m[i][i]).collect();
    let vectors = order
        .iter()
        .map(|&i| (0..n).map(|k| v[k][i]).collect())
        .collect();
    (values, vectors)
}

/// Population covariance `(1/r) sum (x - m)(x - m)^T`.
pub fn covariance(data: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let r = data.len() as f64;
    let n = data[0].len();
    let mean: Vec<f64> = (0..n)
        .map(|j| data.iter().map(|x| x[j]).sum::<f64>() / r)
        .collect();
    let mut c = vec![vec![0.0; n]; n];
    for x in data {
        for i in 0..n {
            for j in 0..n {
                c[i][j] += (x[i] - mean[i]) * (x[j] - mean[j]);
            }
        }
    }
    for row in &mut c {
        for v in row.iter_mut() {
            *v /= r;
        }
    }
    (mean, c)
}

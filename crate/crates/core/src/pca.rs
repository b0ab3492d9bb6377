//! Principal component analysis with whitening.
//!
//! The covariance uses the population convention `C = (1/r) sum d_j d_j^T`.
//! When the feature dimension exceeds the number of training vectors the
//! spectrum is obtained from the `r x r` Gram matrix of the centred data
//! (snapshot method) and mapped back to data space.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::binio::{self, Digest};
use crate::error::{Error, Result};

const MODEL_MAGIC: &[u8; 4] = b"LGPM";
const MODEL_VERSION: u32 = 1;

/// Components whose eigenvalue does not exceed this fraction of the largest
/// are discarded.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// Which matrix is handed to the symmetric eigensolver.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum EigenRoute {
    /// The smaller of the two.
    #[default]
    Auto,
    /// `r x r` Gram matrix `D D^T / r`.
    Snapshot,
    /// `N x N` covariance `D^T D / r`.
    Covariance,
}

/// Emitted when fewer components than requested survive the rank rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RankWarning {
    pub requested: usize,
    pub attained: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    mean: Vec<f64>,
    eigenvalues: Vec<f64>,
    /// `p x N`, row-major; row `k` is the unit eigenvector `u_k`.
    basis: Vec<f64>,
    /// Provenance of the training features.
    pub source: Digest,
}

/// Centred data matrix, one training vector per row.
fn centred(vectors: &[Vec<f64>]) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let r = vectors.len();
    if r < 2 {
        return Err(Error::InvalidInput(format!(
            "PCA needs at least 2 training vectors, got {r}"
        )));
    }
    let n = vectors[0].len();
    if n == 0 {
        return Err(Error::InvalidInput("training vectors are empty".into()));
    }
    if let Some(v) = vectors.iter().find(|v| v.len() != n) {
        return Err(Error::shape(n, v.len()));
    }
    if vectors.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(
            "training data contains non-finite values".into(),
        ));
    }
    let mut mean = vec![0.0; n];
    for v in vectors {
        for (m, &x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= r as f64;
    }
    let d = DMatrix::from_fn(r, n, |i, j| vectors[i][j] - mean[j]);
    Ok((d, mean))
}

/// Eigenpairs sorted by descending eigenvalue.
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |i, j| {
        eig.eigenvectors[(i, order[j])]
    });
    (values, vectors)
}

/// Number of leading eigenvalues above the floor, capped at `cap`.
fn significant(values: &[f64], cap: usize) -> usize {
    let top = values.first().copied().unwrap_or(0.0);
    if !(top > 0.0) {
        return 0;
    }
    values
        .iter()
        .take(cap)
        .take_while(|&&l| l > EIGEN_FLOOR * top)
        .count()
}

/// Flips `row` so its largest-magnitude entry is positive.
fn fix_sign(row: &mut [f64]) {
    let mut best = 0usize;
    for (i, v) in row.iter().enumerate() {
        if v.abs() > row[best].abs() {
            best = i;
        }
    }
    if row[best] < 0.0 {
        for v in row.iter_mut() {
            *v = -*v;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Two passes of modified Gram-Schmidt over the basis rows.
fn reorthonormalize(basis: &mut [f64], n: usize) {
    let p = basis.len() / n;
    for _ in 0..2 {
        for k in 0..p {
            let (done, rest) = basis.split_at_mut(k * n);
            let row = &mut rest[..n];
            for j in 0..k {
                let prev = &done[j * n..(j + 1) * n];
                let c = dot(row, prev);
                for (x, y) in row.iter_mut().zip(prev) {
                    *x -= c * y;
                }
            }
            let norm = dot(row, row).sqrt();
            for x in row.iter_mut() {
                *x /= norm;
            }
        }
    }
}

/// Trains a whitening PCA model keeping up to `n_components` components.
pub fn train(vectors: &[Vec<f64>], n_components: usize) -> Result<(PcaModel, Option<RankWarning>)> {
    train_with_route(vectors, n_components, EigenRoute::Auto)
}

pub fn train_with_route(
    vectors: &[Vec<f64>],
    n_components: usize,
    route: EigenRoute,
) -> Result<(PcaModel, Option<RankWarning>)> {
    if n_components == 0 {
        return Err(Error::InvalidParameter(
            "n_components must be at least 1".into(),
        ));
    }
    let (d, mean) = centred(vectors)?;
    let (r, n) = d.shape();
    let rank_cap = (r - 1).min(n);
    let route = match route {
        EigenRoute::Auto if n > r => EigenRoute::Snapshot,
        EigenRoute::Auto => EigenRoute::Covariance,
        other => other,
    };

    let (eigenvalues, basis) = match route {
        EigenRoute::Snapshot => {
            let gram = (&d * d.transpose()) / r as f64;
            let (values, vecs) = sorted_eigen(gram);
            let p = significant(&values, rank_cap).min(n_components);
            let mut basis = Vec::with_capacity(p * n);
            for k in 0..p {
                // u_k is proportional to D^T v_k
                let u = d.transpose() * vecs.column(k);
                let norm = u.norm();
                basis.extend(u.iter().map(|x| x / norm));
            }
            (values[..p].to_vec(), basis)
        }
        EigenRoute::Covariance | EigenRoute::Auto => {
            let cov = (d.transpose() * &d) / r as f64;
            let (values, vecs) = sorted_eigen(cov);
            let p = significant(&values, rank_cap).min(n_components);
            let mut basis = Vec::with_capacity(p * n);
            for k in 0..p {
                basis.extend(vecs.column(k).iter().copied());
            }
            (values[..p].to_vec(), basis)
        }
    };
    let p = eigenvalues.len();
    if p == 0 {
        return Err(Error::InvalidInput(
            "training data has zero variance; no principal component survives".into(),
        ));
    }
    let mut basis = basis;
    reorthonormalize(&mut basis, n);
    for row in basis.chunks_mut(n) {
        fix_sign(row);
    }
    let warning = (p < n_components).then(|| {
        log::warn!("requested {n_components} components, only {p} attainable");
        RankWarning {
            requested: n_components,
            attained: p,
        }
    });
    Ok((
        PcaModel {
            mean,
            eigenvalues,
            basis,
            source: Digest::default(),
        },
        warning,
    ))
}

impl PcaModel {
    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Unit eigenvector `u_k`.
    pub fn component(&self, k: usize) -> &[f64] {
        let n = self.n_features();
        &self.basis[k * n..(k + 1) * n]
    }

    pub fn with_source(mut self, source: Digest) -> Self {
        self.source = source;
        self
    }

    /// Keeps only the leading `p` components.
    pub fn truncated(&self, p: usize) -> Result<PcaModel> {
        if p == 0 || p > self.n_components() {
            return Err(Error::InvalidParameter(format!(
                "cannot truncate {} components to {p}",
                self.n_components()
            )));
        }
        Ok(PcaModel {
            mean: self.mean.clone(),
            eigenvalues: self.eigenvalues[..p].to_vec(),
            basis: self.basis[..p * self.n_features()].to_vec(),
            source: self.source,
        })
    }

    /// Whitened projection `y_k = u_k . (x - m) / sqrt(lambda_k)`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_features() {
            return Err(Error::shape(self.n_features(), x.len()));
        }
        let centred: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok(self
            .eigenvalues
            .iter()
            .enumerate()
            .map(|(k, &l)| dot(self.component(k), &centred) / l.sqrt())
            .collect())
    }

    pub fn digest(&self) -> Digest {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("in-memory write");
        Digest::of(&buf)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_header(w, MODEL_MAGIC, MODEL_VERSION)?;
        binio::write_u64(w, self.n_features() as u64)?;
        binio::write_u64(w, self.n_components() as u64)?;
        binio::write_digest(w, &self.source)?;
        binio::write_f64s(w, &self.mean)?;
        binio::write_f64s(w, &self.eigenvalues)?;
        binio::write_f64s(w, &self.basis)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        binio::read_header(r, MODEL_MAGIC, MODEL_VERSION)?;
        let n = binio::read_u64(r)? as usize;
        let p = binio::read_u64(r)? as usize;
        if n == 0 || p == 0 || p > n || n.saturating_mul(p) > 1 << 31 {
            return Err(Error::Format(format!("implausible model shape {p}x{n}")));
        }
        let source = binio::read_digest(r)?;
        let mean = binio::read_f64s(r, n)?;
        let eigenvalues = binio::read_f64s(r, p)?;
        if eigenvalues.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::Format("eigenvalues must be positive".into()));
        }
        let basis = binio::read_f64s(r, n * p)?;
        binio::expect_eof(r)?;
        Ok(PcaModel {
            mean,
            eigenvalues,
            basis,
            source,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(fs::File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn three_points_in_the_plane() {
        let data = vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 2.0]];
        let (model, warn) = train(&data, 2).unwrap();
        assert!(warn.is_none());
        assert_abs_diff_eq!(model.mean()[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(model.mean()[1], 2.0 / 3.0, epsilon = 1e-15);
        // closed-form eigensolve of the 2x2 covariance [[a, b], [b, a]]
        let xs = [-2.0 / 3.0, 4.0 / 3.0, -2.0 / 3.0];
        let ys = [-2.0 / 3.0, -2.0 / 3.0, 4.0 / 3.0];
        let a = xs.iter().map(|x: &f64| x * x).sum::<f64>() / 3.0;
        let b = xs.iter().zip(&ys).map(|(x, y)| x * y).sum::<f64>() / 3.0;
        let (l1, l2) = (a + b.abs(), a - b.abs());
        assert_abs_diff_eq!(model.eigenvalues()[0], l1, epsilon = 1e-12);
        assert_abs_diff_eq!(model.eigenvalues()[1], l2, epsilon = 1e-12);
        assert_abs_diff_eq!(l1, 4.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(l2, 4.0 / 9.0, epsilon = 1e-15);
        // b < 0, so the leading axis is (1, -1)/sqrt(2) up to sign
        let u = model.component(0);
        assert_abs_diff_eq!(u[0].abs(), std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
        assert_abs_diff_eq!(u[0], -u[1], epsilon = 1e-12);
    }

    #[test]
    fn identical_vectors_fail() {
        let data = vec![vec![1.0, 2.0, 3.0]; 4];
        assert!(matches!(train(&data, 2), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn too_few_vectors_fail() {
        assert!(matches!(
            train(&[vec![1.0]], 1),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn rank_cap_reduces_components_with_warning() {
        let data = vec![
            vec![1.0, 0.0, 0.0, 2.0],
            vec![0.0, 1.0, 0.0, -1.0],
            vec![0.0, 0.0, 1.0, 0.5],
        ];
        let (model, warn) = train(&data, 4).unwrap();
        assert_eq!(model.n_components(), 2);
        assert_eq!(
            warn,
            Some(RankWarning {
                requested: 4,
                attained: 2
            })
        );
    }

    #[test]
    fn projection_of_mean_and_axis() {
        let data = vec![
            vec![1.0, 2.0, 0.5],
            vec![-1.0, 0.0, 2.0],
            vec![3.0, 1.0, -1.0],
            vec![0.0, -2.0, 1.0],
        ];
        let (model, _) = train(&data, 3).unwrap();
        let y = model.project(model.mean()).unwrap();
        assert!(y.iter().all(|v| v.abs() < 1e-12));
        let x: Vec<f64> = model
            .mean()
            .iter()
            .zip(model.component(0))
            .map(|(m, u)| m + u * model.eigenvalues()[0].sqrt())
            .collect();
        let y = model.project(&x).unwrap();
        assert_abs_diff_eq!(y[0], 1.0, epsilon = 1e-10);
        for v in &y[1..] {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-10);
        }
        assert!(matches!(model.project(&[1.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn sign_convention_makes_largest_entry_positive() {
        let data: Vec<Vec<f64>> = (0..6)
            .map(|i| {
                let t = i as f64;
                vec![t.sin(), (2.0 * t).cos(), t * 0.3, -(t * t) * 0.1]
            })
            .collect();
        let (model, _) = train(&data, 3).unwrap();
        for k in 0..model.n_components() {
            let u = model.component(k);
            let big = u
                .iter()
                .cloned()
                .fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
            assert!(big > 0.0);
        }
    }

    #[test]
    fn model_file_round_trip() {
        let data = vec![vec![1.0, 2.0], vec![2.0, 1.0], vec![0.0, 0.5]];
        let (model, _) = train(&data, 2).unwrap();
        let model = model.with_source(Digest::of(b"features"));
        let mut buf = Vec::new();
        model.write_to(&mut buf).unwrap();
        assert_eq!(PcaModel::read_from(&mut buf.as_slice()).unwrap(), model);
    }

    #[test]
    fn truncation_keeps_leading_components() {
        let data = vec![
            vec![1.0, 2.0, 0.5],
            vec![-1.0, 0.0, 2.0],
            vec![3.0, 1.0, -1.0],
            vec![0.0, -2.0, 1.0],
        ];
        let (model, _) = train(&data, 3).unwrap();
        let t = model.truncated(2).unwrap();
        assert_eq!(t.n_components(), 2);
        assert_eq!(t.component(1), model.component(1));
        assert!(model.truncated(0).is_err());
    }
}

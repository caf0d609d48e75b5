//! Feature scaling, linear dimensionality reduction and proportional
//! shrinking of an MLP to match the reduced input width.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::DataSplits;
use crate::error::{Error, Result};
use crate::numerics::{gemm, Matrix, RandomSource};

/// Per-feature min-max scaling fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalizer {
    pub fn fit(train: &Matrix) -> Result<Self> {
        if train.rows() == 0 {
            return Err(Error::invalid("cannot fit a normalizer on zero rows"));
        }
        let mut min = train.row(0).to_vec();
        let mut max = min.clone();
        for r in 1..train.rows() {
            for (c, &v) in train.row(r).iter().enumerate() {
                min[c] = min[c].min(v);
                max[c] = max[c].max(v);
            }
        }
        Ok(Self { min, max })
    }

    pub fn width(&self) -> usize {
        self.min.len()
    }

    /// Maps the training range to `[0, 1]`. Values outside it are not
    /// clamped; constant features map to 0.
    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.width() {
            return Err(Error::FeatureWidth {
                expected: self.width(),
                got: x.cols(),
            });
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                let span = self.max[c] - self.min[c];
                *v = if span > 0.0 { (*v - self.min[c]) / span } else { 0.0 };
            }
        }
        Ok(out)
    }
}

/// Fits a normalizer on the training split and applies it to every split.
pub fn normalize(data: &DataSplits) -> Result<(DataSplits, Normalizer)> {
    let norm = Normalizer::fit(&data.train.x)?;
    let out = data.map_features(|x| norm.transform(x))?;
    Ok((out, norm))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReducerKind {
    /// Gaussian entries with variance `1/k`.
    RpGaussScaled,
    /// Standard Gaussian entries.
    RpGaussUnit,
    /// `+1` or `-1` with probability 1/2 each, unscaled.
    RpSign,
    /// `sqrt(3/k) * {+1, 0, -1}` with probabilities `1/6, 2/3, 1/6`.
    RpAchlioptasSparse,
    Pca,
}

impl ReducerKind {
    pub const ALL: [ReducerKind; 5] = [
        ReducerKind::RpGaussScaled,
        ReducerKind::RpGaussUnit,
        ReducerKind::RpSign,
        ReducerKind::RpAchlioptasSparse,
        ReducerKind::Pca,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ReducerKind::RpGaussScaled => "rp_gauss_scaled",
            ReducerKind::RpGaussUnit => "rp_gauss_unit",
            ReducerKind::RpSign => "rp_sign",
            ReducerKind::RpAchlioptasSparse => "rp_achlioptas_sparse",
            ReducerKind::Pca => "pca",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown reducer {s:?}")))
    }

    pub fn is_random_projection(self) -> bool {
        self != ReducerKind::Pca
    }
}

impl std::fmt::Display for ReducerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A fitted linear map from `d` to `k` features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reducer {
    pub kind: ReducerKind,
    pub d: usize,
    pub k: usize,
    /// Per-feature mean subtracted before projecting (PCA only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    /// `d x k` projection; PCA components are its columns.
    pub projection: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionRatio {
    pub d: usize,
    pub k: usize,
}

impl CompressionRatio {
    pub fn new(d: usize, k: usize) -> Result<Self> {
        if k == 0 || k >= d {
            return Err(Error::invalid(format!("compression needs 1 <= k < d, got d={d}, k={k}")));
        }
        Ok(Self { d, k })
    }

    pub fn r(&self) -> f64 {
        self.d as f64 / self.k as f64
    }
}

pub fn fit_reducer(kind: ReducerKind, train: &Matrix, k: usize, rng: &mut RandomSource) -> Result<Reducer> {
    let d = train.cols();
    CompressionRatio::new(d, k)?;
    let projection = match kind {
        ReducerKind::RpGaussScaled => random_matrix(d, k, rng, |r| r.normal(0.0, (1.0 / k as f64).sqrt())),
        ReducerKind::RpGaussUnit => random_matrix(d, k, rng, |r| r.normal(0.0, 1.0)),
        ReducerKind::RpSign => random_matrix(d, k, rng, |r| if r.uniform() < 0.5 { 1.0 } else { -1.0 }),
        ReducerKind::RpAchlioptasSparse => {
            let s = (3.0 / k as f64).sqrt();
            random_matrix(d, k, rng, |r| {
                let u = r.uniform();
                if u < 1.0 / 6.0 {
                    s
                } else if u < 5.0 / 6.0 {
                    0.0
                } else {
                    -s
                }
            })
        }
        ReducerKind::Pca => return fit_pca(train, k),
    };
    Ok(Reducer {
        kind,
        d,
        k,
        mean: None,
        projection,
    })
}

fn random_matrix(d: usize, k: usize, rng: &mut RandomSource, mut f: impl FnMut(&mut RandomSource) -> f64) -> Matrix {
    let data = (0..d * k).map(|_| f(rng)).collect();
    Matrix::from_vec(d, k, data).expect("sized")
}

fn fit_pca(train: &Matrix, k: usize) -> Result<Reducer> {
    let (n, d) = train.shape();
    if n == 0 {
        return Err(Error::invalid("cannot fit PCA on zero rows"));
    }
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, &v) in mean.iter_mut().zip(train.row(r)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut centered = train.clone();
    for r in 0..n {
        for (v, &m) in centered.row_mut(r).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let mut cov = Matrix::zeros(d, d);
    let scale = 1.0 / (n.max(2) - 1) as f64;
    gemm(scale, centered.view().t(), centered.view(), 0.0, cov.view_mut());
    // symmetrize against rounding before the eigen solve
    for i in 0..d {
        for j in (i + 1)..d {
            let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, cov.as_slice()));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut projection = Matrix::zeros(d, k);
    for (c, &src) in order.iter().take(k).enumerate() {
        let v = eig.eigenvectors.column(src);
        let mut pivot = 0;
        for i in 1..d {
            if v[i].abs() > v[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            projection[(i, c)] = sign * v[i];
        }
    }
    Ok(Reducer {
        kind: ReducerKind::Pca,
        d,
        k,
        mean: Some(mean),
        projection,
    })
}

impl Reducer {
    pub fn ratio(&self) -> CompressionRatio {
        CompressionRatio { d: self.d, k: self.k }
    }

    /// `X * P`, after mean removal for PCA.
    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.d {
            return Err(Error::FeatureWidth {
                expected: self.d,
                got: x.cols(),
            });
        }
        let mut out = Matrix::zeros(x.rows(), self.k);
        match &self.mean {
            Some(mean) => {
                let mut centered = x.clone();
                for r in 0..centered.rows() {
                    for (v, &m) in centered.row_mut(r).iter_mut().zip(mean) {
                        *v -= m;
                    }
                }
                gemm(1.0, centered.view(), self.projection.view(), 0.0, out.view_mut());
            }
            None => gemm(1.0, x.view(), self.projection.view(), 0.0, out.view_mut()),
        }
        Ok(out)
    }

    /// Maps reduced features back to `d` dimensions (`Y * P^T + mean`).
    pub fn reconstruct(&self, y: &Matrix) -> Result<Matrix> {
        if y.cols() != self.k {
            return Err(Error::FeatureWidth {
                expected: self.k,
                got: y.cols(),
            });
        }
        let mut out = Matrix::zeros(y.rows(), self.d);
        gemm(1.0, y.view(), self.projection.view().t(), 0.0, out.view_mut());
        if let Some(mean) = &self.mean {
            for r in 0..out.rows() {
                for (v, &m) in out.row_mut(r).iter_mut().zip(mean) {
                    *v += m;
                }
            }
        }
        Ok(out)
    }
}

/// Divides every layer except the output by `d / k`, rounding to nearest
/// with a floor of 1; the input layer becomes exactly `k`.
pub fn shrink_architecture(layer_sizes: &[usize], ratio: CompressionRatio) -> Result<Vec<usize>> {
    if layer_sizes.len() < 2 {
        return Err(Error::invalid("an architecture needs input and output layers"));
    }
    let r = ratio.r();
    let last = layer_sizes.len() - 1;
    Ok(layer_sizes
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            if i == 0 {
                ratio.k
            } else if i == last {
                s
            } else {
                ((s as f64 / r).round() as usize).max(1)
            }
        })
        .collect())
}

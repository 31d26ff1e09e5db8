//! Integrated Gaussian likelihood and multivariate normal sampling.
//!
//! Each coordinate of a track is modelled as `s ~ N(μ0·1, σ_s²(I + c·H̃H̃'))`
//! with `c = σ²_{μ/s}`. Inverses go through the Woodbury identity and
//! determinants through the determinant lemma, so only `m × m` systems are
//! factorized. [`LikelihoodWorkspace`] goes one step further and caches a
//! spectral decomposition so that repeated evaluations at a fixed basis cost
//! `O(min(n, m))`.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::ingest::StandardizedTrack;
use crate::rng::rng_from_seed;
use crate::{FmmError, Result};

/// Relative diagonal jitter tried in order before giving up.
pub const JITTER_LADDER: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

fn diag_scale(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows().max(1) as f64;
    let s = a.diagonal().iter().map(|d| d.abs()).sum::<f64>() / n;
    if s > 0.0 {
        s
    } else {
        1.0
    }
}

fn try_ladder(a: DMatrix<f64>, ladder: &[f64], context: &str) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(FmmError::NonFinite(context.to_string()));
    }
    let scale = diag_scale(&a);
    for &rel in ladder {
        let mut b = a.clone();
        if rel > 0.0 {
            for i in 0..b.nrows() {
                b[(i, i)] += rel * scale;
            }
        }
        if let Some(ch) = Cholesky::new(b) {
            return Ok((ch, rel * scale));
        }
    }
    Err(FmmError::Factorization {
        context: context.to_string(),
        jitter: ladder.last().copied().unwrap_or(0.0) * scale,
    })
}

/// Cholesky factor with jitter applied from the start of the ladder.
/// Returns the factor and the absolute jitter added to the diagonal.
pub fn cholesky_jittered(a: DMatrix<f64>, context: &str) -> Result<(Cholesky<f64, Dyn>, f64)> {
    try_ladder(a, &JITTER_LADDER, context)
}

/// Cholesky factor that is exact when possible and escalates jitter otherwise.
pub fn cholesky_stable(a: DMatrix<f64>, context: &str) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let mut ladder = vec![0.0];
    ladder.extend_from_slice(&JITTER_LADDER);
    try_ladder(a, &ladder, context)
}

/// Per-coordinate covariance `σ_s²(I + σ²_{μ/s}·H̃H̃')`.
#[derive(Debug, Clone, Copy)]
pub struct IntegratedCovariance<'a> {
    pub sigma2_s: f64,
    pub sigma2_ratio: f64,
    pub basis: &'a DMatrix<f64>,
}

impl<'a> IntegratedCovariance<'a> {
    pub fn new(sigma2_s: f64, sigma2_ratio: f64, basis: &'a DMatrix<f64>) -> Result<Self> {
        if !(sigma2_s.is_finite() && sigma2_s > 0.0) {
            return Err(FmmError::InvalidArgument(format!("σ_s² must be positive, got {sigma2_s}")));
        }
        if !(sigma2_ratio.is_finite() && sigma2_ratio >= 0.0) {
            return Err(FmmError::InvalidArgument(format!(
                "σ²_mu/s must be non-negative, got {sigma2_ratio}"
            )));
        }
        Ok(IntegratedCovariance {
            sigma2_s,
            sigma2_ratio,
            basis,
        })
    }

    pub fn n(&self) -> usize {
        self.basis.nrows()
    }

    /// `I_m + c·H̃'H̃`, factorized.
    fn inner(&self) -> Result<Cholesky<f64, Dyn>> {
        let m = self.basis.ncols();
        let mut a = self.basis.tr_mul(self.basis) * self.sigma2_ratio;
        for i in 0..m {
            a[(i, i)] += 1.0;
        }
        Ok(cholesky_stable(a, "I + c·H'H")?.0)
    }

    /// The full `n × n` covariance; intended for oracles and small problems.
    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut a = (self.basis * self.basis.transpose()) * (self.sigma2_ratio * self.sigma2_s);
        for i in 0..n {
            a[(i, i)] += self.sigma2_s;
        }
        a
    }
}

/// `Σ⁻¹v` through the Woodbury identity.
pub fn smw_inverse_apply(cov: &IntegratedCovariance, v: &DVector<f64>) -> Result<DVector<f64>> {
    if v.len() != cov.n() {
        return Err(FmmError::InvalidArgument(format!(
            "vector has length {}, covariance is {}×{}",
            v.len(),
            cov.n(),
            cov.n()
        )));
    }
    if cov.sigma2_ratio == 0.0 {
        return Ok(v / cov.sigma2_s);
    }
    let inner = cov.inner()?;
    let htv = cov.basis.tr_mul(v);
    let solved = inner.solve(&htv);
    let correction = cov.basis * solved * cov.sigma2_ratio;
    Ok((v - correction) / cov.sigma2_s)
}

/// `log det Σ` through the determinant lemma.
pub fn log_det_integrated(cov: &IntegratedCovariance) -> Result<f64> {
    let n = cov.n() as f64;
    if cov.sigma2_ratio == 0.0 {
        return Ok(n * cov.sigma2_s.ln());
    }
    let inner = cov.inner()?;
    let ld: f64 = inner.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    Ok(n * cov.sigma2_s.ln() + ld)
}

/// Log-density of one coordinate's residual vector `r = s − μ0`.
pub fn loglik_coordinate(residual: &DVector<f64>, cov: &IntegratedCovariance) -> Result<f64> {
    let n = residual.len() as f64;
    let quad = residual.dot(&smw_inverse_apply(cov, residual)?);
    let ld = log_det_integrated(cov)?;
    Ok(-0.5 * (n * (2.0 * PI).ln() + ld + quad))
}

/// Exact integrated log-likelihood of a track, summed over both coordinates.
pub fn loglik_integrated(
    track: &StandardizedTrack,
    mu0: [f64; 2],
    cov: &IntegratedCovariance,
) -> Result<f64> {
    if track.len() != cov.n() {
        return Err(FmmError::InvalidArgument(format!(
            "track has {} observations but basis has {} rows",
            track.len(),
            cov.n()
        )));
    }
    if cov.sigma2_ratio == 0.0 {
        let mut total = 0.0;
        for axis in 0..2 {
            for p in &track.positions {
                let r = p[axis] - mu0[axis];
                total += -0.5 * ((2.0 * PI * cov.sigma2_s).ln() + r * r / cov.sigma2_s);
            }
        }
        return Ok(total);
    }
    let n = cov.n() as f64;
    let inner = cov.inner()?;
    let ld_inner: f64 = inner.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let ld = n * cov.sigma2_s.ln() + ld_inner;
    let mut total = 0.0;
    for axis in 0..2 {
        let r = DVector::from_iterator(track.len(), track.positions.iter().map(|p| p[axis] - mu0[axis]));
        let htr = cov.basis.tr_mul(&r);
        let solved = inner.solve(&htr);
        let quad = (r.dot(&r) - cov.sigma2_ratio * htr.dot(&solved)) / cov.sigma2_s;
        total += -0.5 * (n * (2.0 * PI).ln() + ld + quad);
    }
    Ok(total)
}

#[derive(Debug, Clone)]
enum Projection {
    /// `n ≤ m`: eigenvectors of `H̃H̃'`; stores `U'r` per coordinate.
    Rows { ur: [DVector<f64>; 2] },
    /// `m < n`: eigenvectors of `H̃'H̃`; stores `V'H̃'r` and `r'r` per coordinate.
    Cols { z: [DVector<f64>; 2], rr: [f64; 2] },
}

/// Cached spectral form of the likelihood at a fixed basis and residual pair.
///
/// With `λ` the eigenvalues of the smaller Gram matrix, each coordinate
/// contributes `n·log σ_s² + Σ log(1 + cλ)` to the log-determinant and a
/// quadratic form that is a weighted sum over the same spectrum.
#[derive(Debug, Clone)]
pub struct LikelihoodWorkspace {
    n: usize,
    m: usize,
    lambda: DVector<f64>,
    proj: Projection,
}

impl LikelihoodWorkspace {
    pub fn new(basis: &DMatrix<f64>, residuals: [&[f64]; 2]) -> Result<Self> {
        let (n, m) = basis.shape();
        if residuals.iter().any(|r| r.len() != n) {
            return Err(FmmError::InvalidArgument("residual length does not match basis rows".into()));
        }
        if basis.iter().any(|v| !v.is_finite()) {
            return Err(FmmError::NonFinite("basis matrix".into()));
        }
        let rx = DVector::from_column_slice(residuals[0]);
        let ry = DVector::from_column_slice(residuals[1]);
        let (lambda, proj) = if n <= m {
            let gram = basis * basis.transpose();
            let eig = SymmetricEigen::new(gram);
            let ur = [eig.eigenvectors.tr_mul(&rx), eig.eigenvectors.tr_mul(&ry)];
            (eig.eigenvalues, Projection::Rows { ur })
        } else {
            let gram = basis.tr_mul(basis);
            let eig = SymmetricEigen::new(gram);
            let z = [
                eig.eigenvectors.tr_mul(&basis.tr_mul(&rx)),
                eig.eigenvectors.tr_mul(&basis.tr_mul(&ry)),
            ];
            (eig.eigenvalues, Projection::Cols { z, rr: [rx.dot(&rx), ry.dot(&ry)] })
        };
        let lambda = lambda.map(|l| l.max(0.0));
        Ok(LikelihoodWorkspace { n, m, lambda, proj })
    }

    /// Workspace for a track with `μ0` fixed at its first observation.
    pub fn for_track(basis: &DMatrix<f64>, track: &StandardizedTrack) -> Result<Self> {
        let mu0 = track.positions[0];
        let rx: Vec<f64> = track.positions.iter().map(|p| p[0] - mu0[0]).collect();
        let ry: Vec<f64> = track.positions.iter().map(|p| p[1] - mu0[1]).collect();
        Self::new(basis, [&rx, &ry])
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n, self.m)
    }

    /// Log-likelihood summed over both coordinates.
    pub fn loglik(&self, sigma2_s: f64, sigma2_ratio: f64) -> f64 {
        let n = self.n as f64;
        let c = sigma2_ratio;
        let logdet_inner: f64 = self.lambda.iter().map(|l| (c * l).ln_1p()).sum();
        let logdet = n * sigma2_s.ln() + logdet_inner;
        let mut total = 0.0;
        for axis in 0..2 {
            let quad = match &self.proj {
                Projection::Rows { ur } => ur[axis]
                    .iter()
                    .zip(self.lambda.iter())
                    .map(|(u, l)| u * u / (1.0 + c * l))
                    .sum::<f64>(),
                Projection::Cols { z, rr } => {
                    rr[axis]
                        - c * z[axis]
                            .iter()
                            .zip(self.lambda.iter())
                            .map(|(z, l)| z * z / (1.0 + c * l))
                            .sum::<f64>()
                }
            };
            total += -0.5 * (n * (2.0 * PI).ln() + logdet + quad / sigma2_s);
        }
        total
    }
}

/// Exact Gaussian sampler from a mean and a lower-triangular factor.
#[derive(Debug, Clone)]
pub struct MvnSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl MvnSampler {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let k = mean.len();
        if cov.shape() != (k, k) {
            return Err(FmmError::InvalidArgument(format!(
                "covariance is {:?}, mean has length {k}",
                cov.shape()
            )));
        }
        let factor = if cov.iter().all(|v| *v == 0.0) {
            DMatrix::zeros(k, k)
        } else {
            cholesky_stable(cov, "sampling covariance")?.0.unpack()
        };
        Ok(MvnSampler { mean, factor })
    }

    pub fn from_factor(mean: DVector<f64>, factor: DMatrix<f64>) -> Result<Self> {
        if factor.shape() != (mean.len(), mean.len()) {
            return Err(FmmError::InvalidArgument("factor shape does not match mean".into()));
        }
        Ok(MvnSampler { mean, factor })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let k = self.mean.len();
        let z = DVector::from_iterator(k, (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)));
        &self.mean + &self.factor * z
    }
}

/// One seeded draw from `N(mean, cov)`.
pub fn mvn_sample(mean: DVector<f64>, cov: DMatrix<f64>, seed: u64) -> Result<DVector<f64>> {
    let sampler = MvnSampler::new(mean, cov)?;
    Ok(sampler.sample(&mut rng_from_seed(seed)))
}

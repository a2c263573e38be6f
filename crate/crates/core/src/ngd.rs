//! Noise-generating distributions.
//!
//! Every entry of a noise row is a mean-zero Gaussian whose variance is a
//! function of the current coefficient estimate. Appending such rows to a
//! least-squares or likelihood fit acts, in expectation, like a penalty.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Floor applied to |θ| before it is inverted.
pub const THETA_FLOOR: f64 = 1e-8;
/// Upper bound on any single noise variance.
pub const VARIANCE_CAP: f64 = 1e12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NoiseSpec {
    /// Variance λ|θ|^-γ. γ = 1 gives the lasso, γ = 0 ridge.
    Bridge { lambda: f64, gamma: f64 },
    /// Variance λ/|θ| + σ².
    ElasticNet { lambda: f64, sigma2: f64 },
    /// Variance λ/|θ| · |θ̂|^-γ for a pilot estimate θ̂. Engines fill in
    /// `consistent` per regression when it is left empty.
    AdaptiveLasso {
        lambda: f64,
        gamma: f64,
        #[serde(default)]
        consistent: Option<Vec<f64>>,
    },
    Scad { lambda: f64, a: f64 },
    /// Shared variance λ·c_l/‖θ_l‖ inside each group, where c_l = √p_l
    /// when `scale_by_size` is set and 1 otherwise.
    GroupLasso {
        lambda: f64,
        groups: Vec<Vec<usize>>,
        #[serde(default = "default_true")]
        scale_by_size: bool,
    },
    /// Within-group covariance λTT' where T has unit diagonal and -1 on the
    /// cyclic subdiagonal.
    FusedRidge { lambda: f64, groups: Vec<Vec<usize>> },
}

fn default_true() -> bool {
    true
}

impl NoiseSpec {
    pub fn lasso(lambda: f64) -> Self {
        NoiseSpec::Bridge { lambda, gamma: 1.0 }
    }

    pub fn ridge(lambda: f64) -> Self {
        NoiseSpec::Bridge { lambda, gamma: 0.0 }
    }

    pub fn lambda(&self) -> f64 {
        match self {
            NoiseSpec::Bridge { lambda, .. }
            | NoiseSpec::ElasticNet { lambda, .. }
            | NoiseSpec::AdaptiveLasso { lambda, .. }
            | NoiseSpec::Scad { lambda, .. }
            | NoiseSpec::GroupLasso { lambda, .. }
            | NoiseSpec::FusedRidge { lambda, .. } => *lambda,
        }
    }

    pub fn with_lambda(&self, value: f64) -> Self {
        let mut s = self.clone();
        match &mut s {
            NoiseSpec::Bridge { lambda, .. }
            | NoiseSpec::ElasticNet { lambda, .. }
            | NoiseSpec::AdaptiveLasso { lambda, .. }
            | NoiseSpec::Scad { lambda, .. }
            | NoiseSpec::GroupLasso { lambda, .. }
            | NoiseSpec::FusedRidge { lambda, .. } => *lambda = value,
        }
        s
    }

    /// Checks parameter ranges, and the group partition when `q` is given.
    pub fn validate(&self, q: Option<usize>) -> Result<()> {
        let lambda = self.lambda();
        if !(lambda.is_finite() && lambda >= 0.0) {
            return invalid(format!("lambda must be finite and non-negative, got {lambda}"));
        }
        match self {
            NoiseSpec::Bridge { gamma, .. } if !(0.0..2.0).contains(gamma) => {
                invalid(format!("bridge gamma must lie in [0, 2), got {gamma}"))
            }
            NoiseSpec::ElasticNet { sigma2, .. } if !(*sigma2 >= 0.0) => {
                invalid("elastic net sigma2 must be non-negative")
            }
            NoiseSpec::AdaptiveLasso { gamma, consistent, .. } => {
                if !(*gamma >= 0.0) {
                    return invalid("adaptive lasso gamma must be non-negative");
                }
                match (consistent, q) {
                    (Some(c), Some(q)) if c.len() != q => invalid(format!(
                        "adaptive lasso pilot has {} entries, expected {q}",
                        c.len()
                    )),
                    _ => Ok(()),
                }
            }
            NoiseSpec::Scad { a, .. } if !(*a > 2.0) => invalid(format!("SCAD needs a > 2, got {a}")),
            NoiseSpec::GroupLasso { groups, .. } | NoiseSpec::FusedRidge { groups, .. } => match q {
                Some(q) => check_partition(groups, q),
                None => Ok(()),
            },
            _ => Ok(()),
        }
    }

    /// Re-indexes group structure for a regression whose coefficients are
    /// the listed `covariates` (indices into the full node set).
    pub fn restrict(&self, covariates: &[usize]) -> NoiseSpec {
        let remap = |groups: &Vec<Vec<usize>>| -> Vec<Vec<usize>> {
            groups
                .iter()
                .map(|g| {
                    g.iter()
                        .filter_map(|k| covariates.iter().position(|c| c == k))
                        .collect::<Vec<_>>()
                })
                .filter(|g| !g.is_empty())
                .collect()
        };
        match self {
            NoiseSpec::GroupLasso {
                lambda,
                groups,
                scale_by_size,
            } => NoiseSpec::GroupLasso {
                lambda: *lambda,
                groups: remap(groups),
                scale_by_size: *scale_by_size,
            },
            NoiseSpec::FusedRidge { lambda, groups } => NoiseSpec::FusedRidge {
                lambda: *lambda,
                groups: remap(groups),
            },
            other => other.clone(),
        }
    }

    /// Largest per-coefficient variance when every |θ| equals one.
    pub fn unit_variance(&self, q: usize, n_e: usize) -> f64 {
        let ones = vec![1.0; q];
        noise_variance(self, &ones, n_e)
            .map(|c| c.variances.iter().cloned().fold(0.0, f64::max))
            .unwrap_or(f64::INFINITY)
    }
}

fn check_partition(groups: &[Vec<usize>], q: usize) -> Result<()> {
    let mut seen = vec![false; q];
    for g in groups {
        for &k in g {
            if k >= q {
                return invalid(format!("group index {k} out of range for {q} coefficients"));
            }
            if seen[k] {
                return invalid(format!("coefficient {k} appears in more than one group"));
            }
            seen[k] = true;
        }
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return invalid(format!("coefficient {k} is not in any group"));
    }
    Ok(())
}

/// Covariance of one noise row.
#[derive(Clone, Debug)]
pub struct NoiseCovariance {
    /// Marginal variance of each coordinate.
    pub variances: Vec<f64>,
    /// Correlated blocks; covariance is `factor * factor'`.
    pub blocks: Vec<CovBlock>,
}

#[derive(Clone, Debug)]
pub struct CovBlock {
    pub indices: Vec<usize>,
    pub factor: DMatrix<f64>,
}

impl NoiseCovariance {
    pub fn diagonal(variances: Vec<f64>) -> Self {
        NoiseCovariance {
            variances,
            blocks: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.variances.len()
    }

    /// Dense covariance matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        let q = self.dim();
        let mut m = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.variances));
        for b in &self.blocks {
            let c = &b.factor * b.factor.transpose();
            for (a, &i) in b.indices.iter().enumerate() {
                for (bb, &j) in b.indices.iter().enumerate() {
                    m[(i, j)] = c[(a, bb)];
                }
            }
        }
        debug_assert_eq!(m.nrows(), q);
        m
    }

    /// θ'Σθ.
    pub fn quadratic_form(&self, theta: &[f64]) -> f64 {
        let mut blocked = vec![false; self.dim()];
        let mut total = 0.0;
        for b in &self.blocks {
            let v = nalgebra::DVector::from_iterator(b.indices.len(), b.indices.iter().map(|&i| theta[i]));
            total += (b.factor.tr_mul(&v)).norm_squared();
            for &i in &b.indices {
                blocked[i] = true;
            }
        }
        for k in 0..self.dim() {
            if !blocked[k] {
                total += self.variances[k] * theta[k] * theta[k];
            }
        }
        total
    }

    /// Draws `n_e` independent rows.
    pub fn sample<R: Rng + ?Sized>(&self, n_e: usize, rng: &mut R) -> DMatrix<f64> {
        let q = self.dim();
        let mut blocked = vec![false; q];
        for b in &self.blocks {
            for &i in &b.indices {
                blocked[i] = true;
            }
        }
        let sd: Vec<f64> = self.variances.iter().map(|v| v.sqrt()).collect();
        let mut e = DMatrix::zeros(n_e, q);
        for k in (0..q).filter(|&k| !blocked[k]) {
            for v in e.column_mut(k).iter_mut() {
                *v = sd[k] * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let mut z = Vec::new();
        for i in 0..n_e {
            for b in &self.blocks {
                let w = b.factor.ncols();
                z.clear();
                z.extend((0..w).map(|_| rng.sample::<f64, _>(StandardNormal)));
                for (a, &k) in b.indices.iter().enumerate() {
                    e[(i, k)] = (0..w).map(|c| b.factor[(a, c)] * z[c]).sum();
                }
            }
        }
        e
    }
}

fn floored(t: f64) -> f64 {
    t.abs().max(THETA_FLOOR)
}

fn capped(v: f64) -> f64 {
    if v.is_nan() {
        VARIANCE_CAP
    } else {
        v.clamp(0.0, VARIANCE_CAP)
    }
}

/// Cyclic difference matrix: unit diagonal, -1 below it, with the last
/// column wrapping to the first row. A single coordinate gets 0.
pub fn fused_difference(size: usize) -> DMatrix<f64> {
    let mut t = DMatrix::zeros(size, size);
    if size < 2 {
        return t;
    }
    for s in 0..size {
        t[(s, s)] = 1.0;
        t[((s + 1) % size, s)] = -1.0;
    }
    t
}

/// Noise covariance for the current estimate `theta`.
pub fn noise_variance(spec: &NoiseSpec, theta: &[f64], n_e: usize) -> Result<NoiseCovariance> {
    let q = theta.len();
    spec.validate(Some(q))?;
    if theta.iter().any(|t| !t.is_finite()) {
        return invalid("coefficient vector contains non-finite values");
    }
    let cov = match spec {
        NoiseSpec::Bridge { lambda, gamma } => NoiseCovariance::diagonal(
            theta
                .iter()
                .map(|&t| capped(lambda * floored(t).powf(-gamma)))
                .collect(),
        ),
        NoiseSpec::ElasticNet { lambda, sigma2 } => NoiseCovariance::diagonal(
            theta.iter().map(|&t| capped(lambda / floored(t) + sigma2)).collect(),
        ),
        NoiseSpec::AdaptiveLasso {
            lambda,
            gamma,
            consistent,
        } => {
            let Some(pilot) = consistent else {
                return invalid("adaptive lasso needs a pilot estimate");
            };
            NoiseCovariance::diagonal(
                theta
                    .iter()
                    .zip(pilot)
                    .map(|(&t, &h)| capped(lambda / floored(t) * floored(h).powf(-gamma)))
                    .collect(),
            )
        }
        NoiseSpec::Scad { lambda, a } => NoiseCovariance::diagonal(
            theta
                .iter()
                .map(|&t| capped(scad_variance(*lambda, *a, n_e, t)))
                .collect(),
        ),
        NoiseSpec::GroupLasso {
            lambda,
            groups,
            scale_by_size,
        } => {
            let mut v = vec![0.0; q];
            for g in groups {
                let norm = g.iter().map(|&k| theta[k] * theta[k]).sum::<f64>().sqrt();
                let c = if *scale_by_size { (g.len() as f64).sqrt() } else { 1.0 };
                let var = capped(lambda * c / norm.max(THETA_FLOOR));
                for &k in g {
                    v[k] = var;
                }
            }
            NoiseCovariance::diagonal(v)
        }
        NoiseSpec::FusedRidge { lambda, groups } => {
            let mut v = vec![0.0; q];
            let mut blocks = Vec::with_capacity(groups.len());
            for g in groups {
                let factor = fused_difference(g.len()) * lambda.sqrt();
                let c = &factor * factor.transpose();
                for (a, &k) in g.iter().enumerate() {
                    v[k] = c[(a, a)];
                }
                blocks.push(CovBlock {
                    indices: g.clone(),
                    factor,
                });
            }
            NoiseCovariance { variances: v, blocks }
        }
    };
    Ok(cov)
}

/// Which SCAD piece applies to |θ| = `t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScadBranch {
    Inner,
    Middle,
    Outer,
}

pub fn scad_branch(lambda: f64, a: f64, n_e: usize, t: f64) -> ScadBranch {
    let l = lambda * n_e as f64;
    let t = t.abs();
    if t < l {
        ScadBranch::Inner
    } else if t <= a * l {
        ScadBranch::Middle
    } else {
        ScadBranch::Outer
    }
}

/// SCAD noise variance. In the middle piece the constant term is scaled by
/// 1/n_e so that n_e·θ²·V reproduces the SCAD penalty and V is continuous
/// at both knots.
pub fn scad_variance(lambda: f64, a: f64, n_e: usize, theta: f64) -> f64 {
    let ne = n_e as f64;
    let t = floored(theta);
    match scad_branch(lambda, a, n_e, t) {
        ScadBranch::Inner => lambda / t,
        ScadBranch::Middle => {
            (a * lambda / t - lambda * lambda * ne / (2.0 * t * t) - 1.0 / (2.0 * ne)) / (a - 1.0)
        }
        ScadBranch::Outer => (a + 1.0) * lambda * lambda * ne / (2.0 * t * t),
    }
}

/// SCAD penalty of one coefficient with threshold λn_e.
pub fn scad_penalty(lambda: f64, a: f64, n_e: usize, theta: f64) -> f64 {
    let l = lambda * n_e as f64;
    let t = theta.abs();
    match scad_branch(lambda, a, n_e, t) {
        ScadBranch::Inner => l * t,
        ScadBranch::Middle => (2.0 * a * l * t - l * l - t * t) / (2.0 * (a - 1.0)),
        ScadBranch::Outer => (a + 1.0) * l * l / 2.0,
    }
}

/// Draws an `n_e × q` noise block at the current estimate.
pub fn sample_noise<R: Rng + ?Sized>(
    spec: &NoiseSpec,
    theta: &[f64],
    n_e: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    Ok(noise_variance(spec, theta, n_e)?.sample(n_e, rng))
}

/// Closed-form expectation of Σ_i (Σ_k e_ik θ_k)² over the noise.
pub fn expected_penalty(spec: &NoiseSpec, theta: &[f64], n_e: usize) -> Result<f64> {
    spec.validate(Some(theta.len()))?;
    let ne = n_e as f64;
    let p = match spec {
        NoiseSpec::Bridge { lambda, gamma } => {
            lambda * ne * theta.iter().map(|t| t.abs().powf(2.0 - gamma)).sum::<f64>()
        }
        NoiseSpec::ElasticNet { lambda, sigma2 } => {
            lambda * ne * theta.iter().map(|t| t.abs()).sum::<f64>()
                + sigma2 * ne * theta.iter().map(|t| t * t).sum::<f64>()
        }
        NoiseSpec::AdaptiveLasso {
            lambda,
            gamma,
            consistent,
        } => {
            let Some(pilot) = consistent else {
                return invalid("adaptive lasso needs a pilot estimate");
            };
            lambda
                * ne
                * theta
                    .iter()
                    .zip(pilot)
                    .map(|(t, &h)| t.abs() * floored(h).powf(-gamma))
                    .sum::<f64>()
        }
        NoiseSpec::Scad { lambda, a } => theta.iter().map(|&t| scad_penalty(*lambda, *a, n_e, t)).sum(),
        NoiseSpec::GroupLasso {
            lambda,
            groups,
            scale_by_size,
        } => {
            lambda
                * ne
                * groups
                    .iter()
                    .map(|g| {
                        let c = if *scale_by_size { (g.len() as f64).sqrt() } else { 1.0 };
                        c * g.iter().map(|&k| theta[k] * theta[k]).sum::<f64>().sqrt()
                    })
                    .sum::<f64>()
        }
        NoiseSpec::FusedRidge { .. } => ne * noise_variance(spec, theta, n_e)?.quadratic_form(theta),
    };
    Ok(p)
}

//! Sandwich covariances and confidence intervals for augmented GLM fits.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::engine::{glm_noise_covariance, noise_response, normal_quantile, GlmFit};
use crate::error::{invalid, PandaError, Result};
use crate::glm::{with_intercept, NodeFamily};
use crate::linalg::{inv_spd, symmetrize};
use crate::ngd::NoiseSpec;

/// How the noise rows enter the augmented information.
#[derive(Clone, Copy, Debug)]
pub enum NoiseBlock<'a> {
    /// Expectation over the noise law at the current estimate.
    Expected,
    /// A realized noise block.
    Realized(&'a DMatrix<f64>),
}

/// X'WX on the observed rows, with W the second derivative of the
/// per-row negative log-likelihood.
pub fn observed_information(
    family: NodeFamily,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    theta: &DVector<f64>,
    intercept: bool,
) -> DMatrix<f64> {
    weighted_gram(family, &with_intercept(x, intercept), y, theta)
}

fn weighted_gram(
    family: NodeFamily,
    xd: &DMatrix<f64>,
    y: &DVector<f64>,
    theta: &DVector<f64>,
) -> DMatrix<f64> {
    let eta = xd * theta;
    let mut xw = xd.clone();
    for (i, mut row) in xw.row_iter_mut().enumerate() {
        row *= family.row_curvature(y[i], eta[i]).max(0.0).sqrt();
    }
    crate::linalg::gram(&xw)
}

/// Information of the augmented likelihood at `theta`: the observed-data
/// part plus the noise rows, either in expectation or as realized.
#[allow(clippy::too_many_arguments)]
pub fn fisher_augmented(
    family: NodeFamily,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    spec: &NoiseSpec,
    theta: &DVector<f64>,
    n_e: usize,
    intercept: bool,
    noise: NoiseBlock<'_>,
) -> Result<DMatrix<f64>> {
    let d = x.ncols() + usize::from(intercept);
    if theta.len() != d || y.len() != x.nrows() {
        return invalid("dimension mismatch in information matrix");
    }
    let mut info = observed_information(family, x, y, theta, intercept);
    let c0 = noise_response(family, y, intercept);
    match noise {
        NoiseBlock::Expected => {
            let theta0 = if intercept { theta[0] } else { 0.0 };
            let w = n_e as f64 * family.row_curvature(c0, theta0);
            let cov = glm_noise_covariance(spec, theta, intercept, n_e)?.matrix();
            let off = usize::from(intercept);
            if intercept {
                info[(0, 0)] += w;
            }
            let mut block = info.view_mut((off, off), (x.ncols(), x.ncols()));
            block += cov * w;
        }
        NoiseBlock::Realized(e) => {
            if e.ncols() != x.ncols() {
                return invalid("noise block width differs from design");
            }
            let ed = with_intercept(e, intercept);
            let ye = DVector::from_element(e.nrows(), c0);
            info += weighted_gram(family, &ed, &ye, theta);
        }
    }
    Ok(info)
}

/// Residual variance and effective degrees of freedom of a linear fit
/// whose augmented information is `m`.
pub fn linear_sigma2(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    theta: &DVector<f64>,
    m: &DMatrix<f64>,
) -> Result<(f64, f64)> {
    let n = x.nrows() as f64;
    let minv = inv_spd(m)?;
    let nu = (&minv * x.tr_mul(x)).trace();
    if n <= nu {
        return invalid(format!("degrees of freedom {nu} not below n = {n}"));
    }
    let sse = (y - x * theta).norm_squared();
    Ok((sse / (n - nu), nu))
}

/// One sandwich estimate M⁻¹ I M⁻¹ on the finite-sample scale.
#[derive(Clone, Debug)]
pub struct Sandwich {
    pub cov: DMatrix<f64>,
    pub sigma2: Option<f64>,
    pub nu: Option<f64>,
}

pub fn sandwich_covariance(
    family: NodeFamily,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    spec: &NoiseSpec,
    theta: &DVector<f64>,
    n_e: usize,
    intercept: bool,
) -> Result<Sandwich> {
    let m = fisher_augmented(family, x, y, spec, theta, n_e, intercept, NoiseBlock::Expected)?;
    let minv = inv_spd(&m).map_err(|_| PandaError::NotPositiveDefinite("augmented information".into()))?;
    let info = observed_information(family, x, y, theta, intercept);
    let core = symmetrize(&(&minv * info * &minv));
    if family.is_gaussian() {
        let xd = with_intercept(x, intercept);
        let (s2, nu) = linear_sigma2(&xd, y, theta, &m)?;
        Ok(Sandwich {
            cov: core * s2,
            sigma2: Some(s2),
            nu: Some(nu),
        })
    } else {
        Ok(Sandwich {
            cov: core,
            sigma2: None,
            nu: None,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoefficientInterval {
    pub estimate: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
    pub zeroed: bool,
}

/// Point estimates and intervals from banked iterations.
///
/// `sigma_bar`, `lambda_between` and `total` are on the √n scale, i.e. n
/// times the finite-sample covariances, so standard errors are √(total/n).
#[derive(Clone, Debug)]
pub struct InferenceReport {
    pub n: usize,
    pub level: f64,
    pub theta_bar: DVector<f64>,
    pub sigma_bar: DMatrix<f64>,
    pub lambda_between: DMatrix<f64>,
    pub total: DMatrix<f64>,
    pub df_nu: Option<f64>,
    pub intervals: Vec<CoefficientInterval>,
    pub warnings: Vec<String>,
}

/// Combines `r` snapshot estimates and their finite-sample sandwich
/// covariances into intervals at `level`.
pub fn confidence_intervals(
    snapshots: &[DVector<f64>],
    covariances: &[DMatrix<f64>],
    level: f64,
    n: usize,
) -> Result<InferenceReport> {
    let r = snapshots.len();
    if r < 2 {
        return invalid("need at least two snapshots for the between-iteration variance");
    }
    if covariances.len() != r {
        return invalid("one covariance per snapshot required");
    }
    if !(level > 0.0 && level < 1.0) {
        return invalid("level must lie in (0, 1)");
    }
    let d = snapshots[0].len();
    let rf = r as f64;
    let nf = n as f64;
    let theta_bar = snapshots.iter().fold(DVector::zeros(d), |a, s| a + s) / rf;
    let sigma_bar = covariances.iter().fold(DMatrix::zeros(d, d), |a, c| a + c) * (nf / rf);
    let mut lambda = DMatrix::zeros(d, d);
    for s in snapshots {
        let dev = s - &theta_bar;
        lambda += &dev * dev.transpose();
    }
    let lambda = lambda * (nf / (rf - 1.0));
    let total = symmetrize(&(&sigma_bar + &lambda * (1.0 + 1.0 / rf)));
    let z = normal_quantile(0.5 * (1.0 + level));
    let intervals = (0..d)
        .map(|k| {
            let se = (total[(k, k)].max(0.0) / nf).sqrt();
            CoefficientInterval {
                estimate: theta_bar[k],
                se,
                lower: theta_bar[k] - z * se,
                upper: theta_bar[k] + z * se,
                zeroed: false,
            }
        })
        .collect();
    Ok(InferenceReport {
        n,
        level,
        theta_bar,
        sigma_bar: symmetrize(&sigma_bar),
        lambda_between: symmetrize(&lambda),
        total,
        df_nu: None,
        intervals,
        warnings: Vec::new(),
    })
}

/// Intervals for a completed single-regression run.
pub fn infer_glm(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    spec: &NoiseSpec,
    fit: &GlmFit,
    n_e: usize,
    level: f64,
) -> Result<InferenceReport> {
    let mut covs = Vec::with_capacity(fit.snapshots.len());
    let mut nus = Vec::new();
    for th in &fit.snapshots {
        let s = sandwich_covariance(fit.family, x, y, spec, th, n_e, fit.intercept)?;
        if let Some(nu) = s.nu {
            nus.push(nu);
        }
        covs.push(s.cov);
    }
    let mut report = confidence_intervals(&fit.snapshots, &covs, level, x.nrows())?;
    if !nus.is_empty() {
        report.df_nu = Some(nus.iter().sum::<f64>() / nus.len() as f64);
    }
    for (iv, &z) in report.intervals.iter_mut().zip(&fit.zeroed) {
        iv.zeroed = z;
    }
    report.warnings = fit.warnings.clone();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design() -> (DMatrix<f64>, DVector<f64>) {
        let x = DMatrix::from_row_slice(
            6,
            2,
            &[1.0, 0.5, -0.3, 1.2, 0.8, -0.7, -1.1, 0.2, 0.4, 0.9, 0.1, -1.5],
        );
        let y = DVector::from_row_slice(&[1.2, 0.3, 0.1, -0.9, 1.1, -0.4]);
        (x, y)
    }

    #[test]
    fn gaussian_zero_noise_is_xtx() {
        let (x, y) = design();
        let th = DVector::from_row_slice(&[0.3, -0.2]);
        let m = fisher_augmented(NodeFamily::Gaussian, &x, &y, &NoiseSpec::ridge(0.0), &th, 10, false, NoiseBlock::Expected)
            .unwrap();
        assert!((m - x.tr_mul(&x)).amax() < 1e-14);
    }

    #[test]
    fn gaussian_lasso_adds_diagonal() {
        let (x, y) = design();
        let th = DVector::from_row_slice(&[0.5, -0.25]);
        let m = fisher_augmented(NodeFamily::Gaussian, &x, &y, &NoiseSpec::lasso(0.1), &th, 20, false, NoiseBlock::Expected)
            .unwrap();
        let mut expect = x.tr_mul(&x);
        expect[(0, 0)] += 2.0 / 0.5;
        expect[(1, 1)] += 2.0 / 0.25;
        assert!((m - expect).amax() < 1e-12);
    }

    #[test]
    fn zero_noise_sandwich_is_ols_covariance() {
        let (x, y) = design();
        let xtx = x.tr_mul(&x);
        let ols = xtx.clone().try_inverse().unwrap() * x.tr_mul(&y);
        let s = sandwich_covariance(NodeFamily::Gaussian, &x, &y, &NoiseSpec::ridge(0.0), &ols, 5, false).unwrap();
        let sse = (&y - &x * &ols).norm_squared();
        assert!((s.nu.unwrap() - 2.0).abs() < 1e-12);
        let expect = xtx.try_inverse().unwrap() * (sse / 4.0);
        assert!((s.cov - expect).amax() < 1e-12);
    }

    #[test]
    fn huge_noise_shrinks_variance() {
        let (x, y) = design();
        let th = DVector::from_row_slice(&[0.5, 1e-9]);
        let s = sandwich_covariance(NodeFamily::Gaussian, &x, &y, &NoiseSpec::lasso(0.1), &th, 10, false).unwrap();
        assert!(s.cov[(1, 1)] < 1e-12);
        assert!(s.cov[(0, 0)] > 1e-4);
    }

    #[test]
    fn scalar_interval_half_width() {
        let snaps = vec![DVector::from_element(1, 0.7); 3];
        let covs = vec![DMatrix::from_element(1, 1, 0.04); 3];
        let rep = confidence_intervals(&snaps, &covs, 0.95, 100).unwrap();
        assert!(rep.lambda_between.amax() < 1e-28);
        let v = rep.total[(0, 0)];
        let half = rep.intervals[0].upper - rep.theta_bar[0];
        assert!((half - 1.959_963_984_540_054 * (v / 100.0).sqrt()).abs() < 1e-12);
        assert!((half - 1.959_963_984_540_054 * 0.2).abs() < 1e-12);
        assert!(confidence_intervals(&snaps[..1], &covs[..1], 0.95, 100).is_err());
    }
}

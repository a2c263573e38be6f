//! Exponential-family regression on noise-augmented designs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, PandaError, Result};
use crate::linalg::solve_spd;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub const IRLS_MAX_ITER: usize = 100;
pub const IRLS_TOL: f64 = 1e-8;
pub const IRLS_MAX_HALVINGS: usize = 20;

/// Conditional distribution of a node given its neighbours.
///
/// Poisson, Exponential and NegBinomial use a log link on the mean; the
/// Exponential likelihood is therefore `y e^{-eta} + eta` per row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeFamily {
    Gaussian,
    Bernoulli,
    Poisson,
    Exponential,
    NegBinomial { r: u32 },
}

impl NodeFamily {
    pub fn validate(&self) -> Result<()> {
        match self {
            NodeFamily::NegBinomial { r } if *r < 1 => invalid("negative binomial needs r >= 1"),
            _ => Ok(()),
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, NodeFamily::Gaussian)
    }

    pub fn name(&self) -> String {
        match self {
            NodeFamily::Gaussian => "gaussian".into(),
            NodeFamily::Bernoulli => "bernoulli".into(),
            NodeFamily::Poisson => "poisson".into(),
            NodeFamily::Exponential => "exponential".into(),
            NodeFamily::NegBinomial { r } => format!("negbinomial({r})"),
        }
    }

    /// Whether `y` is a legal observed response.
    pub fn valid_response(&self, y: f64) -> bool {
        if !y.is_finite() {
            return false;
        }
        match self {
            NodeFamily::Gaussian => true,
            NodeFamily::Bernoulli => y == 0.0 || y == 1.0,
            NodeFamily::Poisson | NodeFamily::NegBinomial { .. } => y >= 0.0 && y.fract() == 0.0,
            NodeFamily::Exponential => y > 0.0,
        }
    }

    /// Whether `c` is a legal constant response for the noise rows. These
    /// are sample means, so fractional values are fine.
    pub fn valid_noise_response(&self, c: f64) -> bool {
        if !c.is_finite() {
            return false;
        }
        match self {
            NodeFamily::Gaussian => true,
            NodeFamily::Bernoulli => (0.0..=1.0).contains(&c),
            NodeFamily::Poisson | NodeFamily::NegBinomial { .. } => c >= 0.0,
            NodeFamily::Exponential => c > 0.0,
        }
    }

    pub fn mean(&self, eta: f64) -> f64 {
        match self {
            NodeFamily::Gaussian => eta,
            NodeFamily::Bernoulli => logistic(eta),
            _ => eta.exp(),
        }
    }

    pub fn link(&self, mu: f64) -> f64 {
        match self {
            NodeFamily::Gaussian => mu,
            NodeFamily::Bernoulli => {
                let p = mu.clamp(1e-6, 1.0 - 1e-6);
                (p / (1.0 - p)).ln()
            }
            _ => mu.max(1e-8).ln(),
        }
    }

    /// Negative log-likelihood of one observation.
    pub fn row_nll(&self, y: f64, eta: f64) -> f64 {
        match *self {
            NodeFamily::Gaussian => 0.5 * (y - eta) * (y - eta) + 0.5 * LN_2PI,
            NodeFamily::Bernoulli => softplus(eta) - y * eta,
            NodeFamily::Poisson => eta.exp() - y * eta + ln_gamma(y + 1.0),
            NodeFamily::Exponential => eta + y * (-eta).exp(),
            NodeFamily::NegBinomial { r } => {
                let r = r as f64;
                (r + y) * log_add_exp(r.ln(), eta) - y * eta
                    - (ln_gamma(y + r) - ln_gamma(y + 1.0) - ln_gamma(r) + r * r.ln())
            }
        }
    }

    /// First derivative of `row_nll` in eta.
    pub fn row_score(&self, y: f64, eta: f64) -> f64 {
        match *self {
            NodeFamily::Gaussian => eta - y,
            NodeFamily::Bernoulli => logistic(eta) - y,
            NodeFamily::Poisson => eta.exp() - y,
            NodeFamily::Exponential => 1.0 - y * (-eta).exp(),
            NodeFamily::NegBinomial { r } => {
                let r = r as f64;
                (r + y) * logistic(eta - r.ln()) - y
            }
        }
    }

    /// Second derivative of `row_nll` in eta (observed information weight).
    pub fn row_curvature(&self, y: f64, eta: f64) -> f64 {
        match *self {
            NodeFamily::Gaussian => 1.0,
            NodeFamily::Bernoulli => {
                let p = logistic(eta);
                p * (1.0 - p)
            }
            NodeFamily::Poisson => eta.exp(),
            NodeFamily::Exponential => y * (-eta).exp(),
            NodeFamily::NegBinomial { r } => {
                let r = r as f64;
                let s = logistic(eta - r.ln());
                (r + y) * s * (1.0 - s)
            }
        }
    }

    /// Graph-type constant of the convergence test statistic, evaluated at
    /// the intercept `theta0`. Gaussian nodes use raw SSE, hence 8.
    pub fn kappa(&self, theta0: f64) -> f64 {
        match *self {
            NodeFamily::Gaussian => 8.0,
            NodeFamily::Poisson => 2.0 * (2.0 * theta0).exp(),
            NodeFamily::Exponential => 2.0,
            NodeFamily::Bernoulli => {
                let e = theta0.exp();
                2.0 * e * e / (1.0 + e).powi(4)
            }
            NodeFamily::NegBinomial { r } => {
                let r = r as f64;
                let e = theta0.exp();
                2.0 * r * r * e * e / ((r + e) * (r + e))
            }
        }
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Observed data stacked on top of a block of noise rows.
///
/// The noise rows share one constant response `noise_response`. With
/// `intercept` set, a column of ones is prepended to both blocks and the
/// first coefficient is the intercept.
#[derive(Clone, Debug)]
pub struct AugmentedDesign {
    pub observed: DMatrix<f64>,
    pub noise: DMatrix<f64>,
    pub response: DVector<f64>,
    pub noise_response: f64,
    pub intercept: bool,
}

impl AugmentedDesign {
    pub fn new(
        observed: DMatrix<f64>,
        noise: DMatrix<f64>,
        response: DVector<f64>,
        noise_response: f64,
        intercept: bool,
    ) -> Result<Self> {
        let d = AugmentedDesign {
            observed,
            noise,
            response,
            noise_response,
            intercept,
        };
        d.check()?;
        Ok(d)
    }

    /// Design with an empty noise block.
    pub fn unaugmented(observed: DMatrix<f64>, response: DVector<f64>, intercept: bool) -> Result<Self> {
        let q = observed.ncols();
        Self::new(observed, DMatrix::zeros(0, q), response, 0.0, intercept)
    }

    fn check(&self) -> Result<()> {
        let q = self.observed.ncols();
        if self.noise.ncols() != q {
            return invalid(format!(
                "noise block has {} columns, observed block has {q}",
                self.noise.ncols()
            ));
        }
        if self.response.len() != self.n() {
            return invalid("response length differs from observed rows");
        }
        if self.n() + self.n_e() <= self.dim() {
            return invalid(format!(
                "stacked rows ({}) must exceed coefficients ({})",
                self.n() + self.n_e(),
                self.dim()
            ));
        }
        let finite = self.observed.iter().chain(self.noise.iter()).all(|v| v.is_finite())
            && self.response.iter().all(|v| v.is_finite())
            && self.noise_response.is_finite();
        if !finite {
            return invalid("design contains non-finite values");
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.observed.nrows()
    }

    pub fn n_e(&self) -> usize {
        self.noise.nrows()
    }

    /// Number of covariates (excluding the intercept).
    pub fn q(&self) -> usize {
        self.observed.ncols()
    }

    /// Number of fitted coefficients.
    pub fn dim(&self) -> usize {
        self.q() + usize::from(self.intercept)
    }

    pub fn stacked_design(&self) -> DMatrix<f64> {
        let (n, ne, q) = (self.n(), self.n_e(), self.q());
        let off = usize::from(self.intercept);
        let mut x = DMatrix::zeros(n + ne, q + off);
        if self.intercept {
            x.column_mut(0).fill(1.0);
        }
        x.view_mut((0, off), (n, q)).copy_from(&self.observed);
        x.view_mut((n, off), (ne, q)).copy_from(&self.noise);
        x
    }

    pub fn stacked_response(&self) -> DVector<f64> {
        let mut y = DVector::from_element(self.n() + self.n_e(), self.noise_response);
        y.rows_mut(0, self.n()).copy_from(&self.response);
        y
    }

    /// Observed block with the intercept column when present.
    pub fn observed_design(&self) -> DMatrix<f64> {
        with_intercept(&self.observed, self.intercept)
    }

    /// X̃'X̃ built from the two blocks.
    pub fn gram(&self) -> DMatrix<f64> {
        let core = crate::linalg::gram(&self.observed) + crate::linalg::gram(&self.noise);
        if !self.intercept {
            return core;
        }
        let q = self.q();
        let mut g = DMatrix::zeros(q + 1, q + 1);
        g[(0, 0)] = (self.n() + self.n_e()) as f64;
        for k in 0..q {
            let s = self.observed.column(k).sum() + self.noise.column(k).sum();
            g[(0, k + 1)] = s;
            g[(k + 1, 0)] = s;
        }
        g.view_mut((1, 1), (q, q)).copy_from(&core);
        g
    }

    /// X̃'ỹ built from the two blocks.
    pub fn cross(&self) -> DVector<f64> {
        let mut core = self.observed.tr_mul(&self.response);
        if self.noise_response != 0.0 {
            for k in 0..self.q() {
                core[k] += self.noise_response * self.noise.column(k).sum();
            }
        }
        if !self.intercept {
            return core;
        }
        let mut b = DVector::zeros(self.q() + 1);
        b[0] = self.response.sum() + self.noise_response * self.n_e() as f64;
        b.rows_mut(1, self.q()).copy_from(&core);
        b
    }

    /// Augmented negative log-likelihood at `theta`.
    pub fn neg_log_likelihood(&self, family: NodeFamily, theta: &DVector<f64>) -> f64 {
        neg_log_likelihood(family, &self.stacked_design(), &self.stacked_response(), theta)
    }

    fn check_family(&self, family: NodeFamily) -> Result<()> {
        family.validate()?;
        if let Some(i) = self.response.iter().position(|&y| !family.valid_response(y)) {
            return invalid(format!(
                "response value {} at row {} is invalid for the {} family",
                self.response[i],
                i + 1,
                family.name()
            ));
        }
        if !family.valid_noise_response(self.noise_response) {
            return invalid(format!(
                "noise-row response {} is invalid for the {} family",
                self.noise_response,
                family.name()
            ));
        }
        Ok(())
    }
}

pub(crate) fn with_intercept(x: &DMatrix<f64>, intercept: bool) -> DMatrix<f64> {
    if intercept {
        x.clone().insert_column(0, 1.0)
    } else {
        x.clone()
    }
}

/// Least-squares fit on the stacked design.
pub fn fit_ols(design: &AugmentedDesign) -> Result<DVector<f64>> {
    design.check()?;
    solve_spd(&design.gram(), &design.cross())
}

/// Maximum likelihood fit on the stacked design by damped Newton (IRLS).
pub fn fit_glm(family: NodeFamily, design: &AugmentedDesign) -> Result<DVector<f64>> {
    fit_glm_from(family, design, None)
}

/// As [`fit_glm`], optionally warm-started.
pub fn fit_glm_from(
    family: NodeFamily,
    design: &AugmentedDesign,
    start: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    design.check()?;
    design.check_family(family)?;
    if family.is_gaussian() {
        return fit_ols(design);
    }
    let x = design.stacked_design();
    let y = design.stacked_response();
    let d = x.ncols();

    let mut theta = match start {
        Some(s) if s.len() == d && s.iter().all(|v| v.is_finite()) => s.clone(),
        _ => {
            let mut t = DVector::zeros(d);
            if design.intercept {
                t[0] = family.link(y.mean());
            }
            t
        }
    };
    let mut eta = &x * &theta;
    let mut nll = sum_nll(family, &y, &eta);
    if !nll.is_finite() {
        theta.fill(0.0);
        if design.intercept {
            theta[0] = family.link(y.mean());
        }
        eta = &x * &theta;
        nll = sum_nll(family, &y, &eta);
    }
    let scale = 1.0 + x.tr_mul(&y).norm();

    for _ in 0..IRLS_MAX_ITER {
        let score = DVector::from_iterator(y.len(), (0..y.len()).map(|i| family.row_score(y[i], eta[i])));
        let grad = x.tr_mul(&score);
        let mut xw = x.clone();
        for (i, mut row) in xw.row_iter_mut().enumerate() {
            row *= family.row_curvature(y[i], eta[i]).max(0.0).sqrt();
        }
        let hess = crate::linalg::gram(&xw);
        let step = solve_spd(&hess, &grad)?;
        if grad.norm() / scale < IRLS_TOL {
            return Ok(theta);
        }

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=IRLS_MAX_HALVINGS {
            let cand = &theta - &step * t;
            let cand_eta = &x * &cand;
            let cand_nll = sum_nll(family, &y, &cand_eta);
            if cand_nll.is_finite() && cand_nll <= nll + 1e-12 * nll.abs() {
                theta = cand;
                eta = cand_eta;
                nll = cand_nll;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // No descent left at working precision.
            if grad.norm() / scale < 1e-6 {
                return Ok(theta);
            }
            break;
        }
    }
    Err(PandaError::FitDivergence {
        iterations: IRLS_MAX_ITER,
        last: theta,
    })
}

fn sum_nll(family: NodeFamily, y: &DVector<f64>, eta: &DVector<f64>) -> f64 {
    y.iter().zip(eta.iter()).map(|(&yi, &ei)| family.row_nll(yi, ei)).sum()
}

/// `-sum_i log p(y_i | eta_i)` with `eta = x theta`.
pub fn neg_log_likelihood(
    family: NodeFamily,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    theta: &DVector<f64>,
) -> f64 {
    sum_nll(family, y, &(x * theta))
}

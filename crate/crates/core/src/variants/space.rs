use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::engine::{drive, straddles_zero, FitTrace, Iteration, PandaConfig, StepOutcome};
use crate::error::{invalid, Result};
use crate::glm::{fit_ols, AugmentedDesign};
use crate::linalg::{center_columns, drop_column, solve_spd};
use crate::ngd::{noise_variance, NoiseCovariance, NoiseSpec};
use crate::rng::stream;
use crate::simgen::Adjacency;

/// Partial correlations ρ and diagonal precisions ω.
#[derive(Clone, Debug)]
pub struct SpaceEstimate {
    pub rho: DMatrix<f64>,
    pub omega_diag: DVector<f64>,
    pub adjacency: Adjacency,
    pub trace: FitTrace,
}

impl SpaceEstimate {
    /// Ω with ω_jk = -ρ_jk·√(ω_jj·ω_kk).
    pub fn precision(&self) -> DMatrix<f64> {
        let p = self.rho.nrows();
        DMatrix::from_fn(p, p, |j, k| {
            let s = (self.omega_diag[j] * self.omega_diag[k]).sqrt();
            if j == k {
                self.omega_diag[j]
            } else {
                -self.rho[(j, k)] * s
            }
        })
    }
}

struct SpaceState<'a> {
    x: DMatrix<f64>,
    others: Vec<DMatrix<f64>>,
    spec: &'a NoiseSpec,
    cfg: &'a PandaConfig,
    rho_bar: DMatrix<f64>,
    omega: DVector<f64>,
    history: Vec<DMatrix<f64>>,
}

fn covariates(p: usize, j: usize) -> impl Iterator<Item = usize> {
    (0..p).filter(move |&k| k != j)
}

fn rho_from_beta(beta: &DMatrix<f64>, omega: &DVector<f64>) -> DMatrix<f64> {
    let p = beta.nrows();
    DMatrix::from_fn(p, p, |j, k| {
        if j == k {
            return 1.0;
        }
        let a = beta[(j, k)] * (omega[j] / omega[k]).sqrt();
        let b = beta[(k, j)] * (omega[k] / omega[j]).sqrt();
        (0.5 * (a + b)).clamp(-1.0, 1.0)
    })
}

impl SpaceState<'_> {
    fn beta_bar(&self, j: usize) -> DVector<f64> {
        let p = self.x.ncols();
        DVector::from_iterator(
            p - 1,
            covariates(p, j).map(|k| self.rho_bar[(j, k)] * (self.omega[k] / self.omega[j]).sqrt()),
        )
    }

    fn noise_cov(&self, j: usize) -> Result<NoiseCovariance> {
        let p = self.x.ncols();
        let rho: Vec<f64> = covariates(p, j).map(|k| self.rho_bar[(j, k)]).collect();
        let mut cov = noise_variance(self.spec, &rho, self.cfg.n_e)?;
        for (v, k) in cov.variances.iter_mut().zip(covariates(p, j)) {
            *v *= self.omega[j] / self.omega[k];
        }
        Ok(cov)
    }

    fn node(&self, j: usize, t: usize) -> Result<(DVector<f64>, f64, DMatrix<f64>, NoiseCovariance)> {
        let cov = self.noise_cov(j)?;
        let mut rng = stream(self.cfg.seed, t as u64, j as u64);
        let e = cov.sample(self.cfg.n_e, &mut rng);
        let y = self.x.column(j).into_owned();
        let design = AugmentedDesign::new(self.others[j].clone(), e, y.clone(), 0.0, false)?;
        let beta = fit_ols(&design)?;
        let sse = (&y - &self.others[j] * &beta).norm_squared();
        Ok((beta, sse / self.x.nrows() as f64, design.noise, cov))
    }
}

impl Iteration for SpaceState<'_> {
    type Snapshot = (DMatrix<f64>, DVector<f64>);

    fn step(&mut self, t: usize) -> Result<StepOutcome> {
        let p = self.x.ncols();
        let outs: Vec<_> = (0..p)
            .into_par_iter()
            .map(|j| self.node(j, t).map_err(|e| e.at_node(j)))
            .collect::<Result<_>>()?;
        let mut beta = DMatrix::zeros(p, p);
        for (j, o) in outs.iter().enumerate() {
            for (pos, k) in covariates(p, j).enumerate() {
                beta[(j, k)] = o.0[pos];
            }
            if !(o.1 > 0.0) {
                return invalid(format!("node {j}: residual variance vanished"));
            }
            self.omega[j] = 1.0 / o.1;
        }
        let rho = rho_from_beta(&beta, &self.omega);
        let m = self.cfg.window;
        self.history.push(rho.clone());
        if self.history.len() > m {
            self.history.remove(0);
        }
        self.rho_bar = if t > m {
            self.history.iter().fold(DMatrix::zeros(p, p), |a, r| a + r) / self.history.len() as f64
        } else {
            rho
        };

        let (mut loss, mut aug, mut kq) = (0.0, 0.0, 0.0);
        for (j, o) in outs.iter().enumerate() {
            let b = self.beta_bar(j);
            let sse = (self.x.column(j) - &self.others[j] * &b).norm_squared();
            loss += sse;
            aug += sse + (&o.2 * &b).norm_squared();
            let q = o.3.quadratic_form(b.as_slice());
            kq += 8.0 * q * q;
        }
        Ok(StepOutcome {
            raw_loss: loss,
            aug_loss: Some(aug),
            c1: Some(0.5 * self.cfg.n_e as f64 * kq.sqrt()),
            residual: None,
        })
    }

    fn snapshot(&self) -> Self::Snapshot {
        (self.rho_bar.clone(), self.omega.clone())
    }
}

/// Joint partial-correlation estimate; noise scales with ω_jj/ω_kk.
pub fn run_panda_space(data: &DMatrix<f64>, spec: &NoiseSpec, cfg: &PandaConfig) -> Result<SpaceEstimate> {
    super::check_data(data)?;
    let (n, p) = data.shape();
    cfg.validate(n, p)?;
    spec.validate(None)?;
    match spec {
        NoiseSpec::GroupLasso { .. } | NoiseSpec::FusedRidge { .. } => {
            return invalid("grouped noise is not supported for partial correlations")
        }
        NoiseSpec::AdaptiveLasso { consistent: None, .. } => {
            return invalid("adaptive lasso noise needs a pilot estimate for partial correlations")
        }
        _ => {}
    }
    let x = center_columns(data);
    let others: Vec<DMatrix<f64>> = (0..p).map(|j| drop_column(&x, j)).collect();

    let mut beta = DMatrix::zeros(p, p);
    let mut omega = DVector::zeros(p);
    for j in 0..p {
        let xo = &others[j];
        let y = x.column(j).into_owned();
        let g = xo.tr_mul(xo) + DMatrix::identity(p - 1, p - 1) * 0.1;
        let b = solve_spd(&g, &xo.tr_mul(&y))?;
        for (pos, k) in covariates(p, j).enumerate() {
            beta[(j, k)] = b[pos];
        }
        let r = (&y - xo * &b).norm_squared() / n as f64;
        if !(r > 0.0) {
            return invalid(format!("node {j}: residual variance vanished"));
        }
        omega[j] = 1.0 / r;
    }
    let rho_bar = rho_from_beta(&beta, &omega);
    let mut state = SpaceState {
        x,
        others,
        spec,
        cfg,
        rho_bar,
        omega,
        history: Vec::new(),
    };
    let (trace, snaps) = drive(&mut state, cfg)?;
    let (last_rho, _) = snaps.last().expect("at least one banked iteration");
    let r = snaps.len() as f64;
    let omega_diag = snaps.iter().fold(DVector::zeros(p), |a, s| a + &s.1) / r;
    let mut rho = DMatrix::identity(p, p);
    for j in 0..p {
        for k in j + 1..p {
            if !straddles_zero(snaps.iter().map(|s| s.0[(j, k)]), cfg.tau0) {
                rho[(j, k)] = last_rho[(j, k)];
                rho[(k, j)] = last_rho[(j, k)];
            }
        }
    }
    Ok(SpaceEstimate {
        adjacency: Adjacency::from_support(&rho),
        rho,
        omega_diag,
        trace,
    })
}

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::engine::{drive, hard_threshold, moving_average, symmetrize, FitTrace, Iteration, PandaConfig, StepOutcome};
use crate::error::{invalid, Result};
use crate::linalg::{center_columns, gram, solve_spd};
use crate::ngd::{noise_variance, NoiseCovariance, NoiseSpec};
use crate::rng::stream;
use crate::simgen::Adjacency;

#[derive(Clone, Debug)]
pub struct ScioEstimate {
    pub omega: DMatrix<f64>,
    pub adjacency: Adjacency,
    pub trace: FitTrace,
}

/// Solves Σ̃θ = 1_j and returns θ with the sup-norm residual.
pub fn scio_column(sigma: &DMatrix<f64>, j: usize) -> Result<(DVector<f64>, f64)> {
    let p = sigma.nrows();
    if j >= p {
        return invalid(format!("column {j} out of range for p = {p}"));
    }
    let mut unit = DVector::zeros(p);
    unit[j] = 1.0;
    let theta = solve_spd(sigma, &unit)?;
    let residual = (sigma * &theta - unit).amax();
    Ok((theta, residual))
}

fn floor_away(t: f64, tau: f64) -> f64 {
    if t > 0.0 && t < tau {
        tau
    } else if t < 0.0 && t > -tau {
        -tau
    } else {
        t
    }
}

struct ScioState<'a> {
    x: DMatrix<f64>,
    s: DMatrix<f64>,
    spec: &'a NoiseSpec,
    cfg: &'a PandaConfig,
    history: Vec<Vec<DVector<f64>>>,
    theta_bar: Vec<DVector<f64>>,
}

struct ColumnStep {
    theta: DVector<f64>,
    residual: f64,
    noise: DMatrix<f64>,
    cov: NoiseCovariance,
}

impl ScioState<'_> {
    fn column(&self, j: usize, t: usize) -> Result<ColumnStep> {
        let p = self.x.ncols();
        let n_e = self.cfg.n_e;
        let floored: Vec<f64> = self.theta_bar[j]
            .iter()
            .map(|&v| floor_away(v, self.cfg.tau1))
            .collect();
        let mut cov = noise_variance(self.spec, &floored, n_e)?;
        cov.variances[j] = 0.0;
        let mut rng = stream(self.cfg.seed, t as u64, j as u64);
        let e = cov.sample(n_e, &mut rng);
        let sigma = &self.s + gram(&e) * (2.0 / n_e as f64);
        let (theta, residual) = scio_column(&sigma, j)?;
        debug_assert_eq!(theta.len(), p);
        Ok(ColumnStep {
            theta,
            residual,
            noise: e,
            cov,
        })
    }

    fn loss(&self, j: usize, theta: &DVector<f64>) -> f64 {
        0.5 * (theta.transpose() * &self.s * theta)[(0, 0)] - theta[j]
    }
}

impl Iteration for ScioState<'_> {
    type Snapshot = DMatrix<f64>;

    fn step(&mut self, t: usize) -> Result<StepOutcome> {
        let p = self.x.ncols();
        let m = self.cfg.window;
        let outs: Vec<ColumnStep> = (0..p)
            .into_par_iter()
            .map(|j| self.column(j, t))
            .collect::<Result<_>>()?;
        let (mut residual, mut noise_part, mut qq) = (0.0_f64, 0.0, 0.0);
        for (j, o) in outs.into_iter().enumerate() {
            residual = residual.max(o.residual);
            let h = &mut self.history[j];
            h.push(o.theta.clone());
            if h.len() > m {
                h.remove(0);
            }
            self.theta_bar[j] = if t > m { moving_average(h, m) } else { o.theta };
            let bar = &self.theta_bar[j];
            noise_part += (&o.noise * bar).norm_squared() / self.cfg.n_e as f64;
            let q = o.cov.quadratic_form(bar.as_slice());
            qq += q * q;
        }
        let loss: f64 = (0..p).map(|j| self.loss(j, &self.theta_bar[j])).sum();
        Ok(StepOutcome {
            raw_loss: loss,
            aug_loss: Some(loss + noise_part),
            c1: Some((2.0 * qq).sqrt()),
            residual: Some(residual),
        })
    }

    fn snapshot(&self) -> DMatrix<f64> {
        // row j holds column j's solution
        let p = self.x.ncols();
        DMatrix::from_fn(p, p, |j, k| self.theta_bar[j][k])
    }
}

/// Column-wise precision estimate with noise appended to the covariance.
pub fn run_panda_scio(data: &DMatrix<f64>, spec: &NoiseSpec, cfg: &PandaConfig) -> Result<ScioEstimate> {
    super::check_data(data)?;
    let (n, p) = data.shape();
    cfg.validate(n, p)?;
    spec.validate(None)?;
    if matches!(spec, NoiseSpec::AdaptiveLasso { consistent: None, .. }) {
        return invalid("adaptive lasso noise needs a pilot estimate for column solves");
    }
    let x = center_columns(data);
    let s = gram(&x) / n as f64;
    let ridge = &s + DMatrix::identity(p, p) * 0.1;
    let mut theta_bar = Vec::with_capacity(p);
    for j in 0..p {
        theta_bar.push(scio_column(&ridge, j)?.0);
    }
    let mut state = ScioState {
        x,
        s,
        spec,
        cfg,
        history: vec![Vec::new(); p],
        theta_bar,
    };
    let (trace, snaps) = drive(&mut state, cfg)?;
    let dec = hard_threshold(&snaps, cfg.tau0);
    let (adjacency, off) = symmetrize(&dec, cfg.symmetrization);
    let last = snaps.last().expect("at least one banked iteration");
    let mut omega = off;
    for j in 0..p {
        omega[(j, j)] = last[(j, j)];
    }
    Ok(ScioEstimate {
        omega,
        adjacency,
        trace,
    })
}

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::engine::{drive, FitTrace, Iteration, PandaConfig, StepOutcome};
use crate::error::{invalid, PandaError, Result};
use crate::linalg::{center_columns, gram, inv_spd, symmetrize};
use crate::rng::stream;

#[derive(Clone, Debug)]
pub struct GridgeEstimate {
    pub omega: DMatrix<f64>,
    pub trace: FitTrace,
}

/// `n_e` rows drawn from N(0, λΩ).
pub fn gridge_noise<R: Rng + ?Sized>(omega: &DMatrix<f64>, lambda: f64, n_e: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    let p = omega.nrows();
    if lambda == 0.0 {
        return Ok(DMatrix::zeros(n_e, p));
    }
    let chol = (omega * lambda)
        .cholesky()
        .ok_or_else(|| PandaError::NotPositiveDefinite("noise covariance".into()))?;
    let z = DMatrix::from_fn(n_e, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(z * chol.l().transpose())
}

struct GridgeState<'a> {
    s: DMatrix<f64>,
    lambda: f64,
    cfg: &'a PandaConfig,
    omega_bar: DMatrix<f64>,
    history: Vec<DMatrix<f64>>,
}

impl GridgeState<'_> {
    fn loss(&self, omega: &DMatrix<f64>) -> f64 {
        let logdet = match omega.clone().cholesky() {
            Some(c) => 2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>(),
            None => return f64::INFINITY,
        };
        -logdet + (&self.s * omega).trace()
    }
}

impl Iteration for GridgeState<'_> {
    type Snapshot = DMatrix<f64>;

    fn step(&mut self, t: usize) -> Result<StepOutcome> {
        let n_e = self.cfg.n_e;
        let mut rng = stream(self.cfg.seed, t as u64, 0);
        let e = gridge_noise(&self.omega_bar, self.lambda, n_e, &mut rng)?;
        let s_tilde = &self.s + gram(&e) / n_e as f64;
        let omega_hat = symmetrize(&inv_spd(&s_tilde)?);
        let m = self.cfg.window;
        self.history.push(omega_hat.clone());
        if self.history.len() > m {
            self.history.remove(0);
        }
        self.omega_bar = if t > m {
            let p = omega_hat.nrows();
            self.history.iter().fold(DMatrix::zeros(p, p), |a, o| a + o) / self.history.len() as f64
        } else {
            omega_hat
        };
        Ok(StepOutcome {
            raw_loss: self.loss(&self.omega_bar),
            ..Default::default()
        })
    }

    fn snapshot(&self) -> DMatrix<f64> {
        self.omega_bar.clone()
    }
}

/// Ridge-type precision estimate via noise rows drawn from N(0, λΩ̄).
pub fn run_panda_gridge(data: &DMatrix<f64>, lambda: f64, cfg: &PandaConfig) -> Result<GridgeEstimate> {
    super::check_data(data)?;
    let (n, p) = data.shape();
    cfg.validate(n, p)?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return invalid("lambda must be finite and non-negative");
    }
    let x = center_columns(data);
    let s = gram(&x) / n as f64;
    let start = inv_spd(&(&s + DMatrix::identity(p, p) * 0.1))?;
    let mut state = GridgeState {
        s,
        lambda,
        cfg,
        omega_bar: start,
        history: Vec::new(),
    };
    let (trace, snaps) = drive(&mut state, cfg)?;
    let omega = snaps.iter().fold(DMatrix::zeros(p, p), |a, o| a + o) / snaps.len() as f64;
    Ok(GridgeEstimate {
        omega: symmetrize(&omega),
        trace,
    })
}

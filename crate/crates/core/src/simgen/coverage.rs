use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal, Poisson, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{run_panda_glm, PandaConfig};
use crate::error::{invalid, Result};
use crate::glm::NodeFamily;
use crate::inference::infer_glm;
use crate::ngd::NoiseSpec;
use crate::rng::child_seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CovariateLaw {
    Normal { mean: f64, sd: f64 },
    Uniform { low: f64, high: f64 },
}

/// Data-generating process for one regression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlmScenario {
    pub family: NodeFamily,
    pub n: usize,
    pub beta: Vec<f64>,
    /// True intercept; `None` fits without an intercept.
    #[serde(default)]
    pub intercept: Option<f64>,
    pub covariates: CovariateLaw,
    /// Error standard deviation of the Gaussian family.
    #[serde(default = "one")]
    pub error_sd: f64,
    pub noise: NoiseSpec,
}

fn one() -> f64 {
    1.0
}

impl GlmScenario {
    /// Thirty coefficients: 21 drawn from U(0.5, 1) and 9 zeros, the zeros
    /// spread evenly. Gaussian covariates are N(0, 1) without intercept;
    /// other families use U(-0.3, 0.5) covariates and a zero intercept.
    pub fn thirty_coefficients(family: NodeFamily, n: usize, noise: NoiseSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let beta = (0..30)
            .map(|k| if k % 10 >= 7 { 0.0 } else { rng.gen_range(0.5..1.0) })
            .collect();
        let (covariates, intercept) = if family.is_gaussian() {
            (CovariateLaw::Normal { mean: 0.0, sd: 1.0 }, None)
        } else {
            (CovariateLaw::Uniform { low: -0.3, high: 0.5 }, Some(0.0))
        };
        GlmScenario {
            family,
            n,
            beta,
            intercept,
            covariates,
            error_sd: 1.0,
            noise,
        }
    }

    pub fn simulate(&self, seed: u64) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let q = self.beta.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = match self.covariates {
            CovariateLaw::Normal { mean, sd } => {
                let d = Normal::new(mean, sd).map_err(|e| crate::PandaError::Validation(e.to_string()))?;
                DMatrix::from_fn(self.n, q, |_, _| d.sample(&mut rng))
            }
            CovariateLaw::Uniform { low, high } => {
                if !(low < high) {
                    return invalid("uniform covariate law needs low < high");
                }
                let d = Uniform::new(low, high);
                DMatrix::from_fn(self.n, q, |_, _| d.sample(&mut rng))
            }
        };
        let beta = DVector::from_column_slice(&self.beta);
        let eta = &x * beta + DVector::from_element(self.n, self.intercept.unwrap_or(0.0));
        let y = DVector::from_iterator(
            self.n,
            eta.iter().map(|&e| -> f64 {
                let mu = self.family.mean(e);
                match self.family {
                    NodeFamily::Gaussian => mu + self.error_sd * rng.sample::<f64, _>(rand_distr::StandardNormal),
                    NodeFamily::Bernoulli => f64::from(u8::from(rng.gen_bool(mu.clamp(0.0, 1.0)))),
                    NodeFamily::Poisson => Poisson::new(mu).map(|d| d.sample(&mut rng)).unwrap_or(0.0),
                    NodeFamily::Exponential => Exp::new(1.0 / mu).map(|d| d.sample(&mut rng)).unwrap_or(mu),
                    NodeFamily::NegBinomial { r } => {
                        let r = r as f64;
                        let lam = Gamma::new(r, mu / r).map(|d| d.sample(&mut rng)).unwrap_or(mu);
                        if lam > 0.0 {
                            Poisson::new(lam).map(|d| d.sample(&mut rng)).unwrap_or(0.0)
                        } else {
                            0.0
                        }
                    }
                }
            }),
        );
        Ok((x, y))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoverageReport {
    pub level: f64,
    pub beta: Vec<f64>,
    /// Fraction of replicates whose interval covers the true coefficient.
    pub coverage: Vec<f64>,
    pub mean_width: Vec<f64>,
    pub replicates: usize,
    /// Replicates that failed, with the error message.
    pub failures: Vec<(usize, String)>,
}

impl CoverageReport {
    fn pooled(&self, values: &[f64], zero: bool) -> f64 {
        let sel: Vec<f64> = self
            .beta
            .iter()
            .zip(values)
            .filter(|(b, _)| (**b == 0.0) == zero)
            .map(|(_, v)| *v)
            .collect();
        sel.iter().sum::<f64>() / sel.len().max(1) as f64
    }

    pub fn zero_coverage(&self) -> f64 {
        self.pooled(&self.coverage, true)
    }

    pub fn zero_width(&self) -> f64 {
        self.pooled(&self.mean_width, true)
    }

    pub fn nonzero_coverage(&self) -> f64 {
        self.pooled(&self.coverage, false)
    }

    pub fn nonzero_width(&self) -> f64 {
        self.pooled(&self.mean_width, false)
    }
}

/// Repeats simulate → fit → intervals and tallies coverage per coefficient.
/// Failed replicates are excluded and listed.
pub fn coverage_experiment(
    scenario: &GlmScenario,
    replicates: usize,
    level: f64,
    cfg: &PandaConfig,
) -> Result<CoverageReport> {
    if replicates == 0 {
        return invalid("need at least one replicate");
    }
    let q = scenario.beta.len();
    let intercept = scenario.intercept.is_some();
    let off = usize::from(intercept);
    let runs: Vec<std::result::Result<Vec<(bool, f64)>, String>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let seed = child_seed(cfg.seed, r as u64);
            let one = || -> Result<Vec<(bool, f64)>> {
                let (x, y) = scenario.simulate(seed)?;
                let rc = PandaConfig { seed, ..cfg.clone() };
                let fit = run_panda_glm(&x, &y, scenario.family, &scenario.noise, &rc, intercept)?;
                let rep = infer_glm(&x, &y, &scenario.noise, &fit, rc.n_e, level)?;
                Ok((0..q)
                    .map(|k| {
                        let iv = &rep.intervals[k + off];
                        let b = scenario.beta[k];
                        (iv.lower <= b && b <= iv.upper, iv.upper - iv.lower)
                    })
                    .collect())
            };
            one().map_err(|e| e.to_string())
        })
        .collect();
    let mut hits = vec![0usize; q];
    let mut widths = vec![0.0; q];
    let mut failures = Vec::new();
    let mut used = 0usize;
    for (r, run) in runs.into_iter().enumerate() {
        match run {
            Ok(v) => {
                used += 1;
                for (k, (c, w)) in v.into_iter().enumerate() {
                    hits[k] += usize::from(c);
                    widths[k] += w;
                }
            }
            Err(e) => failures.push((r, e)),
        }
    }
    if used == 0 {
        return invalid(format!("all {replicates} replicates failed; first: {}", failures[0].1));
    }
    Ok(CoverageReport {
        level,
        beta: scenario.beta.clone(),
        coverage: hits.iter().map(|&h| h as f64 / used as f64).collect(),
        mean_width: widths.iter().map(|w| w / used as f64).collect(),
        replicates: used,
        failures,
    })
}

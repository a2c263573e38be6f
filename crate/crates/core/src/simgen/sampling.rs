use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::graph::Adjacency;
use crate::error::{invalid, PandaError, Result};
use crate::glm::NodeFamily;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrecisionSpec {
    pub magnitude: f64,
    pub diag_dominance: f64,
    pub seed: u64,
}

impl Default for PrecisionSpec {
    fn default() -> Self {
        PrecisionSpec {
            magnitude: 0.4,
            diag_dominance: 0.2,
            seed: 0,
        }
    }
}

/// Precision matrix with ±magnitude on the edges of `a` and a diagonal of
/// (1 + diag_dominance) times the absolute off-diagonal row sum. Isolated
/// nodes get a unit diagonal.
pub fn gen_precision(a: &Adjacency, spec: &PrecisionSpec) -> DMatrix<f64> {
    let p = a.p();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut omega = DMatrix::zeros(p, p);
    for (i, j) in a.edges() {
        let w = if rng.gen_bool(0.5) { spec.magnitude } else { -spec.magnitude };
        omega[(i, j)] = w;
        omega[(j, i)] = w;
    }
    for i in 0..p {
        let s: f64 = (0..p).filter(|&j| j != i).map(|j| omega[(i, j)].abs()).sum();
        omega[(i, i)] = if s > 0.0 { s * (1.0 + spec.diag_dominance) } else { 1.0 };
    }
    omega
}

/// `n` draws from N(0, Ω⁻¹).
pub fn sample_ggm(omega: &DMatrix<f64>, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    let p = omega.nrows();
    if omega.ncols() != p {
        return invalid("precision matrix must be square");
    }
    let chol = omega
        .clone()
        .cholesky()
        .ok_or_else(|| PandaError::NotPositiveDefinite("precision matrix".into()))?;
    // With Ω = LL', x = L⁻ᵀz has covariance Ω⁻¹.
    let lt = chol.l().transpose();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DMatrix::from_fn(p, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let x = lt
        .solve_upper_triangular(&z)
        .ok_or_else(|| PandaError::NotPositiveDefinite("precision factor".into()))?;
    Ok(x.transpose())
}

/// Pairwise exponential-family graph: node j has natural parameter
/// intercepts[j] + Σ_k interactions[(j,k)] x_k.
#[derive(Clone, Debug)]
pub struct GibbsModel {
    pub families: Vec<NodeFamily>,
    pub intercepts: DVector<f64>,
    pub interactions: DMatrix<f64>,
}

impl GibbsModel {
    fn validate(&self) -> Result<()> {
        let p = self.families.len();
        if self.intercepts.len() != p || self.interactions.shape() != (p, p) {
            return invalid("model dimensions disagree");
        }
        for j in 0..p {
            for k in 0..p {
                if j != k && (self.interactions[(j, k)] - self.interactions[(k, j)]).abs() > 1e-12 {
                    return invalid("interactions must be symmetric");
                }
            }
            match self.families[j] {
                NodeFamily::Bernoulli => {}
                NodeFamily::Poisson => {
                    if (0..p).any(|k| k != j && self.interactions[(j, k)] > 0.0) {
                        return invalid(format!(
                            "node {}: Poisson nodes need non-positive interactions",
                            j + 1
                        ));
                    }
                }
                f => {
                    return invalid(format!("Gibbs sampling supports Bernoulli and Poisson nodes, not {}", f.name()))
                }
            }
        }
        Ok(())
    }
}

/// Systematic-scan Gibbs sampler: `burnin` discarded sweeps, then one
/// retained state every `thin` sweeps.
pub fn sample_gibbs(model: &GibbsModel, n: usize, burnin: usize, thin: usize, seed: u64) -> Result<DMatrix<f64>> {
    model.validate()?;
    let p = model.families.len();
    let thin = thin.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = DVector::zeros(p);
    let mut out = DMatrix::zeros(n, p);
    let sweep = |state: &mut DVector<f64>, rng: &mut ChaCha8Rng| {
        for j in 0..p {
            let mut eta = model.intercepts[j];
            for k in 0..p {
                if k != j {
                    eta += model.interactions[(j, k)] * state[k];
                }
            }
            state[j] = match model.families[j] {
                NodeFamily::Bernoulli => {
                    let prob = 1.0 / (1.0 + (-eta).exp());
                    f64::from(u8::from(rng.gen_bool(prob)))
                }
                _ => {
                    let mu = eta.exp();
                    if mu > 0.0 {
                        Poisson::new(mu).map(|d| d.sample(rng)).unwrap_or(0.0)
                    } else {
                        0.0
                    }
                }
            };
        }
    };
    for _ in 0..burnin {
        sweep(&mut state, &mut rng);
    }
    for i in 0..n {
        for _ in 0..thin {
            sweep(&mut state, &mut rng);
        }
        out.set_row(i, &state.transpose());
    }
    Ok(out)
}

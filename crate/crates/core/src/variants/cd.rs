use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::engine::{drive, moving_average, straddles_zero, FitTrace, Iteration, PandaConfig, StepOutcome};
use crate::error::{invalid, Result};
use crate::glm::{fit_ols, AugmentedDesign};
use crate::linalg::{center_columns, gram, inv_spd};
use crate::ngd::{noise_variance, NoiseSpec};
use crate::rng::stream;
use crate::simgen::Adjacency;

/// Ω̂ = L'D⁻¹L from sequential regressions.
#[derive(Clone, Debug)]
pub struct LdlEstimate {
    /// Unit lower-triangular factor in the fitted node order.
    pub l: DMatrix<f64>,
    /// Residual variances in the fitted node order.
    pub d: DVector<f64>,
    /// Precision in the original node order.
    pub omega: DMatrix<f64>,
    pub adjacency: Adjacency,
    pub order: Vec<usize>,
    pub trace: FitTrace,
}

struct Regression {
    x: DMatrix<f64>,
    y: DVector<f64>,
    xtx: DMatrix<f64>,
    spec: NoiseSpec,
}

#[derive(Clone)]
struct NodeState {
    history: Vec<DVector<f64>>,
    updates: usize,
    theta_bar: DVector<f64>,
    sigma2: f64,
}

struct CdState<'a> {
    regs: Vec<Regression>,
    nodes: Vec<NodeState>,
    first_var: f64,
    cfg: &'a PandaConfig,
}

struct NodeStep {
    node: NodeState,
    sse: f64,
    aug: f64,
    kq: f64,
}

impl CdState<'_> {
    fn node_step(&self, j: usize, t: usize) -> Result<NodeStep> {
        let reg = &self.regs[j];
        let n = reg.x.nrows() as f64;
        let mut node = self.nodes[j].clone();
        let mut rng = stream(self.cfg.seed, t as u64, j as u64);
        let mut last = None;
        for _ in 0..self.cfg.inner {
            let cov = noise_variance(&reg.spec, node.theta_bar.as_slice(), self.cfg.n_e)?;
            let noise = cov.sample(self.cfg.n_e, &mut rng);
            let design = AugmentedDesign::new(reg.x.clone(), noise, reg.y.clone(), 0.0, false)?;
            let theta_hat = fit_ols(&design)?;
            node.history.push(theta_hat.clone());
            if node.history.len() > self.cfg.window {
                node.history.remove(0);
            }
            node.updates += 1;
            node.theta_bar = if node.updates > self.cfg.window {
                moving_average(&node.history, self.cfg.window)
            } else {
                theta_hat
            };
            let sse = (&reg.y - &reg.x * &node.theta_bar).norm_squared();
            node.sigma2 = sse / n;
            last = Some((design, cov));
        }
        let (design, cov) = last.expect("inner >= 1");
        let sse = (&reg.y - &reg.x * &node.theta_bar).norm_squared();
        let noise_part = (&design.noise * &node.theta_bar).norm_squared();
        let g = design.gram();
        let ginv = inv_spd(&g)?;
        let nu = (&ginv * &reg.xtx).trace();
        node.sigma2 = sse / (n - nu).max(1.0);
        let q = cov.quadratic_form(node.theta_bar.as_slice());
        Ok(NodeStep {
            node,
            sse,
            aug: sse + noise_part,
            kq: 8.0 * q * q,
        })
    }
}

impl Iteration for CdState<'_> {
    type Snapshot = (Vec<DVector<f64>>, DVector<f64>);

    fn step(&mut self, t: usize) -> Result<StepOutcome> {
        let p = self.regs.len();
        let outs: Vec<NodeStep> = (1..p)
            .into_par_iter()
            .map(|j| self.node_step(j, t))
            .collect::<Result<_>>()?;
        let (mut loss, mut aug, mut kq) = (0.0, 0.0, 0.0);
        for (j, o) in (1..p).zip(outs) {
            loss += o.sse;
            aug += o.aug;
            kq += o.kq;
            self.nodes[j] = o.node;
        }
        Ok(StepOutcome {
            raw_loss: loss,
            aug_loss: Some(aug),
            c1: Some(0.5 * self.cfg.n_e as f64 * kq.sqrt()),
            residual: None,
        })
    }

    fn snapshot(&self) -> Self::Snapshot {
        let mut d = DVector::zeros(self.nodes.len());
        d[0] = self.first_var;
        for j in 1..self.nodes.len() {
            d[j] = self.nodes[j].sigma2;
        }
        (self.nodes.iter().map(|s| s.theta_bar.clone()).collect(), d)
    }
}

/// Sequential-regression estimate in column order.
pub fn run_panda_cd(data: &DMatrix<f64>, spec: &NoiseSpec, cfg: &PandaConfig) -> Result<LdlEstimate> {
    let order: Vec<usize> = (0..data.ncols()).collect();
    run_panda_cd_ordered(data, spec, cfg, &order)
}

/// Node `order[j]` is regressed on `order[0..j]`.
pub fn run_panda_cd_ordered(
    data: &DMatrix<f64>,
    spec: &NoiseSpec,
    cfg: &PandaConfig,
    order: &[usize],
) -> Result<LdlEstimate> {
    super::check_data(data)?;
    let (n, p) = data.shape();
    cfg.validate(n, p)?;
    spec.validate(None)?;
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    if sorted != (0..p).collect::<Vec<_>>() {
        return invalid("order must be a permutation of the columns");
    }
    if matches!(spec, NoiseSpec::GroupLasso { .. } | NoiseSpec::FusedRidge { .. }) {
        return invalid("grouped noise is not defined for sequential regressions");
    }
    let centered = center_columns(data);
    let x = DMatrix::from_fn(n, p, |i, j| centered[(i, order[j])]);

    let mut regs = Vec::with_capacity(p);
    let mut nodes = Vec::with_capacity(p);
    for j in 0..p {
        let xj = x.columns(0, j).into_owned();
        let y = x.column(j).into_owned();
        let xtx = gram(&xj);
        let theta0 = if j == 0 {
            DVector::zeros(0)
        } else {
            let ridge = &xtx + DMatrix::identity(j, j) * 0.1;
            crate::linalg::solve_spd(&ridge, &xj.tr_mul(&y))?
        };
        let spec_j = match spec {
            NoiseSpec::AdaptiveLasso { lambda, gamma, consistent: None } if j > 0 => {
                let pilot = if n > j { crate::linalg::solve_spd(&xtx, &xj.tr_mul(&y)).unwrap_or(theta0.clone()) } else { theta0.clone() };
                NoiseSpec::AdaptiveLasso { lambda: *lambda, gamma: *gamma, consistent: Some(pilot.iter().cloned().collect()) }
            }
            s => s.clone(),
        };
        let sigma2 = (&y - &xj * &theta0).norm_squared() / n as f64;
        regs.push(Regression { x: xj, y, xtx, spec: spec_j });
        nodes.push(NodeState {
            history: Vec::new(),
            updates: 0,
            theta_bar: theta0,
            sigma2,
        });
    }
    let first_var = x.column(0).norm_squared() / (n as f64 - 1.0);
    let mut state = CdState {
        regs,
        nodes,
        first_var,
        cfg,
    };
    let (trace, snaps) = drive(&mut state, cfg)?;

    let r = snaps.len() as f64;
    let mut l = DMatrix::identity(p, p);
    for j in 1..p {
        for k in 0..j {
            let seq = snaps.iter().map(|s| s.0[j][k]);
            if !straddles_zero(seq.clone(), cfg.tau0) {
                l[(j, k)] = -seq.sum::<f64>() / r;
            }
        }
    }
    let d = snaps.iter().fold(DVector::zeros(p), |a, s| a + &s.1) / r;
    if d.iter().any(|&v| !(v > 0.0)) {
        return invalid("non-positive residual variance");
    }
    let dinv = DMatrix::from_diagonal(&d.map(|v| 1.0 / v));
    let omega_perm = l.transpose() * dinv * &l;
    let mut omega = DMatrix::zeros(p, p);
    for a in 0..p {
        for b in 0..p {
            omega[(order[a], order[b])] = omega_perm[(a, b)];
        }
    }
    Ok(LdlEstimate {
        adjacency: Adjacency::from_support(&omega),
        l,
        d,
        omega,
        order: order.to_vec(),
        trace,
    })
}

//! The noise-augmentation loop for neighborhood selection and single GLMs.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, PandaError, Result};
use crate::glm::{fit_glm_from, fit_ols, AugmentedDesign, NodeFamily};
use crate::linalg::{center_columns, solve_spd, standardize_columns};
use crate::ngd::{expected_penalty, noise_variance, NoiseCovariance, NoiseSpec};
use crate::rng::{child_seed, stream};
use crate::simgen::Adjacency;

pub const DEFAULT_REL_TOL: f64 = 1e-2;

/// An n×p data matrix with one family per column.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub data: DMatrix<f64>,
    pub names: Vec<String>,
    pub families: Vec<NodeFamily>,
}

impl Dataset {
    pub fn new(data: DMatrix<f64>, families: Vec<NodeFamily>) -> Result<Self> {
        let names = (1..=data.ncols()).map(|j| format!("X{j}")).collect();
        Self::with_names(data, families, names)
    }

    pub fn with_names(data: DMatrix<f64>, families: Vec<NodeFamily>, names: Vec<String>) -> Result<Self> {
        if families.len() != data.ncols() || names.len() != data.ncols() {
            return invalid("one family and one name per column required");
        }
        for (j, f) in families.iter().enumerate() {
            f.validate()?;
            if let Some(i) = data.column(j).iter().position(|&v| !f.valid_response(v)) {
                return invalid(format!(
                    "row {}, column {}: value {} invalid for the {} family",
                    i + 1,
                    names[j],
                    data[(i, j)],
                    f.name()
                ));
            }
        }
        Ok(Dataset { data, names, families })
    }

    pub fn gaussian(data: DMatrix<f64>) -> Self {
        let p = data.ncols();
        Self::new(data, vec![NodeFamily::Gaussian; p]).expect("finite data")
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn p(&self) -> usize {
        self.data.ncols()
    }

    pub fn all_gaussian(&self) -> bool {
        self.families.iter().all(|f| f.is_gaussian())
    }

    /// Copy with Gaussian columns standardized; other columns untouched.
    pub fn standardized(&self) -> Dataset {
        let z = standardize_columns(&self.data);
        let mut data = self.data.clone();
        for (j, f) in self.families.iter().enumerate() {
            if f.is_gaussian() {
                data.set_column(j, &z.column(j));
            }
        }
        Dataset {
            data,
            names: self.names.clone(),
            families: self.families.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Convergence {
    /// Run all iterations; the trace is left for inspection.
    Off,
    RelativeChange { tol: f64 },
    ZTest { alpha: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Symmetrization {
    Intersection,
    Union,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Init {
    /// Ridge fit with the given penalty on every regression.
    Ridge { penalty: f64 },
    /// Independent N(0, scale²) coefficients.
    Random { scale: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PandaConfig {
    pub max_iter: usize,
    pub n_e: usize,
    pub window: usize,
    pub tau0: f64,
    pub banked: usize,
    pub seed: u64,
    pub convergence: Convergence,
    pub symmetrization: Symmetrization,
    pub init: Init,
    /// Number of starting points; extra starts are random.
    pub starts: usize,
    /// Inner alternations per outer iteration (Cholesky variant).
    pub inner: usize,
    /// Magnitude floor on current estimates (columnwise-inverse variant).
    pub tau1: f64,
}

impl Default for PandaConfig {
    fn default() -> Self {
        PandaConfig {
            max_iter: 70,
            n_e: 2000,
            window: 1,
            tau0: 1e-6,
            banked: 100,
            seed: 0,
            convergence: Convergence::RelativeChange { tol: DEFAULT_REL_TOL },
            symmetrization: Symmetrization::Intersection,
            init: Init::Ridge { penalty: 0.1 },
            starts: 1,
            inner: 5,
            tau1: 1e-6,
        }
    }
}

impl PandaConfig {
    /// Defaults for inference on a single GLM: few noise rows, long window.
    pub fn inference(n: usize, q: usize) -> Self {
        let n_e = n.div_ceil(10).max((q + 1).saturating_sub(n));
        PandaConfig {
            n_e,
            window: 50,
            max_iter: 200,
            banked: 200,
            ..Self::default()
        }
    }

    pub fn validate(&self, n: usize, p: usize) -> Result<()> {
        if n + self.n_e <= p {
            return invalid(format!("need n + n_e > p (n={n}, n_e={}, p={p})", self.n_e));
        }
        if self.window == 0 || self.max_iter < self.window {
            return invalid("need max_iter >= window >= 1");
        }
        if self.banked == 0 {
            return invalid("need at least one banked iteration");
        }
        if !(self.tau0 > 0.0) {
            return invalid("tau0 must be positive");
        }
        if self.starts == 0 || self.inner == 0 {
            return invalid("starts and inner must be positive");
        }
        match self.convergence {
            Convergence::RelativeChange { tol } if !(tol > 0.0) => invalid("relative tolerance must be positive"),
            Convergence::ZTest { alpha } if !(alpha > 0.0 && alpha < 1.0) => invalid("alpha must lie in (0, 1)"),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Search,
    Banked,
}

/// One iteration of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub phase: Phase,
    /// Window-averaged loss on the original data.
    pub loss: f64,
    /// Loss on the original data at this iteration's averaged estimate.
    pub raw_loss: f64,
    /// Loss on the augmented data at this iteration's averaged estimate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aug_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z_stat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rel_change: Option<f64>,
    /// Largest residual of a closed-form solve in this iteration, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ConvergenceStatus {
    Converged { iteration: usize },
    MaxIterations,
    NotAssessed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub records: Vec<TraceRecord>,
    pub status: ConvergenceStatus,
}

impl FitTrace {
    pub fn converged(&self) -> bool {
        !matches!(self.status, ConvergenceStatus::MaxIterations)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceCheck {
    pub converged: bool,
    pub z_stat: Option<f64>,
    pub rel_change: Option<f64>,
}

fn rel_change(prev: f64, cur: f64) -> f64 {
    if prev == cur {
        0.0
    } else {
        (cur - prev).abs() / prev.abs()
    }
}

/// Applies `criterion` to the last two records of `trace`.
pub fn check_convergence(trace: &[TraceRecord], criterion: Convergence, n_e: usize) -> ConvergenceCheck {
    let none = ConvergenceCheck {
        converged: false,
        z_stat: None,
        rel_change: None,
    };
    if trace.len() < 2 {
        return none;
    }
    let (prev, cur) = (&trace[trace.len() - 2], &trace[trace.len() - 1]);
    let rel = rel_change(prev.loss, cur.loss);
    match criterion {
        Convergence::Off => ConvergenceCheck {
            rel_change: Some(rel),
            ..none
        },
        Convergence::RelativeChange { tol } => ConvergenceCheck {
            converged: rel < tol,
            z_stat: None,
            rel_change: Some(rel),
        },
        Convergence::ZTest { alpha } => {
            let (Some(a0), Some(a1), Some(c0), Some(c1)) = (prev.aug_loss, cur.aug_loss, prev.c1, cur.c1) else {
                return ConvergenceCheck {
                    converged: rel < DEFAULT_REL_TOL,
                    z_stat: None,
                    rel_change: Some(rel),
                };
            };
            let var = (c0 * c0 + c1 * c1) / n_e as f64;
            if !(var > 0.0) || !var.is_finite() {
                return ConvergenceCheck {
                    converged: rel < DEFAULT_REL_TOL,
                    z_stat: None,
                    rel_change: Some(rel),
                };
            }
            let z = (a1 - a0) / var.sqrt();
            ConvergenceCheck {
                converged: z.abs() <= normal_quantile(1.0 - alpha / 2.0),
                z_stat: Some(z),
                rel_change: Some(rel),
            }
        }
    }
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p)
}

/// Mean of the last `min(m, len)` entries.
pub fn moving_average(history: &[DVector<f64>], m: usize) -> DVector<f64> {
    assert!(!history.is_empty(), "moving average of an empty history");
    let w = m.max(1).min(history.len());
    let tail = &history[history.len() - w..];
    let mut acc = tail[0].clone();
    for h in &tail[1..] {
        acc += h;
    }
    acc / w as f64
}

/// True when the sequence changes sign and |max·min| < τ₀.
pub fn straddles_zero(values: impl IntoIterator<Item = f64>, tau0: f64) -> bool {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let prod = lo * hi;
    prod < 0.0 && prod.abs() < tau0
}

/// Per ordered pair (j, k): whether θ_jk was zeroed, and its retained value.
#[derive(Clone, Debug)]
pub struct PairDecisions {
    pub zeroed: DMatrix<f64>,
    pub value: DMatrix<f64>,
}

impl PairDecisions {
    pub fn is_zeroed(&self, j: usize, k: usize) -> bool {
        self.zeroed[(j, k)] != 0.0
    }
}

/// Thresholds banked p×p snapshots entry by entry. Retained entries keep
/// the final banked value.
pub fn hard_threshold(banked: &[DMatrix<f64>], tau0: f64) -> PairDecisions {
    assert!(!banked.is_empty(), "no banked snapshots");
    let last = banked.last().unwrap();
    let (r, c) = last.shape();
    let mut zeroed = DMatrix::zeros(r, c);
    let mut value = last.clone();
    for j in 0..r {
        for k in 0..c {
            if j == k {
                continue;
            }
            if straddles_zero(banked.iter().map(|b| b[(j, k)]), tau0) {
                zeroed[(j, k)] = 1.0;
                value[(j, k)] = 0.0;
            }
        }
    }
    PairDecisions { zeroed, value }
}

/// Signed value of smaller magnitude.
pub fn min_magnitude(a: f64, b: f64) -> f64 {
    if a.abs() <= b.abs() {
        a
    } else {
        b
    }
}

/// Combines the two directions of every pair into an adjacency and a
/// symmetric coefficient matrix.
pub fn symmetrize(dec: &PairDecisions, rule: Symmetrization) -> (Adjacency, DMatrix<f64>) {
    let p = dec.value.nrows();
    let mut adj = Adjacency::empty(p);
    let mut theta = DMatrix::zeros(p, p);
    for j in 0..p {
        for k in j + 1..p {
            let (zj, zk) = (dec.is_zeroed(j, k), dec.is_zeroed(k, j));
            let edge = match rule {
                Symmetrization::Intersection => !(zj && zk),
                Symmetrization::Union => !(zj || zk),
            };
            if !edge {
                continue;
            }
            let v = match (zj, zk) {
                (false, false) => min_magnitude(dec.value[(j, k)], dec.value[(k, j)]),
                (false, true) => dec.value[(j, k)],
                _ => dec.value[(k, j)],
            };
            adj.set(j, k, true);
            theta[(j, k)] = v;
            theta[(k, j)] = v;
        }
    }
    (adj, theta)
}

/// Pieces reported by one iteration of a variant.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct StepOutcome {
    pub raw_loss: f64,
    pub aug_loss: Option<f64>,
    pub c1: Option<f64>,
    pub residual: Option<f64>,
}

pub(crate) trait Iteration {
    type Snapshot;
    /// Runs iteration `t` (1-based).
    fn step(&mut self, t: usize) -> Result<StepOutcome>;
    fn snapshot(&self) -> Self::Snapshot;
}

/// Runs the search phase until convergence or `max_iter`, then `banked`
/// further iterations, collecting a snapshot after each banked one.
pub(crate) fn drive<I: Iteration>(state: &mut I, cfg: &PandaConfig) -> Result<(FitTrace, Vec<I::Snapshot>)> {
    let mut records: Vec<TraceRecord> = Vec::with_capacity(cfg.max_iter + cfg.banked);
    let mut raw: VecDeque<f64> = VecDeque::with_capacity(cfg.window);
    let mut status = match cfg.convergence {
        Convergence::Off => ConvergenceStatus::NotAssessed,
        _ => ConvergenceStatus::MaxIterations,
    };
    let mut push = |records: &mut Vec<TraceRecord>, t: usize, phase: Phase, out: StepOutcome| {
        if raw.len() == cfg.window {
            raw.pop_front();
        }
        raw.push_back(out.raw_loss);
        let loss = raw.iter().sum::<f64>() / raw.len() as f64;
        records.push(TraceRecord {
            iter: t,
            phase,
            loss,
            raw_loss: out.raw_loss,
            aug_loss: out.aug_loss,
            c1: out.c1,
            z_stat: None,
            rel_change: None,
            residual: out.residual,
            converged: false,
        });
    };

    let mut t = 0;
    while t < cfg.max_iter {
        t += 1;
        let out = state.step(t)?;
        if !out.raw_loss.is_finite() {
            return Err(PandaError::Validation(format!("loss became non-finite at iteration {t}")));
        }
        push(&mut records, t, Phase::Search, out);
        let check = check_convergence(&records, cfg.convergence, cfg.n_e);
        let last = records.last_mut().unwrap();
        last.z_stat = check.z_stat;
        last.rel_change = check.rel_change;
        if check.converged && t >= cfg.window.max(2) {
            last.converged = true;
            status = ConvergenceStatus::Converged { iteration: t };
            break;
        }
    }
    let mut snaps = Vec::with_capacity(cfg.banked);
    for s in 1..=cfg.banked {
        let out = state.step(t + s)?;
        push(&mut records, t + s, Phase::Banked, out);
        snaps.push(state.snapshot());
    }
    Ok((FitTrace { records, status }, snaps))
}

/// Estimated graph from neighborhood selection.
#[derive(Clone, Debug)]
pub struct GraphEstimate {
    /// Row j holds the regression of node j on the others, after
    /// thresholding; the diagonal is zero.
    pub theta: DMatrix<f64>,
    /// Symmetric coefficients after combining the two directions.
    pub theta_sym: DMatrix<f64>,
    pub adjacency: Adjacency,
    pub precision: Option<DMatrix<f64>>,
    /// Residual variance per node; `None` for non-Gaussian nodes.
    pub sigma2: Vec<Option<f64>>,
    pub intercepts: Vec<f64>,
    pub trace: FitTrace,
    /// Index of the start that produced this estimate.
    pub start: usize,
    pub warnings: Vec<String>,
}

struct NodeProblem {
    family: NodeFamily,
    intercept: bool,
    covariates: Vec<usize>,
    x: DMatrix<f64>,
    y: DVector<f64>,
    noise_response: f64,
    spec: NoiseSpec,
}

impl NodeProblem {
    fn intercept(&self) -> bool {
        self.intercept
    }

    fn coefs<'a>(&self, theta: &'a DVector<f64>) -> &'a [f64] {
        let off = usize::from(self.intercept());
        &theta.as_slice()[off..]
    }

    fn theta0(&self, theta: &DVector<f64>) -> f64 {
        if self.intercept() {
            theta[0]
        } else {
            0.0
        }
    }

    fn eta(&self, theta: &DVector<f64>) -> DVector<f64> {
        let off = usize::from(self.intercept());
        let mut eta = &self.x * theta.rows(off, self.x.ncols());
        if self.intercept() {
            eta.add_scalar_mut(theta[0]);
        }
        eta
    }

    /// SSE for Gaussian nodes, negative log-likelihood otherwise.
    fn loss(&self, theta: &DVector<f64>) -> f64 {
        let eta = self.eta(theta);
        if self.family.is_gaussian() {
            (&self.y - eta).norm_squared()
        } else {
            self.y.iter().zip(eta.iter()).map(|(&y, &e)| self.family.row_nll(y, e)).sum()
        }
    }

    fn noise_loss(&self, noise: &DMatrix<f64>, theta: &DVector<f64>) -> f64 {
        let lin = noise * DVector::from_column_slice(self.coefs(theta));
        if self.family.is_gaussian() {
            lin.iter().map(|v| (self.noise_response - v).powi(2)).sum()
        } else {
            let t0 = self.theta0(theta);
            lin.iter().map(|v| self.family.row_nll(self.noise_response, t0 + v)).sum()
        }
    }

    fn design(&self, noise: DMatrix<f64>) -> Result<AugmentedDesign> {
        AugmentedDesign::new(self.x.clone(), noise, self.y.clone(), self.noise_response, self.intercept())
    }

    fn fit(&self, design: &AugmentedDesign, warm: &DVector<f64>) -> Result<DVector<f64>> {
        if self.family.is_gaussian() {
            fit_ols(design)
        } else {
            fit_glm_from(self.family, design, Some(warm))
        }
    }

    /// Ridge-type start: for GLMs the penalty enters as √penalty·I noise rows.
    fn ridge_start(&self, penalty: f64) -> Result<DVector<f64>> {
        let q = self.x.ncols();
        let noise = DMatrix::identity(q, q) * penalty.sqrt();
        let design = self.design(noise)?;
        if self.family.is_gaussian() {
            return fit_ols(&design);
        }
        match fit_glm_from(self.family, &design, None) {
            Ok(t) => Ok(t),
            Err(PandaError::FitDivergence { .. }) => Ok(self.null_start()),
            Err(e) => Err(e),
        }
    }

    fn null_start(&self) -> DVector<f64> {
        let mut t = DVector::zeros(self.x.ncols() + usize::from(self.intercept()));
        if self.intercept() {
            t[0] = self.family.link(self.y.mean());
        }
        t
    }

    /// Pilot estimate for adaptive weights: unpenalized when identifiable,
    /// ridge otherwise.
    fn pilot(&self) -> Result<Vec<f64>> {
        let q = self.x.ncols();
        let unpenalized = if self.x.nrows() > q + usize::from(self.intercept()) {
            let d = self.design(DMatrix::zeros(0, q))?;
            self.fit(&d, &self.null_start()).ok()
        } else {
            None
        };
        let theta = match unpenalized {
            Some(t) => t,
            None => self.ridge_start(0.1)?,
        };
        Ok(self.coefs(&theta).to_vec())
    }
}

fn build_problems(data: &Dataset, spec: &NoiseSpec) -> Result<Vec<NodeProblem>> {
    let p = data.p();
    let centered = center_columns(&data.data);
    let mut out = Vec::with_capacity(p);
    for j in 0..p {
        let family = data.families[j];
        let covariates: Vec<usize> = (0..p).filter(|&k| k != j).collect();
        let x = centered.clone().remove_column(j);
        let (y, noise_response) = if family.is_gaussian() {
            (centered.column(j).into_owned(), 0.0)
        } else {
            let y = data.data.column(j).into_owned();
            let mean = y.mean();
            (y, mean)
        };
        let mut prob = NodeProblem {
            family,
            intercept: !family.is_gaussian(),
            spec: spec.restrict(&covariates),
            covariates,
            x,
            y,
            noise_response,
        };
        if let NoiseSpec::AdaptiveLasso {
            lambda,
            gamma,
            consistent: None,
        } = &prob.spec
        {
            let pilot = prob.pilot().map_err(|e| e.at_node(j))?;
            prob.spec = NoiseSpec::AdaptiveLasso {
                lambda: *lambda,
                gamma: *gamma,
                consistent: Some(pilot),
            };
        }
        prob.spec.validate(Some(p - 1))?;
        out.push(prob);
    }
    Ok(out)
}

struct NodeOutput {
    theta_hat: DVector<f64>,
    theta_bar: DVector<f64>,
    loss: f64,
    aug_loss: f64,
    kappa_q2: f64,
    noise: Option<DMatrix<f64>>,
}

struct NsState<'a> {
    problems: &'a [NodeProblem],
    cfg: &'a PandaConfig,
    seed: u64,
    history: Vec<Vec<DVector<f64>>>,
    theta_bar: Vec<DVector<f64>>,
    /// Last noise block per Gaussian node, for the final degrees of freedom.
    noises: Vec<Option<DMatrix<f64>>>,
}

impl<'a> NsState<'a> {
    fn node_step(&self, j: usize, t: usize) -> Result<NodeOutput> {
        let prob = &self.problems[j];
        let prev = &self.theta_bar[j];
        let mut rng = stream(self.seed, t as u64, j as u64);
        let cov = noise_variance(&prob.spec, prob.coefs(prev), self.cfg.n_e)?;
        let noise = cov.sample(self.cfg.n_e, &mut rng);
        let design = prob.design(noise)?;
        let theta_hat = prob.fit(&design, prev)?;

        let mut hist = self.history[j].clone();
        hist.push(theta_hat.clone());
        let theta_bar = if t > self.cfg.window {
            moving_average(&hist, self.cfg.window)
        } else {
            theta_hat.clone()
        };
        let loss = prob.loss(&theta_bar);
        let aug_loss = loss + prob.noise_loss(&design.noise, &theta_bar);
        let q = cov.quadratic_form(prob.coefs(&theta_bar));
        let kappa_q2 = prob.family.kappa(prob.theta0(&theta_bar)) * q * q;
        let noise = prob.family.is_gaussian().then_some(design.noise);
        Ok(NodeOutput {
            theta_hat,
            theta_bar,
            loss,
            aug_loss,
            kappa_q2,
            noise,
        })
    }
}

impl Iteration for NsState<'_> {
    type Snapshot = Vec<DVector<f64>>;

    fn step(&mut self, t: usize) -> Result<StepOutcome> {
        let outs: Vec<NodeOutput> = (0..self.problems.len())
            .into_par_iter()
            .map(|j| self.node_step(j, t).map_err(|e| e.at_node(j)))
            .collect::<Result<_>>()?;
        let (mut loss, mut aug, mut kq) = (0.0, 0.0, 0.0);
        for (j, o) in outs.into_iter().enumerate() {
            loss += o.loss;
            aug += o.aug_loss;
            kq += o.kappa_q2;
            let h = &mut self.history[j];
            h.push(o.theta_hat);
            if h.len() > self.cfg.window {
                h.remove(0);
            }
            self.theta_bar[j] = o.theta_bar;
            self.noises[j] = o.noise;
        }
        Ok(StepOutcome {
            raw_loss: loss,
            aug_loss: Some(aug),
            c1: Some(0.5 * self.cfg.n_e as f64 * kq.sqrt()),
            residual: None,
        })
    }

    fn snapshot(&self) -> Self::Snapshot {
        self.theta_bar.clone()
    }
}

fn initial_estimates(problems: &[NodeProblem], init: Init, seed: u64) -> Result<Vec<DVector<f64>>> {
    problems
        .iter()
        .enumerate()
        .map(|(j, prob)| match init {
            Init::Ridge { penalty } => prob.ridge_start(penalty).map_err(|e| e.at_node(j)),
            Init::Random { scale } => {
                let mut rng = stream(seed, u64::MAX >> 32, j as u64);
                let mut t = prob.null_start();
                let off = usize::from(prob.intercept());
                for k in off..t.len() {
                    t[k] = scale * rng.sample::<f64, _>(StandardNormal);
                }
                Ok(t)
            }
        })
        .collect()
}

fn to_matrix(problems: &[NodeProblem], thetas: &[DVector<f64>]) -> DMatrix<f64> {
    let p = problems.len();
    let mut m = DMatrix::zeros(p, p);
    for (j, (prob, th)) in problems.iter().zip(thetas).enumerate() {
        for (pos, &k) in prob.covariates.iter().enumerate() {
            m[(j, k)] = prob.coefs(th)[pos];
        }
    }
    m
}

/// Neighborhood selection: one augmented regression per node, iterated.
pub fn run_panda_ns(data: &Dataset, spec: &NoiseSpec, cfg: &PandaConfig) -> Result<GraphEstimate> {
    let (n, p) = (data.n(), data.p());
    if p < 2 {
        return invalid("need at least two nodes");
    }
    cfg.validate(n, p)?;
    spec.validate(None)?;
    let problems = build_problems(data, spec)?;

    let mut best: Option<(f64, GraphEstimate)> = None;
    for s in 0..cfg.starts {
        let init = if s == 0 {
            cfg.init
        } else {
            Init::Random { scale: 0.5 }
        };
        let seed = if s == 0 { cfg.seed } else { child_seed(cfg.seed, s as u64) };
        let est = run_ns_once(&problems, data, spec, cfg, init, seed, s)?;
        if cfg.starts == 1 {
            return Ok(est);
        }
        let objective = ns_objective(&problems, &est, cfg.n_e)?;
        if best.as_ref().map_or(true, |(b, _)| objective < *b) {
            best = Some((objective, est));
        }
    }
    Ok(best.expect("at least one start").1)
}

fn ns_objective(problems: &[NodeProblem], est: &GraphEstimate, n_e: usize) -> Result<f64> {
    let mut total = 0.0;
    for (j, prob) in problems.iter().enumerate() {
        let mut th = DVector::zeros(prob.covariates.len() + usize::from(prob.intercept()));
        let off = usize::from(prob.intercept());
        if prob.intercept() {
            th[0] = est.intercepts[j];
        }
        for (pos, &k) in prob.covariates.iter().enumerate() {
            th[off + pos] = est.theta[(j, k)];
        }
        total += prob.loss(&th) + expected_penalty(&prob.spec, prob.coefs(&th), n_e)?;
    }
    Ok(total)
}

fn run_ns_once(
    problems: &[NodeProblem],
    data: &Dataset,
    spec: &NoiseSpec,
    cfg: &PandaConfig,
    init: Init,
    seed: u64,
    start: usize,
) -> Result<GraphEstimate> {
    let (n, p) = (data.n(), data.p());
    let theta0 = initial_estimates(problems, init, seed)?;
    let mut state = NsState {
        problems,
        cfg,
        seed,
        history: vec![Vec::new(); p],
        theta_bar: theta0,
        noises: vec![None; p],
    };
    let (trace, snaps) = drive(&mut state, cfg)?;

    let banked: Vec<DMatrix<f64>> = snaps.iter().map(|s| to_matrix(problems, s)).collect();
    let dec = hard_threshold(&banked, cfg.tau0);
    let (adjacency, theta_sym) = symmetrize(&dec, cfg.symmetrization);
    let last = snaps.last().expect("banked >= 1");

    let mut sigma2 = vec![None; p];
    for (j, prob) in problems.iter().enumerate() {
        if let Some(e) = state.noises[j].take() {
            let g = &prob.design(e)?.gram();
            let xtx = prob.x.tr_mul(&prob.x);
            let mut nu = 0.0;
            for k in 0..xtx.ncols() {
                nu += solve_spd(g, &xtx.column(k).into_owned())?[k];
            }
            let sse = prob.loss(&last[j]);
            if (n as f64) > nu {
                sigma2[j] = Some(sse / (n as f64 - nu));
            }
        }
    }

    let precision = if data.all_gaussian() && sigma2.iter().all(|s| s.is_some()) {
        let mut omega = DMatrix::zeros(p, p);
        for j in 0..p {
            let w = 1.0 / sigma2[j].unwrap();
            omega[(j, j)] = w;
            for k in 0..p {
                if k != j {
                    omega[(k, j)] = -theta_sym[(j, k)] * w;
                }
            }
        }
        Some(crate::linalg::symmetrize(&omega))
    } else {
        None
    };

    let intercepts = problems
        .iter()
        .zip(last)
        .map(|(prob, th)| prob.theta0(th))
        .collect();

    let mut warnings = Vec::new();
    let guard = cfg.n_e as f64 * spec.unit_variance(p - 1, cfg.n_e);
    if guard >= (n as f64).sqrt() {
        warnings.push(format!(
            "n_e times the unit-coefficient noise variance is {guard:.4}, at least sqrt(n) = {:.4}",
            (n as f64).sqrt()
        ));
    }
    if matches!(trace.status, ConvergenceStatus::MaxIterations) {
        warnings.push(format!("no convergence within {} iterations", cfg.max_iter));
    }
    for w in &warnings {
        log::warn!("{w}");
    }

    Ok(GraphEstimate {
        theta: dec.value,
        theta_sym,
        adjacency,
        precision,
        sigma2,
        intercepts,
        trace,
        start,
        warnings,
    })
}

/// Result of iterating a single augmented GLM.
#[derive(Clone, Debug)]
pub struct GlmFit {
    pub family: NodeFamily,
    pub intercept: bool,
    /// Final window-averaged estimate.
    pub theta: DVector<f64>,
    /// Per-iteration estimates from the banked phase.
    pub snapshots: Vec<DVector<f64>>,
    /// Window-averaged estimates from the banked phase.
    pub averaged: Vec<DVector<f64>>,
    /// Coefficients whose banked averaged sequence straddles zero.
    pub zeroed: Vec<bool>,
    pub trace: FitTrace,
    pub warnings: Vec<String>,
}

struct GlmState<'a> {
    prob: NodeProblem,
    cfg: &'a PandaConfig,
    history: Vec<DVector<f64>>,
    theta_hat: DVector<f64>,
    theta_bar: DVector<f64>,
}

impl Iteration for GlmState<'_> {
    type Snapshot = (DVector<f64>, DVector<f64>);

    fn step(&mut self, t: usize) -> Result<StepOutcome> {
        let prob = &self.prob;
        let mut rng = stream(self.cfg.seed, t as u64, 0);
        let cov = noise_variance(&prob.spec, prob.coefs(&self.theta_bar), self.cfg.n_e)?;
        let noise = cov.sample(self.cfg.n_e, &mut rng);
        let design = prob.design(noise)?;
        let theta_hat = prob.fit(&design, &self.theta_bar)?;
        self.history.push(theta_hat.clone());
        if self.history.len() > self.cfg.window {
            self.history.remove(0);
        }
        self.theta_bar = if t > self.cfg.window {
            moving_average(&self.history, self.cfg.window)
        } else {
            theta_hat.clone()
        };
        self.theta_hat = theta_hat;
        let loss = prob.loss(&self.theta_bar);
        let q = cov.quadratic_form(prob.coefs(&self.theta_bar));
        let kq = prob.family.kappa(prob.theta0(&self.theta_bar)) * q * q;
        Ok(StepOutcome {
            raw_loss: loss,
            aug_loss: Some(loss + prob.noise_loss(&design.noise, &self.theta_bar)),
            c1: Some(0.5 * self.cfg.n_e as f64 * kq.sqrt()),
            residual: None,
        })
    }

    fn snapshot(&self) -> Self::Snapshot {
        (self.theta_hat.clone(), self.theta_bar.clone())
    }
}

/// Iterates one augmented regression of `y` on `x`.
///
/// For non-Gaussian families the noise rows carry the intercept column and
/// the response mean; for the Gaussian family they carry response 0.
pub fn run_panda_glm(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    family: NodeFamily,
    spec: &NoiseSpec,
    cfg: &PandaConfig,
    intercept: bool,
) -> Result<GlmFit> {
    let (n, q) = x.shape();
    if y.len() != n {
        return invalid("response length differs from design rows");
    }
    cfg.validate(n, q + usize::from(intercept))?;
    family.validate()?;
    let noise_response = noise_response(family, y, intercept);
    let mut prob = NodeProblem {
        family,
        intercept,
        covariates: (0..q).collect(),
        x: x.clone(),
        y: y.clone(),
        noise_response,
        spec: spec.clone(),
    };
    if let NoiseSpec::AdaptiveLasso {
        lambda,
        gamma,
        consistent: None,
    } = spec
    {
        prob.spec = NoiseSpec::AdaptiveLasso {
            lambda: *lambda,
            gamma: *gamma,
            consistent: Some(prob.pilot()?),
        };
    }
    prob.spec.validate(Some(q))?;
    let start = match cfg.init {
        Init::Ridge { penalty } => prob.ridge_start(penalty)?,
        Init::Random { scale } => {
            let mut rng = stream(cfg.seed, u64::MAX >> 32, 0);
            let mut t = prob.null_start();
            for k in usize::from(intercept)..t.len() {
                t[k] = scale * rng.sample::<f64, _>(StandardNormal);
            }
            t
        }
    };
    let mut state = GlmState {
        prob,
        cfg,
        history: Vec::new(),
        theta_hat: start.clone(),
        theta_bar: start,
    };
    let (trace, snaps) = drive(&mut state, cfg)?;
    let snapshots: Vec<DVector<f64>> = snaps.iter().map(|s| s.0.clone()).collect();
    let averaged: Vec<DVector<f64>> = snaps.iter().map(|s| s.1.clone()).collect();
    let d = state.theta_bar.len();
    let off = usize::from(intercept);
    let zeroed = (0..d)
        .map(|k| k >= off && straddles_zero(averaged.iter().map(|a| a[k]), cfg.tau0))
        .collect();
    let mut warnings = Vec::new();
    let guard = cfg.n_e as f64 * spec.unit_variance(q, cfg.n_e);
    if guard >= (n as f64).sqrt() {
        warnings.push(format!(
            "n_e times the unit-coefficient noise variance is {guard:.4}, at least sqrt(n) = {:.4}",
            (n as f64).sqrt()
        ));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(GlmFit {
        family,
        intercept,
        theta: averaged.last().cloned().expect("banked >= 1"),
        snapshots,
        averaged,
        zeroed,
        trace,
        warnings,
    })
}

/// Constant response of the noise rows in a single regression: zero for a
/// Gaussian fit without intercept, otherwise the response mean.
pub fn noise_response(family: NodeFamily, y: &DVector<f64>, intercept: bool) -> f64 {
    if family.is_gaussian() && !intercept {
        0.0
    } else {
        y.mean()
    }
}

/// Noise covariance used at a given estimate of a single regression.
pub fn glm_noise_covariance(
    spec: &NoiseSpec,
    theta: &DVector<f64>,
    intercept: bool,
    n_e: usize,
) -> Result<NoiseCovariance> {
    let off = usize::from(intercept);
    noise_variance(spec, &theta.as_slice()[off..], n_e)
}

/// Average of `m` augmented least-squares minimizers against the minimizer
/// of the average of the same `m` losses, i.e. one fit on all `m` noise
/// blocks stacked with each block scaled by 1/√m. Noise variances are
/// evaluated at `theta_ref`.
pub fn compare_averaging<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    spec: &NoiseSpec,
    theta_ref: &[f64],
    n_e: usize,
    m: usize,
    rng: &mut R,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if m == 0 {
        return invalid("m must be positive");
    }
    let cov = noise_variance(spec, theta_ref, n_e)?;
    let q = x.ncols();
    let scale = 1.0 / (m as f64).sqrt();
    let mut avg = DVector::zeros(q);
    let mut stacked = DMatrix::zeros(n_e * m, q);
    for t in 0..m {
        let e = cov.sample(n_e, rng);
        stacked.view_mut((t * n_e, 0), (n_e, q)).copy_from(&(&e * scale));
        let d = AugmentedDesign::new(x.clone(), e, y.clone(), 0.0, false)?;
        avg += fit_ols(&d)?;
    }
    avg /= m as f64;
    let d = AugmentedDesign::new(x.clone(), stacked, y.clone(), 0.0, false)?;
    Ok((avg, fit_ols(&d)?))
}

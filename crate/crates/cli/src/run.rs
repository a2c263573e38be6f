//! Command dispatch.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use panda_core::inference::infer_glm;
use panda_core::rng::child_seed;
use panda_core::simgen::{
    coverage_experiment, gen_adjacency, gen_precision, roc_curve, sample_ggm, sample_gibbs,
    GibbsModel, PrecisionSpec,
};
use panda_core::{
    run_panda_cd, run_panda_glm, run_panda_gridge, run_panda_ns, run_panda_scio, run_panda_space,
    Adjacency, AdjacencySpec, ConvergenceStatus, Dataset, FitTrace, NodeFamily, NoiseSpec,
    PandaConfig,
};
use serde::Serialize;

use crate::config::{Command, Method, RunConfig};
use crate::error::{validation, CliError};
use crate::ingest::ingest_csv;
use crate::output::{
    num, read_edges, write_edges, write_json, write_matrix, write_table, write_trace, Edge, Table,
};

/// What a successful run produced.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub converged: bool,
    pub files: Vec<PathBuf>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.converged {
            0
        } else {
            2
        }
    }
}

struct Artifacts {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Artifacts {
    fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    command: Command,
    #[serde(skip_serializing_if = "Option::is_none")]
    method: Option<&'a str>,
    converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    status: Option<ConvergenceStatus>,
    #[serde(skip_serializing_if = "Option::is_none")]
    noise: Option<&'a NoiseSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    panda: Option<&'a PandaConfig>,
    n: usize,
    p: usize,
    warnings: Vec<String>,
}

pub fn run(cfg: &RunConfig) -> Result<Outcome, CliError> {
    cfg.validate()?;
    let command = cfg.command()?;
    let mut art = Artifacts::new(cfg.output_dir()?)?;
    let converged = match command {
        Command::FitGraph => fit_graph_cmd(cfg, &mut art)?,
        Command::FitGlm => fit_glm_cmd(cfg, &mut art, false)?,
        Command::Infer => fit_glm_cmd(cfg, &mut art, true)?,
        Command::Simulate => simulate_cmd(cfg, &mut art)?,
        Command::RocBench => roc_cmd(cfg, &mut art)?,
        Command::CoverageBench => coverage_cmd(cfg, &mut art)?,
    };
    if !converged {
        warn!("run did not converge; artifacts carry converged = false");
    }
    Ok(Outcome {
        converged,
        files: art.files,
    })
}

/// A fitted graph in a method-independent shape.
pub struct GraphFit {
    pub adjacency: Adjacency,
    /// Edge weights read off at the adjacency's edges.
    pub weights: DMatrix<f64>,
    pub matrices: Vec<(&'static str, DMatrix<f64>)>,
    pub trace: FitTrace,
    pub warnings: Vec<String>,
}

pub fn fit_graph(
    data: &Dataset,
    method: Method,
    spec: &NoiseSpec,
    cfg: &PandaConfig,
) -> Result<GraphFit, CliError> {
    if method != Method::Ns && !data.all_gaussian() {
        return validation(format!("method {} needs all-Gaussian nodes", method.name()));
    }
    let fit = match method {
        Method::Ns => {
            let e = run_panda_ns(data, spec, cfg)?;
            let mut matrices = vec![
                ("theta", e.theta.clone()),
                ("theta_sym", e.theta_sym.clone()),
            ];
            if let Some(o) = &e.precision {
                matrices.push(("omega", o.clone()));
            }
            GraphFit {
                weights: e.theta_sym,
                adjacency: e.adjacency,
                matrices,
                trace: e.trace,
                warnings: e.warnings,
            }
        }
        Method::Cd => {
            let e = run_panda_cd(&data.data, spec, cfg)?;
            GraphFit {
                weights: e.omega.clone(),
                adjacency: e.adjacency,
                matrices: vec![("omega", e.omega)],
                trace: e.trace,
                warnings: Vec::new(),
            }
        }
        Method::Scio => {
            let e = run_panda_scio(&data.data, spec, cfg)?;
            GraphFit {
                weights: e.omega.clone(),
                adjacency: e.adjacency,
                matrices: vec![("omega", e.omega)],
                trace: e.trace,
                warnings: Vec::new(),
            }
        }
        Method::Space => {
            let e = run_panda_space(&data.data, spec, cfg)?;
            let omega = e.precision();
            GraphFit {
                weights: e.rho.clone(),
                adjacency: e.adjacency,
                matrices: vec![("rho", e.rho), ("omega", omega)],
                trace: e.trace,
                warnings: Vec::new(),
            }
        }
        Method::Gridge => {
            let e = run_panda_gridge(&data.data, spec.lambda(), cfg)?;
            GraphFit {
                adjacency: Adjacency::from_support(&e.omega),
                weights: e.omega.clone(),
                matrices: vec![("omega", e.omega)],
                trace: e.trace,
                warnings: Vec::new(),
            }
        }
    };
    Ok(fit)
}

fn edge_list(names: &[String], fit: &GraphFit) -> Vec<Edge> {
    fit.adjacency
        .edges()
        .into_iter()
        .map(|(i, j)| (names[i].clone(), names[j].clone(), fit.weights[(i, j)]))
        .collect()
}

fn fit_graph_cmd(cfg: &RunConfig, art: &mut Artifacts) -> Result<bool, CliError> {
    let data = ingest_csv(cfg.input_path()?, &cfg.schema, cfg.standardize)?;
    let spec = cfg.single_noise()?;
    let engine = cfg.engine(PandaConfig::default());
    info!(
        "fit-graph: {} on n = {}, p = {}",
        cfg.method.name(),
        data.n(),
        data.p()
    );
    let fit = fit_graph(&data, cfg.method, &spec, &engine)?;
    write_edges(&art.path("edges.tsv"), &edge_list(&data.names, &fit))?;
    write_matrix(
        &art.path("adjacency.csv"),
        &data.names,
        &fit.adjacency.to_matrix(),
    )?;
    for (name, m) in &fit.matrices {
        write_matrix(&art.path(&format!("{name}.csv")), &data.names, m)?;
    }
    write_trace(&art.path("trace.jsonl"), &fit.trace)?;
    let converged = fit.trace.converged();
    write_json(
        &art.path("summary.json"),
        &Summary {
            command: Command::FitGraph,
            method: Some(cfg.method.name()),
            converged,
            status: Some(fit.trace.status),
            noise: Some(&spec),
            panda: Some(&engine),
            n: data.n(),
            p: data.p(),
            warnings: fit.warnings,
        },
    )?;
    Ok(converged)
}

fn fit_glm_cmd(
    cfg: &RunConfig,
    art: &mut Artifacts,
    with_intervals: bool,
) -> Result<bool, CliError> {
    let data = ingest_csv(cfg.input_path()?, &cfg.schema, cfg.standardize)?;
    let response = cfg.response.as_deref().unwrap_or_default();
    let r = data
        .names
        .iter()
        .position(|n| n == response)
        .ok_or_else(|| CliError::Validation(format!("response column '{response}' not found")))?;
    if data.p() < 2 {
        return validation("need at least one covariate besides the response");
    }
    let family = data.families[r];
    let y: DVector<f64> = data.data.column(r).into_owned();
    let x = data.data.clone().remove_column(r);
    let mut names: Vec<String> = data
        .names
        .iter()
        .filter(|n| *n != response)
        .cloned()
        .collect();
    let intercept = cfg.intercept.unwrap_or(!family.is_gaussian());
    let spec = cfg.single_noise()?;
    let base = if with_intervals {
        PandaConfig::inference(x.nrows(), x.ncols() + usize::from(intercept))
    } else {
        PandaConfig::default()
    };
    let engine = cfg.engine(base);
    info!(
        "{}: {} response '{response}' on {} covariates",
        if with_intervals { "infer" } else { "fit-glm" },
        family.name(),
        x.ncols()
    );
    let fit = run_panda_glm(&x, &y, family, &spec, &engine, intercept)?;
    if intercept {
        names.insert(0, "(intercept)".into());
    }
    let mut coef = Table::new(&["name", "estimate", "zeroed"]);
    coef.rows = names
        .iter()
        .zip(fit.theta.iter().zip(&fit.zeroed))
        .map(|(n, (t, z))| vec![n.clone(), num(*t), z.to_string()])
        .collect();
    write_table(&art.path("coefficients.csv"), &coef, b',')?;
    let mut warnings = fit.warnings.clone();
    if with_intervals {
        let rep = infer_glm(&x, &y, &spec, &fit, engine.n_e, cfg.level)?;
        let mut t = Table::new(&["name", "estimate", "se", "lower", "upper", "zeroed"]);
        t.rows = names
            .iter()
            .zip(&rep.intervals)
            .map(|(n, iv)| {
                vec![
                    n.clone(),
                    num(iv.estimate),
                    num(iv.se),
                    num(iv.lower),
                    num(iv.upper),
                    iv.zeroed.to_string(),
                ]
            })
            .collect();
        t.footer.insert("level".into(), rep.level);
        if let Some(nu) = rep.df_nu {
            t.footer.insert("df_nu".into(), nu);
        }
        write_table(&art.path("inference.csv"), &t, b',')?;
        write_matrix(&art.path("covariance.csv"), &names, &rep.total)?;
        warnings.extend(
            rep.warnings
                .into_iter()
                .filter(|w| !fit.warnings.contains(w)),
        );
    }
    write_trace(&art.path("trace.jsonl"), &fit.trace)?;
    let converged = fit.trace.converged();
    write_json(
        &art.path("summary.json"),
        &Summary {
            command: if with_intervals {
                Command::Infer
            } else {
                Command::FitGlm
            },
            method: None,
            converged,
            status: Some(fit.trace.status),
            noise: Some(&spec),
            panda: Some(&engine),
            n: x.nrows(),
            p: x.ncols(),
            warnings,
        },
    )?;
    Ok(converged)
}

fn simulate_cmd(cfg: &RunConfig, art: &mut Artifacts) -> Result<bool, CliError> {
    let mut sim = cfg.simulate.clone().unwrap_or_default();
    if let Some(s) = cfg.overrides.seed {
        sim.seed = s;
    }
    let adj = gen_adjacency(&AdjacencySpec {
        kind: sim.graph,
        p: sim.p,
        seed: child_seed(sim.seed, 0),
    })?;
    let pspec = PrecisionSpec {
        seed: child_seed(sim.seed, 1),
        ..sim.precision
    };
    let omega = gen_precision(&adj, &pspec);
    let data_seed = child_seed(sim.seed, 2);
    let (x, weights, matrix_name) = match sim.family {
        NodeFamily::Gaussian => (
            sample_ggm(&omega, sim.n, data_seed)?,
            omega.clone(),
            "omega",
        ),
        f @ (NodeFamily::Bernoulli | NodeFamily::Poisson) => {
            // Couplings reuse the precision's off-diagonal pattern; Poisson
            // graphs need them non-positive.
            let inter = DMatrix::from_fn(sim.p, sim.p, |j, k| {
                if j == k {
                    0.0
                } else if f == NodeFamily::Poisson {
                    -omega[(j, k)].abs()
                } else {
                    -omega[(j, k)]
                }
            });
            let model = GibbsModel {
                families: vec![f; sim.p],
                intercepts: DVector::from_element(sim.p, sim.intercept),
                interactions: inter.clone(),
            };
            (
                sample_gibbs(&model, sim.n, sim.burnin, sim.thin.max(1), data_seed)?,
                inter,
                "interactions",
            )
        }
        f => {
            return validation(format!(
                "simulate supports gaussian, bernoulli and poisson data, not {}",
                f.name()
            ))
        }
    };
    let names: Vec<String> = (1..=sim.p).map(|j| format!("X{j}")).collect();
    let mut t = Table {
        header: names.clone(),
        ..Table::default()
    };
    t.rows = x
        .row_iter()
        .map(|r| r.iter().map(|&v| num(v)).collect())
        .collect();
    write_table(&art.path("data.csv"), &t, b',')?;
    let edges: Vec<Edge> = adj
        .edges()
        .into_iter()
        .map(|(i, j)| (names[i].clone(), names[j].clone(), weights[(i, j)]))
        .collect();
    write_edges(&art.path("truth_edges.tsv"), &edges)?;
    write_matrix(&art.path("truth_adjacency.csv"), &names, &adj.to_matrix())?;
    write_matrix(&art.path(&format!("{matrix_name}.csv")), &names, &weights)?;
    info!(
        "simulate: {} edges, n = {}, p = {}",
        adj.edge_count(),
        sim.n,
        sim.p
    );
    write_json(&art.path("simulate.json"), &sim)?;
    Ok(true)
}

/// Truth adjacency from an edge list, matched to the data's node names.
pub fn truth_adjacency(path: &Path, names: &[String]) -> Result<Adjacency, CliError> {
    let idx = |n: &str| {
        names
            .iter()
            .position(|m| m == n)
            .ok_or_else(|| CliError::parse(path, format!("node '{n}' is not a data column")))
    };
    let mut edges = Vec::new();
    for (a, b, _) in read_edges(path)? {
        edges.push((idx(&a)?, idx(&b)?));
    }
    Ok(Adjacency::from_edges(names.len(), &edges)?)
}

fn roc_cmd(cfg: &RunConfig, art: &mut Artifacts) -> Result<bool, CliError> {
    let data = ingest_csv(cfg.input_path()?, &cfg.schema, cfg.standardize)?;
    let truth = truth_adjacency(cfg.truth_path()?, &data.names)?;
    let base = cfg.noise.clone().expect("validated");
    let engine = cfg.engine(PandaConfig::default());
    let mut fits = Vec::with_capacity(cfg.lambda_grid.len());
    let mut converged = true;
    let mut warnings = Vec::new();
    let mut counts = Vec::new();
    for &l in &cfg.lambda_grid {
        info!("roc-bench: λ = {l}");
        let fit = fit_graph(&data, cfg.method, &base.with_lambda(l), &engine)?;
        if !fit.trace.converged() {
            converged = false;
            warnings.push(format!("λ = {l}: no convergence"));
        }
        counts.push(fit.adjacency.edge_count());
        fits.push((l, fit.adjacency));
    }
    let roc = roc_curve(&fits, &truth)?;
    let mut t = Table::new(&["lambda", "fpr", "tpr", "edges"]);
    t.rows = roc
        .grid
        .iter()
        .zip(&roc.points)
        .zip(&counts)
        .map(|((l, (f, tp)), c)| vec![num(*l), num(*f), num(*tp), c.to_string()])
        .collect();
    t.footer.insert("auc".into(), roc.auc);
    write_table(&art.path("roc.csv"), &t, b',')?;
    write_json(
        &art.path("summary.json"),
        &Summary {
            command: Command::RocBench,
            method: Some(cfg.method.name()),
            converged,
            status: None,
            noise: Some(&base),
            panda: Some(&engine),
            n: data.n(),
            p: data.p(),
            warnings,
        },
    )?;
    Ok(converged)
}

fn coverage_cmd(cfg: &RunConfig, art: &mut Artifacts) -> Result<bool, CliError> {
    let cov = cfg.coverage.as_ref().expect("validated");
    let scenario = cov.build(cfg.noise.as_ref())?;
    let q = scenario.beta.len() + usize::from(scenario.intercept.is_some());
    let engine = cfg.engine(PandaConfig::inference(scenario.n, q));
    info!(
        "coverage-bench: {} replicates of a {} scenario",
        cov.replicates,
        scenario.family.name()
    );
    let rep = coverage_experiment(&scenario, cov.replicates, cfg.level, &engine)?;
    let mut t = Table::new(&["coefficient", "beta", "coverage", "mean_width"]);
    t.rows = (0..rep.beta.len())
        .map(|k| {
            vec![
                format!("beta{}", k + 1),
                num(rep.beta[k]),
                num(rep.coverage[k]),
                num(rep.mean_width[k]),
            ]
        })
        .collect();
    t.footer.insert("level".into(), rep.level);
    t.footer.insert("zero_coverage".into(), rep.zero_coverage());
    t.footer.insert("zero_width".into(), rep.zero_width());
    t.footer
        .insert("nonzero_coverage".into(), rep.nonzero_coverage());
    t.footer.insert("nonzero_width".into(), rep.nonzero_width());
    t.footer
        .insert("failures".into(), rep.failures.len() as f64);
    write_table(&art.path("coverage.csv"), &t, b',')?;
    write_json(&art.path("coverage_report.json"), &rep)?;
    Ok(true)
}

//! Experiment orchestration: flat key-value configs, replicate generation,
//! per-method regularization paths, and CSV/JSON result records.
//!
//! The CSV artifact holds only deterministic fields (so re-running a config
//! reproduces it byte for byte); wall-clock timings go to the JSON
//! document, which embeds the config and its hash for provenance.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Mutex;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::groups::{GroupStructure, InducedPartition};
use crate::path::{best_metrics, lambda_range, log_grid, solve_path, PathError};
use crate::penalty::PenaltySpec;
use crate::simgen::{
    self, build_covariance, BetaRule, PartWeightScheme, SimError, SimSpec, StreamKind,
    StructureSpec, WeightRule,
};
use crate::solver::{Loss, Problem, SolveConfig, SolverError, StepRule};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },
    #[error("missing config key {0:?}")]
    MissingKey(&'static str),
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("replicate {replicate}, method {method}: {source}")]
    Replicate {
        replicate: usize,
        method: String,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Estimators compared by the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    /// Overlapping group lasso on the original structure.
    Ogl,
    /// Separable relaxation on the induced partition with overlap-based
    /// weights.
    Proposed,
    /// Weighted lasso with the overlap-derived per-variable weights.
    WeightedLasso,
    /// Relaxation structure with uniform part weights.
    Uniform,
    /// Relaxation structure with size-dependent part weights.
    SizeDependent,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Ogl => "ogl",
            Method::Proposed => "proposed",
            Method::WeightedLasso => "wlasso",
            Method::Uniform => "uniform",
            Method::SizeDependent => "sizedep",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "ogl" => Some(Method::Ogl),
            "proposed" => Some(Method::Proposed),
            "wlasso" => Some(Method::WeightedLasso),
            "uniform" => Some(Method::Uniform),
            "sizedep" => Some(Method::SizeDependent),
            _ => None,
        }
    }

    /// Penalty for this method on a given structure/partition pair.
    pub fn penalty(
        self,
        gs: &GroupStructure,
        part: &InducedPartition,
        base_rule: WeightRule,
    ) -> PenaltySpec {
        match self {
            Method::Ogl => PenaltySpec::overlapping(gs.clone()),
            Method::Proposed => PenaltySpec::separable(part.clone()),
            Method::WeightedLasso => PenaltySpec::weighted_lasso_from(gs),
            Method::Uniform => PenaltySpec::separable(
                part.clone()
                    .with_weights(simgen::alt_weights(part, PartWeightScheme::Uniform)),
            ),
            Method::SizeDependent => {
                let rule = match base_rule {
                    WeightRule::InverseSize => WeightRule::InverseSize,
                    _ => WeightRule::SqrtSize,
                };
                PenaltySpec::separable(part.clone().with_weights(simgen::alt_weights(
                    part,
                    PartWeightScheme::SizeDependent(rule),
                )))
            }
        }
    }
}

/// Full benchmark description: scenario, methods, solver settings,
/// replicate count. Serialized as a flat key-value document whose
/// canonical form is hashed into every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub sim: SimSpec,
    pub methods: Vec<Method>,
    pub replicates: usize,
    pub grid_size: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub prox_tol: f64,
}

impl ExperimentConfig {
    /// Parses the flat `key = value` document ('#' comments allowed).
    pub fn parse(text: &str) -> Result<Self, ExperimentError> {
        let mut map = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ExperimentError::Config {
                line: idx + 1,
                reason: "expected key = value".into(),
            })?;
            map.insert(key.trim().to_string(), (idx + 1, value.trim().to_string()));
        }
        let mut take = |key: &'static str| map.remove(key).map(|(_, v)| v);
        let require = |key: &'static str, v: Option<String>| {
            v.ok_or(ExperimentError::MissingKey(key))
        };
        let parse_num = |key: &'static str, v: String| -> Result<f64, ExperimentError> {
            v.parse().map_err(|_| ExperimentError::Config {
                line: 0,
                reason: format!("invalid number for {key}: {v:?}"),
            })
        };

        let structure_kind = require("structure", take("structure"))?;
        let structure = match structure_kind.as_str() {
            "interlocking" => StructureSpec::Interlocking {
                m: parse_num("m", require("m", take("m"))?)? as usize,
                d: parse_num("d", require("d", take("d"))?)? as usize,
                overlap_frac: match take("overlap_frac") {
                    Some(v) => parse_num("overlap_frac", v)?,
                    None => 0.2,
                },
            },
            "nested" => StructureSpec::Nested {
                m: parse_num("m", require("m", take("m"))?)? as usize,
                step: match take("step") {
                    Some(v) => parse_num("step", v)? as usize,
                    None => 4,
                },
            },
            "file" => StructureSpec::FromFile {
                path: require("path", take("path"))?,
            },
            other => {
                return Err(ExperimentError::Config {
                    line: 0,
                    reason: format!("unknown structure {other:?}"),
                })
            }
        };
        let default_weight_rule = match &structure {
            StructureSpec::Interlocking { .. } => WeightRule::SqrtSize,
            StructureSpec::Nested { .. } => WeightRule::InverseSize,
            StructureSpec::FromFile { .. } => WeightRule::Custom,
        };
        let weight_rule = match take("weight_rule") {
            None => default_weight_rule,
            Some(v) => match v.as_str() {
                "sqrt_size" => WeightRule::SqrtSize,
                "inverse_size" => WeightRule::InverseSize,
                "uniform" => WeightRule::Uniform,
                "custom" => WeightRule::Custom,
                other => {
                    return Err(ExperimentError::Config {
                        line: 0,
                        reason: format!("unknown weight_rule {other:?}"),
                    })
                }
            },
        };
        let beta_rule = match take("beta_rule") {
            None => match &structure {
                StructureSpec::Nested { .. } => BetaRule::FirstGroupsNested,
                _ => BetaRule::RandomGroups,
            },
            Some(v) => match v.as_str() {
                "random_groups" => BetaRule::RandomGroups,
                "first_groups_nested" => BetaRule::FirstGroupsNested,
                other => {
                    return Err(ExperimentError::Config {
                        line: 0,
                        reason: format!("unknown beta_rule {other:?}"),
                    })
                }
            },
        };
        let sim = SimSpec {
            structure,
            n: parse_num("n", require("n", take("n"))?)? as usize,
            sigma2: match take("sigma2") {
                Some(v) => parse_num("sigma2", v)?,
                None => 3.0,
            },
            zero_frac: match take("zero_frac") {
                Some(v) => parse_num("zero_frac", v)?,
                None => 0.9,
            },
            weight_rule,
            beta_rule,
            seed: parse_num("seed", require("seed", take("seed"))?)? as u64,
        };
        sim.validate()?;
        let methods = match take("methods") {
            None => vec![Method::Ogl, Method::Proposed, Method::WeightedLasso],
            Some(v) => {
                let mut ms = Vec::new();
                for tok in v.split(',') {
                    let tok = tok.trim();
                    let m = Method::from_label(tok).ok_or_else(|| ExperimentError::Config {
                        line: 0,
                        reason: format!("unknown method {tok:?}"),
                    })?;
                    ms.push(m);
                }
                ms
            }
        };
        let config = ExperimentConfig {
            sim,
            methods,
            replicates: match take("replicates") {
                Some(v) => parse_num("replicates", v)? as usize,
                None => 1,
            },
            grid_size: match take("grid_size") {
                Some(v) => parse_num("grid_size", v)? as usize,
                None => 50,
            },
            tol: match take("tol") {
                Some(v) => parse_num("tol", v)?,
                None => 1e-5,
            },
            max_iter: match take("max_iter") {
                Some(v) => parse_num("max_iter", v)? as usize,
                None => 20_000,
            },
            prox_tol: match take("prox_tol") {
                Some(v) => parse_num("prox_tol", v)?,
                None => 1e-10,
            },
        };
        if let Some((line, key)) = map
            .into_iter()
            .next()
            .map(|(k, (line, _))| (line, k))
        {
            let _ = line;
            return Err(ExperimentError::UnknownKey(key));
        }
        Ok(config)
    }

    /// Canonical key-value form: fixed key order, shortest decimals. The
    /// config hash is the SHA-256 of this text.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        match &self.sim.structure {
            StructureSpec::Interlocking { m, d, overlap_frac } => {
                let _ = writeln!(out, "structure = interlocking");
                let _ = writeln!(out, "m = {m}");
                let _ = writeln!(out, "d = {d}");
                let _ = writeln!(out, "overlap_frac = {overlap_frac}");
            }
            StructureSpec::Nested { m, step } => {
                let _ = writeln!(out, "structure = nested");
                let _ = writeln!(out, "m = {m}");
                let _ = writeln!(out, "step = {step}");
            }
            StructureSpec::FromFile { path } => {
                let _ = writeln!(out, "structure = file");
                let _ = writeln!(out, "path = {path}");
            }
        }
        let _ = writeln!(out, "n = {}", self.sim.n);
        let _ = writeln!(out, "sigma2 = {}", self.sim.sigma2);
        let _ = writeln!(out, "zero_frac = {}", self.sim.zero_frac);
        let rule = match self.sim.weight_rule {
            WeightRule::SqrtSize => "sqrt_size",
            WeightRule::InverseSize => "inverse_size",
            WeightRule::Uniform => "uniform",
            WeightRule::Custom => "custom",
        };
        let _ = writeln!(out, "weight_rule = {rule}");
        let beta = match self.sim.beta_rule {
            BetaRule::RandomGroups => "random_groups",
            BetaRule::FirstGroupsNested => "first_groups_nested",
        };
        let _ = writeln!(out, "beta_rule = {beta}");
        let _ = writeln!(out, "seed = {}", self.sim.seed);
        let labels: Vec<&str> = self.methods.iter().map(|m| m.label()).collect();
        let _ = writeln!(out, "methods = {}", labels.join(","));
        let _ = writeln!(out, "replicates = {}", self.replicates);
        let _ = writeln!(out, "grid_size = {}", self.grid_size);
        let _ = writeln!(out, "tol = {}", self.tol);
        let _ = writeln!(out, "max_iter = {}", self.max_iter);
        let _ = writeln!(out, "prox_tol = {}", self.prox_tol);
        out
    }

    /// First 16 hex chars of the SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_text().as_bytes());
        let mut hex = String::new();
        for b in &digest[..8] {
            let _ = write!(hex, "{b:02x}");
        }
        hex
    }
}

/// Structure, partition, and covariance shared by all replicates of a
/// config (they are deterministic given the spec).
#[derive(Debug, Clone)]
pub struct SimContext {
    pub gs: GroupStructure,
    pub part: InducedPartition,
    pub theta: Array2<f64>,
    pub base_rule: WeightRule,
}

impl SimContext {
    /// Builds the context; `external` supplies the structure for
    /// `structure = file` configs (the harness loads the group file).
    pub fn build(spec: &SimSpec, external: Option<GroupStructure>) -> Result<Self, SimError> {
        spec.validate()?;
        let gs = match &spec.structure {
            StructureSpec::Interlocking { m, d, overlap_frac } => {
                simgen::interlocking_groups(*m, *d, *overlap_frac)?
            }
            StructureSpec::Nested { m, step } => simgen::nested_groups(*m, *step)?,
            StructureSpec::FromFile { path } => external.ok_or_else(|| {
                SimError::InvalidSpec(format!("structure file {path:?} not loaded"))
            })?,
        };
        let gs = spec.weight_rule.apply(gs)?;
        let part = gs.induce_partition();
        let theta = build_covariance(&gs, &part);
        Ok(Self {
            gs,
            part,
            theta,
            base_rule: spec.weight_rule,
        })
    }

    /// Draws one replicate: design, ground truth, response.
    pub fn gen_replicate(
        &self,
        spec: &SimSpec,
        replicate: u64,
    ) -> Result<(Array2<f64>, Array1<f64>, Array1<f64>), SimError> {
        let mut rng = simgen::substream(spec.seed, replicate, StreamKind::Design);
        let x = simgen::sample_design(spec.n, &self.theta, &mut rng)?;
        let mut rng = simgen::substream(spec.seed, replicate, StreamKind::Beta);
        let beta_star = simgen::gen_beta_star(&self.gs, spec.zero_frac, spec.beta_rule, &mut rng)?;
        let mut rng = simgen::substream(spec.seed, replicate, StreamKind::Noise);
        let y = simgen::gen_response(&x, &beta_star, spec.sigma2, &mut rng)?;
        Ok((x, beta_star, y))
    }
}

/// One (replicate, method) outcome. Deterministic fields go to the CSV;
/// the timing fields are serialized in the JSON document only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub method: String,
    pub seed: u64,
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub full_support_found: bool,
    pub grid: Vec<f64>,
    pub support_sizes: Vec<usize>,
    pub best_rel_error: f64,
    pub best_support_discrepancy: f64,
    pub path_iterations: usize,
    pub prox_sweeps: usize,
    pub time_seconds: f64,
    pub search_time_seconds: f64,
}

/// Fixed CSV column order for result records.
pub const CSV_HEADER: &str = "config_hash,replicate,method,seed,lambda_max,lambda_min,full_support,grid_size,best_rel_error,best_support_discrepancy,path_iterations,prox_sweeps";

/// Renders the deterministic CSV (header + one line per record, records
/// ordered by replicate then by the config's method order).
pub fn records_to_csv(config_hash: &str, records: &[ReplicateRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            config_hash,
            r.replicate,
            r.method,
            r.seed,
            r.lambda_max,
            r.lambda_min,
            r.full_support_found,
            r.grid.len(),
            r.best_rel_error,
            r.best_support_discrepancy,
            r.path_iterations,
            r.prox_sweeps
        );
    }
    out
}

/// The JSON document: schema version, config (structured and canonical),
/// hash, and all records including timings.
#[derive(Debug, Serialize, Deserialize)]
pub struct ResultDocument {
    pub schema: u32,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub canonical_config: String,
    pub records: Vec<ReplicateRecord>,
}

/// Everything a `bench` run produces.
#[derive(Debug)]
pub struct ExperimentOutput {
    pub config_hash: String,
    pub records: Vec<ReplicateRecord>,
    pub csv: String,
    pub json: String,
}

fn run_one_method(
    ctx: &SimContext,
    config: &ExperimentConfig,
    problem: &Problem,
    lipschitz: f64,
    beta_star: &Array1<f64>,
    method: Method,
    replicate: usize,
) -> Result<ReplicateRecord, PathError> {
    let penalty = method.penalty(&ctx.gs, &ctx.part, ctx.base_rule);
    let solve = SolveConfig {
        tol: config.tol,
        max_iter: config.max_iter,
        prox_tol: config.prox_tol,
        step: StepRule::Fixed(lipschitz),
        ..Default::default()
    };
    let range = lambda_range(problem, &penalty, &solve)?;
    let grid = log_grid(range.lambda_min, range.lambda_max, config.grid_size)?;
    let path = solve_path(problem, &penalty, &grid, &solve)?;
    let best = best_metrics(&path, beta_star.as_slice().expect("contiguous"))?;
    Ok(ReplicateRecord {
        replicate,
        method: method.label().to_string(),
        seed: config.sim.seed,
        lambda_max: range.lambda_max,
        lambda_min: range.lambda_min,
        full_support_found: range.full_support_found,
        grid: path.lambdas.clone(),
        support_sizes: path.support_sizes.clone(),
        best_rel_error: best.rel_error,
        best_support_discrepancy: best.support_discrepancy,
        path_iterations: path.total_iterations(),
        prox_sweeps: path.solutions.iter().map(|s| s.prox_sweeps_total).sum(),
        time_seconds: path.total_time,
        search_time_seconds: range.search_time,
    })
}

/// Runs every (replicate, method) cell, replicates in parallel on a
/// dedicated pool of `threads` workers. Records come back sorted by
/// (replicate, method order), so outputs are byte-stable across pool
/// sizes and scheduling.
pub fn run_experiment(
    config: &ExperimentConfig,
    external: Option<GroupStructure>,
    threads: usize,
) -> Result<ExperimentOutput, ExperimentError> {
    let ctx = SimContext::build(&config.sim, external)?;
    let hash = config.hash();
    let collected: Mutex<Vec<ReplicateRecord>> = Mutex::new(Vec::new());

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| SimError::InvalidSpec(format!("thread pool: {e}")))?;
    let result: Result<(), ExperimentError> = pool.install(|| {
        (0..config.replicates)
            .into_par_iter()
            .try_for_each(|r| -> Result<(), ExperimentError> {
                let (x, beta_star, y) =
                    ctx.gen_replicate(&config.sim, r as u64).map_err(|e| {
                        ExperimentError::Replicate {
                            replicate: r,
                            method: "generate".into(),
                            source: Box::new(e),
                        }
                    })?;
                let problem = Problem::new(x, y, Loss::Squared).map_err(|e| {
                    ExperimentError::Replicate {
                        replicate: r,
                        method: "generate".into(),
                        source: Box::new(e),
                    }
                })?;
                let lipschitz = problem.lipschitz();
                for &method in &config.methods {
                    let record = run_one_method(
                        &ctx, config, &problem, lipschitz, &beta_star, method, r,
                    )
                    .map_err(|e| ExperimentError::Replicate {
                        replicate: r,
                        method: method.label().to_string(),
                        source: Box::new(e),
                    })?;
                    collected.lock().expect("collector").push(record);
                }
                Ok(())
            })
    });

    // flush whatever finished, in deterministic order, even on error
    let mut records = collected.into_inner().expect("collector");
    let method_order = |label: &str| {
        config
            .methods
            .iter()
            .position(|m| m.label() == label)
            .unwrap_or(usize::MAX)
    };
    records.sort_by(|a, b| {
        (a.replicate, method_order(&a.method)).cmp(&(b.replicate, method_order(&b.method)))
    });
    let csv = records_to_csv(&hash, &records);
    let doc = ResultDocument {
        schema: 1,
        config_hash: hash.clone(),
        config: config.clone(),
        canonical_config: config.canonical_text(),
        records: records.clone(),
    };
    let json = serde_json::to_string_pretty(&doc).expect("serializable document");
    result?;
    Ok(ExperimentOutput {
        config_hash: hash,
        records,
        csv,
        json,
    })
}

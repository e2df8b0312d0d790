//! Regularization paths: the lambda-range line search (geometric walks
//! from 1e8 downward and 1e-8 upward), the 50-point log grid, and the
//! warm-started path solve with timing.

use std::time::Instant;

use thiserror::Error;

use crate::metrics;
use crate::penalty::PenaltySpec;
use crate::solver::{fit, Problem, Solution, SolveConfig, SolverError, StepRule};

/// Tolerance used inside the line searches; they only need the support
/// pattern, not a precise objective.
const SEARCH_TOL: f64 = 1e-4;
const LAMBDA_START_MAX: f64 = 1e8;
const LAMBDA_START_MIN: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum PathError {
    #[error("lambda search exhausted below 1e-12 without selecting any variable")]
    SearchExhausted,
    #[error("no lambda retains the full variable set (already sparse at 1e-8)")]
    NoFullSupport,
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("ground truth is identically zero")]
    ZeroTruth,
    #[error("solver failed at lambda={lambda}: {source}")]
    Solver {
        lambda: f64,
        #[source]
        source: SolverError,
    },
}

fn solve_at(
    problem: &Problem,
    penalty: &PenaltySpec,
    config: &SolveConfig,
    lambda: f64,
) -> Result<Solution, PathError> {
    let cfg = SolveConfig {
        lambda,
        ..config.clone()
    };
    fit(problem, penalty, &cfg).map_err(|source| PathError::Solver { lambda, source })
}

/// Pins the step rule to a precomputed Lipschitz constant so the searches
/// and the path do not rerun power iteration per solve.
fn fixed_step(problem: &Problem, config: &SolveConfig) -> SolveConfig {
    let step = match config.step {
        StepRule::Fixed(l) => StepRule::Fixed(l),
        StepRule::Backtracking { shrink } => StepRule::Backtracking { shrink },
        StepRule::PowerIteration => StepRule::Fixed(problem.lipschitz()),
    };
    SolveConfig {
        step,
        ..config.clone()
    }
}

/// Walks lambda down from 1e8 by factors of 0.9 and returns the smallest
/// visited lambda whose solution is all-zero (the next step would select).
pub fn find_lambda_max(
    problem: &Problem,
    penalty: &PenaltySpec,
    config: &SolveConfig,
) -> Result<f64, PathError> {
    let cfg = SolveConfig {
        tol: SEARCH_TOL,
        warm_start: None,
        ..fixed_step(problem, config)
    };
    let mut lambda = LAMBDA_START_MAX;
    let mut last_zero: Option<f64> = None;
    loop {
        let sol = solve_at(problem, penalty, &cfg, lambda)?;
        if sol.support_size() == 0 {
            last_zero = Some(lambda);
        } else {
            return last_zero
                .ok_or_else(|| InvalidRangeError("selection at the 1e8 start".into()).into());
        }
        lambda *= 0.9;
        if lambda < 1e-12 {
            return Err(PathError::SearchExhausted);
        }
    }
}

struct InvalidRangeError(String);

impl From<InvalidRangeError> for PathError {
    fn from(e: InvalidRangeError) -> Self {
        PathError::InvalidRange(e.0)
    }
}

/// Walks lambda up from 1e-8 by factors of 1.1 and returns the largest
/// visited lambda whose solution retains all `p` variables (the next step
/// drops at least one).
pub fn find_lambda_min(
    problem: &Problem,
    penalty: &PenaltySpec,
    config: &SolveConfig,
) -> Result<f64, PathError> {
    let p = problem.p();
    let base = fixed_step(problem, config);
    let mut cfg = SolveConfig {
        tol: SEARCH_TOL,
        warm_start: None,
        ..base
    };
    let mut lambda = LAMBDA_START_MIN;
    let sol = solve_at(problem, penalty, &cfg, lambda)?;
    if sol.support_size() < p {
        return Err(PathError::NoFullSupport);
    }
    let mut prev_lambda = lambda;
    let mut prev_beta = sol.beta;
    loop {
        lambda *= 1.1;
        if lambda > 1e12 {
            return Ok(prev_lambda);
        }
        cfg.warm_start = Some(prev_beta.clone());
        let sol = solve_at(problem, penalty, &cfg, lambda)?;
        if sol.support_size() < p {
            return Ok(prev_lambda);
        }
        prev_lambda = lambda;
        prev_beta = sol.beta;
    }
}

/// Endpoints found by the line searches. When no lambda keeps the full
/// support (typical for the overlapping penalty, whose hull can force
/// zeros), the floor 1e-8 is substituted and flagged.
#[derive(Debug, Clone, Copy)]
pub struct LambdaRange {
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub full_support_found: bool,
    /// Wall time of both searches, reported separately from path time.
    pub search_time: f64,
}

/// Runs both line searches.
pub fn lambda_range(
    problem: &Problem,
    penalty: &PenaltySpec,
    config: &SolveConfig,
) -> Result<LambdaRange, PathError> {
    let start = Instant::now();
    let lambda_max = find_lambda_max(problem, penalty, config)?;
    let (lambda_min, full_support_found) = match find_lambda_min(problem, penalty, config) {
        Ok(l) => (l.min(lambda_max), true),
        Err(PathError::NoFullSupport) => (LAMBDA_START_MIN.min(lambda_max), false),
        Err(e) => return Err(e),
    };
    Ok(LambdaRange {
        lambda_max,
        lambda_min,
        full_support_found,
        search_time: start.elapsed().as_secs_f64(),
    })
}

/// `k` geometrically spaced values from `lambda_max` down to `lambda_min`,
/// endpoints inclusive. Equal endpoints collapse to a single value.
pub fn log_grid(lambda_min: f64, lambda_max: f64, k: usize) -> Result<Vec<f64>, PathError> {
    if !(lambda_min > 0.0) || lambda_min > lambda_max {
        return Err(PathError::InvalidRange(format!(
            "need 0 < lambda_min <= lambda_max, got [{lambda_min}, {lambda_max}]"
        )));
    }
    if k == 0 {
        return Err(PathError::InvalidRange("grid size must be >= 1".into()));
    }
    if k == 1 || lambda_min == lambda_max {
        return Ok(vec![lambda_max]);
    }
    let ratio = (lambda_min / lambda_max).powf(1.0 / (k - 1) as f64);
    let mut grid: Vec<f64> = (0..k).map(|i| lambda_max * ratio.powi(i as i32)).collect();
    grid[k - 1] = lambda_min;
    Ok(grid)
}

/// Per-lambda solutions over a descending grid with warm starts.
#[derive(Debug, Clone)]
pub struct PathResult {
    pub lambdas: Vec<f64>,
    pub solutions: Vec<Solution>,
    pub support_sizes: Vec<usize>,
    /// Wall time of the path loop only (line search excluded).
    pub total_time: f64,
    pub lambda_max: f64,
    pub lambda_min: f64,
}

impl PathResult {
    pub fn total_iterations(&self) -> usize {
        self.solutions.iter().map(|s| s.iterations).sum()
    }
}

/// Solves the grid largest-lambda first, warm-starting each solve from the
/// previous solution, and records the wall time of the loop.
pub fn solve_path(
    problem: &Problem,
    penalty: &PenaltySpec,
    grid: &[f64],
    config: &SolveConfig,
) -> Result<PathResult, PathError> {
    if grid.is_empty() {
        return Err(PathError::InvalidRange("empty grid".into()));
    }
    if grid.windows(2).any(|w| w[1] > w[0]) {
        return Err(PathError::InvalidRange("grid must be descending".into()));
    }
    let base = fixed_step(problem, config);
    let start = Instant::now();
    let mut solutions = Vec::with_capacity(grid.len());
    let mut warm: Option<ndarray::Array1<f64>> = config.warm_start.clone();
    for &lambda in grid {
        let cfg = SolveConfig {
            warm_start: warm.take(),
            ..base.clone()
        };
        let sol = solve_at(problem, penalty, &cfg, lambda)?;
        warm = Some(sol.beta.clone());
        solutions.push(sol);
    }
    let total_time = start.elapsed().as_secs_f64();
    let support_sizes = solutions.iter().map(Solution::support_size).collect();
    Ok(PathResult {
        lambdas: grid.to_vec(),
        solutions,
        support_sizes,
        total_time,
        lambda_max: grid[0],
        lambda_min: *grid.last().expect("nonempty"),
    })
}

/// Best-over-path metrics, each minimized independently (possibly at
/// different lambdas).
#[derive(Debug, Clone, Copy)]
pub struct BestMetrics {
    pub rel_error: f64,
    pub support_discrepancy: f64,
}

pub fn best_metrics(path: &PathResult, beta_star: &[f64]) -> Result<BestMetrics, PathError> {
    let norm = beta_star.iter().map(|b| b * b).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(PathError::ZeroTruth);
    }
    let mut best_err = f64::INFINITY;
    let mut best_disc = f64::INFINITY;
    for sol in &path.solutions {
        let beta = sol.beta.as_slice().expect("contiguous");
        let err = metrics::relative_l2_error(beta, beta_star)
            .map_err(|_| PathError::ZeroTruth)?;
        let disc = metrics::support_discrepancy(beta, beta_star).map_err(|_| {
            PathError::InvalidRange("beta_star length differs from solutions".into())
        })?;
        best_err = best_err.min(err);
        best_disc = best_disc.min(disc);
    }
    Ok(BestMetrics {
        rel_error: best_err,
        support_discrepancy: best_disc,
    })
}

//! The penalty family: the overlapping group norm `phi`, its separable
//! relaxation `psi` on the induced partition, the weighted-lasso upper
//! bound, and the general `l_{q1}/l_{q2}` norms, together with dual-norm
//! machinery (a closed-form upper bound and a projected-ascent lower
//! estimate) and the sandwich diagnostics relating the three penalties.

pub mod tightness;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::groups::{GroupStructure, InducedPartition};
use crate::prox::{prox_separable, prox_soft_threshold, OverlapProx};

#[derive(Debug, Error, PartialEq)]
pub enum PenaltyError {
    #[error("vector has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("exponent q={0} is outside (0, inf]")]
    InvalidExponent(f64),
    #[error("weights must be strictly positive")]
    NonpositiveWeight,
    #[error("scale must be nonnegative, got {0}")]
    NegativeScale(f64),
}

fn check_len(expected: usize, got: usize) -> Result<(), PenaltyError> {
    if expected != got {
        Err(PenaltyError::DimensionMismatch { expected, got })
    } else {
        Ok(())
    }
}

fn block_l2(beta: &[f64], indices: &[usize]) -> f64 {
    indices
        .iter()
        .map(|&j| beta[j] * beta[j])
        .sum::<f64>()
        .sqrt()
}

/// Overlapping group lasso norm `sum_g w_g ||beta_{G_g}||_2`.
pub fn phi(beta: &[f64], gs: &GroupStructure) -> Result<f64, PenaltyError> {
    check_len(gs.p(), beta.len())?;
    Ok(gs
        .groups()
        .iter()
        .zip(gs.weights())
        .map(|(g, &w)| w * block_l2(beta, g))
        .sum())
}

/// Separable relaxation `sum over parts of induced-weight * ||block||_2`.
pub fn psi(beta: &[f64], part: &InducedPartition) -> Result<f64, PenaltyError> {
    check_len(part.p(), beta.len())?;
    Ok(part
        .parts()
        .iter()
        .zip(part.weights())
        .map(|(block, &w)| w * block_l2(beta, block))
        .sum())
}

/// Weighted lasso `sum_j c_j |beta_j|`.
pub fn weighted_lasso(beta: &[f64], c: &[f64]) -> Result<f64, PenaltyError> {
    check_len(c.len(), beta.len())?;
    Ok(beta.iter().zip(c).map(|(&b, &cj)| cj * b.abs()).sum())
}

/// General `l_{q1}/l_{q2}` norm `(sum_g w_g ||beta_{G_g}||_{q2}^{q1})^{1/q1}`,
/// with the max convention at infinite exponents: `q2 = inf` takes the
/// within-group max of `|beta_j|`, and `q1 = inf` takes `max_g w_g * a_g`
/// over the block values `a_g`. Exponents in `(0, 1)` are accepted even
/// though the result is then only a quasi-norm.
pub fn lq_norm(
    beta: &[f64],
    gs: &GroupStructure,
    q1: f64,
    q2: f64,
) -> Result<f64, PenaltyError> {
    check_len(gs.p(), beta.len())?;
    for &q in &[q1, q2] {
        if !(q > 0.0) {
            return Err(PenaltyError::InvalidExponent(q));
        }
    }
    let block_value = |g: &[usize]| -> f64 {
        if q2.is_infinite() {
            g.iter().map(|&j| beta[j].abs()).fold(0.0, f64::max)
        } else if (q2 - 2.0).abs() < 1e-15 {
            block_l2(beta, g)
        } else {
            g.iter()
                .map(|&j| beta[j].abs().powf(q2))
                .sum::<f64>()
                .powf(1.0 / q2)
        }
    };
    if q1.is_infinite() {
        Ok(gs
            .groups()
            .iter()
            .zip(gs.weights())
            .map(|(g, &w)| w * block_value(g))
            .fold(0.0, f64::max))
    } else {
        Ok(gs
            .groups()
            .iter()
            .zip(gs.weights())
            .map(|(g, &w)| w * block_value(g).powf(q1))
            .sum::<f64>()
            .powf(1.0 / q1))
    }
}

/// Closed-form upper bound on the dual norm of `phi`:
/// `max_g (1/w_g) ||(H v)_{G_g}||_2` with `H = diag(1/h_j)` built from the
/// overlap degrees. Exact whenever the maximizing group does not overlap
/// any other group.
pub fn dual_upper_bound(v: &[f64], gs: &GroupStructure) -> Result<f64, PenaltyError> {
    check_len(gs.p(), v.len())?;
    let h = gs.overlap_degrees();
    let mut best = 0.0f64;
    for (g, &w) in gs.groups().iter().zip(gs.weights()) {
        let norm = g
            .iter()
            .map(|&j| {
                let s = v[j] / h[j] as f64;
                s * s
            })
            .sum::<f64>()
            .sqrt();
        best = best.max(norm / w);
    }
    Ok(best)
}

/// Which norm a [`PenaltySpec`] evaluates.
#[derive(Debug, Clone)]
pub enum PenaltyKind {
    /// Overlapping group lasso on the given structure.
    Overlapping(GroupStructure),
    /// Non-overlapping group lasso on a partition.
    Separable(InducedPartition),
    /// Weighted lasso with per-variable weights.
    WeightedLasso(Vec<f64>),
    /// General `l_{q1}/l_{q2}` norm on a structure.
    GeneralLq {
        structure: GroupStructure,
        q1: f64,
        q2: f64,
    },
}

/// A penalty together with a scale multiplier applied to lambda at solve
/// time. `value` always evaluates the unscaled norm.
#[derive(Debug, Clone)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    pub scale: f64,
}

impl PenaltySpec {
    pub fn overlapping(gs: GroupStructure) -> Self {
        Self {
            kind: PenaltyKind::Overlapping(gs),
            scale: 1.0,
        }
    }

    pub fn separable(part: InducedPartition) -> Self {
        Self {
            kind: PenaltyKind::Separable(part),
            scale: 1.0,
        }
    }

    pub fn weighted_lasso(c: Vec<f64>) -> Self {
        Self {
            kind: PenaltyKind::WeightedLasso(c),
            scale: 1.0,
        }
    }

    /// Weighted lasso with the overlap-derived weights
    /// `c_j = sum of w_g over groups containing j`.
    pub fn weighted_lasso_from(gs: &GroupStructure) -> Self {
        Self::weighted_lasso(gs.lasso_weights())
    }

    pub fn general_lq(structure: GroupStructure, q1: f64, q2: f64) -> Self {
        Self {
            kind: PenaltyKind::GeneralLq { structure, q1, q2 },
            scale: 1.0,
        }
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn validate(&self) -> Result<(), PenaltyError> {
        if self.scale < 0.0 {
            return Err(PenaltyError::NegativeScale(self.scale));
        }
        match &self.kind {
            PenaltyKind::WeightedLasso(c) => {
                if c.iter().any(|&cj| !(cj > 0.0)) {
                    return Err(PenaltyError::NonpositiveWeight);
                }
            }
            PenaltyKind::GeneralLq { q1, q2, .. } => {
                for &q in &[*q1, *q2] {
                    if !(q > 0.0) {
                        return Err(PenaltyError::InvalidExponent(q));
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        match &self.kind {
            PenaltyKind::Overlapping(gs) => gs.p(),
            PenaltyKind::Separable(part) => part.p(),
            PenaltyKind::WeightedLasso(c) => c.len(),
            PenaltyKind::GeneralLq { structure, .. } => structure.p(),
        }
    }

    /// Evaluates the unscaled norm.
    pub fn value(&self, beta: &[f64]) -> Result<f64, PenaltyError> {
        match &self.kind {
            PenaltyKind::Overlapping(gs) => phi(beta, gs),
            PenaltyKind::Separable(part) => psi(beta, part),
            PenaltyKind::WeightedLasso(c) => weighted_lasso(beta, c),
            PenaltyKind::GeneralLq { structure, q1, q2 } => lq_norm(beta, structure, *q1, *q2),
        }
    }

    /// Exact dual norm where a closed form exists (separable kinds only).
    pub fn dual_norm_exact(&self, v: &[f64]) -> Option<f64> {
        match &self.kind {
            PenaltyKind::Separable(part) => Some(
                part.parts()
                    .iter()
                    .zip(part.weights())
                    .map(|(block, &w)| block_l2(v, block) / w)
                    .fold(0.0, f64::max),
            ),
            PenaltyKind::WeightedLasso(c) => Some(
                v.iter()
                    .zip(c)
                    .map(|(&vj, &cj)| vj.abs() / cj)
                    .fold(0.0, f64::max),
            ),
            _ => None,
        }
    }

}

/// Euclidean projection onto `{u : norm(u) <= 1}` by bisecting the prox
/// scaling until the prox output lands on the ball boundary. Keeps the
/// BCD plan (with warm-started duals) and the previous scaling bracket
/// across calls, since ascent feeds it a smooth sequence of points.
struct BallProjector<'a> {
    penalty: &'a PenaltySpec,
    overlap: Option<OverlapProx>,
    prev_t: f64,
}

impl<'a> BallProjector<'a> {
    fn new(penalty: &'a PenaltySpec) -> Self {
        let overlap = match &penalty.kind {
            PenaltyKind::Overlapping(gs) => Some(OverlapProx::new(gs).warm_start(true)),
            _ => None,
        };
        Self {
            penalty,
            overlap,
            prev_t: 1.0,
        }
    }

    fn prox(&mut self, z: &[f64], t: f64) -> Option<Vec<f64>> {
        match &self.penalty.kind {
            PenaltyKind::Overlapping(_) => {
                let scale = z.iter().map(|v| v * v).sum::<f64>().sqrt();
                let tol = 1e-13 * (1.0 + scale);
                self.overlap
                    .as_mut()
                    .expect("plan built")
                    .apply(z, t, tol, 20_000)
                    .ok()
                    .map(|r| r.beta)
            }
            PenaltyKind::Separable(part) => prox_separable(z, t, part).ok(),
            PenaltyKind::WeightedLasso(c) => prox_soft_threshold(z, t, c).ok(),
            PenaltyKind::GeneralLq { .. } => None,
        }
    }

    fn project(&mut self, z: &[f64]) -> Vec<f64> {
        let nz = match self.penalty.value(z) {
            Ok(n) => n,
            Err(_) => return vec![0.0; z.len()],
        };
        if nz <= 1.0 {
            return z.to_vec();
        }
        if matches!(self.penalty.kind, PenaltyKind::GeneralLq { .. }) {
            // no prox for general exponents: radial fallback keeps feasibility
            return z.iter().map(|v| v / nz).collect();
        }
        // bracket the boundary scaling starting from the previous call's
        let mut t_hi = self.prev_t.max(1e-12);
        let mut t_lo = 0.0;
        let mut u_hi;
        loop {
            u_hi = self.prox(z, t_hi).expect("prox available");
            if self.penalty.value(&u_hi).unwrap_or(f64::INFINITY) <= 1.0 {
                break;
            }
            t_lo = t_hi;
            t_hi *= 8.0;
            if t_hi > 1e300 {
                return vec![0.0; z.len()];
            }
        }
        for _ in 0..48 {
            let t_mid = 0.5 * (t_lo + t_hi);
            let u = self.prox(z, t_mid).expect("prox available");
            if self.penalty.value(&u).unwrap_or(f64::INFINITY) <= 1.0 {
                t_hi = t_mid;
                u_hi = u;
            } else {
                t_lo = t_mid;
            }
        }
        self.prev_t = t_hi;
        u_hi
    }
}

/// Lower estimate of the dual norm `sup {u.v : norm(u) <= 1}` by projected
/// ascent with a geometrically growing step, restarted `budget` times from
/// random feasible points. The returned value is the objective at a point
/// inside the ball (up to a `1e-10` feasibility tolerance), so it never
/// exceeds the true dual norm.
pub fn dual_estimate(v: &[f64], penalty: &PenaltySpec, budget: usize) -> f64 {
    let p = v.len();
    if penalty.p() != p {
        return f64::NAN;
    }
    let v_norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if v_norm == 0.0 {
        return 0.0;
    }

    let feasible = |u: &[f64]| -> Vec<f64> {
        let n = penalty.value(u).unwrap_or(f64::INFINITY);
        if n <= 1.0 {
            u.to_vec()
        } else {
            u.iter().map(|x| x / n).collect()
        }
    };
    let mut projector = BallProjector::new(penalty);
    let mut ascend = |start: &[f64]| -> f64 {
        let mut u = feasible(start);
        // step cap balances the ascent gap (~ dist^2/eta) against float
        // cancellation in projections from far points (~ eps * eta)
        let eta_max = 3e7 / v_norm;
        let mut eta = 1.0 / v_norm;
        let mut capped_rounds = 0;
        loop {
            let z: Vec<f64> = u.iter().zip(v).map(|(ui, vi)| ui + eta * vi).collect();
            u = projector.project(&z);
            if eta >= eta_max {
                capped_rounds += 1;
                if capped_rounds >= 3 {
                    break;
                }
            } else {
                eta = (eta * 32.0).min(eta_max);
            }
        }
        let n = penalty.value(&u).unwrap_or(f64::INFINITY);
        let dot: f64 = u.iter().zip(v).map(|(ui, vi)| ui * vi).sum();
        // renormalize beyond the feasibility tolerance
        if n > 1.0 + 1e-10 {
            dot / n
        } else {
            dot
        }
    };

    let mut best = ascend(v);
    if budget > 1 {
        let mut rng = ChaCha12Rng::seed_from_u64(0x5eed_d0a1);
        for _ in 1..budget {
            let start: Vec<f64> = (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect();
            best = best.max(ascend(&start));
        }
    }
    best.max(0.0)
}

/// Joint evaluation of the three norms with the ordering checks.
#[derive(Debug, Clone, Copy)]
pub struct SandwichReport {
    pub phi: f64,
    pub psi: f64,
    pub weighted_lasso: f64,
    /// True when the support of beta lies within a single induced part.
    pub single_part_support: bool,
    /// Orderings hold to tolerance (and equality when single-part).
    pub ok: bool,
}

/// Evaluates `phi <= psi <= weighted lasso` at `beta` (tolerance
/// `1e-12 * (1 + psi)`), additionally requiring `phi = psi` to `1e-12`
/// relative when the support of `beta` lies in one induced part.
pub fn sandwich_check(
    gs: &GroupStructure,
    part: &InducedPartition,
    beta: &[f64],
) -> Result<SandwichReport, PenaltyError> {
    let phi_v = phi(beta, gs)?;
    let psi_v = psi(beta, part)?;
    let c = gs.lasso_weights();
    let wl_v = weighted_lasso(beta, &c)?;

    let owner = part.part_of_variable();
    let mut support_parts = std::collections::BTreeSet::new();
    for (j, &b) in beta.iter().enumerate() {
        if b != 0.0 {
            support_parts.insert(owner[j]);
        }
    }
    let single_part_support = support_parts.len() <= 1;

    let tol = 1e-12 * (1.0 + psi_v);
    let mut ok = phi_v <= psi_v + tol && psi_v <= wl_v + tol;
    if single_part_support && (phi_v - psi_v).abs() > tol {
        ok = false;
    }
    Ok(SandwichReport {
        phi: phi_v,
        psi: psi_v,
        weighted_lasso: wl_v,
        single_part_support,
        ok,
    })
}

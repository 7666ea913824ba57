//! Multiplicative-weights feasibility engine.
//!
//! The solver maintains a Gibbs iterate `rho_t` proportional to
//! `exp(delta * sum of gain matrices)` and asks a violation oracle for a
//! constraint broken by more than `epsilon`. Feasible instances terminate
//! with the current iterate as witness; otherwise the round cap
//! `ceil(16 ln n / eps^2)` is exhausted and the instance is declared
//! infeasible. `regret_audit` checks the update's guarantee against any
//! probe state after the fact.
//!
//! Sign convention: gains are rewarded, so the exponent carries `+delta`.
//! With the violation gain `(I - A_j)/2` the iterate suppresses the
//! directions that overshoot constraint `j`, and the regret inequality
//! below holds by the standard potential argument. An update with the
//! opposite sign satisfies neither.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{trace_inner, DensityMatrix, HermitianMatrix};
use crate::oracle::{OracleOutcome, ViolationOracle};
use crate::rng::Rng;

/// Spectral slack allowed when validating `-I <= A_j <= I` and gain
/// ranges.
pub const SPECTRAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct InstanceMeta {
    /// Bound on `tr(A_j+) + tr(A_j-)` across constraints.
    pub trace_bound: Option<f64>,
    pub rank_bound: Option<usize>,
    pub sparsity: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub matrix: HermitianMatrix,
    /// Right-hand side `a_j`.
    pub bound: f64,
}

/// Feasibility instance: decide whether some unit-trace PSD `X` has
/// `tr(A_j X) <= a_j + eps` for every `j`.
#[derive(Debug, Clone)]
pub struct SdpInstance {
    dim: usize,
    constraints: Vec<Constraint>,
    epsilon: f64,
    pub meta: InstanceMeta,
}

impl SdpInstance {
    pub fn new(
        dim: usize,
        constraints: Vec<Constraint>,
        epsilon: f64,
        meta: InstanceMeta,
    ) -> Result<Self> {
        if constraints.is_empty() {
            return Err(Error::Usage("instance needs at least one constraint".into()));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::Usage(format!("epsilon {epsilon} outside (0, 1)")));
        }
        for (j, c) in constraints.iter().enumerate() {
            if c.matrix.dim() != dim {
                return Err(Error::Usage(format!(
                    "constraints[{j}].matrix: dimension {} does not match instance dimension {dim}",
                    c.matrix.dim()
                )));
            }
            let spec = c.matrix.eigh()?;
            let lo = spec.eigenvalues.first().copied().unwrap_or(0.0);
            let hi = spec.eigenvalues.last().copied().unwrap_or(0.0);
            if lo < -1.0 - SPECTRAL_TOL || hi > 1.0 + SPECTRAL_TOL {
                return Err(Error::Contract(format!(
                    "constraints[{j}].matrix: spectrum [{lo:.6}, {hi:.6}] escapes [-1, 1]"
                )));
            }
        }
        Ok(SdpInstance {
            dim,
            constraints,
            epsilon,
            meta,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn constraint(&self, j: usize) -> &Constraint {
        &self.constraints[j]
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    /// Largest violation `tr(A_j rho) - a_j` over all constraints.
    pub fn max_violation(&self, rho: &DensityMatrix) -> Result<f64> {
        let mut worst = f64::NEG_INFINITY;
        for c in &self.constraints {
            worst = worst.max(trace_inner(&c.matrix, rho)? - c.bound);
        }
        Ok(worst)
    }
}

/// Round cap `ceil(16 ln n / eps^2)`, floored at one round so the
/// one-dimensional case still runs.
pub fn round_cap(dim: usize, epsilon: f64) -> usize {
    let raw = (16.0 * (dim as f64).ln() / (epsilon * epsilon)).ceil();
    (raw as usize).max(1)
}

/// Default per-round oracle failure budget `eps^2 / (400 ln n)`. The 400
/// keeps the whole run's failure probability at the few-percent level; it
/// is exposed here rather than hard-wired into the backends.
pub fn default_oracle_failure(dim: usize, epsilon: f64, failure_constant: f64) -> f64 {
    let log_term = (dim as f64).ln().max(1.0);
    (epsilon * epsilon / (failure_constant * log_term)).min(0.25)
}

/// One step of the multiplicative-weights iteration.
#[derive(Debug, Clone)]
pub struct MwState {
    round: usize,
    delta: f64,
    gains: Vec<HermitianMatrix>,
    rho: DensityMatrix,
}

impl MwState {
    /// Fresh state: round zero, uniform iterate.
    pub fn new(dim: usize, delta: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Usage("dimension must be at least 1".into()));
        }
        if !(delta > 0.0) {
            return Err(Error::Usage(format!("step size {delta} must be positive")));
        }
        Ok(MwState {
            round: 0,
            delta,
            gains: Vec::new(),
            rho: DensityMatrix::maximally_mixed(dim),
        })
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn rho(&self) -> &DensityMatrix {
        &self.rho
    }

    pub fn gains(&self) -> &[HermitianMatrix] {
        &self.gains
    }

    /// Append a gain matrix and recompute the iterate from scratch:
    /// `rho = exp(delta * sum gains) / tr`. Recomputing the whole
    /// exponent each round avoids drift at these dimensions.
    pub fn mw_round(&self, gain: HermitianMatrix) -> Result<MwState> {
        let dim = self.rho.dim();
        if gain.dim() != dim {
            return Err(Error::Usage(format!(
                "gain dimension {} does not match state dimension {dim}",
                gain.dim()
            )));
        }
        let spec = gain.eigh()?;
        let lo = spec.eigenvalues.first().copied().unwrap_or(0.0);
        let hi = spec.eigenvalues.last().copied().unwrap_or(0.0);
        if lo < -SPECTRAL_TOL || hi > 1.0 + SPECTRAL_TOL {
            return Err(Error::Contract(format!(
                "gain spectrum [{lo:.6}, {hi:.6}] escapes [0, 1]"
            )));
        }
        let mut gains = self.gains.clone();
        gains.push(gain);
        let rho = iterate_from_gains(dim, self.delta, &gains)?;
        Ok(MwState {
            round: self.round + 1,
            delta: self.delta,
            gains,
            rho,
        })
    }
}

/// Gibbs iterate for a gain prefix: `exp(delta * sum) / tr`.
pub fn iterate_from_gains(
    dim: usize,
    delta: f64,
    gains: &[HermitianMatrix],
) -> Result<DensityMatrix> {
    let mut exponent = HermitianMatrix::zeros(dim);
    for g in gains {
        exponent = exponent.axpy(1.0, g)?;
    }
    exponent.scale(-delta).gibbs_of()
}

#[derive(Debug, Clone, Serialize)]
pub enum Verdict {
    Feasible,
    Infeasible,
}

/// Outcome of a feasibility run. The gain history doubles as the
/// certificate: it reproduces every iterate including the witness.
#[derive(Debug, Clone)]
pub struct FeasibilityResult {
    pub verdict: Verdict,
    pub witness: Option<DensityMatrix>,
    pub gain_history: Vec<HermitianMatrix>,
    /// Violated constraint index per completed round.
    pub violated_per_round: Vec<usize>,
    pub rounds_used: usize,
    pub round_cap: usize,
    pub delta: f64,
    pub backend: String,
    pub samples_used: u64,
    pub queries_used: u64,
    /// Slack the backend may add on top of `eps` for feasible claims
    /// (zero for the exact backend).
    pub claimed_tolerance: f64,
    /// Exact recheck of the witness, available since the constraint
    /// matrices are in memory.
    pub exact_max_violation: Option<f64>,
    /// Iterates per round when recording was requested.
    pub states: Option<Vec<DensityMatrix>>,
}

impl FeasibilityResult {
    /// Flat record for the run report.
    pub fn record(&self) -> RunRecord {
        RunRecord {
            verdict: match self.verdict {
                Verdict::Feasible => "feasible".into(),
                Verdict::Infeasible => "infeasible".into(),
            },
            rounds: self.rounds_used,
            round_cap: self.round_cap,
            delta: self.delta,
            violated_per_round: self.violated_per_round.clone(),
            backend: self.backend.clone(),
            oracle_calls: self.rounds_used as u64,
            samples_used: self.samples_used,
            queries_used: self.queries_used,
            claimed_tolerance: self.claimed_tolerance,
            exact_max_violation: self.exact_max_violation,
        }
    }
}

/// Serializable summary of a feasibility run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub verdict: String,
    pub rounds: usize,
    pub round_cap: usize,
    pub delta: f64,
    pub violated_per_round: Vec<usize>,
    pub backend: String,
    pub oracle_calls: u64,
    pub samples_used: u64,
    pub queries_used: u64,
    pub claimed_tolerance: f64,
    pub exact_max_violation: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct SolveOptions {
    /// Override the step size; defaults to `eps / 4`.
    pub delta_override: Option<f64>,
    /// Keep a copy of the iterate at the start of each round.
    pub record_states: bool,
}

/// Run the feasibility loop against a violation oracle.
pub fn solve_feasibility(
    inst: &SdpInstance,
    oracle: &mut dyn ViolationOracle,
    rng: &mut Rng,
    opts: &SolveOptions,
) -> Result<FeasibilityResult> {
    let dim = inst.dim();
    let delta = match opts.delta_override {
        Some(d) if d > 0.0 => d,
        Some(d) => return Err(Error::Usage(format!("delta override {d} must be positive"))),
        None => inst.epsilon() / 4.0,
    };
    let cap = round_cap(dim, inst.epsilon());
    let mut state = MwState::new(dim, delta)?;
    let mut violated = Vec::new();
    let mut states: Option<Vec<DensityMatrix>> = opts.record_states.then(Vec::new);
    let mut last_report = None;

    for round in 1..=cap {
        if let Some(s) = states.as_mut() {
            s.push(state.rho().clone());
        }
        let mut round_rng = rng.child(round as u64);
        let report = oracle.search(state.rho(), &mut round_rng)?;
        match report.outcome {
            OracleOutcome::Feasible => {
                let witness = state.rho().clone();
                let exact = inst.max_violation(&witness)?;
                return Ok(FeasibilityResult {
                    verdict: Verdict::Feasible,
                    witness: Some(witness),
                    gain_history: state.gains().to_vec(),
                    violated_per_round: violated,
                    rounds_used: round,
                    round_cap: cap,
                    delta,
                    backend: report.backend.to_string(),
                    samples_used: report.samples_used,
                    queries_used: report.queries_used,
                    claimed_tolerance: oracle.claimed_tolerance(),
                    exact_max_violation: Some(exact),
                    states,
                });
            }
            OracleOutcome::Violation(j) => {
                if j >= inst.len() {
                    return Err(Error::Contract(format!(
                        "oracle returned out-of-range constraint index {j}"
                    )));
                }
                violated.push(j);
                let gain = HermitianMatrix::identity(dim)
                    .axpy(-1.0, &inst.constraint(j).matrix)?
                    .scale(0.5);
                state = state.mw_round(gain)?;
                last_report = Some(report);
            }
        }
    }

    let (samples, queries) = last_report
        .map(|r| (r.samples_used, r.queries_used))
        .unwrap_or((0, 0));
    Ok(FeasibilityResult {
        verdict: Verdict::Infeasible,
        witness: None,
        gain_history: state.gains().to_vec(),
        violated_per_round: violated,
        rounds_used: cap,
        round_cap: cap,
        delta,
        backend: oracle.backend().to_string(),
        samples_used: samples,
        queries_used: queries,
        claimed_tolerance: oracle.claimed_tolerance(),
        exact_max_violation: None,
        states,
    })
}

/// Both sides of the multiplicative-weights guarantee.
#[derive(Debug, Clone, Serialize)]
pub struct RegretAudit {
    /// `(1-delta) sum over NSD rounds + (1+delta) sum over PSD rounds`
    /// of `tr(M_t rho_t)`.
    pub lhs: f64,
    /// `sum tr(M_t probe) - ln(n)/delta`.
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
}

/// Evaluate the regret inequality for a run history against a fixed
/// probe state. Every gain must be PSD or NSD; `0 < delta <= 1/2`.
pub fn regret_audit(
    history: &[(HermitianMatrix, DensityMatrix)],
    delta: f64,
    probe: &DensityMatrix,
) -> Result<RegretAudit> {
    if !(delta > 0.0 && delta <= 0.5) {
        return Err(Error::Usage(format!("delta {delta} outside (0, 1/2]")));
    }
    let n = probe.dim();
    let mut lhs = 0.0;
    let mut probe_sum = 0.0;
    for (t, (gain, rho_t)) in history.iter().enumerate() {
        if gain.dim() != n || rho_t.dim() != n {
            return Err(Error::Usage(format!(
                "round {t}: dimension mismatch against probe dimension {n}"
            )));
        }
        let spec = gain.eigh()?;
        let lo = spec.eigenvalues.first().copied().unwrap_or(0.0);
        let hi = spec.eigenvalues.last().copied().unwrap_or(0.0);
        let psd = lo >= -SPECTRAL_TOL;
        let nsd = hi <= SPECTRAL_TOL;
        if !psd && !nsd {
            return Err(Error::Contract(format!(
                "round {t}: gain is neither PSD nor NSD (spectrum [{lo:.3e}, {hi:.3e}])"
            )));
        }
        let own = trace_inner(gain, rho_t)?;
        lhs += if psd { (1.0 + delta) * own } else { (1.0 - delta) * own };
        probe_sum += trace_inner(gain, probe)?;
    }
    let rhs = probe_sum - (n as f64).ln() / delta;
    let slack = lhs - rhs;
    Ok(RegretAudit {
        lhs,
        rhs,
        slack,
        holds: slack >= -1e-8,
    })
}

/// Rebuild per-round iterates from a gain history and audit against a
/// probe. Round `t` pairs gain `t` with the iterate built from gains
/// `0..t`, which is the state the gain was observed on.
pub fn audit_history(
    dim: usize,
    delta: f64,
    gains: &[HermitianMatrix],
    probe: &DensityMatrix,
) -> Result<RegretAudit> {
    let mut history = Vec::with_capacity(gains.len());
    for t in 0..gains.len() {
        let rho_t = iterate_from_gains(dim, delta, &gains[..t])?;
        history.push((gains[t].clone(), rho_t));
    }
    regret_audit(&history, delta, probe)
}

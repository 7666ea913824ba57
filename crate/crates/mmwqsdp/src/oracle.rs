//! Violated-constraint search.
//!
//! Four interchangeable backends sit behind [`ViolationOracle`]:
//!
//! - `exact`: scans the constraints with exact arithmetic.
//! - `plain-sampled`: estimates each `tr(A_j rho)` by measuring `A_j` in
//!   its eigenbasis on copies of `rho`.
//! - `quantum-sampled`: overlap-test statistics against the normalized
//!   positive and negative parts of each constraint, combined through
//!   the stored trace table.
//! - `or-sim`: the same statistics compiled into a projector-OR search
//!   instance and decided by the state-vector simulator in [`crate::orsim`].
//!
//! The statistical backends locate an index by testing whole ranges and
//! halving, left half first. Per-index tests are boosted by majority
//! vote so the whole search stays inside the caller's failure budget.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gibbs::{GibbsSpec, Sign};
use crate::linalg::{trace_inner, DensityMatrix, HermitianMatrix};
use crate::mmw::SdpInstance;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OracleOutcome {
    Feasible,
    Violation(usize),
}

/// Search outcome plus cumulative work counters. Counters accumulate
/// across a run, so successive reports are monotone nondecreasing.
#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub outcome: OracleOutcome,
    pub samples_used: u64,
    pub queries_used: u64,
    pub backend: &'static str,
    /// Set when exact traces are available and some constraint slack
    /// lands strictly inside `(0, eps)`, outside the promise the
    /// statistical tests are calibrated for.
    pub promise_violating: Option<bool>,
}

/// Contract consumed by the feasibility loop: report a constraint index
/// violated by more than `eps`, or declare the iterate feasible.
pub trait ViolationOracle {
    fn backend(&self) -> &'static str;
    fn search(&mut self, rho: &DensityMatrix, rng: &mut Rng) -> Result<OracleReport>;
    /// Additional slack a feasible claim may carry beyond `eps`.
    fn claimed_tolerance(&self) -> f64;
}

/// Exact scan: smallest index with `tr(A_j rho) > a_j + eps`.
pub fn exact_violation_search(inst: &SdpInstance, rho: &DensityMatrix) -> Result<OracleReport> {
    let mut queries = 0;
    for (j, c) in inst.constraints().iter().enumerate() {
        queries += 1;
        if trace_inner(&c.matrix, rho)? > c.bound + inst.epsilon() {
            return Ok(OracleReport {
                outcome: OracleOutcome::Violation(j),
                samples_used: 0,
                queries_used: queries,
                backend: "exact",
                promise_violating: None,
            });
        }
    }
    Ok(OracleReport {
        outcome: OracleOutcome::Feasible,
        samples_used: 0,
        queries_used: queries,
        backend: "exact",
        promise_violating: None,
    })
}

pub struct ExactOracle<'a> {
    inst: &'a SdpInstance,
    queries: u64,
}

impl<'a> ExactOracle<'a> {
    pub fn new(inst: &'a SdpInstance) -> Self {
        ExactOracle { inst, queries: 0 }
    }
}

impl ViolationOracle for ExactOracle<'_> {
    fn backend(&self) -> &'static str {
        "exact"
    }

    fn search(&mut self, rho: &DensityMatrix, _rng: &mut Rng) -> Result<OracleReport> {
        let mut report = exact_violation_search(self.inst, rho)?;
        self.queries += report.queries_used;
        report.queries_used = self.queries;
        Ok(report)
    }

    fn claimed_tolerance(&self) -> f64 {
        0.0
    }
}

/// Overlap-test frequency: `shots` coins of bias `1/2 + tr(sigma rho)/2`.
pub fn swap_test_sample(
    sigma: &DensityMatrix,
    rho: &DensityMatrix,
    shots: u64,
    rng: &mut Rng,
) -> Result<f64> {
    if shots == 0 {
        return Err(Error::Usage("swap test needs at least one shot".into()));
    }
    let overlap = trace_inner(sigma.as_hermitian(), rho)?;
    let p = (0.5 + overlap / 2.0).clamp(0.0, 1.0);
    Ok(rng.binomial(shots, p) as f64 / shots as f64)
}

/// Trace table for one constraint: normalized positive/negative parts
/// and their weights. A zero part carries no state.
#[derive(Debug, Clone)]
pub struct ConstraintTables {
    pub plus_state: Option<DensityMatrix>,
    pub minus_state: Option<DensityMatrix>,
    pub tr_plus: f64,
    pub tr_minus: f64,
    /// Right-hand side `a_j`.
    pub bound: f64,
}

/// In-memory stand-in for the trace/preparation/bound oracles of the
/// quantum input model.
#[derive(Debug, Clone)]
pub struct QuantumInputTables {
    dim: usize,
    epsilon: f64,
    entries: Vec<ConstraintTables>,
    trace_bound: f64,
}

impl QuantumInputTables {
    /// Build tables and validate: weights nonnegative, weight sums within
    /// the instance trace bound, and (when `reference` matrices are
    /// given) reconstruction of each `A_j` within 1e-8 Frobenius.
    pub fn new(
        dim: usize,
        epsilon: f64,
        entries: Vec<ConstraintTables>,
        bound: Option<f64>,
        reference: Option<&SdpInstance>,
    ) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Usage("tables need at least one constraint".into()));
        }
        let mut max_weight = 0.0_f64;
        for (j, e) in entries.iter().enumerate() {
            if e.tr_plus < 0.0 || e.tr_minus < 0.0 {
                return Err(Error::Contract(format!(
                    "entries[{j}]: negative trace weight"
                )));
            }
            if e.tr_plus > 0.0 && e.plus_state.is_none() {
                return Err(Error::Usage(format!(
                    "entries[{j}]: positive weight without a state"
                )));
            }
            if e.tr_minus > 0.0 && e.minus_state.is_none() {
                return Err(Error::Usage(format!(
                    "entries[{j}]: negative weight without a state"
                )));
            }
            for s in [e.plus_state.as_ref(), e.minus_state.as_ref()].into_iter().flatten() {
                if s.dim() != dim {
                    return Err(Error::Usage(format!(
                        "entries[{j}]: state dimension {} does not match {dim}",
                        s.dim()
                    )));
                }
            }
            max_weight = max_weight.max(e.tr_plus + e.tr_minus);
        }
        let trace_bound = bound.unwrap_or(max_weight);
        for (j, e) in entries.iter().enumerate() {
            if e.tr_plus + e.tr_minus > trace_bound + 1e-9 {
                return Err(Error::Contract(format!(
                    "entries[{j}]: weight sum {} exceeds bound {trace_bound}",
                    e.tr_plus + e.tr_minus
                )));
            }
        }
        if let Some(inst) = reference {
            for (j, e) in entries.iter().enumerate() {
                let recon = e.reconstruct(dim);
                let diff = (recon.as_matrix() - inst.constraint(j).matrix.as_matrix()).norm();
                if diff > 1e-8 {
                    return Err(Error::Contract(format!(
                        "entries[{j}]: decomposition misses A_j by {diff:.3e} Frobenius"
                    )));
                }
            }
        }
        Ok(QuantumInputTables {
            dim,
            epsilon,
            entries,
            trace_bound,
        })
    }

    /// Split each constraint into positive and negative spectral parts.
    pub fn from_instance(inst: &SdpInstance) -> Result<Self> {
        let mut entries = Vec::with_capacity(inst.len());
        for c in inst.constraints() {
            let spec = c.matrix.eigh()?;
            let plus: Vec<f64> = spec.eigenvalues.iter().map(|l| l.max(0.0)).collect();
            let minus: Vec<f64> = spec.eigenvalues.iter().map(|l| (-l).max(0.0)).collect();
            let tr_plus: f64 = plus.iter().sum();
            let tr_minus: f64 = minus.iter().sum();
            let normalize = |weights: &[f64], total: f64| -> Result<Option<DensityMatrix>> {
                if total <= 0.0 {
                    return Ok(None);
                }
                let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
                let mat = spec.assemble(&probs);
                Ok(Some(DensityMatrix::new(HermitianMatrix::symmetrized(mat)?)?))
            };
            entries.push(ConstraintTables {
                plus_state: normalize(&plus, tr_plus)?,
                minus_state: normalize(&minus, tr_minus)?,
                tr_plus,
                tr_minus,
                bound: c.bound,
            });
        }
        let bound = inst.meta.trace_bound;
        QuantumInputTables::new(inst.dim(), inst.epsilon(), entries, bound, Some(inst))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn trace_bound(&self) -> f64 {
        self.trace_bound
    }

    pub fn entry(&self, j: usize) -> &ConstraintTables {
        &self.entries[j]
    }

    /// Exact `tr(A_j rho)` recovered from the tables.
    pub fn exact_trace(&self, j: usize, rho: &DensityMatrix) -> Result<f64> {
        let e = &self.entries[j];
        let mut t = 0.0;
        if let Some(s) = &e.plus_state {
            t += e.tr_plus * trace_inner(s.as_hermitian(), rho)?;
        }
        if let Some(s) = &e.minus_state {
            t -= e.tr_minus * trace_inner(s.as_hermitian(), rho)?;
        }
        Ok(t)
    }
}

impl ConstraintTables {
    fn reconstruct(&self, dim: usize) -> HermitianMatrix {
        let mut m = HermitianMatrix::zeros(dim);
        if let Some(s) = &self.plus_state {
            m = m.axpy(self.tr_plus, s.as_hermitian()).expect("same dim");
        }
        if let Some(s) = &self.minus_state {
            m = m.axpy(-self.tr_minus, s.as_hermitian()).expect("same dim");
        }
        m
    }
}

/// Copy-consumption model: statistical tests draw fresh copies of the
/// candidate state, one per measurement, against an optional budget.
pub struct RhoSupplier<'a> {
    state: &'a DensityMatrix,
    budget: Option<u64>,
    consumed: u64,
}

impl<'a> RhoSupplier<'a> {
    pub fn new(state: &'a DensityMatrix, budget: Option<u64>) -> Self {
        RhoSupplier {
            state,
            budget,
            consumed: 0,
        }
    }

    /// Account for `count` copies and yield the state.
    pub fn take(&mut self, count: u64) -> Result<&'a DensityMatrix> {
        if let Some(budget) = self.budget {
            if self.consumed + count > budget {
                return Err(Error::Resource(format!(
                    "state-copy budget exhausted: requested {count} with {} of {budget} used",
                    self.consumed
                )));
            }
        }
        self.consumed += count;
        Ok(self.state)
    }

    pub fn consumed(&self) -> u64 {
        self.consumed
    }
}

/// Default shot count `ceil(128 B^2 ln(max(m,2)) / eps^2)`; the constant
/// is calibrated so a single test errs with probability about `m^-4` at
/// the promise boundary.
pub fn default_shots(bound: f64, m: usize, epsilon: f64) -> u64 {
    let b = bound.max(1.0);
    let m_eff = (m.max(2)) as f64;
    (128.0 * b * b * m_eff.ln() / (epsilon * epsilon)).ceil() as u64
}

/// Decide whether constraint `j` looks violated: estimate
/// `(2p+ - 1) tr+ - (2p- - 1) tr-` from `shots` overlap tests per part
/// and compare against `a_j + eps/2`. A constraint with a zero
/// decomposition short-circuits to the exact estimator value 0.
pub fn trace_threshold_test(
    tables: &QuantumInputTables,
    j: usize,
    rho: &DensityMatrix,
    shots: u64,
    rng: &mut Rng,
) -> Result<bool> {
    let (violated, _samples) = threshold_test_counted(tables, j, rho, shots, rng)?;
    Ok(violated)
}

fn threshold_test_counted(
    tables: &QuantumInputTables,
    j: usize,
    rho: &DensityMatrix,
    shots: u64,
    rng: &mut Rng,
) -> Result<(bool, u64)> {
    let e = tables.entry(j);
    let mut estimate = 0.0;
    let mut samples = 0;
    if let Some(s) = &e.plus_state {
        let freq = swap_test_sample(s, rho, shots, rng)?;
        estimate += (2.0 * freq - 1.0) * e.tr_plus;
        samples += shots;
    }
    if let Some(s) = &e.minus_state {
        let freq = swap_test_sample(s, rho, shots, rng)?;
        estimate -= (2.0 * freq - 1.0) * e.tr_minus;
        samples += shots;
    }
    Ok((estimate > e.bound + tables.epsilon / 2.0, samples))
}

/// Plain-model estimate: measure `A_j` in its eigenbasis on copies of
/// `rho` and threshold the sample mean at `a_j + eps/2`.
fn plain_threshold_test(
    spec_eigenvalues: &[f64],
    born: &[f64],
    bound: f64,
    epsilon: f64,
    shots: u64,
    rng: &mut Rng,
) -> bool {
    // Multinomial counts via conditional binomials, exact and O(n).
    let mut remaining = shots;
    let mut mass_left: f64 = born.iter().sum();
    let mut acc = 0.0;
    for (k, &p) in born.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if k + 1 == born.len() {
            acc += remaining as f64 * spec_eigenvalues[k];
            break;
        }
        let cond = if mass_left > 0.0 { (p / mass_left).clamp(0.0, 1.0) } else { 0.0 };
        let c = rng.binomial(remaining, cond);
        acc += c as f64 * spec_eigenvalues[k];
        remaining -= c;
        mass_left -= p;
    }
    let mean = acc / shots as f64;
    mean > bound + epsilon / 2.0
}

/// Which statistical input model backs the search.
pub enum SampledModel<'a> {
    /// Exact matrices; tests measure each constraint in its eigenbasis.
    Plain(&'a SdpInstance),
    /// Trace tables; tests run overlap statistics on the stored parts.
    Quantum(&'a QuantumInputTables),
}

impl SampledModel<'_> {
    fn len(&self) -> usize {
        match self {
            SampledModel::Plain(i) => i.len(),
            SampledModel::Quantum(t) => t.len(),
        }
    }

    fn epsilon(&self) -> f64 {
        match self {
            SampledModel::Plain(i) => i.epsilon(),
            SampledModel::Quantum(t) => t.epsilon(),
        }
    }

    fn shot_bound(&self) -> f64 {
        match self {
            SampledModel::Plain(_) => 1.0,
            SampledModel::Quantum(t) => t.trace_bound(),
        }
    }

    fn backend(&self) -> &'static str {
        match self {
            SampledModel::Plain(_) => "plain-sampled",
            SampledModel::Quantum(_) => "quantum-sampled",
        }
    }

    fn exact_trace(&self, j: usize, rho: &DensityMatrix) -> Result<f64> {
        match self {
            SampledModel::Plain(i) => trace_inner(&i.constraint(j).matrix, rho),
            SampledModel::Quantum(t) => t.exact_trace(j, rho),
        }
    }

    fn bound(&self, j: usize) -> f64 {
        match self {
            SampledModel::Plain(i) => i.constraint(j).bound,
            SampledModel::Quantum(t) => t.entry(j).bound,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchConfig {
    /// Shots per overlap test; `None` picks [`default_shots`].
    pub shots_per_test: Option<u64>,
    /// Overall failure budget for one search.
    pub delta_fail: f64,
    /// Majority-vote repetitions per index test; `None` derives an odd
    /// count from `delta_fail` and the single-test error bound.
    pub boost_override: Option<usize>,
    /// Copy budget handed to the supplier.
    pub copy_budget: Option<u64>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            shots_per_test: None,
            delta_fail: 0.05,
            boost_override: None,
            copy_budget: None,
        }
    }
}

/// Single-test failure bound at the promise boundary for the default
/// shot count.
fn per_test_failure_bound(m: usize) -> f64 {
    let m_eff = (m.max(2)) as f64;
    (4.0 * m_eff.powi(-4)).min(0.25)
}

/// Smallest odd majority count whose failure stays below `target` given
/// single-test failure `p0`. Capped at 15.
fn derive_boost(p0: f64, target: f64) -> usize {
    for l in (1..=15usize).step_by(2) {
        let need = l / 2 + 1;
        // P(Binomial(l, p0) >= need)
        let mut tail = 0.0;
        for k in need..=l {
            let mut logc = 0.0;
            for i in 0..k {
                logc += ((l - i) as f64).ln() - ((i + 1) as f64).ln();
            }
            tail += (logc + (k as f64) * p0.ln() + ((l - k) as f64) * (1.0 - p0).ln()).exp();
        }
        if tail <= target {
            return l;
        }
    }
    15
}

/// Find a violated index, or declare the state feasible, from statistics
/// alone. Per-index tests are boosted to failure below
/// `delta_fail / (m (log2 m + 1))`, then ranges are tested and halved,
/// left half first. Counters record every shot consumed.
pub fn sampled_violation_search(
    model: &SampledModel,
    supplier: &mut RhoSupplier,
    cfg: &SearchConfig,
    rng: &mut Rng,
) -> Result<OracleReport> {
    let m = model.len();
    let epsilon = model.epsilon();
    let shots = cfg
        .shots_per_test
        .unwrap_or_else(|| default_shots(model.shot_bound(), m, epsilon));
    let levels = (m.max(2) as f64).log2().ceil() as usize + 1;
    let per_index_target = (cfg.delta_fail / (m as f64 * levels as f64)).max(1e-12);
    let boost = cfg
        .boost_override
        .unwrap_or_else(|| derive_boost(per_test_failure_bound(m), per_index_target));

    // Cache the spectral data needed by the per-index tests.
    let plain_cache: Option<Vec<(Vec<f64>, Vec<f64>)>> = match model {
        SampledModel::Plain(inst) => {
            let mut cache = Vec::with_capacity(m);
            for c in inst.constraints() {
                let spec = c.matrix.eigh()?;
                let born = spec.born_weights(supplier.take(0)?);
                cache.push((spec.eigenvalues, born));
            }
            Some(cache)
        }
        SampledModel::Quantum(_) => None,
    };

    let mut samples: u64 = 0;
    let mut queries: u64 = 0;
    let mut single_test = |j: usize, rng: &mut Rng| -> Result<bool> {
        queries += 1;
        match model {
            SampledModel::Plain(inst) => {
                let (eigenvalues, born) = &plain_cache.as_ref().expect("plain cache")[j];
                supplier.take(shots)?;
                samples += shots;
                Ok(plain_threshold_test(
                    eigenvalues,
                    born,
                    inst.constraint(j).bound,
                    epsilon,
                    shots,
                    rng,
                ))
            }
            SampledModel::Quantum(tables) => {
                let e = tables.entry(j);
                let parts =
                    e.plus_state.is_some() as u64 + e.minus_state.is_some() as u64;
                let rho = supplier.take(parts * shots)?;
                let (v, used) = threshold_test_counted(tables, j, rho, shots, rng)?;
                samples += used;
                Ok(v)
            }
        }
    };

    let mut call = 0u64;
    let mut boosted = |j: usize, rng: &mut Rng| -> Result<bool> {
        let mut votes = 0usize;
        for b in 0..boost {
            let mut child = rng.child(call);
            call += 1;
            if single_test(j, &mut child)? {
                votes += 1;
            }
            // Remaining votes cannot change the majority.
            if votes > boost / 2 || votes + (boost - b - 1) <= boost / 2 {
                break;
            }
        }
        Ok(votes > boost / 2)
    };

    let mut decide_range = |lo: usize, hi: usize, rng: &mut Rng| -> Result<bool> {
        for j in lo..hi {
            if boosted(j, rng)? {
                return Ok(true);
            }
        }
        Ok(false)
    };

    // Existence test over the full range, then narrow.
    let outcome = if !decide_range(0, m, rng)? {
        OracleOutcome::Feasible
    } else {
        fn narrow(
            lo: usize,
            hi: usize,
            decide: &mut dyn FnMut(usize, usize, &mut Rng) -> Result<bool>,
            rng: &mut Rng,
        ) -> Result<Option<usize>> {
            if hi - lo == 1 {
                return Ok(Some(lo));
            }
            let mid = lo + (hi - lo) / 2;
            if decide(lo, mid, rng)? {
                if let Some(j) = narrow(lo, mid, decide, rng)? {
                    return Ok(Some(j));
                }
            }
            if decide(mid, hi, rng)? {
                if let Some(j) = narrow(mid, hi, decide, rng)? {
                    return Ok(Some(j));
                }
            }
            Ok(None)
        }
        match narrow(0, m, &mut decide_range, rng)? {
            Some(j) => OracleOutcome::Violation(j),
            None => OracleOutcome::Feasible,
        }
    };

    let promise_violating = {
        let mut flag = false;
        for j in 0..m {
            let slack = model.exact_trace(j, supplier.take(0)?)? - model.bound(j);
            if slack > 0.0 && slack < epsilon {
                flag = true;
                break;
            }
        }
        Some(flag)
    };

    Ok(OracleReport {
        outcome,
        samples_used: samples,
        queries_used: queries,
        backend: model.backend(),
        promise_violating,
    })
}

/// Statistical oracle wrapper with cumulative counters.
pub struct SampledOracle<'a> {
    model: SampledModel<'a>,
    cfg: SearchConfig,
    samples: u64,
    queries: u64,
}

impl<'a> SampledOracle<'a> {
    pub fn plain(inst: &'a SdpInstance, cfg: SearchConfig) -> Self {
        SampledOracle {
            model: SampledModel::Plain(inst),
            cfg,
            samples: 0,
            queries: 0,
        }
    }

    pub fn quantum(tables: &'a QuantumInputTables, cfg: SearchConfig) -> Self {
        SampledOracle {
            model: SampledModel::Quantum(tables),
            cfg,
            samples: 0,
            queries: 0,
        }
    }
}

impl ViolationOracle for SampledOracle<'_> {
    fn backend(&self) -> &'static str {
        self.model.backend()
    }

    fn search(&mut self, rho: &DensityMatrix, rng: &mut Rng) -> Result<OracleReport> {
        let mut supplier = RhoSupplier::new(rho, self.cfg.copy_budget);
        let mut report = sampled_violation_search(&self.model, &mut supplier, &self.cfg, rng)?;
        self.samples += report.samples_used;
        self.queries += report.queries_used;
        report.samples_used = self.samples;
        report.queries_used = self.queries;
        Ok(report)
    }

    fn claimed_tolerance(&self) -> f64 {
        self.model.epsilon() / 2.0
    }
}

/// Backend that feeds the boosted per-index statistics into the
/// projector-OR simulator: each range decision encodes "which index
/// fired first" as a marked-basis-state search instance and accepts the
/// range when the acceptance-gap verdict lands in the marked case.
pub struct OrSimOracle<'a> {
    tables: &'a QuantumInputTables,
    cfg: SearchConfig,
    /// Gap parameters for the embedded search instances.
    pub or_eps: f64,
    pub or_xi: f64,
    pub or_trials: u64,
    samples: u64,
    queries: u64,
}

impl<'a> OrSimOracle<'a> {
    pub fn new(tables: &'a QuantumInputTables, cfg: SearchConfig) -> Result<Self> {
        let m = tables.len();
        let needed = (m + 1) * m.next_power_of_two();
        if needed > crate::orsim::DEFAULT_SIMULATOR_CAP {
            return Err(Error::Resource(format!(
                "or-sim backend needs joint dimension {needed}, cap {}",
                crate::orsim::DEFAULT_SIMULATOR_CAP
            )));
        }
        Ok(OrSimOracle {
            tables,
            cfg,
            or_eps: 1.0 / 3.0,
            or_xi: 0.05,
            or_trials: 128,
            samples: 0,
            queries: 0,
        })
    }
}

impl ViolationOracle for OrSimOracle<'_> {
    fn backend(&self) -> &'static str {
        "or-sim"
    }

    fn search(&mut self, rho: &DensityMatrix, rng: &mut Rng) -> Result<OracleReport> {
        let m = self.tables.len();
        let epsilon = self.tables.epsilon();
        let shots = self
            .cfg
            .shots_per_test
            .unwrap_or_else(|| default_shots(self.tables.trace_bound(), m, epsilon));
        let levels = (m.max(2) as f64).log2().ceil() as usize + 1;
        let per_index_target = (self.cfg.delta_fail / (m as f64 * levels as f64)).max(1e-12);
        let boost = self
            .cfg
            .boost_override
            .unwrap_or_else(|| derive_boost(per_test_failure_bound(m), per_index_target));

        let supplier = std::cell::RefCell::new(RhoSupplier::new(rho, self.cfg.copy_budget));
        let samples = std::cell::Cell::new(0u64);
        let queries = std::cell::Cell::new(0u64);
        let call = std::cell::Cell::new(0u64);
        let or_calls = std::cell::Cell::new(0u64);

        let boosted = |j: usize, rng: &mut Rng| -> Result<bool> {
            let mut votes = 0usize;
            for _ in 0..boost {
                let mut child = rng.child(call.get());
                call.set(call.get() + 1);
                queries.set(queries.get() + 1);
                let e = self.tables.entry(j);
                let parts = e.plus_state.is_some() as u64 + e.minus_state.is_some() as u64;
                supplier.borrow_mut().take(parts * shots)?;
                let (v, used) = threshold_test_counted(self.tables, j, rho, shots, &mut child)?;
                samples.set(samples.get() + used);
                if v {
                    votes += 1;
                }
            }
            Ok(votes > boost / 2)
        };

        // Range decision via the marked-state embedding: index i of the
        // range is marked when its boosted test fired; the input state
        // points at the first mark, or at the extra unmarked level.
        let mut decide_range = |lo: usize, hi: usize, rng: &mut Rng| -> Result<bool> {
            let len = hi - lo;
            let mut first_fired = None;
            for (pos, j) in (lo..hi).enumerate() {
                if boosted(j, rng)? {
                    first_fired = Some(pos);
                    break;
                }
            }
            let k = first_fired.unwrap_or(len);
            let inst = crate::orsim::OrInstance::marked_search(len, k, self.or_eps, self.or_xi)?;
            let mut or_rng = rng.child(u64::MAX - or_calls.get());
            or_calls.set(or_calls.get() + 1);
            let verdict = crate::orsim::gap_verdict(&inst, self.or_trials, &mut or_rng)?;
            queries.set(queries.get() + self.or_trials);
            Ok(matches!(verdict.case, crate::orsim::GapCase::Marked))
        };

        let outcome = if !decide_range(0, m, rng)? {
            OracleOutcome::Feasible
        } else {
            fn narrow(
                lo: usize,
                hi: usize,
                decide: &mut dyn FnMut(usize, usize, &mut Rng) -> Result<bool>,
                rng: &mut Rng,
            ) -> Result<Option<usize>> {
                if hi - lo == 1 {
                    return Ok(Some(lo));
                }
                let mid = lo + (hi - lo) / 2;
                if decide(lo, mid, rng)? {
                    if let Some(j) = narrow(lo, mid, decide, rng)? {
                        return Ok(Some(j));
                    }
                }
                if decide(mid, hi, rng)? {
                    if let Some(j) = narrow(mid, hi, decide, rng)? {
                        return Ok(Some(j));
                    }
                }
                Ok(None)
            }
            match narrow(0, m, &mut decide_range, rng)? {
                Some(j) => OracleOutcome::Violation(j),
                None => OracleOutcome::Feasible,
            }
        };

        self.samples += samples.get();
        self.queries += queries.get();
        Ok(OracleReport {
            outcome,
            samples_used: self.samples,
            queries_used: self.queries,
            backend: "or-sim",
            promise_violating: None,
        })
    }

    fn claimed_tolerance(&self) -> f64 {
        self.tables.epsilon() / 2.0
    }
}

/// Draw a normalized part `A_j^sgn / tr(A_j^sgn)` with probability
/// proportional to `c_j tr(A_j^sgn)`. The expectation over draws is
/// `K^sgn / tr(K^sgn)`.
pub fn linear_combo_sampler(
    spec: &GibbsSpec,
    sign: Sign,
    rng: &mut Rng,
) -> Result<DensityMatrix> {
    let terms = spec.terms(sign);
    let weights: Vec<f64> = terms.iter().map(|t| t.trace_weight).collect();
    let total: f64 = weights.iter().sum();
    if terms.is_empty() || total <= 0.0 {
        return Err(Error::Usage(format!(
            "no mass on the {} side of the decomposition",
            sign.label()
        )));
    }
    let idx = rng.weighted_index(&weights);
    Ok(terms[idx].state.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gibbs::GibbsTerm;
    use crate::mmw::{Constraint, InstanceMeta};
    use crate::testutil::random_density;

    fn diag_instance(entries: Vec<(Vec<f64>, f64)>, dim: usize, eps: f64) -> SdpInstance {
        let constraints = entries
            .into_iter()
            .map(|(d, bound)| Constraint {
                matrix: HermitianMatrix::diagonal(&d),
                bound,
            })
            .collect();
        SdpInstance::new(dim, constraints, eps, InstanceMeta::default()).unwrap()
    }

    #[test]
    fn exact_search_examples() {
        let inst = diag_instance(vec![(vec![1.0, -1.0], 0.5)], 2, 0.1);
        let mixed = DensityMatrix::maximally_mixed(2);
        let rep = exact_violation_search(&inst, &mixed).unwrap();
        assert_eq!(rep.outcome, OracleOutcome::Feasible);

        let pure = DensityMatrix::pure_basis(2, 0);
        let rep = exact_violation_search(&inst, &pure).unwrap();
        assert_eq!(rep.outcome, OracleOutcome::Violation(0));
    }

    #[test]
    fn exact_search_smallest_index() {
        // Violations at positions 2 and 5; the scan reports 2.
        let zero = vec![0.0, 0.0];
        let hot = vec![1.0, 0.0];
        let inst = diag_instance(
            vec![
                (zero.clone(), 0.0),
                (zero.clone(), 0.0),
                (hot.clone(), 0.1),
                (zero.clone(), 0.0),
                (zero, 0.0),
                (hot, 0.1),
            ],
            2,
            0.2,
        );
        let pure = DensityMatrix::pure_basis(2, 0);
        let rep = exact_violation_search(&inst, &pure).unwrap();
        assert_eq!(rep.outcome, OracleOutcome::Violation(2));
    }

    #[test]
    fn swap_test_exact_biases() {
        let mut rng = Rng::new(1);
        let p0 = DensityMatrix::pure_basis(2, 0);
        let p1 = DensityMatrix::pure_basis(2, 1);
        assert_eq!(swap_test_sample(&p0, &p0, 500, &mut rng).unwrap(), 1.0);
        // Orthogonal states: bias exactly 1/2.
        let freq = swap_test_sample(&p0, &p1, 200_000, &mut rng).unwrap();
        assert!((freq - 0.5).abs() < 0.01);
        // Purity 1/2 gives bias 3/4.
        let mixed = DensityMatrix::maximally_mixed(2);
        let freq = swap_test_sample(&mixed, &mixed, 200_000, &mut rng).unwrap();
        assert!((freq - 0.75).abs() < 0.01);
    }

    #[test]
    fn tables_roundtrip_random_instance() {
        let mut rng = Rng::new(7);
        let mut constraints = Vec::new();
        for _ in 0..4 {
            constraints.push(Constraint {
                matrix: crate::testutil::random_bounded_hermitian(3, &mut rng),
                bound: 0.2,
            });
        }
        let inst = SdpInstance::new(3, constraints, 0.2, InstanceMeta::default()).unwrap();
        // Construction validates reconstruction within 1e-8 internally.
        let tables = QuantumInputTables::from_instance(&inst).unwrap();
        let rho = random_density(3, &mut rng);
        for j in 0..4 {
            let exact = trace_inner(&inst.constraint(j).matrix, &rho).unwrap();
            assert!((tables.exact_trace(j, &rho).unwrap() - exact).abs() < 1e-9);
        }
    }

    #[test]
    fn threshold_test_zero_decomposition() {
        let entries = vec![ConstraintTables {
            plus_state: None,
            minus_state: None,
            tr_plus: 0.0,
            tr_minus: 0.0,
            bound: -0.3,
        }];
        let tables = QuantumInputTables::new(2, 0.2, entries, Some(1.0), None).unwrap();
        let rho = DensityMatrix::maximally_mixed(2);
        let mut rng = Rng::new(0);
        // Estimator is exactly 0, and 0 > -0.3 + 0.1.
        assert!(trace_threshold_test(&tables, 0, &rho, 10, &mut rng).unwrap());
    }

    fn boundary_tables(bound: f64) -> QuantumInputTables {
        // A = diag(1, -1) split into basis projectors.
        let entries = vec![ConstraintTables {
            plus_state: Some(DensityMatrix::pure_basis(2, 0)),
            minus_state: Some(DensityMatrix::pure_basis(2, 1)),
            tr_plus: 1.0,
            tr_minus: 1.0,
            bound,
        }];
        QuantumInputTables::new(2, 0.2, entries, Some(2.0), None).unwrap()
    }

    #[test]
    fn threshold_test_calibration_at_boundary() {
        // tr(A rho) = a + eps exactly: expect "violated" almost always.
        let tables = boundary_tables(0.0);
        let shots = default_shots(2.0, 8, 0.2);
        let rho = DensityMatrix::new(HermitianMatrix::diagonal(&[0.6, 0.4])).unwrap();
        let mut hits = 0;
        for seed in 0..200 {
            let mut rng = Rng::new(seed);
            if trace_threshold_test(&tables, 0, &rho, shots, &mut rng).unwrap() {
                hits += 1;
            }
        }
        assert!(hits >= 198, "hits {hits}");

        // tr(A rho) = a exactly: expect "not violated" almost always.
        let rho = DensityMatrix::maximally_mixed(2);
        let mut hits = 0;
        for seed in 0..200 {
            let mut rng = Rng::new(seed);
            if trace_threshold_test(&tables, 0, &rho, shots, &mut rng).unwrap() {
                hits += 1;
            }
        }
        assert!(hits <= 2, "hits {hits}");
    }

    #[test]
    fn estimator_is_unbiased() {
        // Sample mean of the estimator over many shots stays within four
        // standard errors of tr(A rho).
        let tables = boundary_tables(0.0);
        let rho = DensityMatrix::new(HermitianMatrix::diagonal(&[0.7, 0.3])).unwrap();
        let truth = 0.4;
        let shots = 10_000u64;
        let mut rng = Rng::new(12);
        let e = tables.entry(0);
        let fp = swap_test_sample(e.plus_state.as_ref().unwrap(), &rho, shots, &mut rng).unwrap();
        let fm = swap_test_sample(e.minus_state.as_ref().unwrap(), &rho, shots, &mut rng).unwrap();
        let est = (2.0 * fp - 1.0) * e.tr_plus - (2.0 * fm - 1.0) * e.tr_minus;
        // Each frequency has variance p(1-p)/shots <= 1/(4 shots).
        let se = (2.0 / (shots as f64)).sqrt();
        assert!((est - truth).abs() <= 4.0 * se, "est {est}");
    }

    #[test]
    fn sampled_search_single_violated() {
        let inst = diag_instance(vec![(vec![1.0, -1.0], 0.0)], 2, 0.25);
        let tables = QuantumInputTables::from_instance(&inst).unwrap();
        let rho = DensityMatrix::pure_basis(2, 0);
        let mut supplier = RhoSupplier::new(&rho, None);
        let mut rng = Rng::new(5);
        let rep = sampled_violation_search(
            &SampledModel::Quantum(&tables),
            &mut supplier,
            &SearchConfig::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(rep.outcome, OracleOutcome::Violation(0));
        assert!(rep.samples_used > 0);
        assert_eq!(rep.promise_violating, Some(false));
    }

    fn planted_instance(m: usize, hot: usize, dim: usize, eps: f64) -> SdpInstance {
        // Constraint `hot` is violated by |0><0| with slack exactly eps;
        // the rest have slack -eps.
        let mut entries = Vec::new();
        for j in 0..m {
            let d: Vec<f64> = (0..dim).map(|k| if k == 0 { 1.0 } else { 0.0 }).collect();
            let bound = if j == hot { 1.0 - 2.0 * eps } else { 1.0 + eps };
            entries.push((d, bound));
        }
        diag_instance(entries, dim, eps)
    }

    #[test]
    fn sampled_search_locates_planted_index() {
        let eps = 0.25;
        let inst = planted_instance(8, 5, 2, eps);
        let tables = QuantumInputTables::from_instance(&inst).unwrap();
        let rho = DensityMatrix::pure_basis(2, 0);
        let mut agree = 0;
        for seed in 0..200u64 {
            let mut rng = Rng::new(seed);
            let mut supplier = RhoSupplier::new(&rho, None);
            let rep = sampled_violation_search(
                &SampledModel::Quantum(&tables),
                &mut supplier,
                &SearchConfig::default(),
                &mut rng,
            )
            .unwrap();
            if rep.outcome == OracleOutcome::Violation(5) {
                agree += 1;
            }
        }
        assert!(agree >= 190, "agree {agree}");
    }

    #[test]
    fn sampled_search_feasible_state() {
        let eps = 0.25;
        // All slacks at -eps.
        let inst = planted_instance(8, 9, 2, eps);
        let tables = QuantumInputTables::from_instance(&inst).unwrap();
        let rho = DensityMatrix::pure_basis(2, 0);
        let mut agree = 0;
        for seed in 0..200u64 {
            let mut rng = Rng::new(seed);
            let mut supplier = RhoSupplier::new(&rho, None);
            let rep = sampled_violation_search(
                &SampledModel::Quantum(&tables),
                &mut supplier,
                &SearchConfig::default(),
                &mut rng,
            )
            .unwrap();
            if rep.outcome == OracleOutcome::Feasible {
                agree += 1;
            }
        }
        assert!(agree >= 190, "agree {agree}");
    }

    #[test]
    fn plain_model_agrees_with_exact() {
        let eps = 0.25;
        let inst = planted_instance(6, 2, 3, eps);
        let rho = DensityMatrix::pure_basis(3, 0);
        let mut agree = 0;
        for seed in 0..100u64 {
            let mut rng = Rng::new(seed);
            let mut supplier = RhoSupplier::new(&rho, None);
            let rep = sampled_violation_search(
                &SampledModel::Plain(&inst),
                &mut supplier,
                &SearchConfig::default(),
                &mut rng,
            )
            .unwrap();
            if rep.outcome == OracleOutcome::Violation(2) {
                agree += 1;
            }
        }
        assert!(agree >= 95, "agree {agree}");
    }

    #[test]
    fn supplier_budget_exhaustion() {
        let inst = planted_instance(4, 1, 2, 0.25);
        let tables = QuantumInputTables::from_instance(&inst).unwrap();
        let rho = DensityMatrix::pure_basis(2, 0);
        let mut supplier = RhoSupplier::new(&rho, Some(10));
        let mut rng = Rng::new(0);
        let err = sampled_violation_search(
            &SampledModel::Quantum(&tables),
            &mut supplier,
            &SearchConfig::default(),
            &mut rng,
        );
        assert!(matches!(err, Err(Error::Resource(_))));
    }

    #[test]
    fn linear_combo_single_term() {
        let state = DensityMatrix::pure_basis(2, 1);
        let spec = GibbsSpec::new(
            2,
            vec![GibbsTerm::new(1.0, state.clone(), 1.0)],
            vec![],
            2.0,
            1,
        )
        .unwrap();
        let mut rng = Rng::new(0);
        let drawn = linear_combo_sampler(&spec, Sign::Plus, &mut rng).unwrap();
        assert_eq!(drawn.as_matrix(), state.as_matrix());
        assert!(linear_combo_sampler(&spec, Sign::Minus, &mut rng).is_err());
    }

    #[test]
    fn linear_combo_frequencies() {
        // Weights 1 and 3: draw frequencies 1/4 and 3/4.
        let s0 = DensityMatrix::pure_basis(2, 0);
        let s1 = DensityMatrix::pure_basis(2, 1);
        let spec = GibbsSpec::new(
            2,
            vec![
                GibbsTerm::new(1.0, s0.clone(), 1.0),
                GibbsTerm::new(1.0, s1, 3.0),
            ],
            vec![],
            4.0,
            2,
        )
        .unwrap();
        let mut rng = Rng::new(42);
        let mut first = 0;
        let draws = 10_000;
        for _ in 0..draws {
            let d = linear_combo_sampler(&spec, Sign::Plus, &mut rng).unwrap();
            if d.as_matrix() == s0.as_matrix() {
                first += 1;
            }
        }
        let f = first as f64 / draws as f64;
        assert!((f - 0.25).abs() < 0.02, "frequency {f}");
    }

    #[test]
    fn linear_combo_mean_matches_normalized_part() {
        let mut rng = Rng::new(9);
        let n = 8;
        let terms: Vec<GibbsTerm> = (0..3)
            .map(|_| {
                let st = crate::testutil::random_low_rank_density(n, 2, &mut rng);
                let w = rng.range(0.2..1.0);
                GibbsTerm::new(1.0, st, w)
            })
            .collect();
        let spec = GibbsSpec::new(n, terms.clone(), vec![], 4.0, 6).unwrap();
        let total: f64 = terms.iter().map(|t| t.trace_weight).sum();
        let mut expect = nalgebra::DMatrix::<num_complex::Complex64>::zeros(n, n);
        for t in &terms {
            expect += t.state.as_matrix() * num_complex::Complex64::new(t.trace_weight / total, 0.0);
        }
        let mut mean = nalgebra::DMatrix::<num_complex::Complex64>::zeros(n, n);
        let draws = 20_000;
        for _ in 0..draws {
            mean += linear_combo_sampler(&spec, Sign::Plus, &mut rng)
                .unwrap()
                .as_matrix();
        }
        mean /= num_complex::Complex64::new(draws as f64, 0.0);
        assert!((mean - expect).norm() < 0.02);
    }

    #[test]
    fn boost_derivation_is_odd_and_modest() {
        assert_eq!(derive_boost(0.001, 0.01) % 2, 1);
        assert!(derive_boost(0.25, 1e-4) <= 15);
        assert_eq!(derive_boost(1e-6, 1e-3), 1);
    }
}

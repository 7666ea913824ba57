//! Maximum-entropy state learning from measurement expectations.
//!
//! Given two-outcome measurement operators `E_1..E_m` and access to an
//! unknown state `rho`, the learner runs the multiplicative-weights loop
//! with a two-sided deviation search: whenever `tr(E_i sigma)` strays
//! from `tr(E_i rho)` by `eps` it applies a signed gain that nudges the
//! iterate's expectation back toward the target. The final iterate is a
//! Gibbs state over a sparse combination of the operators; the learner
//! emits those exponent coefficients alongside the state.
//!
//! The exact backend reads `tr(E_i rho)` directly. The sampled backend
//! touches `rho` only through overlap-test statistics against the
//! normalized operators, mirroring how the exact coefficients would be
//! estimated physically, and the same estimate that fired the violation
//! is the one used inside the gain.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{trace_inner, DensityMatrix, HermitianMatrix};
use crate::mmw::{round_cap, MwState, SPECTRAL_TOL};
use crate::oracle::{default_shots, swap_test_sample, RhoSupplier};
use crate::rng::Rng;

/// Two-outcome measurement collection with `0 <= E_i <= I` enforced.
#[derive(Debug, Clone)]
pub struct MeasurementSet {
    dim: usize,
    operators: Vec<HermitianMatrix>,
    pub rank_bound: usize,
}

impl MeasurementSet {
    pub fn new(dim: usize, operators: Vec<HermitianMatrix>, rank_bound: usize) -> Result<Self> {
        if operators.is_empty() {
            return Err(Error::Usage("need at least one measurement operator".into()));
        }
        for (i, e) in operators.iter().enumerate() {
            if e.dim() != dim {
                return Err(Error::Usage(format!(
                    "operators[{i}]: dimension {} does not match {dim}",
                    e.dim()
                )));
            }
            let spec = e.eigh()?;
            let lo = spec.eigenvalues.first().copied().unwrap_or(0.0);
            let hi = spec.eigenvalues.last().copied().unwrap_or(0.0);
            if lo < -SPECTRAL_TOL || hi > 1.0 + SPECTRAL_TOL {
                return Err(Error::Contract(format!(
                    "operators[{i}]: spectrum [{lo:.6}, {hi:.6}] escapes [0, 1]"
                )));
            }
        }
        Ok(MeasurementSet {
            dim,
            operators,
            rank_bound,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.operators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.operators.is_empty()
    }

    pub fn operator(&self, i: usize) -> &HermitianMatrix {
        &self.operators[i]
    }

    pub fn operators(&self) -> &[HermitianMatrix] {
        &self.operators
    }

    /// Largest operator trace; bounds the overlap-test weights.
    pub fn trace_bound(&self) -> f64 {
        self.operators
            .iter()
            .map(|e| e.trace())
            .fold(0.0, f64::max)
    }
}

/// Which side of the target the iterate's expectation sat on when the
/// round fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Side {
    /// `tr(E sigma)` fell short of the target: the gain raises it.
    Below,
    /// `tr(E sigma)` overshot the target: the gain lowers it.
    Above,
}

#[derive(Debug, Clone, Serialize)]
pub struct JaynesTerm {
    pub index: usize,
    pub coefficient: f64,
    pub side: Side,
}

/// Exponent description of the learned state:
/// `sigma = exp(sum_i lambda_i E_i) / tr(...)`.
#[derive(Debug, Clone, Serialize)]
pub struct JaynesDescription {
    pub dim: usize,
    /// One term per firing round; indices may repeat.
    pub terms: Vec<JaynesTerm>,
}

impl JaynesDescription {
    /// Coefficients summed per operator index.
    pub fn aggregated(&self) -> BTreeMap<usize, f64> {
        let mut map = BTreeMap::new();
        for t in &self.terms {
            *map.entry(t.index).or_insert(0.0) += t.coefficient;
        }
        map
    }

    pub fn nonzero_terms(&self) -> usize {
        self.aggregated().values().filter(|c| **c != 0.0).count()
    }

    /// `sum_i lambda_i E_i`.
    pub fn exponent(&self, meas: &MeasurementSet) -> Result<HermitianMatrix> {
        let mut h = HermitianMatrix::zeros(self.dim);
        for (i, c) in self.aggregated() {
            if i >= meas.len() {
                return Err(Error::Usage(format!(
                    "coefficient index {i} outside the measurement set of size {}",
                    meas.len()
                )));
            }
            h = h.axpy(c, meas.operator(i))?;
        }
        Ok(h)
    }
}

/// Rebuild the learned state from its coefficients.
pub fn jaynes_reconstruct(
    desc: &JaynesDescription,
    meas: &MeasurementSet,
) -> Result<DensityMatrix> {
    desc.exponent(meas)?.scale(-1.0).gibbs_of()
}

/// Exact `max_i |tr(E_i sigma) - tr(E_i rho)|`.
pub fn verify_shadow(
    sigma: &DensityMatrix,
    rho: &DensityMatrix,
    meas: &MeasurementSet,
) -> Result<f64> {
    let mut worst = 0.0_f64;
    for e in meas.operators() {
        worst = worst.max((trace_inner(e, sigma)? - trace_inner(e, rho)?).abs());
    }
    Ok(worst)
}

#[derive(Debug, Clone)]
pub enum LearnBackend {
    Exact,
    Sampled {
        /// Shots per overlap test; `None` derives from the operator
        /// trace bound and `eps`.
        shots: Option<u64>,
        /// Budget on copies of the unknown state.
        copy_budget: Option<u64>,
        /// Per-round search failure budget; `None` uses
        /// `eps^2 / (400 ln n)`.
        delta_fail: Option<f64>,
    },
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct LearnCounters {
    /// Copies of the unknown state consumed by overlap tests.
    pub rho_copies: u64,
    /// Copies of the iterate consumed by overlap tests.
    pub sigma_copies: u64,
    /// Per-index statistical tests run.
    pub tests: u64,
}

#[derive(Debug, Clone)]
pub struct LearnOutcome {
    pub description: JaynesDescription,
    pub sigma: DensityMatrix,
    pub rounds: usize,
    pub round_cap: usize,
    pub counters: LearnCounters,
    pub backend: &'static str,
}

struct Violation {
    index: usize,
    side: Side,
    /// Target expectation used inside the gain (exact or estimated).
    target: f64,
}

/// Learn a Gibbs-form description of `target` over the measurement set.
///
/// The sampled backend reads `target` only through
/// [`swap_test_sample`]; everything else it learns from statistics.
pub fn learn_state(
    meas: &MeasurementSet,
    target: &DensityMatrix,
    eps: f64,
    backend: &LearnBackend,
    rng: &mut Rng,
) -> Result<LearnOutcome> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Usage(format!("eps {eps} outside (0, 1)")));
    }
    if meas.dim() != target.dim() {
        return Err(Error::Usage(format!(
            "measurement dimension {} does not match state dimension {}",
            meas.dim(),
            target.dim()
        )));
    }
    let n = meas.dim();
    let delta = eps / 4.0;
    let cap = round_cap(n, eps);
    let mut state = MwState::new(n, delta)?;
    let mut terms = Vec::new();
    let mut counters = LearnCounters::default();

    // Normalized operators for the sampled backend.
    let normalized: Vec<Option<(DensityMatrix, f64)>> = match backend {
        LearnBackend::Exact => Vec::new(),
        LearnBackend::Sampled { .. } => meas
            .operators()
            .iter()
            .map(|e| {
                let tr = e.trace();
                if tr <= 0.0 {
                    return Ok(None);
                }
                let scaled = e.scale(1.0 / tr);
                Ok(Some((DensityMatrix::new(scaled)?, tr)))
            })
            .collect::<Result<_>>()?,
    };
    let mut supplier = RhoSupplier::new(
        target,
        match backend {
            LearnBackend::Exact => None,
            LearnBackend::Sampled { copy_budget, .. } => *copy_budget,
        },
    );

    for round in 1..=cap {
        let mut round_rng = rng.child(round as u64);
        let violation = match backend {
            LearnBackend::Exact => exact_search(meas, state.rho(), target, eps)?,
            LearnBackend::Sampled {
                shots, delta_fail, ..
            } => sampled_search(
                meas,
                &normalized,
                state.rho(),
                &mut supplier,
                eps,
                *shots,
                *delta_fail,
                &mut counters,
                &mut round_rng,
            )?,
        };
        let Some(v) = violation else {
            return Ok(LearnOutcome {
                description: JaynesDescription { dim: n, terms },
                sigma: state.rho().clone(),
                rounds: round,
                round_cap: cap,
                counters,
                backend: match backend {
                    LearnBackend::Exact => "exact",
                    LearnBackend::Sampled { .. } => "sampled",
                },
            });
        };
        let e = meas.operator(v.index);
        let c = v.target.clamp(0.0, 1.0);
        // Signed gain: identity share keeps the spectrum in [0, 1], the
        // operator share moves the expectation toward the target.
        let (gain, coefficient) = match v.side {
            Side::Below => (
                HermitianMatrix::identity(n)
                    .scale((1.0 - c) / 2.0)
                    .axpy(0.5, e)?,
                delta / 2.0,
            ),
            Side::Above => (
                HermitianMatrix::identity(n)
                    .scale((1.0 + c) / 2.0)
                    .axpy(-0.5, e)?,
                -delta / 2.0,
            ),
        };
        terms.push(JaynesTerm {
            index: v.index,
            coefficient,
            side: v.side,
        });
        state = state.mw_round(gain)?;
    }

    let exact_dev = verify_shadow(state.rho(), target, meas)?;
    Err(Error::Learner(format!(
        "round cap {cap} exhausted without matching all expectations; exact residual \
         deviation {exact_dev:.6}, {} coefficient terms accumulated",
        terms.len()
    )))
}

fn exact_search(
    meas: &MeasurementSet,
    sigma: &DensityMatrix,
    rho: &DensityMatrix,
    eps: f64,
) -> Result<Option<Violation>> {
    for (i, e) in meas.operators().iter().enumerate() {
        let target = trace_inner(e, rho)?;
        let dev = trace_inner(e, sigma)? - target;
        if dev.abs() >= eps {
            return Ok(Some(Violation {
                index: i,
                side: if dev < 0.0 { Side::Below } else { Side::Above },
                target,
            }));
        }
    }
    Ok(None)
}

/// Two-overlap-test deviation search: estimate both expectations per
/// index, fire when the estimates differ by more than `eps/2`, boosted
/// by majority vote, and locate the smallest index by range halving.
#[allow(clippy::too_many_arguments)]
fn sampled_search(
    meas: &MeasurementSet,
    normalized: &[Option<(DensityMatrix, f64)>],
    sigma: &DensityMatrix,
    supplier: &mut RhoSupplier,
    eps: f64,
    shots: Option<u64>,
    delta_fail: Option<f64>,
    counters: &mut LearnCounters,
    rng: &mut Rng,
) -> Result<Option<Violation>> {
    let m = meas.len();
    let shots = shots.unwrap_or_else(|| default_shots(meas.trace_bound(), 2 * m, eps));
    let delta_fail = delta_fail.unwrap_or_else(|| {
        crate::mmw::default_oracle_failure(meas.dim(), eps, 400.0)
    });
    let levels = (m.max(2) as f64).log2().ceil() as usize + 1;
    let per_index_target = (delta_fail / (m as f64 * levels as f64)).max(1e-12);
    // The default shot count keeps one test's failure near m^-4; boost
    // with a short odd majority when that is not already enough.
    let p0 = (4.0 * ((2 * m).max(2) as f64).powi(-4)).min(0.25);
    let boost = {
        let mut l = 1usize;
        while l < 15 {
            let need = l / 2 + 1;
            let mut tail = 0.0;
            for k in need..=l {
                let mut logc = 0.0;
                for i in 0..k {
                    logc += ((l - i) as f64).ln() - ((i + 1) as f64).ln();
                }
                tail += (logc + (k as f64) * p0.ln() + ((l - k) as f64) * (1.0 - p0).ln()).exp();
            }
            if tail <= per_index_target {
                break;
            }
            l += 2;
        }
        l
    };

    let mut call = 0u64;
    let mut boosted = |i: usize, rng: &mut Rng| -> Result<Option<(Side, f64)>> {
        let Some((norm_state, tr)) = &normalized[i] else {
            // Zero operator never deviates.
            return Ok(None);
        };
        let mut below = 0usize;
        let mut above = 0usize;
        let mut target_acc = 0.0;
        for _ in 0..boost {
            let mut child = rng.child(call);
            call += 1;
            counters.tests += 1;
            let rho_ref = supplier.take(shots)?;
            let p_rho = swap_test_sample(norm_state, rho_ref, shots, &mut child)?;
            counters.rho_copies += shots;
            let p_sigma = swap_test_sample(norm_state, sigma, shots, &mut child)?;
            counters.sigma_copies += shots;
            let est_rho = ((2.0 * p_rho - 1.0) * tr).clamp(0.0, 1.0);
            let est_sigma = (2.0 * p_sigma - 1.0) * tr;
            let diff = est_sigma - est_rho;
            if diff <= -eps / 2.0 {
                below += 1;
                target_acc += est_rho;
            } else if diff >= eps / 2.0 {
                above += 1;
                target_acc += est_rho;
            }
        }
        if below + above > boost / 2 {
            let side = if below >= above { Side::Below } else { Side::Above };
            Ok(Some((side, target_acc / (below + above) as f64)))
        } else {
            Ok(None)
        }
    };

    // Range has a deviation iff some member test fires.
    let mut hit: Option<(usize, Side, f64)> = None;
    let mut decide = |lo: usize, hi: usize, rng: &mut Rng| -> Result<bool> {
        for i in lo..hi {
            if let Some((side, target)) = boosted(i, rng)? {
                hit = Some((i, side, target));
                return Ok(true);
            }
        }
        Ok(false)
    };

    if !decide(0, m, rng)? {
        return Ok(None);
    }
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
    let found = narrow(0, m, &mut decide, rng)?;
    Ok(match (found, hit) {
        (Some(j), Some((i, side, target))) if i == j => Some(Violation {
            index: j,
            side,
            target,
        }),
        (Some(j), _) => {
            // The last firing test may belong to a wider range; its side
            // and estimate still describe index j's final leaf test.
            hit.map(|(_, side, target)| Violation {
                index: j,
                side,
                target,
            })
        }
        (None, _) => None,
    })
}

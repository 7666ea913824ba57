//! Low-rank Gibbs machinery.
//!
//! A Hermitian `K` arrives as a weighted difference of normalized PSD
//! parts (`K = K+ - K-` with a trace table). Eigenvalue estimation is
//! modeled as shifted-grid rounding `f(s, l) = grid*round((l+s)/grid) - s`
//! with a uniformly random shift: the output depends only on the shift
//! and the eigenvalue, estimates stay within the grid spacing, and
//! nearby eigenvalues can merge into one rounded value, in which case
//! measurement collapses onto the whole merged subspace.
//!
//! On top of that sit Monte-Carlo estimators for the above-threshold
//! partition sum and the kernel dimension, rejection samplers for the
//! support and kernel pieces of the Gibbs state, and `prepare_gibbs`,
//! which mixes the two samplers into an empirical state within `eps`
//! trace distance of `exp(-K)/Z`.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand_distr::weighted_alias::WeightedAliasIndex;
use rand_distr::Distribution;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::{trace_distance, DensityMatrix, HermitianMatrix, Spectrum};
use crate::rng::Rng;

/// Repetition constants where the analysis only fixes the scaling.
pub const Z_SUPP_REPS_FACTOR: f64 = 16.0;
pub const LAMBDA_MIN_REPS_FACTOR: f64 = 4.0;
pub const SUPP_ATTEMPT_FACTOR: f64 = 8.0;
pub const KERNEL_REPS_FACTOR: f64 = 16.0;
pub const MIXTURE_DRAWS_FACTOR: f64 = 64.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn label(&self) -> &'static str {
        match self {
            Sign::Plus => "plus",
            Sign::Minus => "minus",
        }
    }
}

/// One decomposition term: `coeff * A` contributes `trace_weight` mass
/// through the normalized state `A / tr(A)`.
#[derive(Debug, Clone)]
pub struct GibbsTerm {
    pub coeff: f64,
    pub state: DensityMatrix,
    /// `coeff * tr` of the unnormalized part.
    pub trace_weight: f64,
}

impl GibbsTerm {
    pub fn new(coeff: f64, state: DensityMatrix, trace_weight: f64) -> Self {
        GibbsTerm {
            coeff,
            state,
            trace_weight,
        }
    }

    fn matrix_contribution(&self) -> DMatrix<C64> {
        self.state.as_matrix() * C64::new(self.trace_weight, 0.0)
    }
}

/// Weighted-part decomposition of `K` with trace and rank bounds.
#[derive(Debug, Clone)]
pub struct GibbsSpec {
    dim: usize,
    plus_terms: Vec<GibbsTerm>,
    minus_terms: Vec<GibbsTerm>,
    /// Bound on the total trace weight over both signs.
    pub bound: f64,
    /// Rank bound on each signed part.
    pub rank_bound: usize,
}

impl GibbsSpec {
    pub fn new(
        dim: usize,
        plus_terms: Vec<GibbsTerm>,
        minus_terms: Vec<GibbsTerm>,
        bound: f64,
        rank_bound: usize,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Usage("dimension must be at least 1".into()));
        }
        let mut total = 0.0;
        for (side, terms) in [("plus", &plus_terms), ("minus", &minus_terms)] {
            for (j, t) in terms.iter().enumerate() {
                if !(t.coeff > 0.0) {
                    return Err(Error::Usage(format!(
                        "{side}_terms[{j}].coeff must be positive"
                    )));
                }
                if t.trace_weight < 0.0 {
                    return Err(Error::Usage(format!(
                        "{side}_terms[{j}].trace_weight must be nonnegative"
                    )));
                }
                if t.state.dim() != dim {
                    return Err(Error::Usage(format!(
                        "{side}_terms[{j}].state: dimension {} does not match {dim}",
                        t.state.dim()
                    )));
                }
                total += t.trace_weight;
            }
        }
        if total > bound + 1e-9 {
            return Err(Error::Contract(format!(
                "trace weights sum to {total}, above the bound {bound}"
            )));
        }
        Ok(GibbsSpec {
            dim,
            plus_terms,
            minus_terms,
            bound,
            rank_bound,
        })
    }

    pub fn empty(dim: usize) -> Self {
        GibbsSpec {
            dim,
            plus_terms: Vec::new(),
            minus_terms: Vec::new(),
            bound: 0.0,
            rank_bound: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self, sign: Sign) -> &[GibbsTerm] {
        match sign {
            Sign::Plus => &self.plus_terms,
            Sign::Minus => &self.minus_terms,
        }
    }

    pub fn trace_weight(&self, sign: Sign) -> f64 {
        self.terms(sign).iter().map(|t| t.trace_weight).sum()
    }

    pub fn total_trace_weight(&self) -> f64 {
        self.trace_weight(Sign::Plus) + self.trace_weight(Sign::Minus)
    }

    /// Signed part as a dense matrix.
    pub fn part(&self, sign: Sign) -> DMatrix<C64> {
        let mut m = DMatrix::<C64>::zeros(self.dim, self.dim);
        for t in self.terms(sign) {
            m += t.matrix_contribution();
        }
        m
    }

    /// Dense `K` plus its spectrum, with the rank bound enforced.
    pub fn assemble_k(&self) -> Result<(HermitianMatrix, Spectrum)> {
        let raw = self.part(Sign::Plus) - self.part(Sign::Minus);
        let k = HermitianMatrix::symmetrized(raw)?;
        let spec = k.eigh()?;
        let tol = 1e-8 * k.frobenius_norm().max(1.0);
        let rank = spec.rank_above(tol);
        if rank > 2 * self.rank_bound {
            return Err(Error::Contract(format!(
                "assembled rank {rank} exceeds twice the rank bound {}",
                self.rank_bound
            )));
        }
        Ok((k, spec))
    }
}

/// Shifted-grid eigenvalue rounding with an injected failure rate.
#[derive(Debug, Clone, Serialize)]
pub struct ConsistentEstimator {
    shift: f64,
    grid: f64,
    fail: f64,
}

impl ConsistentEstimator {
    /// Draw the shift uniformly from `[0, grid)`.
    pub fn draw(grid: f64, fail: f64, rng: &mut Rng) -> Result<Self> {
        let shift = rng.uniform() * grid;
        ConsistentEstimator::with_shift(shift, grid, fail)
    }

    pub fn with_shift(shift: f64, grid: f64, fail: f64) -> Result<Self> {
        if !(grid > 0.0) {
            return Err(Error::Usage(format!("grid {grid} must be positive")));
        }
        if !(0.0..=1.0).contains(&fail) {
            return Err(Error::Usage(format!("failure rate {fail} outside [0, 1]")));
        }
        if !(0.0..grid).contains(&shift) {
            return Err(Error::Usage(format!("shift {shift} outside [0, {grid})")));
        }
        Ok(ConsistentEstimator { shift, grid, fail })
    }

    pub fn grid(&self) -> f64 {
        self.grid
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn fail(&self) -> f64 {
        self.fail
    }

    /// Integer grid slot of an eigenvalue; equal slots merge.
    fn slot(&self, lambda: f64) -> i64 {
        ((lambda + self.shift) / self.grid).round() as i64
    }

    /// `f(s, l)`: depends only on the shift and the eigenvalue, and
    /// `|f(s, l) - l| <= grid/2`.
    pub fn round_eig(&self, lambda: f64) -> f64 {
        self.grid * self.slot(lambda) as f64 - self.shift
    }

    fn value_of_slot(&self, slot: i64) -> f64 {
        self.grid * slot as f64 - self.shift
    }

    /// Estimation-failure model: with probability `fail`, offset the
    /// rounded value by one grid step in a random direction.
    fn corrupt(&self, rounded: f64, rng: &mut Rng) -> f64 {
        if self.fail > 0.0 && rng.bernoulli(self.fail) {
            let sign = if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
            rounded + sign * self.grid
        } else {
            rounded
        }
    }
}

/// Minimum rounded eigenvalue seen above the grid threshold. When no
/// draw passed the threshold every later estimate passes the check.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LambdaMin {
    pub observed: Option<f64>,
}

impl LambdaMin {
    pub fn passes(&self, lambda: f64) -> bool {
        match self.observed {
            Some(min) => lambda >= min,
            None => true,
        }
    }

    pub fn everything_passes() -> Self {
        LambdaMin { observed: None }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimatorReport {
    pub value: f64,
    pub repetitions: u64,
    pub target_relative_error: f64,
    /// Measured against the exact rounded-spectrum reference.
    pub empirical_success: Option<bool>,
    pub exact_reference: Option<f64>,
    /// Mean of the squared single-draw output.
    pub second_moment: f64,
}

/// A maximal set of eigenvectors sharing both the rounded eigenvalue
/// and the eigenvalue of `K+ + K-` restricted to the merged subspace.
struct Cell {
    lambda_rounded: f64,
    /// Eigenvalue of the sign-sum operator on this cell.
    mu: f64,
    members: usize,
    basis: DMatrix<C64>,
}

impl Cell {
    fn normalized_projector(&self) -> DMatrix<C64> {
        (&self.basis * self.basis.adjoint()) / C64::new(self.members as f64, 0.0)
    }
}

/// Prepared sampling caches for one `(spec, estimator)` pair.
pub struct GibbsEngine<'a> {
    spec: &'a GibbsSpec,
    est: ConsistentEstimator,
    k: HermitianMatrix,
    spectrum: Spectrum,
    cells: Vec<Cell>,
    /// Per source state (plus terms then minus terms): alias table over
    /// cells with Born weights.
    source_cells: Vec<WeightedAliasIndex<f64>>,
    plus_picker: Option<WeightedAliasIndex<f64>>,
    minus_picker: Option<WeightedAliasIndex<f64>>,
    uniform_cells: Option<WeightedAliasIndex<f64>>,
    trace_plus: f64,
    trace_minus: f64,
}

impl<'a> GibbsEngine<'a> {
    pub fn new(spec: &'a GibbsSpec, est: ConsistentEstimator) -> Result<Self> {
        let (k, spectrum) = spec.assemble_k()?;
        let n = spec.dim();

        // Group eigenindices by rounded slot.
        let mut slots: Vec<(i64, Vec<usize>)> = Vec::new();
        for (i, &l) in spectrum.eigenvalues.iter().enumerate() {
            let s = est.slot(l);
            match slots.last_mut() {
                Some((slot, members)) if *slot == s => members.push(i),
                _ => slots.push((s, vec![i])),
            }
        }

        // Sign-sum operator; its eigenvalue on a component is the mu in
        // the support sampler's acceptance rule.
        let kbar = HermitianMatrix::symmetrized(
            spec.part(Sign::Plus) + spec.part(Sign::Minus),
        )?;

        let mut cells = Vec::new();
        for (slot, members) in slots {
            let lambda_rounded = est.value_of_slot(slot);
            let kmem = members.len();
            let v = {
                let mut m = DMatrix::<C64>::zeros(n, kmem);
                for (c, &i) in members.iter().enumerate() {
                    m.set_column(c, &spectrum.basis.column(i));
                }
                m
            };
            let block = HermitianMatrix::symmetrized(v.adjoint() * kbar.as_matrix() * &v)?;
            let sub = block.eigh()?;
            let combined = &v * &sub.basis;
            // Cluster the block spectrum into equal-mu runs.
            let tol = 1e-8 * kbar.frobenius_norm().max(1.0);
            let mut start = 0;
            while start < kmem {
                let mut end = start + 1;
                while end < kmem && sub.eigenvalues[end] - sub.eigenvalues[end - 1] < tol {
                    end += 1;
                }
                let cols = combined.columns(start, end - start).into_owned();
                let mu = sub.eigenvalues[start..end].iter().sum::<f64>()
                    / (end - start) as f64;
                cells.push(Cell {
                    lambda_rounded,
                    mu: mu.max(0.0),
                    members: end - start,
                    basis: cols,
                });
                start = end;
            }
        }

        let cell_weights_for = |state: &DensityMatrix| -> Vec<f64> {
            cells
                .iter()
                .map(|c| {
                    let proj = c.basis.adjoint() * state.as_matrix() * &c.basis;
                    (0..c.members).map(|i| proj[(i, i)].re).sum::<f64>().max(0.0)
                })
                .collect()
        };

        let mut source_cells = Vec::new();
        for sign in [Sign::Plus, Sign::Minus] {
            for t in spec.terms(sign) {
                let w = cell_weights_for(&t.state);
                source_cells.push(
                    WeightedAliasIndex::new(w)
                        .map_err(|e| Error::Numeric(format!("cell weights: {e}")))?,
                );
            }
        }

        let term_picker = |terms: &[GibbsTerm]| -> Result<Option<WeightedAliasIndex<f64>>> {
            let w: Vec<f64> = terms.iter().map(|t| t.trace_weight).collect();
            if w.is_empty() || w.iter().sum::<f64>() <= 0.0 {
                return Ok(None);
            }
            Ok(Some(WeightedAliasIndex::new(w).map_err(|e| {
                Error::Numeric(format!("term weights: {e}"))
            })?))
        };

        let uniform_cells = if cells.is_empty() {
            None
        } else {
            Some(
                WeightedAliasIndex::new(
                    cells.iter().map(|c| c.members as f64).collect::<Vec<_>>(),
                )
                .map_err(|e| Error::Numeric(format!("uniform weights: {e}")))?,
            )
        };

        Ok(GibbsEngine {
            est,
            trace_plus: spec.trace_weight(Sign::Plus),
            trace_minus: spec.trace_weight(Sign::Minus),
            plus_picker: term_picker(&spec.plus_terms)?,
            minus_picker: term_picker(&spec.minus_terms)?,
            uniform_cells,
            spec,
            k,
            spectrum,
            cells,
            source_cells,
        })
    }

    pub fn estimator(&self) -> &ConsistentEstimator {
        &self.est
    }

    pub fn k_matrix(&self) -> &HermitianMatrix {
        &self.k
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    fn has_mass(&self) -> bool {
        self.trace_plus + self.trace_minus > 0.0
    }

    /// Exact above-threshold partition sum of the rounded spectrum.
    pub fn exact_z_supp(&self) -> f64 {
        let delta = self.est.grid();
        self.spectrum
            .eigenvalues
            .iter()
            .map(|&l| self.est.round_eig(l))
            .filter(|lr| lr.abs() >= delta)
            .map(|lr| (-lr).exp())
            .sum()
    }

    /// Exact count of rounded eigenvalues below the threshold.
    pub fn exact_kernel_count(&self) -> usize {
        let delta = self.est.grid();
        self.spectrum
            .eigenvalues
            .iter()
            .filter(|&&l| self.est.round_eig(l).abs() < delta)
            .count()
    }

    /// The spectrally exact two-piece mixture: Gibbs weights on rounded
    /// eigenvalues above threshold, flat weight on the rest.
    pub fn exact_mixture(&self) -> Result<DensityMatrix> {
        let delta = self.est.grid();
        let weights: Vec<f64> = self
            .spectrum
            .eigenvalues
            .iter()
            .map(|&l| {
                let lr = self.est.round_eig(l);
                if lr.abs() >= delta {
                    (-lr).exp()
                } else {
                    1.0
                }
            })
            .collect();
        let z: f64 = weights.iter().sum();
        let probs: Vec<f64> = weights.iter().map(|w| w / z).collect();
        DensityMatrix::new(HermitianMatrix::symmetrized(
            self.spectrum.assemble(&probs),
        )?)
    }

    /// Draw `+` with probability `tr(K+) / (tr(K+) + tr(K-))`.
    fn draw_sign(&self, rng: &mut Rng) -> Sign {
        let total = self.trace_plus + self.trace_minus;
        if rng.bernoulli(self.trace_plus / total) {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }

    /// Source index into `source_cells` for a sign draw.
    fn draw_source(&self, sign: Sign, rng: &mut Rng) -> usize {
        match sign {
            Sign::Plus => self
                .plus_picker
                .as_ref()
                .expect("plus side has mass")
                .sample(rng.raw()),
            Sign::Minus => {
                self.spec.plus_terms.len()
                    + self
                        .minus_picker
                        .as_ref()
                        .expect("minus side has mass")
                        .sample(rng.raw())
            }
        }
    }

    fn draw_cell(&self, source: usize, rng: &mut Rng) -> usize {
        self.source_cells[source].sample(rng.raw())
    }

    fn draw_cell_uniform(&self, rng: &mut Rng) -> usize {
        self.uniform_cells
            .as_ref()
            .expect("nonempty spectrum")
            .sample(rng.raw())
    }

    /// One sign-coin + eigenvalue-estimation draw; the rounded value
    /// carries the injected failure model.
    fn eig_draw(&self, rng: &mut Rng) -> (Sign, usize) {
        let sign = self.draw_sign(rng);
        let source = self.draw_source(sign, rng);
        let cell = self.draw_cell(source, rng);
        (sign, cell)
    }

    /// Minimum above-threshold rounded eigenvalue from repeated draws.
    pub fn estimate_lambda_min(&self, gamma: f64, rng: &mut Rng) -> Result<LambdaMin> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Usage(format!("gamma {gamma} outside (0, 1)")));
        }
        if !self.has_mass() {
            return Ok(LambdaMin::everything_passes());
        }
        let delta = self.est.grid();
        let b = self.spec.bound.max(self.total_trace());
        let reps = (LAMBDA_MIN_REPS_FACTOR * b / delta * (1.0 / gamma).ln()).ceil() as usize;
        let reps = reps.max(1);
        let min = exec::reduce_chunked(
            reps,
            f64::INFINITY,
            |acc, i| {
                let mut child = rng.child(i as u64);
                let mut local = acc;
                for sign in [Sign::Plus, Sign::Minus] {
                    if self.trace_weight_of(sign) <= 0.0 {
                        continue;
                    }
                    let source = self.draw_source(sign, &mut child);
                    let cell = self.draw_cell(source, &mut child);
                    let lr = self
                        .est
                        .corrupt(self.cells[cell].lambda_rounded, &mut child);
                    if lr.abs() >= delta {
                        local = local.min(lr);
                    }
                }
                local
            },
            f64::min,
        );
        Ok(LambdaMin {
            observed: (min < f64::INFINITY).then_some(min),
        })
    }

    fn trace_weight_of(&self, sign: Sign) -> f64 {
        match sign {
            Sign::Plus => self.trace_plus,
            Sign::Minus => self.trace_minus,
        }
    }

    fn total_trace(&self) -> f64 {
        self.trace_plus + self.trace_minus
    }

    /// Monte-Carlo estimate of the above-threshold partition sum.
    pub fn estimate_z_supp(
        &self,
        eps: f64,
        lambda_min: &LambdaMin,
        rng: &mut Rng,
    ) -> Result<EstimatorReport> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::Usage(format!("eps {eps} outside (0, 1)")));
        }
        let exact = self.exact_z_supp();
        if !self.has_mass() {
            return Ok(EstimatorReport {
                value: 0.0,
                repetitions: 0,
                target_relative_error: eps,
                empirical_success: Some(true),
                exact_reference: Some(exact),
                second_moment: 0.0,
            });
        }
        let delta = self.est.grid();
        let b = self.spec.bound.max(self.total_trace());
        let reps =
            (Z_SUPP_REPS_FACTOR * b * b / (delta * delta * eps * eps)).ceil() as usize;
        let (sum, sum_sq) = exec::reduce_chunked(
            reps,
            (0.0_f64, 0.0_f64),
            |(s, s2), i| {
                let mut child = rng.child(i as u64);
                let (sign, cell) = self.eig_draw(&mut child);
                let lr = self
                    .est
                    .corrupt(self.cells[cell].lambda_rounded, &mut child);
                let x = if lr.abs() < delta || !lambda_min.passes(lr) {
                    0.0
                } else {
                    let magnitude = (-lr).exp() / lr;
                    match sign {
                        Sign::Plus => magnitude,
                        Sign::Minus => -magnitude,
                    }
                };
                (s + x, s2 + x * x)
            },
            |(a, b2), (c, d)| (a + c, b2 + d),
        );
        let mean = sum / reps as f64;
        let value = mean * self.total_trace();
        let success = if exact.abs() > 0.0 {
            (value - exact).abs() <= eps * exact.abs()
        } else {
            value.abs() <= eps
        };
        Ok(EstimatorReport {
            value,
            repetitions: reps as u64,
            target_relative_error: eps,
            empirical_success: Some(success),
            exact_reference: Some(exact),
            second_moment: sum_sq / reps as f64,
        })
    }

    /// Bernoulli estimate of the kernel dimension from uniform draws.
    pub fn estimate_kernel_dim(&self, eps: f64, rng: &mut Rng) -> Result<EstimatorReport> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::Usage(format!("eps {eps} outside (0, 1)")));
        }
        let n = self.spec.dim();
        let exact = self.exact_kernel_count() as f64;
        let delta = self.est.grid();
        let reps = ((KERNEL_REPS_FACTOR * self.spec.rank_bound as f64 / (eps * eps)).ceil()
            as usize)
            .max(1);
        let hits = exec::reduce_chunked(
            reps,
            0u64,
            |acc, i| {
                let mut child = rng.child(i as u64);
                let cell = self.draw_cell_uniform(&mut child);
                let lr = self
                    .est
                    .corrupt(self.cells[cell].lambda_rounded, &mut child);
                acc + u64::from(lr.abs() < delta)
            },
            |a, b| a + b,
        );
        let mean = hits as f64 / reps as f64;
        let value = mean * n as f64;
        let success = if exact > 0.0 {
            (value - exact).abs() <= eps * exact
        } else {
            value.abs() <= eps * n as f64
        };
        Ok(EstimatorReport {
            value,
            repetitions: reps as u64,
            target_relative_error: eps,
            empirical_success: Some(success),
            exact_reference: Some(exact),
            second_moment: mean,
        })
    }

    /// One pass of the support sampler. `Ok(None)` is a rejection.
    pub fn supp_trial(
        &self,
        z_supp_estimate: f64,
        eps: f64,
        lambda_min: &LambdaMin,
        safety_halving: bool,
        rng: &mut Rng,
    ) -> Result<Option<(f64, usize)>> {
        if !(z_supp_estimate > 0.0) {
            return Err(Error::Usage(format!(
                "support sampler needs a positive partition estimate, got {z_supp_estimate}"
            )));
        }
        if !self.has_mass() {
            return Ok(None);
        }
        let delta = self.est.grid();
        let (_, cell_idx) = self.eig_draw(rng);
        let cell = &self.cells[cell_idx];
        let lr = self.est.corrupt(cell.lambda_rounded, rng);
        if lr.abs() < delta || !lambda_min.passes(lr) {
            return Ok(None);
        }
        // Second estimation pass: the sign-sum eigenvalue on the
        // sampled component, rounded at sqrt(fail) * grid.
        let mu_grid = self.est.fail().sqrt() * delta;
        let mu = if mu_grid > 0.0 {
            (cell.mu / mu_grid).round() * mu_grid
        } else {
            cell.mu
        };
        let mu = mu.max(f64::MIN_POSITIVE);
        let mut p = (delta / mu) * (1.0 - eps) * (-lr).exp() / z_supp_estimate;
        if safety_halving {
            p /= 2.0;
        }
        if rng.bernoulli(p.clamp(0.0, 1.0)) {
            Ok(Some((lr, cell_idx)))
        } else {
            Ok(None)
        }
    }

    fn supp_attempt_budget(&self, eps: f64) -> u64 {
        let delta = self.est.grid();
        let b = self.spec.bound.max(self.total_trace()).max(delta);
        (SUPP_ATTEMPT_FACTOR * b / (delta * (1.0 - eps)) * 100.0_f64.ln()).ceil() as u64
    }

    /// Repeat the support sampler until acceptance, inside the attempt
    /// budget.
    pub fn sample_rho_supp(
        &self,
        z_supp_estimate: f64,
        eps: f64,
        lambda_min: &LambdaMin,
        safety_halving: bool,
        rng: &mut Rng,
    ) -> Result<(f64, DensityMatrix)> {
        let budget = self.supp_attempt_budget(eps);
        for attempt in 0..budget {
            let mut child = rng.child(attempt);
            if let Some((lr, cell)) =
                self.supp_trial(z_supp_estimate, eps, lambda_min, safety_halving, &mut child)?
            {
                return Ok((
                    lr,
                    DensityMatrix::from_trusted(self.cells[cell].normalized_projector()),
                ));
            }
        }
        Err(Error::Resource(format!(
            "support sampler made no acceptance in {budget} attempts; the partition estimate \
             {z_supp_estimate} is inconsistent with the decomposition"
        )))
    }

    /// One pass of the kernel sampler: uniform input, accept small
    /// rounded eigenvalues. Rejection is a normal outcome.
    pub fn ker_trial(&self, rng: &mut Rng) -> Option<(f64, usize)> {
        let delta = self.est.grid();
        let cell_idx = self.draw_cell_uniform(rng);
        let lr = self
            .est
            .corrupt(self.cells[cell_idx].lambda_rounded, rng);
        (lr.abs() < delta).then_some((lr, cell_idx))
    }

    pub fn sample_rho_ker(&self, rng: &mut Rng) -> Option<(f64, DensityMatrix)> {
        self.ker_trial(rng).map(|(lr, cell)| {
            (
                lr,
                DensityMatrix::from_trusted(self.cells[cell].normalized_projector()),
            )
        })
    }
}

/// Standalone eigenvalue-estimation draw on an explicit spectrum:
/// measures the rounded eigenvalue and collapses the input onto the
/// merged subspace of that value.
pub fn consistent_eig_sample(
    est: &ConsistentEstimator,
    spectrum: &Spectrum,
    input: &DensityMatrix,
    rng: &mut Rng,
) -> Result<(f64, DensityMatrix)> {
    if spectrum.dim() != input.dim() {
        return Err(Error::Usage(format!(
            "spectrum dimension {} does not match input dimension {}",
            spectrum.dim(),
            input.dim()
        )));
    }
    // Group indices by slot (eigenvalues are ascending, slots contiguous).
    let mut groups: Vec<(i64, Vec<usize>)> = Vec::new();
    for (i, &l) in spectrum.eigenvalues.iter().enumerate() {
        let s = est.slot(l);
        match groups.last_mut() {
            Some((slot, members)) if *slot == s => members.push(i),
            _ => groups.push((s, vec![i])),
        }
    }
    let born = spectrum.born_weights(input);
    let weights: Vec<f64> = groups
        .iter()
        .map(|(_, members)| members.iter().map(|&i| born[i]).sum())
        .collect();
    let g = rng.weighted_index(&weights);
    let (slot, members) = &groups[g];
    let rounded = est.corrupt(est.value_of_slot(*slot), rng);
    let proj = spectrum.projector(members);
    let collapsed = &proj * input.as_matrix() * &proj;
    let tr = collapsed.trace().re;
    let state = DensityMatrix::new(HermitianMatrix::symmetrized(
        collapsed / C64::new(tr, 0.0),
    )?)?;
    Ok((rounded, state))
}

/// Above-threshold partition sum estimate (free-function form).
pub fn estimate_z_supp(
    spec: &GibbsSpec,
    est: &ConsistentEstimator,
    eps: f64,
    rng: &mut Rng,
) -> Result<EstimatorReport> {
    let engine = GibbsEngine::new(spec, est.clone())?;
    let lambda_min = engine.estimate_lambda_min(0.01, &mut rng.child(0))?;
    engine.estimate_z_supp(eps, &lambda_min, &mut rng.child(1))
}

pub fn estimate_lambda_min(
    spec: &GibbsSpec,
    est: &ConsistentEstimator,
    gamma: f64,
    rng: &mut Rng,
) -> Result<LambdaMin> {
    GibbsEngine::new(spec, est.clone())?.estimate_lambda_min(gamma, rng)
}

pub fn estimate_kernel_dim(
    spec: &GibbsSpec,
    est: &ConsistentEstimator,
    eps: f64,
    rng: &mut Rng,
) -> Result<EstimatorReport> {
    GibbsEngine::new(spec, est.clone())?.estimate_kernel_dim(eps, rng)
}

pub fn sample_rho_supp(
    spec: &GibbsSpec,
    est: &ConsistentEstimator,
    z_supp_estimate: f64,
    eps: f64,
    rng: &mut Rng,
) -> Result<(f64, DensityMatrix)> {
    let engine = GibbsEngine::new(spec, est.clone())?;
    let lambda_min = engine.estimate_lambda_min(0.01, &mut rng.child(0))?;
    engine.sample_rho_supp(z_supp_estimate, eps, &lambda_min, false, &mut rng.child(1))
}

pub fn sample_rho_ker(
    spec: &GibbsSpec,
    est: &ConsistentEstimator,
    rng: &mut Rng,
) -> Result<Option<(f64, DensityMatrix)>> {
    Ok(GibbsEngine::new(spec, est.clone())?.sample_rho_ker(rng))
}

#[derive(Debug, Clone, Serialize)]
pub struct GibbsDiagnostics {
    pub delta: f64,
    pub xi: f64,
    pub z_supp: EstimatorReport,
    pub kernel_dim: EstimatorReport,
    pub lambda_min: Option<f64>,
    pub z_prime: f64,
    pub support_probability: f64,
    pub accepted_draws: u64,
    pub supp_attempts: u64,
    pub supp_accepts: u64,
    pub ker_attempts: u64,
    pub ker_accepts: u64,
    pub safety_halving: bool,
}

#[derive(Debug, Clone)]
pub struct PrepareOptions {
    /// Use the halved acceptance factor in the support sampler.
    pub safety_halving: bool,
    /// Override the injected estimation-failure rate.
    pub xi_override: Option<f64>,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        PrepareOptions {
            safety_halving: false,
            xi_override: None,
        }
    }
}

/// Assemble an empirical Gibbs state: estimate the partition pieces,
/// then mix the support and kernel samplers with the estimated weights
/// over `ceil(64 n / eps^2)` accepted draws.
pub fn prepare_gibbs(
    spec: &GibbsSpec,
    eps: f64,
    rng: &mut Rng,
    opts: &PrepareOptions,
) -> Result<(DensityMatrix, GibbsDiagnostics)> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Usage(format!("eps {eps} outside (0, 1)")));
    }
    let n = spec.dim();
    let delta = eps / 8.0;
    let b = spec.bound.max(spec.total_trace_weight()).max(1.0);
    let xi = opts.xi_override.unwrap_or_else(|| {
        (eps * eps * delta * delta / (b * b * spec.rank_bound.max(1) as f64)).min(0.01)
    });
    let est = ConsistentEstimator::draw(delta, xi, &mut rng.child(0))?;
    let engine = GibbsEngine::new(spec, est)?;
    let lambda_min = engine.estimate_lambda_min(0.01, &mut rng.child(1))?;
    let z_report = engine.estimate_z_supp(eps, &lambda_min, &mut rng.child(2))?;
    let k_report = engine.estimate_kernel_dim(eps, &mut rng.child(3))?;

    let z_supp = z_report.value.max(0.0);
    let kernel = k_report.value.clamp(0.0, n as f64);
    let z_prime = z_supp + kernel;
    if !(z_prime > 0.0) {
        return Err(Error::Resource(
            "both partition estimates vanished; nothing to sample".into(),
        ));
    }
    let p_supp = z_supp / z_prime;

    let draws = (MIXTURE_DRAWS_FACTOR * n as f64 / (eps * eps)).ceil() as usize;
    let ker_budget = (SUPP_ATTEMPT_FACTOR * (n.max(2) as f64) * 100.0_f64.ln()).ceil() as u64;
    let base = rng.child(4);

    struct Acc {
        sum: DMatrix<C64>,
        supp_attempts: u64,
        supp_accepts: u64,
        ker_attempts: u64,
        ker_accepts: u64,
        error: Option<Error>,
    }
    impl Clone for Acc {
        fn clone(&self) -> Self {
            Acc {
                sum: self.sum.clone(),
                supp_attempts: self.supp_attempts,
                supp_accepts: self.supp_accepts,
                ker_attempts: self.ker_attempts,
                ker_accepts: self.ker_accepts,
                error: None,
            }
        }
    }

    let zero = Acc {
        sum: DMatrix::zeros(n, n),
        supp_attempts: 0,
        supp_accepts: 0,
        ker_attempts: 0,
        ker_accepts: 0,
        error: None,
    };
    let acc = exec::reduce_chunked(
        draws,
        zero,
        |mut acc, i| {
            if acc.error.is_some() {
                return acc;
            }
            let mut child = base.child(i as u64);
            if engine.has_mass() && child.bernoulli(p_supp) {
                // Support branch with its own attempt budget.
                let budget = engine.supp_attempt_budget(eps);
                let mut accepted = false;
                for attempt in 0..budget {
                    let mut arng = child.child(attempt);
                    acc.supp_attempts += 1;
                    match engine.supp_trial(
                        z_supp,
                        eps,
                        &lambda_min,
                        opts.safety_halving,
                        &mut arng,
                    ) {
                        Ok(Some((_, cell))) => {
                            acc.supp_accepts += 1;
                            acc.sum += engine.cells[cell].normalized_projector();
                            accepted = true;
                            break;
                        }
                        Ok(None) => {}
                        Err(e) => {
                            acc.error = Some(e);
                            return acc;
                        }
                    }
                }
                if !accepted {
                    acc.error = Some(Error::Resource(format!(
                        "support sampler made no acceptance in {budget} attempts"
                    )));
                }
            } else {
                let mut accepted = false;
                for attempt in 0..ker_budget {
                    let mut arng = child.child(attempt);
                    acc.ker_attempts += 1;
                    if let Some((_, cell)) = engine.ker_trial(&mut arng) {
                        acc.ker_accepts += 1;
                        acc.sum += engine.cells[cell].normalized_projector();
                        accepted = true;
                        break;
                    }
                }
                if !accepted {
                    acc.error = Some(Error::Resource(format!(
                        "kernel sampler made no acceptance in {ker_budget} attempts; the \
                         kernel estimate {kernel:.3} is inconsistent with the decomposition"
                    )));
                }
            }
            acc
        },
        |mut a, b2| {
            if a.error.is_none() {
                if let Some(e) = b2.error {
                    a.error = Some(e);
                }
            }
            a.sum += b2.sum;
            a.supp_attempts += b2.supp_attempts;
            a.supp_accepts += b2.supp_accepts;
            a.ker_attempts += b2.ker_attempts;
            a.ker_accepts += b2.ker_accepts;
            a
        },
    );
    if let Some(e) = acc.error {
        return Err(e);
    }
    let state = DensityMatrix::new(HermitianMatrix::symmetrized(
        acc.sum / C64::new(draws as f64, 0.0),
    )?)?;
    let diagnostics = GibbsDiagnostics {
        delta,
        xi,
        z_supp: z_report,
        kernel_dim: k_report,
        lambda_min: lambda_min.observed,
        z_prime,
        support_probability: p_supp,
        accepted_draws: draws as u64,
        supp_attempts: acc.supp_attempts,
        supp_accepts: acc.supp_accepts,
        ker_attempts: acc.ker_attempts,
        ker_accepts: acc.ker_accepts,
        safety_halving: opts.safety_halving,
    };
    Ok((state, diagnostics))
}

/// Trace distance between the spectrally exact two-piece mixture and
/// the true Gibbs state; the rounding argument keeps this below
/// `4 * grid` with room to spare.
pub fn exact_mixture_distance(spec: &GibbsSpec, est: &ConsistentEstimator) -> Result<f64> {
    let engine = GibbsEngine::new(spec, est.clone())?;
    let mixture = engine.exact_mixture()?;
    let gibbs = engine.k_matrix().gibbs_of()?;
    trace_distance(&mixture, &gibbs)
}

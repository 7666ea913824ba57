//! Dense state-vector simulation of the projector-OR test.
//!
//! Given projectors `L_1..L_m` and an input state, the test builds the
//! reflection iterate `G = (I - 2 Pi)(I - 2 Delta)` over the joint
//! system-ancilla space, estimates an eigenphase of `G` on the input,
//! and accepts small phases. States with a large overlap on some
//! projector concentrate on small Jordan angles and are accepted with
//! constant probability; states with tiny average overlap are almost
//! never accepted.
//!
//! Phase estimation is simulated at the distribution level: `G` is
//! eigendecomposed once, an eigencomponent is drawn with its Born
//! weight, and the measured value follows the canonical t-bit
//! measurement law for the component's exact phase.
//!
//! Convention note: the iterate's eigenphases are twice the Jordan
//! angles of the average projector (`mu = cos^2 theta` pairs with
//! phases `±2 theta`). The acceptance rule compares on the angle scale,
//! i.e. half the measured phase against `(a + b) / 2`, which is the
//! same as comparing the raw phase against `a + b`.

use std::f64::consts::{PI, TAU};

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand_distr::weighted_alias::WeightedAliasIndex;
use rand_distr::Distribution;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::{canonical_phase, eig_unitary, kron, DensityMatrix, HermitianMatrix};
use crate::rng::Rng;

/// Default bound on the joint dimension `d * ancilla_dim`.
pub const DEFAULT_SIMULATOR_CAP: usize = 4096;

/// Idempotency tolerance for projectors.
pub const PROJECTOR_TOL: f64 = 1e-9;

/// Projector-OR instance over dimension `d`.
#[derive(Debug, Clone)]
pub struct OrInstance {
    pub m: usize,
    pub projectors: Vec<HermitianMatrix>,
    pub input_state: DensityMatrix,
    /// Overlap parameter: the marked case promises some
    /// `tr(L_i rho) >= 1 - eps`.
    pub eps: f64,
    /// Average-overlap bound for the unmarked case.
    pub phi: f64,
    /// Phase-estimation failure budget.
    pub xi: f64,
}

impl OrInstance {
    pub fn new(
        projectors: Vec<HermitianMatrix>,
        input_state: DensityMatrix,
        eps: f64,
        phi: f64,
        xi: f64,
    ) -> Result<Self> {
        if projectors.is_empty() {
            return Err(Error::Usage("need at least one projector".into()));
        }
        if !(eps > 0.0 && eps <= 0.5) {
            return Err(Error::Usage(format!("eps {eps} outside (0, 1/2]")));
        }
        if phi < 0.0 {
            return Err(Error::Usage(format!("phi {phi} must be nonnegative")));
        }
        if !(xi > 0.0) {
            return Err(Error::Usage(format!("xi {xi} must be positive")));
        }
        let d = input_state.dim();
        for (i, p) in projectors.iter().enumerate() {
            if p.dim() != d {
                return Err(Error::Usage(format!(
                    "projectors[{i}]: dimension {} does not match state dimension {d}",
                    p.dim()
                )));
            }
            let idem = (p.as_matrix() * p.as_matrix() - p.as_matrix()).norm();
            if idem > PROJECTOR_TOL {
                return Err(Error::Contract(format!(
                    "projectors[{i}]: not idempotent, defect {idem:.3e}"
                )));
            }
        }
        Ok(OrInstance {
            m: projectors.len(),
            projectors,
            input_state,
            eps,
            phi,
            xi,
        })
    }

    /// Marked-basis-state search embedding: projectors `|i><i|` for
    /// `i < m` over dimension `m + 1`, input `|k><k|`. Level `m` is the
    /// unmarked case.
    pub fn marked_search(m: usize, k: usize, eps: f64, xi: f64) -> Result<Self> {
        if k > m {
            return Err(Error::Usage(format!("marked level {k} exceeds {m}")));
        }
        let d = m + 1;
        let projectors: Vec<HermitianMatrix> = (0..m)
            .map(|i| {
                let mut diag = vec![0.0; d];
                diag[i] = 1.0;
                HermitianMatrix::diagonal(&diag)
            })
            .collect();
        OrInstance::new(projectors, DensityMatrix::pure_basis(d, k), eps, 0.0, xi)
    }

    pub fn dim(&self) -> usize {
        self.input_state.dim()
    }

    /// `(1/m) sum L_i`.
    pub fn average_projector(&self) -> HermitianMatrix {
        let mut avg = HermitianMatrix::zeros(self.dim());
        for p in &self.projectors {
            avg = avg.axpy(1.0 / self.m as f64, p).expect("same dim");
        }
        avg
    }

    /// Acceptance floor in the marked case.
    pub fn accept_lower(&self) -> f64 {
        (1.0 - self.eps).powi(2) / 4.0 - self.xi
    }

    /// Acceptance ceiling in the unmarked case.
    pub fn reject_upper(&self) -> f64 {
        3.0 * self.phi * self.m as f64 + self.xi
    }

    pub fn gap_holds(&self) -> bool {
        self.accept_lower() > self.reject_upper()
    }
}

/// Derived iterate parameters.
#[derive(Debug, Clone, Serialize)]
pub struct GroverSpec {
    pub lambda_thresh: f64,
    pub angle_a: f64,
    pub angle_b: f64,
    /// Half the angular window `(b - a) / 2` on the Jordan-angle scale.
    pub precision: f64,
    pub ancilla_dim: usize,
}

impl GroverSpec {
    pub fn from_instance(inst: &OrInstance) -> Result<Self> {
        let lambda = (1.0 - inst.eps) / (2.0 * inst.m as f64);
        let angle_a = lambda.sqrt().acos();
        let angle_b = (0.8 * lambda).sqrt().acos();
        if !(angle_a > 0.0 && angle_a < angle_b && angle_b < PI / 2.0) {
            return Err(Error::Contract(format!(
                "degenerate angles a={angle_a}, b={angle_b}"
            )));
        }
        Ok(GroverSpec {
            lambda_thresh: lambda,
            angle_a,
            angle_b,
            precision: (angle_b - angle_a) / 2.0,
            ancilla_dim: inst.m.next_power_of_two(),
        })
    }

    pub fn accept_cutoff(&self) -> f64 {
        (self.angle_a + self.angle_b) / 2.0
    }
}

fn fourier_padded(m: usize, anc: usize) -> DMatrix<C64> {
    let mut q = DMatrix::<C64>::identity(anc, anc);
    let scale = 1.0 / (m as f64).sqrt();
    for x in 0..m {
        for i in 0..m {
            q[(x, i)] = C64::from_polar(scale, TAU * (x as f64) * (i as f64) / m as f64);
        }
    }
    q
}

/// `Delta = I ⊗ |0><0|` over `d * anc`.
pub fn delta_projector(d: usize, anc: usize) -> DMatrix<C64> {
    let mut e00 = DMatrix::<C64>::zeros(anc, anc);
    e00[(0, 0)] = C64::new(1.0, 0.0);
    kron(&DMatrix::identity(d, d), &e00)
}

/// `Pi = sum_i L_{i+1} ⊗ Q |i><i| Q†` with `Q` the Fourier transform on
/// the first `m` ancilla levels (identity on padding).
pub fn pi_projector(inst: &OrInstance) -> DMatrix<C64> {
    let anc = inst.m.next_power_of_two();
    let d = inst.dim();
    let q = fourier_padded(inst.m, anc);
    let mut pi = DMatrix::<C64>::zeros(d * anc, d * anc);
    for i in 0..inst.m {
        let qi = q.column(i);
        let anc_proj = &qi * qi.adjoint();
        pi += kron(inst.projectors[i].as_matrix(), &anc_proj);
    }
    pi
}

/// The reflection iterate `G = (I - 2 Pi)(I - 2 Delta)` over dimension
/// `d * ancilla_dim`, checked against `cap`.
pub fn build_iterate_with_cap(inst: &OrInstance, cap: usize) -> Result<DMatrix<C64>> {
    let anc = inst.m.next_power_of_two();
    let total = inst.dim() * anc;
    if total > cap {
        return Err(Error::Resource(format!(
            "joint dimension {total} exceeds simulator cap {cap}"
        )));
    }
    let id = DMatrix::<C64>::identity(total, total);
    let two = C64::new(2.0, 0.0);
    let refl_pi = &id - pi_projector(inst) * two;
    let refl_delta = &id - delta_projector(inst.dim(), anc) * two;
    Ok(refl_pi * refl_delta)
}

pub fn build_iterate(inst: &OrInstance) -> Result<DMatrix<C64>> {
    build_iterate_with_cap(inst, DEFAULT_SIMULATOR_CAP)
}

/// Ancilla bits for the canonical measurement law: enough for the
/// requested precision (as a fraction of a turn) plus the standard
/// boost for the failure probability.
pub fn pe_bits(precision: f64, fail_prob: f64) -> Result<u32> {
    if !(precision > 0.0) {
        return Err(Error::Usage(format!("precision {precision} must be positive")));
    }
    if !(fail_prob > 0.0 && fail_prob < 1.0) {
        return Err(Error::Usage(format!("failure probability {fail_prob} outside (0,1)")));
    }
    let base = (TAU / precision).log2().ceil().max(1.0) as u32;
    let extra = (2.0 + 1.0 / (2.0 * fail_prob)).log2().ceil() as u32;
    let t = base + extra;
    if t > 26 {
        return Err(Error::Resource(format!(
            "phase estimation would need 2^{t} bins"
        )));
    }
    Ok(t)
}

/// Outcome law of t-bit phase estimation for a component with true
/// phase fraction `theta` in `[0, 1)`.
fn measurement_law(theta: f64, t: u32) -> Vec<f64> {
    let m = 1usize << t;
    let mut probs = vec![0.0; m];
    let mut total = 0.0;
    for (y, slot) in probs.iter_mut().enumerate() {
        let d = theta - y as f64 / m as f64;
        let s = (PI * d).sin();
        let p = if s.abs() < 1e-12 {
            // Exact grid hit: all amplitude lands here.
            1.0
        } else {
            let num = (PI * m as f64 * d).sin();
            (num / (m as f64 * s)).powi(2)
        };
        *slot = p;
        total += p;
    }
    for p in probs.iter_mut() {
        *p /= total;
    }
    probs
}

/// One-shot eigenphase sample: eigendecompose `g`, draw an
/// eigencomponent with its Born weight under `state`, then draw a
/// measured phase from the canonical t-bit law around the component's
/// exact phase. Returned value lies in `(-pi, pi]`.
pub fn phase_estimate(
    g: &DMatrix<C64>,
    state: &DensityMatrix,
    precision: f64,
    fail_prob: f64,
    rng: &mut Rng,
) -> Result<f64> {
    if g.nrows() != state.dim() {
        return Err(Error::Usage(format!(
            "operator dimension {} does not match state dimension {}",
            g.nrows(),
            state.dim()
        )));
    }
    let t = pe_bits(precision, fail_prob)?;
    let eig = eig_unitary(g)?;
    let weights: Vec<f64> = {
        let m = eig.basis.adjoint() * state.as_matrix() * &eig.basis;
        (0..g.nrows()).map(|i| m[(i, i)].re.max(0.0)).collect()
    };
    let k = rng.weighted_index(&weights);
    let theta = eig.phases[k].rem_euclid(TAU) / TAU;
    let law = measurement_law(theta, t);
    let y = rng.weighted_index(&law);
    Ok(canonical_phase(TAU * y as f64 / (1usize << t) as f64))
}

/// Prepared test: iterate built and eigendecomposed once, measurement
/// tables cached, trials are cheap and read-only.
pub struct OrTestRunner {
    spec: GroverSpec,
    phases: Vec<f64>,
    component_picker: WeightedAliasIndex<f64>,
    /// Measurement table per eigencomponent with nonzero weight.
    tables: Vec<Option<WeightedAliasIndex<f64>>>,
    t_bits: u32,
}

impl OrTestRunner {
    pub fn new(inst: &OrInstance) -> Result<Self> {
        Self::with_cap(inst, DEFAULT_SIMULATOR_CAP)
    }

    pub fn with_cap(inst: &OrInstance, cap: usize) -> Result<Self> {
        let spec = GroverSpec::from_instance(inst)?;
        let g = build_iterate_with_cap(inst, cap)?;
        let eig = eig_unitary(&g)?;
        let anc = spec.ancilla_dim;
        let total = inst.dim() * anc;

        // Input lives in the ancilla-zero block.
        let mut anc0 = DMatrix::<C64>::zeros(anc, anc);
        anc0[(0, 0)] = C64::new(1.0, 0.0);
        let joint = kron(inst.input_state.as_matrix(), &anc0);
        let w = eig.basis.adjoint() * joint * &eig.basis;
        let weights: Vec<f64> = (0..total).map(|i| w[(i, i)].re.max(0.0)).collect();

        // True phases double the Jordan angles; resolve (b - a) on that
        // scale with failure probability xi.
        let t_bits = pe_bits(2.0 * spec.precision, inst.xi)?;
        let tables: Vec<Option<WeightedAliasIndex<f64>>> = exec::map_indexed(total, |k| {
            if weights[k] > 1e-15 {
                let theta = eig.phases[k].rem_euclid(TAU) / TAU;
                Some(
                    WeightedAliasIndex::new(measurement_law(theta, t_bits))
                        .expect("valid weights"),
                )
            } else {
                None
            }
        });
        let component_picker = WeightedAliasIndex::new(weights)
            .map_err(|e| Error::Numeric(format!("weight table: {e}")))?;

        Ok(OrTestRunner {
            spec,
            phases: eig.phases,
            component_picker,
            tables,
            t_bits,
        })
    }

    pub fn spec(&self) -> &GroverSpec {
        &self.spec
    }

    /// One accept/reject trial.
    pub fn trial(&self, rng: &mut Rng) -> bool {
        let k = self.component_picker.sample(rng.raw());
        let y = match &self.tables[k] {
            Some(t) => t.sample(rng.raw()),
            // Zero-weight component: sampled only through rounding dust;
            // fall back to the exact phase bin.
            None => {
                let m = 1usize << self.t_bits;
                let theta = self.phases[k].rem_euclid(TAU) / TAU;
                ((theta * m as f64).round() as usize) % m
            }
        };
        let m = 1usize << self.t_bits;
        let measured = canonical_phase(TAU * y as f64 / m as f64);
        (measured / 2.0).abs() <= self.spec.accept_cutoff()
    }

    /// Acceptance count over independent trials (fanned out).
    pub fn accept_count(&self, trials: u64, rng: &Rng) -> u64 {
        exec::reduce_chunked(
            trials as usize,
            0u64,
            |acc, i| acc + self.trial(&mut rng.child(i as u64)) as u64,
            |a, b| a + b,
        )
    }
}

/// Single accept/reject sample of the projector-OR test.
pub fn or_test(inst: &OrInstance, rng: &mut Rng) -> Result<bool> {
    let runner = OrTestRunner::new(inst)?;
    Ok(runner.trial(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GapCase {
    /// Some projector holds the input with large overlap.
    Marked,
    /// Average overlap is small.
    Unmarked,
}

#[derive(Debug, Clone, Serialize)]
pub struct GapVerdict {
    pub case: GapCase,
    pub empirical_rate: f64,
    pub accept_lower: f64,
    pub reject_upper: f64,
    pub midpoint: f64,
    pub trials: u64,
}

/// Repeat the test and decide which side of the acceptance gap the
/// instance sits on. Requires the gap condition to hold.
pub fn gap_verdict(inst: &OrInstance, trials: u64, rng: &mut Rng) -> Result<GapVerdict> {
    if trials == 0 {
        return Err(Error::Usage("need at least one trial".into()));
    }
    if !inst.gap_holds() {
        return Err(Error::Usage(format!(
            "acceptance gap absent: lower {:.4} <= upper {:.4}",
            inst.accept_lower(),
            inst.reject_upper()
        )));
    }
    let runner = OrTestRunner::new(inst)?;
    let accepts = runner.accept_count(trials, rng);
    let rate = accepts as f64 / trials as f64;
    let lower = inst.accept_lower();
    let upper = inst.reject_upper();
    let midpoint = (lower + upper) / 2.0;
    Ok(GapVerdict {
        case: if rate >= midpoint {
            GapCase::Marked
        } else {
            GapCase::Unmarked
        },
        empirical_rate: rate,
        accept_lower: lower,
        reject_upper: upper,
        midpoint,
        trials,
    })
}

/// Worst defect of the half-sum decomposition: every eigenvector of
/// `Delta Pi Delta` with eigenvalue `cos^2 theta` must lie entirely in
/// the span of iterate eigenvectors with phases `±2 theta`.
pub fn jordan_structure_defect(inst: &OrInstance) -> Result<f64> {
    let anc = inst.m.next_power_of_two();
    let d = inst.dim();
    let g = build_iterate(inst)?;
    let eig = eig_unitary(&g)?;
    let avg = inst.average_projector();
    let avg_spec = avg.eigh()?;

    let mut worst = 0.0_f64;
    for j in 0..d {
        let mu = avg_spec.eigenvalues[j].clamp(0.0, 1.0);
        let target = 2.0 * mu.sqrt().acos();
        // Embed |psi> ⊗ |0>.
        let mut v = nalgebra::DVector::<C64>::zeros(d * anc);
        for r in 0..d {
            v[r * anc] = avg_spec.basis[(r, j)];
        }
        let mut norm_sq = 0.0;
        for (k, &phi) in eig.phases.iter().enumerate() {
            // target lies in [0, pi]; canonical |phi| covers that range.
            if (phi.abs() - target).abs() < 1e-6 {
                let overlap = eig.basis.column(k).dotc(&v);
                norm_sq += overlap.norm_sqr();
            }
        }
        worst = worst.max((norm_sq.sqrt() - 1.0).abs());
    }
    Ok(worst)
}

/// Exact spectral mass of the input on eigenvalues of the average
/// projector at or above `lambda`.
pub fn spectral_mass_at_least(inst: &OrInstance, lambda: f64) -> Result<f64> {
    let spec = inst.average_projector().eigh()?;
    let weights = spec.born_weights(&inst.input_state);
    Ok(spec
        .eigenvalues
        .iter()
        .zip(weights)
        .filter(|(l, _)| **l >= lambda)
        .map(|(_, w)| w)
        .sum())
}

/// Largest single-projector overlap `max_i tr(L_i rho)`.
pub fn max_projector_overlap(inst: &OrInstance) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for p in &inst.projectors {
        best = best.max(crate::linalg::trace_inner(p, &inst.input_state)?);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_density, random_projector};

    #[test]
    fn iterate_sanity_single_full_projector() {
        // m = 1 with L = I: Delta Pi Delta equals the average projector
        // on the ancilla-zero block.
        let inst = OrInstance::new(
            vec![HermitianMatrix::identity(3)],
            DensityMatrix::maximally_mixed(3),
            1.0 / 3.0,
            0.0,
            0.05,
        )
        .unwrap();
        let anc = 1;
        let delta = delta_projector(3, anc);
        let pi = pi_projector(&inst);
        let dpd = &delta * &pi * &delta;
        let expect = kron(inst.average_projector().as_matrix(), &{
            let mut e = DMatrix::<C64>::zeros(anc, anc);
            e[(0, 0)] = C64::new(1.0, 0.0);
            e
        });
        assert!((dpd - expect).norm() < 1e-10);
    }

    #[test]
    fn iterate_average_identity_general() {
        let mut rng = Rng::new(8);
        let projs: Vec<HermitianMatrix> =
            (0..3).map(|_| random_projector(4, 2, &mut rng)).collect();
        let inst = OrInstance::new(
            projs,
            random_density(4, &mut rng),
            0.25,
            0.0,
            0.05,
        )
        .unwrap();
        let anc = inst.m.next_power_of_two();
        let delta = delta_projector(4, anc);
        let pi = pi_projector(&inst);
        let dpd = &delta * &pi * &delta;
        let mut e00 = DMatrix::<C64>::zeros(anc, anc);
        e00[(0, 0)] = C64::new(1.0, 0.0);
        let expect = kron(inst.average_projector().as_matrix(), &e00);
        assert!((dpd - expect).norm() < 1e-9);
    }

    #[test]
    fn iterate_zero_projectors() {
        let inst = OrInstance::new(
            vec![HermitianMatrix::zeros(2), HermitianMatrix::zeros(2)],
            DensityMatrix::maximally_mixed(2),
            0.5,
            0.0,
            0.05,
        )
        .unwrap();
        let g = build_iterate(&inst).unwrap();
        let anc = 2;
        let id = DMatrix::<C64>::identity(2 * anc, 2 * anc);
        let expect = &id - delta_projector(2, anc) * C64::new(2.0, 0.0);
        assert!((g - expect).norm() < 1e-12);
    }

    #[test]
    fn iterate_is_unitary() {
        let mut rng = Rng::new(3);
        for seed in 0..4u64 {
            let mut r = rng.child(seed);
            let projs: Vec<HermitianMatrix> = (0..4)
                .map(|_| {
                    let bits: Vec<f64> = (0..3).map(|_| f64::from(r.bernoulli(0.5))).collect();
                    HermitianMatrix::diagonal(&bits)
                })
                .collect();
            let inst =
                OrInstance::new(projs, random_density(3, &mut r), 0.25, 0.0, 0.05).unwrap();
            let g = build_iterate(&inst).unwrap();
            let gram = g.adjoint() * &g;
            let id = DMatrix::<C64>::identity(g.nrows(), g.nrows());
            assert!((gram - id).norm() < 1e-10);
        }
    }

    #[test]
    fn cap_is_enforced() {
        let inst = OrInstance::marked_search(8, 0, 1.0 / 3.0, 0.05).unwrap();
        let err = build_iterate_with_cap(&inst, 10);
        assert!(matches!(err, Err(Error::Resource(_))));
    }

    #[test]
    fn phase_estimate_identity_is_zero() {
        let g = DMatrix::<C64>::identity(3, 3);
        let state = DensityMatrix::maximally_mixed(3);
        let mut hits = 0;
        for seed in 0..200u64 {
            let mut rng = Rng::new(seed);
            let phi = phase_estimate(&g, &state, 0.2, 0.05, &mut rng).unwrap();
            if phi.abs() < 1e-12 {
                hits += 1;
            }
        }
        assert!(hits >= 190, "hits {hits}");
    }

    #[test]
    fn phase_estimate_single_phase() {
        let g = DMatrix::from_fn(1, 1, |_, _| C64::from_polar(1.0, PI / 2.0));
        let state = DensityMatrix::maximally_mixed(1);
        let mut hits = 0;
        for seed in 0..200u64 {
            let mut rng = Rng::new(seed);
            let phi = phase_estimate(&g, &state, 0.1, 0.05, &mut rng).unwrap();
            if (phi - PI / 2.0).abs() <= 0.1 {
                hits += 1;
            }
        }
        assert!(hits >= 190, "hits {hits}");
    }

    #[test]
    fn phase_estimate_mixture_branches() {
        // Equal mixture of phases 0 and pi.
        let g = DMatrix::from_fn(2, 2, |i, j| {
            if i == j {
                if i == 0 {
                    C64::new(1.0, 0.0)
                } else {
                    C64::new(-1.0, 0.0)
                }
            } else {
                C64::default()
            }
        });
        let state = DensityMatrix::maximally_mixed(2);
        let mut near_zero = 0;
        let trials = 1000;
        for seed in 0..trials {
            let mut rng = Rng::new(seed);
            let phi = phase_estimate(&g, &state, 0.2, 0.02, &mut rng).unwrap();
            if phi.abs() < PI / 2.0 {
                near_zero += 1;
            }
        }
        let f = near_zero as f64 / trials as f64;
        assert!((f - 0.5).abs() < 0.05, "branch frequency {f}");
    }

    #[test]
    fn or_test_marked_level_accepts() {
        let inst = OrInstance::marked_search(4, 1, 1.0 / 3.0, 0.05).unwrap();
        let runner = OrTestRunner::new(&inst).unwrap();
        let rng = Rng::new(5);
        let accepts = runner.accept_count(2000, &rng);
        let rate = accepts as f64 / 2000.0;
        assert!(rate >= inst.accept_lower(), "rate {rate}");
    }

    #[test]
    fn or_test_unmarked_level_rejects() {
        let inst = OrInstance::marked_search(4, 4, 1.0 / 3.0, 0.05).unwrap();
        let runner = OrTestRunner::new(&inst).unwrap();
        let rng = Rng::new(6);
        let accepts = runner.accept_count(2000, &rng);
        let rate = accepts as f64 / 2000.0;
        assert!(rate <= inst.xi + 0.02, "rate {rate}");
    }

    #[test]
    fn or_test_full_projector_always_good() {
        let mut rng = Rng::new(7);
        let inst = OrInstance::new(
            vec![HermitianMatrix::identity(3)],
            random_density(3, &mut rng),
            0.4,
            0.0,
            0.05,
        )
        .unwrap();
        let runner = OrTestRunner::new(&inst).unwrap();
        let accepts = runner.accept_count(1000, &rng);
        let rate = accepts as f64 / 1000.0;
        assert!(rate >= inst.accept_lower(), "rate {rate}");
    }

    #[test]
    fn gap_verdict_grover_embedding() {
        let marked = OrInstance::marked_search(8, 3, 1.0 / 3.0, 0.05).unwrap();
        let mut rng = Rng::new(11);
        let v = gap_verdict(&marked, 2000, &mut rng).unwrap();
        assert_eq!(v.case, GapCase::Marked);

        let unmarked = OrInstance::marked_search(8, 8, 1.0 / 3.0, 0.05).unwrap();
        let v = gap_verdict(&unmarked, 2000, &mut rng).unwrap();
        assert_eq!(v.case, GapCase::Unmarked);
    }

    #[test]
    fn gap_verdict_mixed_low_overlap() {
        // One rank-1 projector, fully mixed input over dimension 16:
        // overlap 1/16 is far below 1 - eps, average bound phi = 1/16.
        // eps and xi are small enough that the gap condition holds.
        let mut diag = vec![0.0; 16];
        diag[0] = 1.0;
        let inst = OrInstance::new(
            vec![HermitianMatrix::diagonal(&diag)],
            DensityMatrix::maximally_mixed(16),
            0.1,
            1.0 / 16.0,
            0.002,
        )
        .unwrap();
        assert!(inst.gap_holds());
        let mut rng = Rng::new(13);
        let v = gap_verdict(&inst, 2000, &mut rng).unwrap();
        assert_eq!(v.case, GapCase::Unmarked);
    }

    #[test]
    fn gap_verdict_requires_gap() {
        // phi m large enough to close the gap.
        let inst = OrInstance::new(
            vec![HermitianMatrix::identity(2); 4],
            DensityMatrix::maximally_mixed(2),
            0.5,
            0.5,
            0.05,
        )
        .unwrap();
        let mut rng = Rng::new(0);
        assert!(matches!(
            gap_verdict(&inst, 10, &mut rng),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn jordan_defect_small_on_random_instances() {
        let mut rng = Rng::new(21);
        for seed in 0..5u64 {
            let mut r = rng.child(seed);
            let m = 2 + (seed as usize % 3);
            let d = 4;
            let projs: Vec<HermitianMatrix> = (0..m)
                .map(|_| {
                    let rank = 1 + r.range(0..2usize);
                    random_projector(d, rank, &mut r)
                })
                .collect();
            let inst =
                OrInstance::new(projs, random_density(d, &mut r), 0.25, 0.0, 0.05).unwrap();
            let defect = jordan_structure_defect(&inst).unwrap();
            assert!(defect < 1e-8, "defect {defect}");
        }
    }

    #[test]
    fn spectral_mass_bound_diagonal() {
        // tr(P_{>= lambda} rho) >= (max_i tr(L_i rho) - m lambda)^2 for
        // lambda below max/m, checked exactly on diagonal data.
        let mut rng = Rng::new(31);
        for seed in 0..20u64 {
            let mut r = rng.child(seed);
            let d = 6;
            let m = 3;
            let projs: Vec<HermitianMatrix> = (0..m)
                .map(|_| {
                    let bits: Vec<f64> =
                        (0..d).map(|_| f64::from(r.bernoulli(0.4))).collect();
                    HermitianMatrix::diagonal(&bits)
                })
                .collect();
            let diag: Vec<f64> = {
                let raw: Vec<f64> = (0..d).map(|_| r.range(0.01..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|x| x / s).collect()
            };
            let rho = DensityMatrix::new(HermitianMatrix::diagonal(&diag)).unwrap();
            let inst = OrInstance::new(projs, rho, 0.25, 0.0, 0.05).unwrap();
            let max_overlap = max_projector_overlap(&inst).unwrap();
            let lambda = max_overlap / (m as f64) * 0.9;
            let mass = spectral_mass_at_least(&inst, lambda).unwrap();
            let bound = (max_overlap - m as f64 * lambda).powi(2);
            assert!(
                mass >= bound - 1e-12,
                "mass {mass} < bound {bound}"
            );
        }
    }

    #[test]
    fn spectral_mass_bound_monotone_in_overlap() {
        // Larger max overlap never lowers the bound, and each state's
        // exact mass dominates its own bound.
        let mut diag = vec![0.0; 4];
        diag[0] = 1.0;
        let proj = HermitianMatrix::diagonal(&diag);
        let strong = DensityMatrix::new(HermitianMatrix::diagonal(&[0.9, 0.1, 0.0, 0.0])).unwrap();
        let weak = DensityMatrix::new(HermitianMatrix::diagonal(&[0.4, 0.2, 0.2, 0.2])).unwrap();
        let lambda = 0.2;
        for (a, b) in [(weak.clone(), strong.clone())] {
            let ia = OrInstance::new(vec![proj.clone()], a, 0.25, 0.0, 0.05).unwrap();
            let ib = OrInstance::new(vec![proj.clone()], b, 0.25, 0.0, 0.05).unwrap();
            let oa = max_projector_overlap(&ia).unwrap();
            let ob = max_projector_overlap(&ib).unwrap();
            assert!(ob >= oa);
            let bound = |o: f64| (o - lambda).max(0.0).powi(2);
            assert!(bound(ob) >= bound(oa));
            assert!(spectral_mass_at_least(&ia, lambda).unwrap() >= bound(oa) - 1e-12);
            assert!(spectral_mass_at_least(&ib, lambda).unwrap() >= bound(ob) - 1e-12);
        }
    }
}

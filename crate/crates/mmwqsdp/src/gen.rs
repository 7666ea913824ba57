//! Deterministic instance generators for the fixture families used in
//! tests and the CLI. Given the same parameters and seed the emitted
//! file is byte-identical.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::gibbs::{GibbsSpec, GibbsTerm};
use crate::io::{
    GibbsSpecFile, InstanceFile, MatrixData, MeasurementSetFile, MetaBlock, OrInstanceFile,
    SdpFile, StateFile,
};
use crate::linalg::{DensityMatrix, HermitianMatrix};
use crate::mmw::{Constraint, InstanceMeta, SdpInstance};
use crate::orsim::{OrInstance, DEFAULT_SIMULATOR_CAP};
use crate::rng::Rng;

pub const MAX_DIM: usize = 128;
pub const MAX_CONSTRAINTS: usize = 4096;

pub fn random_unit_vector(n: usize, rng: &mut Rng) -> DVector<C64> {
    let raw = DVector::from_fn(n, |_, _| C64::new(rng.normal(), rng.normal()));
    let norm = raw.norm();
    raw / C64::new(norm, 0.0)
}

pub fn random_hermitian(n: usize, rng: &mut Rng) -> HermitianMatrix {
    let raw = DMatrix::from_fn(n, n, |_, _| C64::new(rng.normal(), rng.normal()));
    HermitianMatrix::symmetrized(raw).expect("symmetrized")
}

/// Random Hermitian rescaled into the spectral band `[-0.95, 0.95]`.
pub fn random_bounded_hermitian(n: usize, rng: &mut Rng) -> HermitianMatrix {
    let h = random_hermitian(n, rng);
    let spec = h.eigh().expect("random Hermitian eigh");
    let radius = spec
        .eigenvalues
        .iter()
        .fold(0.0_f64, |m, l| m.max(l.abs()))
        .max(1e-12);
    h.scale(0.95 / radius)
}

/// Random rank-`r` density matrix (Wishart-style).
pub fn random_density(n: usize, rank: usize, rng: &mut Rng) -> DensityMatrix {
    let r = rank.clamp(1, n);
    let raw = DMatrix::from_fn(n, r, |_, _| C64::new(rng.normal(), rng.normal()));
    let psd = &raw * raw.adjoint();
    let tr = psd.trace().re;
    DensityMatrix::new(
        HermitianMatrix::symmetrized(psd / C64::new(tr, 0.0)).expect("symmetrized"),
    )
    .expect("normalized PSD")
}

/// Random rank-`r` orthogonal projector.
pub fn random_projector(n: usize, rank: usize, rng: &mut Rng) -> HermitianMatrix {
    let r = rank.clamp(1, n);
    let raw = DMatrix::from_fn(n, r, |_, _| C64::new(rng.normal(), rng.normal()));
    let q = raw.qr().q();
    HermitianMatrix::symmetrized(&q * q.adjoint()).expect("projector")
}

#[derive(Debug, Clone)]
pub struct GenOptions {
    pub n: usize,
    pub m: usize,
    /// Marked level for the search embedding; `k == m` means unmarked.
    pub k: usize,
    pub eps: f64,
    pub xi: f64,
    pub margin: f64,
    pub rank: usize,
    pub bound: f64,
    /// Decomposition terms per sign.
    pub terms: usize,
    pub seed: u64,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions {
            n: 4,
            m: 4,
            k: 0,
            eps: 0.25,
            xi: 0.05,
            margin: 0.05,
            rank: 2,
            bound: 2.0,
            terms: 2,
            seed: 0,
        }
    }
}

fn check_dims(n: usize, m: usize) -> Result<()> {
    if n == 0 || n > MAX_DIM {
        return Err(Error::Usage(format!("n = {n} outside 1..={MAX_DIM}")));
    }
    if m == 0 || m > MAX_CONSTRAINTS {
        return Err(Error::Usage(format!(
            "m = {m} outside 1..={MAX_CONSTRAINTS}"
        )));
    }
    Ok(())
}

/// Infeasible family: all constraints measure one diagonal entry, one
/// bound sits at -1/2 where no PSD matrix can reach.
pub fn lower_bound(n: usize, m: usize, seed: u64) -> Result<InstanceFile> {
    check_dims(n, m)?;
    let mut rng = Rng::new(seed);
    let hot_entry = rng.range(0..n);
    let hot_constraint = rng.range(0..m);
    let mut diag = vec![0.0; n];
    diag[hot_entry] = 1.0;
    let a = HermitianMatrix::diagonal(&diag);
    let constraints: Vec<Constraint> = (0..m)
        .map(|j| Constraint {
            matrix: a.clone(),
            bound: if j == hot_constraint { -0.5 } else { 0.5 },
        })
        .collect();
    let inst = SdpInstance::new(
        n,
        constraints,
        0.25,
        InstanceMeta {
            trace_bound: Some(1.0),
            rank_bound: Some(1),
            sparsity: Some(1),
        },
    )?;
    Ok(InstanceFile::Sdp(SdpFile::from_instance(&inst, Some(seed))))
}

/// Feasible family built around a hidden state: every bound carries a
/// nonnegative margin over the planted expectations.
pub fn planted_feasible(
    n: usize,
    m: usize,
    epsilon: f64,
    margin: f64,
    seed: u64,
) -> Result<InstanceFile> {
    check_dims(n, m)?;
    if margin < 0.0 {
        return Err(Error::Usage(format!("margin {margin} must be nonnegative")));
    }
    let mut rng = Rng::new(seed);
    let x0 = random_density(n, n, &mut rng);
    let mut constraints = Vec::with_capacity(m);
    let mut trace_bound = 0.0_f64;
    for _ in 0..m {
        let a = random_bounded_hermitian(n, &mut rng);
        let spec = a.eigh()?;
        let abs_trace: f64 = spec.eigenvalues.iter().map(|l| l.abs()).sum();
        trace_bound = trace_bound.max(abs_trace);
        let bound = crate::linalg::trace_inner(&a, &x0)? + margin;
        constraints.push(Constraint { matrix: a, bound });
    }
    let inst = SdpInstance::new(
        n,
        constraints,
        epsilon,
        InstanceMeta {
            trace_bound: Some(trace_bound),
            rank_bound: Some(n),
            sparsity: None,
        },
    )?;
    Ok(InstanceFile::Sdp(SdpFile::from_instance(&inst, Some(seed))))
}

/// Marked-basis-state search embedding over `m` levels plus one.
pub fn grover_or(m: usize, k: usize, eps: f64, xi: f64, seed: u64) -> Result<InstanceFile> {
    let joint = (m + 1) * m.next_power_of_two();
    if joint > DEFAULT_SIMULATOR_CAP {
        return Err(Error::Usage(format!(
            "embedding needs joint dimension {joint}, cap {DEFAULT_SIMULATOR_CAP}"
        )));
    }
    let inst = OrInstance::marked_search(m, k, eps, xi)?;
    Ok(InstanceFile::OrInstance(OrInstanceFile::from_instance(
        &inst,
        Some(seed),
    )))
}

/// Random low-rank decomposition with trace budget `bound`.
pub fn low_rank_gibbs(
    n: usize,
    rank: usize,
    bound: f64,
    terms: usize,
    seed: u64,
) -> Result<InstanceFile> {
    check_dims(n, 1)?;
    if !(bound > 0.0) {
        return Err(Error::Usage(format!("bound {bound} must be positive")));
    }
    if terms == 0 {
        return Err(Error::Usage("need at least one term per sign".into()));
    }
    let mut rng = Rng::new(seed);
    // Raw weights rescaled to consume 60..90% of the budget.
    let raw: Vec<f64> = (0..2 * terms).map(|_| rng.range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let scale = bound * rng.range(0.6..0.9) / total;
    let mut make_terms = |count: usize, offset: usize| -> Vec<GibbsTerm> {
        (0..count)
            .map(|i| {
                let state = random_density(n, rank, &mut rng);
                GibbsTerm::new(1.0, state, raw[offset + i] * scale)
            })
            .collect()
    };
    let plus = make_terms(terms, 0);
    let minus = make_terms(terms, terms);
    let spec = GibbsSpec::new(n, plus, minus, bound, rank * terms)?;
    Ok(InstanceFile::GibbsSpec(GibbsSpecFile::from_spec(
        &spec,
        Some(seed),
    )))
}

/// Random rank-one measurement operators.
pub fn rank1_measurements(n: usize, m: usize, seed: u64) -> Result<InstanceFile> {
    check_dims(n, m)?;
    let mut rng = Rng::new(seed);
    let operators: Vec<MatrixData> = (0..m)
        .map(|_| {
            let v = random_unit_vector(n, &mut rng);
            let p = HermitianMatrix::symmetrized(&v * v.adjoint()).expect("projector");
            crate::io::matrix_to_data(p.as_matrix())
        })
        .collect();
    Ok(InstanceFile::MeasurementSet(MeasurementSetFile {
        dim: n,
        rank_bound: 1,
        operators,
        meta: MetaBlock {
            seed: Some(seed),
            ..MetaBlock::default()
        },
    }))
}

/// Random low-rank density matrix as a target-state file.
pub fn random_state(n: usize, rank: usize, seed: u64) -> Result<InstanceFile> {
    check_dims(n, 1)?;
    let mut rng = Rng::new(seed);
    let state = random_density(n, rank, &mut rng);
    Ok(InstanceFile::State(StateFile::from_state(
        &state,
        Some(seed),
    )))
}

/// Name-dispatched generation for the CLI.
pub fn generate(fixture: &str, opts: &GenOptions) -> Result<InstanceFile> {
    match fixture {
        "lower-bound" => lower_bound(opts.n, opts.m, opts.seed),
        "planted-feasible" => {
            planted_feasible(opts.n, opts.m, opts.eps, opts.margin, opts.seed)
        }
        "grover-or" => grover_or(opts.m, opts.k, opts.eps, opts.xi, opts.seed),
        "low-rank-gibbs" => low_rank_gibbs(opts.n, opts.rank, opts.bound, opts.terms, opts.seed),
        "rank1-measurements" => rank1_measurements(opts.n, opts.m, opts.seed),
        "random-state" => random_state(opts.n, opts.rank, opts.seed),
        other => Err(Error::Usage(format!(
            "unknown fixture \"{other}\"; expected one of lower-bound, planted-feasible, \
             grover-or, low-rank-gibbs, rank1-measurements, random-state"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::to_json_string;
    use crate::oracle::{exact_violation_search, OracleOutcome};

    #[test]
    fn generation_is_deterministic() {
        let a = to_json_string(&lower_bound(4, 3, 7).unwrap()).unwrap();
        let b = to_json_string(&lower_bound(4, 3, 7).unwrap()).unwrap();
        assert_eq!(a, b);
        let c = to_json_string(&lower_bound(4, 3, 8).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn planted_feasible_accepts_hidden_state() {
        // The construction guarantees slack at the planted state: rebuild
        // it from the same seed and check with the exact oracle.
        let file = planted_feasible(4, 6, 0.2, 0.05, 11).unwrap();
        let inst = file.expect_sdp().unwrap().to_instance().unwrap();
        let mut rng = Rng::new(11);
        let x0 = random_density(4, 4, &mut rng);
        let rep = exact_violation_search(&inst, &x0).unwrap();
        assert_eq!(rep.outcome, OracleOutcome::Feasible);
    }

    #[test]
    fn grover_embedding_reaches_marked_verdict() {
        let file = grover_or(8, 3, 1.0 / 3.0, 0.05, 0).unwrap();
        let inst = file.expect_or().unwrap().to_instance().unwrap();
        let mut rng = Rng::new(42);
        let v = crate::orsim::gap_verdict(&inst, 2000, &mut rng).unwrap();
        assert_eq!(v.case, crate::orsim::GapCase::Marked);
    }

    #[test]
    fn low_rank_gibbs_loads_and_respects_budget() {
        let file = low_rank_gibbs(8, 2, 4.0, 2, 5).unwrap();
        let spec = file.expect_gibbs().unwrap().to_spec().unwrap();
        assert!(spec.total_trace_weight() <= 4.0);
        spec.assemble_k().unwrap();
    }

    #[test]
    fn generated_files_roundtrip() {
        for file in [
            lower_bound(4, 3, 1).unwrap(),
            planted_feasible(3, 4, 0.25, 0.05, 2).unwrap(),
            grover_or(4, 2, 0.25, 0.05, 3).unwrap(),
            low_rank_gibbs(4, 2, 2.0, 2, 4).unwrap(),
            rank1_measurements(4, 5, 5).unwrap(),
            random_state(4, 2, 6).unwrap(),
        ] {
            let text = to_json_string(&file).unwrap();
            let parsed: InstanceFile = serde_json::from_str(&text).unwrap();
            assert_eq!(to_json_string(&parsed).unwrap(), text);
        }
    }

    #[test]
    fn unknown_fixture_is_usage_error() {
        let err = generate("nope", &GenOptions::default());
        assert!(matches!(err, Err(Error::Usage(_))));
    }
}

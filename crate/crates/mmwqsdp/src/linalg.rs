//! Dense Hermitian kernel: validated matrix types, eigendecomposition,
//! matrix exponentials, trace forms, and the unitary eigensolver used by
//! the projector-OR simulator.
//!
//! Dimensions are desk scale (a few thousand at most), so everything is
//! dense and spectral. Gibbs weights are produced by exact
//! eigendecomposition rather than series expansion, which keeps them
//! positive semidefinite by construction.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Construction tolerance on conjugate symmetry.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Most negative eigenvalue a density matrix may carry.
pub const PSD_TOL: f64 = -1e-9;
/// Unit-trace tolerance for density matrices.
pub const TRACE_TOL: f64 = 1e-9;

/// Dense Hermitian matrix, validated at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix {
    mat: DMatrix<C64>,
}

impl HermitianMatrix {
    /// Validating constructor: square, `dim >= 1`, and
    /// `m[i][j] == conj(m[j][i])` within [`HERMITIAN_TOL`].
    pub fn new(mat: DMatrix<C64>) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::Usage(format!(
                "matrix is not square: {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        if mat.nrows() == 0 {
            return Err(Error::Usage("matrix dimension must be at least 1".into()));
        }
        for i in 0..mat.nrows() {
            for j in i..mat.ncols() {
                let d = mat[(i, j)] - mat[(j, i)].conj();
                if d.norm() > HERMITIAN_TOL {
                    return Err(Error::Contract(format!(
                        "not Hermitian at ({i},{j}): asymmetry {:.3e}",
                        d.norm()
                    )));
                }
            }
        }
        Ok(HermitianMatrix { mat })
    }

    /// Symmetrize `(m + m†)/2` and wrap. For matrices that are Hermitian
    /// up to rounding (spectral reconstructions, products of Hermitian
    /// factors) this never fails validation.
    pub fn symmetrized(mat: DMatrix<C64>) -> Result<Self> {
        let sym = (&mat + mat.adjoint()) * C64::new(0.5, 0.0);
        HermitianMatrix::new(sym)
    }

    pub fn from_real(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        let mat = DMatrix::from_fn(n, n, |i, j| C64::new(rows[i][j], 0.0));
        HermitianMatrix::new(mat)
    }

    pub fn diagonal(entries: &[f64]) -> Self {
        let n = entries.len();
        let mat = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                C64::new(entries[i], 0.0)
            } else {
                C64::default()
            }
        });
        HermitianMatrix { mat }
    }

    pub fn zeros(dim: usize) -> Self {
        HermitianMatrix {
            mat: DMatrix::zeros(dim, dim),
        }
    }

    pub fn identity(dim: usize) -> Self {
        HermitianMatrix {
            mat: DMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn entry(&self, i: usize, j: usize) -> C64 {
        self.mat[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<C64> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.mat
    }

    pub fn trace(&self) -> f64 {
        self.mat.trace().re
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.mat.norm()
    }

    /// `self + scale * other`.
    pub fn axpy(&self, scale: f64, other: &HermitianMatrix) -> Result<HermitianMatrix> {
        if self.dim() != other.dim() {
            return Err(Error::Usage(format!(
                "dimension mismatch: {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(HermitianMatrix {
            mat: &self.mat + &other.mat * C64::new(scale, 0.0),
        })
    }

    pub fn scale(&self, scale: f64) -> HermitianMatrix {
        HermitianMatrix {
            mat: &self.mat * C64::new(scale, 0.0),
        }
    }

    /// Eigendecomposition with eigenvalues in ascending order.
    ///
    /// Backed by faer's self-adjoint solver, which stays accurate on
    /// the heavily degenerate spectra this crate produces (projectors,
    /// reflection products). The decomposition is residual-checked
    /// before use.
    pub fn eigh(&self) -> Result<Spectrum> {
        let n = self.dim();
        let fm = faer::Mat::<faer::c64>::from_fn(n, n, |i, j| {
            let z = self.mat[(i, j)];
            faer::c64::new(z.re, z.im)
        });
        let eig = fm.self_adjoint_eigen(faer::Side::Lower).map_err(|e| {
            Error::Numeric(format!("eigensolver failed at dimension {n}: {e:?}"))
        })?;
        let raw_values = eig.S().column_vector();
        let raw_basis = eig.U();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| raw_values[a].re.total_cmp(&raw_values[b].re));
        let eigenvalues: Vec<f64> = order.iter().map(|&k| raw_values[k].re).collect();
        let basis = DMatrix::from_fn(n, n, |i, j| {
            let z = raw_basis[(i, order[j])];
            C64::new(z.re, z.im)
        });
        let spectrum = Spectrum { eigenvalues, basis };
        let residual = (self.mat.clone() * &spectrum.basis
            - &spectrum.basis
                * DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                    n,
                    spectrum.eigenvalues.iter().map(|&l| C64::new(l, 0.0)),
                )))
        .norm();
        if residual > 1e-7 * self.frobenius_norm().max(1.0) {
            return Err(Error::Numeric(format!(
                "eigensolver residual {residual:.3e} at dimension {n}"
            )));
        }
        Ok(spectrum)
    }

    /// `exp(-H)` through the spectrum: sum of `exp(-lambda_i) v_i v_i†`.
    pub fn exp_neg(&self) -> Result<HermitianMatrix> {
        let spec = self.eigh()?;
        Ok(spec.apply(|lambda| (-lambda).exp()))
    }

    /// Normalized Gibbs weight `exp(-H) / tr exp(-H)`.
    ///
    /// Shifting `H` by a multiple of the identity leaves the output
    /// unchanged, so the exponent is offset by the smallest eigenvalue
    /// before exponentiating to avoid overflow.
    pub fn gibbs_of(&self) -> Result<DensityMatrix> {
        let spec = self.eigh()?;
        let lambda0 = spec.eigenvalues.first().copied().unwrap_or(0.0);
        let weights: Vec<f64> = spec
            .eigenvalues
            .iter()
            .map(|l| (-(l - lambda0)).exp())
            .collect();
        let z: f64 = weights.iter().sum();
        let probs: Vec<f64> = weights.iter().map(|w| w / z).collect();
        let mat = spec.assemble(&probs);
        DensityMatrix::new(HermitianMatrix::symmetrized(mat)?)
    }
}

/// Sorted eigendecomposition of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct Spectrum {
    /// Ascending eigenvalues.
    pub eigenvalues: Vec<f64>,
    /// Column `i` is the unit eigenvector of `eigenvalues[i]`.
    pub basis: DMatrix<C64>,
}

impl Spectrum {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `sum f(lambda_i) v_i v_i†`, symmetrized.
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> HermitianMatrix {
        let mapped: Vec<f64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        let mat = self.assemble(&mapped);
        HermitianMatrix::symmetrized(mat).expect("spectral assembly is Hermitian")
    }

    /// `sum w_i v_i v_i†` as a raw matrix.
    pub fn assemble(&self, weights: &[f64]) -> DMatrix<C64> {
        let n = self.dim();
        let scaled = DMatrix::from_fn(n, n, |i, j| self.basis[(i, j)] * C64::new(weights[j], 0.0));
        &scaled * self.basis.adjoint()
    }

    pub fn reconstruct(&self) -> DMatrix<C64> {
        self.assemble(&self.eigenvalues)
    }

    /// Measurement weights `<v_i| rho |v_i>` of `rho` in this eigenbasis.
    /// Tiny negative values from rounding are clamped to zero.
    pub fn born_weights(&self, rho: &DensityMatrix) -> Vec<f64> {
        let m = self.basis.adjoint() * rho.as_matrix() * &self.basis;
        (0..self.dim()).map(|i| m[(i, i)].re.max(0.0)).collect()
    }

    /// Number of eigenvalues with magnitude above `tol`.
    pub fn rank_above(&self, tol: f64) -> usize {
        self.eigenvalues.iter().filter(|l| l.abs() > tol).count()
    }

    /// Projector onto the span of eigenvectors listed in `indices`.
    pub fn projector(&self, indices: &[usize]) -> DMatrix<C64> {
        let n = self.dim();
        let mut p = DMatrix::<C64>::zeros(n, n);
        for &k in indices {
            let v = self.basis.column(k);
            p += v * v.adjoint();
        }
        p
    }
}

/// Positive semidefinite Hermitian matrix with unit trace.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    mat: HermitianMatrix,
}

impl DensityMatrix {
    /// Validates PSD (eigenvalues above [`PSD_TOL`]) and unit trace
    /// (within [`TRACE_TOL`]). Eigenvalues in `[PSD_TOL, 0)` are clamped
    /// to zero and the trace renormalized.
    pub fn new(h: HermitianMatrix) -> Result<Self> {
        let tr = h.trace();
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(Error::Contract(format!(
                "density matrix trace {tr:.12} is not 1"
            )));
        }
        let spec = h.eigh()?;
        let min = spec.eigenvalues.first().copied().unwrap_or(0.0);
        if min < PSD_TOL {
            return Err(Error::Contract(format!(
                "not PSD: minimum eigenvalue {min:.3e}"
            )));
        }
        if min < 0.0 {
            let clamped: Vec<f64> = spec.eigenvalues.iter().map(|l| l.max(0.0)).collect();
            let total: f64 = clamped.iter().sum();
            let probs: Vec<f64> = clamped.iter().map(|w| w / total).collect();
            let mat = spec.assemble(&probs);
            return Ok(DensityMatrix {
                mat: HermitianMatrix::symmetrized(mat)?,
            });
        }
        Ok(DensityMatrix { mat: h })
    }

    /// Wrap a matrix already known to be PSD with unit trace. Checked in
    /// debug builds only; used on hot paths that assemble states from
    /// projectors.
    pub(crate) fn from_trusted(mat: DMatrix<C64>) -> Self {
        #[cfg(debug_assertions)]
        {
            let h = HermitianMatrix::symmetrized(mat.clone()).expect("trusted state");
            return DensityMatrix::new(h).expect("trusted state");
        }
        #[allow(unreachable_code)]
        DensityMatrix {
            mat: HermitianMatrix { mat },
        }
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        let mat = DMatrix::from_diagonal_element(dim, dim, C64::new(1.0 / dim as f64, 0.0));
        DensityMatrix {
            mat: HermitianMatrix { mat },
        }
    }

    /// `|k><k|` in the standard basis.
    pub fn pure_basis(dim: usize, k: usize) -> Self {
        let mut mat = DMatrix::<C64>::zeros(dim, dim);
        mat[(k, k)] = C64::new(1.0, 0.0);
        DensityMatrix {
            mat: HermitianMatrix { mat },
        }
    }

    /// Projector onto a unit vector.
    pub fn from_unit_vector(v: &nalgebra::DVector<C64>) -> Result<Self> {
        let norm = v.norm();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::Usage(format!("vector norm {norm} is not 1")));
        }
        Ok(DensityMatrix::from_trusted(v * v.adjoint()))
    }

    pub fn dim(&self) -> usize {
        self.mat.dim()
    }

    pub fn as_hermitian(&self) -> &HermitianMatrix {
        &self.mat
    }

    pub fn as_matrix(&self) -> &DMatrix<C64> {
        self.mat.as_matrix()
    }

    pub fn into_hermitian(self) -> HermitianMatrix {
        self.mat
    }
}

/// Real part of `tr(A R)`; the raw trace of a Hermitian pair is real, so
/// a residual imaginary part above 1e-9 is treated as corruption.
pub fn trace_inner(a: &HermitianMatrix, r: &DensityMatrix) -> Result<f64> {
    if a.dim() != r.dim() {
        return Err(Error::Usage(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            r.dim()
        )));
    }
    let t = raw_product_trace(a.as_matrix(), r.as_matrix());
    assert!(
        t.im.abs() <= 1e-9,
        "trace of Hermitian pair has imaginary part {:.3e}",
        t.im
    );
    Ok(t.re)
}

/// `tr(M N)` without forming the product.
pub(crate) fn raw_product_trace(m: &DMatrix<C64>, n: &DMatrix<C64>) -> C64 {
    let d = m.nrows();
    let mut acc = C64::default();
    for i in 0..d {
        for j in 0..d {
            acc += m[(i, j)] * n[(j, i)];
        }
    }
    acc
}

/// Half the absolute eigenvalue sum of `R1 - R2`, clamped to `[0, 1]`.
pub fn trace_distance(r1: &DensityMatrix, r2: &DensityMatrix) -> Result<f64> {
    if r1.dim() != r2.dim() {
        return Err(Error::Usage(format!(
            "dimension mismatch: {} vs {}",
            r1.dim(),
            r2.dim()
        )));
    }
    let diff = HermitianMatrix::symmetrized(r1.as_matrix() - r2.as_matrix())?;
    let spec = diff.eigh()?;
    let half_sum: f64 = spec.eigenvalues.iter().map(|l| l.abs()).sum::<f64>() / 2.0;
    Ok(half_sum.clamp(0.0, 1.0))
}

/// Eigendecomposition of a unitary matrix.
#[derive(Debug, Clone)]
pub struct UnitaryEig {
    /// Eigenphases in `(-pi, pi]`, one per column of `basis`.
    pub phases: Vec<f64>,
    pub basis: DMatrix<C64>,
}

/// Canonicalize an angle into `(-pi, pi]`.
pub fn canonical_phase(phi: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut p = phi.rem_euclid(two_pi);
    if p > std::f64::consts::PI {
        p -= two_pi;
    }
    p
}

/// Eigendecompose a unitary `G` by simultaneous diagonalization of the
/// commuting Hermitian pair `(G + G†)/2` and `(G - G†)/(2i)`. Degenerate
/// real-part eigenvalues are resolved inside each cluster, which is what
/// separates conjugate phase pairs `±phi`.
pub fn eig_unitary(g: &DMatrix<C64>) -> Result<UnitaryEig> {
    let n = g.nrows();
    if n != g.ncols() {
        return Err(Error::Usage("unitary eigensolver needs a square matrix".into()));
    }
    let gd = g.adjoint();
    let re_part = HermitianMatrix::symmetrized((g + &gd) * C64::new(0.5, 0.0))?;
    let im_part = HermitianMatrix::symmetrized((g - &gd) * C64::new(0.0, -0.5))?;
    let re_spec = re_part.eigh()?;

    let cluster_tol = 1e-7;
    let mut basis = DMatrix::<C64>::zeros(n, n);
    let mut phases = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && re_spec.eigenvalues[end] - re_spec.eigenvalues[end - 1] < cluster_tol {
            end += 1;
        }
        let k = end - start;
        let v = re_spec.basis.columns(start, k).into_owned();
        let block = v.adjoint() * im_part.as_matrix() * &v;
        let block =
            HermitianMatrix::symmetrized(block).expect("projected Hermitian block");
        let sub = block.eigh()?;
        let combined = &v * &sub.basis;
        for c in 0..k {
            let col = combined.column(c).into_owned();
            let gv = g * &col;
            let rayleigh: C64 = col.dotc(&gv);
            let phi = canonical_phase(rayleigh.arg());
            let residual = (&gv - &col * C64::from_polar(1.0, phi)).norm();
            if residual > 1e-7 {
                return Err(Error::Numeric(format!(
                    "unitary eigenpair residual {residual:.3e} at dimension {n}"
                )));
            }
            basis.set_column(start + c, &col);
            phases[start + c] = phi;
        }
        start = end;
    }
    Ok(UnitaryEig { phases, basis })
}

/// Kronecker product.
pub fn kron(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    a.kronecker(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::testutil::{random_density, random_hermitian};
    use proptest::prelude::*;

    #[test]
    fn eigh_diagonal_sorted() {
        let h = HermitianMatrix::diagonal(&[3.0, 1.0]);
        let s = h.eigh().unwrap();
        assert!((s.eigenvalues[0] - 1.0).abs() < 1e-12);
        assert!((s.eigenvalues[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn eigh_off_diagonal_pair() {
        // 2x2 characteristic polynomial gives eigenvalues -1 and 1.
        let h = HermitianMatrix::from_real(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
        let s = h.eigh().unwrap();
        assert!((s.eigenvalues[0] + 1.0).abs() < 1e-12);
        assert!((s.eigenvalues[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigh_zero_matrix() {
        let s = HermitianMatrix::zeros(4).eigh().unwrap();
        assert_eq!(s.eigenvalues, vec![0.0; 4]);
    }

    #[test]
    fn rejects_non_hermitian() {
        let mat = DMatrix::from_fn(2, 2, |i, j| C64::new((i + 2 * j) as f64, 0.1));
        assert!(matches!(
            HermitianMatrix::new(mat),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn exp_neg_zero_is_identity() {
        let e = HermitianMatrix::zeros(2).exp_neg().unwrap();
        assert!((e.as_matrix() - DMatrix::<C64>::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn exp_neg_diagonal() {
        let h = HermitianMatrix::diagonal(&[2.0_f64.ln(), 0.0]);
        let e = h.exp_neg().unwrap();
        assert!((e.entry(0, 0).re - 0.5).abs() < 1e-12);
        assert!((e.entry(1, 1).re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exp_neg_off_diagonal_cosh_sinh() {
        // cosh(ln 2) = 1.25, sinh(ln 2) = 0.75 in the ±1 eigenbasis.
        let l2 = 2.0_f64.ln();
        let h = HermitianMatrix::from_real(&[&[0.0, l2], &[l2, 0.0]]).unwrap();
        let e = h.exp_neg().unwrap();
        let expect = [[1.25, -0.75], [-0.75, 1.25]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((e.entry(i, j).re - expect[i][j]).abs() < 1e-12);
                assert!(e.entry(i, j).im.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gibbs_zero_is_uniform() {
        let g = HermitianMatrix::zeros(5).gibbs_of().unwrap();
        for i in 0..5 {
            assert!((g.as_matrix()[(i, i)].re - 0.2).abs() < 1e-12);
        }
        assert!((g.as_hermitian().trace() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gibbs_diagonal_weights() {
        let g = HermitianMatrix::diagonal(&[3.0_f64.ln(), 0.0])
            .gibbs_of()
            .unwrap();
        assert!((g.as_matrix()[(0, 0)].re - 0.25).abs() < 1e-12);
        assert!((g.as_matrix()[(1, 1)].re - 0.75).abs() < 1e-12);
    }

    #[test]
    fn gibbs_shift_invariance_fixed() {
        let mut rng = Rng::new(11);
        let h = random_hermitian(4, &mut rng);
        let shifted = h.axpy(5.0, &HermitianMatrix::identity(4)).unwrap();
        let a = h.gibbs_of().unwrap();
        let b = shifted.gibbs_of().unwrap();
        assert!((a.as_matrix() - b.as_matrix()).norm() < 1e-9);
    }

    #[test]
    fn trace_inner_examples() {
        let rho = DensityMatrix::maximally_mixed(2);
        let id = HermitianMatrix::identity(2);
        assert!((trace_inner(&id, &rho).unwrap() - 1.0).abs() < 1e-12);
        let z = HermitianMatrix::diagonal(&[1.0, -1.0]);
        assert!(trace_inner(&z, &rho).unwrap().abs() < 1e-12);
        let pure = DensityMatrix::pure_basis(2, 0);
        assert!((trace_inner(&z, &pure).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trace_inner_dimension_mismatch() {
        let a = HermitianMatrix::identity(2);
        let r = DensityMatrix::maximally_mixed(3);
        assert!(matches!(trace_inner(&a, &r), Err(Error::Usage(_))));
    }

    #[test]
    fn trace_distance_examples() {
        let r = DensityMatrix::maximally_mixed(2);
        assert_eq!(trace_distance(&r, &r).unwrap(), 0.0);
        let p0 = DensityMatrix::pure_basis(2, 0);
        let p1 = DensityMatrix::pure_basis(2, 1);
        assert!((trace_distance(&p0, &p1).unwrap() - 1.0).abs() < 1e-12);
        let biased = DensityMatrix::new(HermitianMatrix::diagonal(&[0.75, 0.25])).unwrap();
        assert!((trace_distance(&r, &biased).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn density_rejects_bad_trace_and_negative() {
        let bad_trace = HermitianMatrix::diagonal(&[0.7, 0.7]);
        assert!(DensityMatrix::new(bad_trace).is_err());
        let negative = HermitianMatrix::diagonal(&[1.5, -0.5]);
        assert!(DensityMatrix::new(negative).is_err());
    }

    #[test]
    fn density_clamps_tiny_negative() {
        let h = HermitianMatrix::diagonal(&[1.0 + 5e-10, -5e-10]);
        let d = DensityMatrix::new(h).unwrap();
        let s = d.as_hermitian().eigh().unwrap();
        assert!(s.eigenvalues[0] >= 0.0);
        assert!((d.as_hermitian().trace() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unitary_eig_reflection_product() {
        // (I-2|+><+|)(I-2|0><0|) is a rotation by pi/2.
        let half = C64::new(0.5, 0.0);
        let plus = DMatrix::from_fn(2, 2, |_, _| half);
        let e00 = {
            let mut m = DMatrix::<C64>::zeros(2, 2);
            m[(0, 0)] = C64::new(1.0, 0.0);
            m
        };
        let id = DMatrix::<C64>::identity(2, 2);
        let g = (&id - &plus * C64::new(2.0, 0.0)) * (&id - &e00 * C64::new(2.0, 0.0));
        let eig = eig_unitary(&g).unwrap();
        let mut phases = eig.phases.clone();
        phases.sort_by(f64::total_cmp);
        assert!((phases[0] + std::f64::consts::FRAC_PI_2).abs() < 1e-10);
        assert!((phases[1] - std::f64::consts::FRAC_PI_2).abs() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn eigh_reconstructs(seed in 0u64..500, n in 1usize..12) {
            let mut rng = Rng::new(seed);
            let h = random_hermitian(n, &mut rng);
            let s = h.eigh().unwrap();
            let err = (s.reconstruct() - h.as_matrix()).norm();
            prop_assert!(err <= 1e-8 * h.frobenius_norm().max(1.0));
            let gram = s.basis.adjoint() * &s.basis;
            prop_assert!((gram - DMatrix::<C64>::identity(n, n)).norm() < 1e-10);
        }

        #[test]
        fn gibbs_shift_invariance(seed in 0u64..500, c in -10.0f64..10.0) {
            let mut rng = Rng::new(seed);
            let h = random_hermitian(5, &mut rng);
            let shifted = h.axpy(c, &HermitianMatrix::identity(5)).unwrap();
            let a = h.gibbs_of().unwrap();
            let b = shifted.gibbs_of().unwrap();
            prop_assert!((a.as_matrix() - b.as_matrix()).norm() < 1e-9);
        }

        #[test]
        fn exp_neg_commutes(seed in 0u64..500) {
            let mut rng = Rng::new(seed);
            let h = random_hermitian(6, &mut rng);
            let e = h.exp_neg().unwrap();
            let comm = h.as_matrix() * e.as_matrix() - e.as_matrix() * h.as_matrix();
            prop_assert!(comm.norm() < 1e-8 * e.frobenius_norm().max(1.0));
        }

        #[test]
        fn trace_distance_metric(seed in 0u64..500) {
            let mut rng = Rng::new(seed);
            let a = random_density(4, &mut rng);
            let b = random_density(4, &mut rng);
            let c = random_density(4, &mut rng);
            let dab = trace_distance(&a, &b).unwrap();
            let dba = trace_distance(&b, &a).unwrap();
            let dac = trace_distance(&a, &c).unwrap();
            let dcb = trace_distance(&c, &b).unwrap();
            prop_assert!((dab - dba).abs() < 1e-12);
            prop_assert!(dab <= dac + dcb + 1e-9);
            prop_assert!((0.0..=1.0).contains(&dab));
        }

        #[test]
        fn unitary_eig_random_grover_like(seed in 0u64..200) {
            let mut rng = Rng::new(seed);
            let n = 6;
            // Random projector pair product.
            let v = {
                let raw = nalgebra::DVector::from_fn(n, |_, _| C64::new(rng.normal(), rng.normal()));
                let norm = raw.norm();
                raw / C64::new(norm, 0.0)
            };
            let w = {
                let raw = nalgebra::DVector::from_fn(n, |_, _| C64::new(rng.normal(), rng.normal()));
                let norm = raw.norm();
                raw / C64::new(norm, 0.0)
            };
            let id = DMatrix::<C64>::identity(n, n);
            let g = (&id - (&v * v.adjoint()) * C64::new(2.0, 0.0))
                * (&id - (&w * w.adjoint()) * C64::new(2.0, 0.0));
            let eig = eig_unitary(&g).unwrap();
            for (k, &phi) in eig.phases.iter().enumerate() {
                let col = eig.basis.column(k).into_owned();
                let resid = (&g * &col - &col * C64::from_polar(1.0, phi)).norm();
                prop_assert!(resid < 1e-8);
            }
        }
    }
}

//! Shared random fixtures for unit tests; thin wrappers over the
//! public generator utilities.

use nalgebra::DVector;
use num_complex::Complex64 as C64;

use crate::gen;
use crate::linalg::{DensityMatrix, HermitianMatrix};
use crate::rng::Rng;

pub(crate) fn random_hermitian(n: usize, rng: &mut Rng) -> HermitianMatrix {
    gen::random_hermitian(n, rng)
}

pub(crate) fn random_bounded_hermitian(n: usize, rng: &mut Rng) -> HermitianMatrix {
    gen::random_bounded_hermitian(n, rng)
}

pub(crate) fn random_density(n: usize, rng: &mut Rng) -> DensityMatrix {
    gen::random_density(n, n, rng)
}

pub(crate) fn random_low_rank_density(n: usize, r: usize, rng: &mut Rng) -> DensityMatrix {
    gen::random_density(n, r, rng)
}

pub(crate) fn random_unit_vector(n: usize, rng: &mut Rng) -> DVector<C64> {
    gen::random_unit_vector(n, rng)
}

pub(crate) fn random_projector(n: usize, r: usize, rng: &mut Rng) -> HermitianMatrix {
    gen::random_projector(n, r, rng)
}

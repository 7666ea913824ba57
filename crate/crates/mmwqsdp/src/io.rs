//! Instance files: UTF-8 JSON documents with a top-level `kind` tag.
//!
//! Matrices are nested arrays of `[re, im]` pairs, scalars plain JSON
//! numbers. Serialization uses the shortest round-trip float form, so
//! write-then-read reproduces every matrix bit for bit. Loaders enforce
//! the domain invariants and label the offending field.

use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::{GibbsSpec, GibbsTerm};
use crate::learn::MeasurementSet;
use crate::linalg::{DensityMatrix, HermitianMatrix};
use crate::mmw::{Constraint, InstanceMeta, SdpInstance};
use crate::orsim::OrInstance;

/// Row-major complex matrix as `[re, im]` pairs.
pub type MatrixData = Vec<Vec<[f64; 2]>>;

pub fn matrix_to_data(m: &DMatrix<C64>) -> MatrixData {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

pub fn data_to_matrix(data: &MatrixData, label: &str) -> Result<DMatrix<C64>> {
    let n = data.len();
    if n == 0 {
        return Err(Error::Usage(format!("{label}: empty matrix")));
    }
    for (i, row) in data.iter().enumerate() {
        if row.len() != n {
            return Err(Error::Usage(format!(
                "{label}: row {i} has {} entries, expected {n}",
                row.len()
            )));
        }
        for (j, z) in row.iter().enumerate() {
            if !z[0].is_finite() || !z[1].is_finite() {
                return Err(Error::Usage(format!(
                    "{label}: entry ({i},{j}) is not finite"
                )));
            }
        }
    }
    Ok(DMatrix::from_fn(n, n, |i, j| {
        C64::new(data[i][j][0], data[i][j][1])
    }))
}

fn relabel(label: &str, e: Error) -> Error {
    match e {
        Error::Usage(msg) => Error::Usage(format!("{label}: {msg}")),
        Error::Contract(msg) => Error::Contract(format!("{label}: {msg}")),
        other => other,
    }
}

pub fn data_to_hermitian(data: &MatrixData, label: &str) -> Result<HermitianMatrix> {
    let m = data_to_matrix(data, label)?;
    HermitianMatrix::new(m).map_err(|e| relabel(label, e))
}

pub fn data_to_density(data: &MatrixData, label: &str) -> Result<DensityMatrix> {
    let h = data_to_hermitian(data, label)?;
    DensityMatrix::new(h).map_err(|e| relabel(label, e))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct MetaBlock {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank_bound: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sparsity: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstraintEntry {
    pub matrix: MatrixData,
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SdpFile {
    pub dim: usize,
    pub epsilon: f64,
    pub constraints: Vec<ConstraintEntry>,
    #[serde(default)]
    pub meta: MetaBlock,
}

impl SdpFile {
    pub fn to_instance(&self) -> Result<SdpInstance> {
        let mut constraints = Vec::with_capacity(self.constraints.len());
        for (j, c) in self.constraints.iter().enumerate() {
            let matrix = data_to_hermitian(&c.matrix, &format!("constraints[{j}].matrix"))?;
            if !c.bound.is_finite() {
                return Err(Error::Usage(format!(
                    "constraints[{j}].bound is not finite"
                )));
            }
            constraints.push(Constraint {
                matrix,
                bound: c.bound,
            });
        }
        SdpInstance::new(
            self.dim,
            constraints,
            self.epsilon,
            InstanceMeta {
                trace_bound: self.meta.trace_bound,
                rank_bound: self.meta.rank_bound,
                sparsity: self.meta.sparsity,
            },
        )
    }

    pub fn from_instance(inst: &SdpInstance, seed: Option<u64>) -> Self {
        SdpFile {
            dim: inst.dim(),
            epsilon: inst.epsilon(),
            constraints: inst
                .constraints()
                .iter()
                .map(|c| ConstraintEntry {
                    matrix: matrix_to_data(c.matrix.as_matrix()),
                    bound: c.bound,
                })
                .collect(),
            meta: MetaBlock {
                trace_bound: inst.meta.trace_bound,
                rank_bound: inst.meta.rank_bound,
                sparsity: inst.meta.sparsity,
                seed,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TermEntry {
    pub coeff: f64,
    pub trace_weight: f64,
    pub state: MatrixData,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GibbsSpecFile {
    pub dim: usize,
    pub bound: f64,
    pub rank_bound: usize,
    pub plus_terms: Vec<TermEntry>,
    pub minus_terms: Vec<TermEntry>,
    #[serde(default)]
    pub meta: MetaBlock,
}

impl GibbsSpecFile {
    pub fn to_spec(&self) -> Result<GibbsSpec> {
        let convert = |entries: &[TermEntry], side: &str| -> Result<Vec<GibbsTerm>> {
            entries
                .iter()
                .enumerate()
                .map(|(j, t)| {
                    let state =
                        data_to_density(&t.state, &format!("{side}_terms[{j}].state"))?;
                    Ok(GibbsTerm::new(t.coeff, state, t.trace_weight))
                })
                .collect()
        };
        GibbsSpec::new(
            self.dim,
            convert(&self.plus_terms, "plus")?,
            convert(&self.minus_terms, "minus")?,
            self.bound,
            self.rank_bound,
        )
    }

    pub fn from_spec(spec: &GibbsSpec, seed: Option<u64>) -> Self {
        let convert = |terms: &[GibbsTerm]| -> Vec<TermEntry> {
            terms
                .iter()
                .map(|t| TermEntry {
                    coeff: t.coeff,
                    trace_weight: t.trace_weight,
                    state: matrix_to_data(t.state.as_matrix()),
                })
                .collect()
        };
        GibbsSpecFile {
            dim: spec.dim(),
            bound: spec.bound,
            rank_bound: spec.rank_bound,
            plus_terms: convert(spec.terms(crate::gibbs::Sign::Plus)),
            minus_terms: convert(spec.terms(crate::gibbs::Sign::Minus)),
            meta: MetaBlock {
                seed,
                ..MetaBlock::default()
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasurementSetFile {
    pub dim: usize,
    pub rank_bound: usize,
    pub operators: Vec<MatrixData>,
    #[serde(default)]
    pub meta: MetaBlock,
}

impl MeasurementSetFile {
    pub fn to_set(&self) -> Result<MeasurementSet> {
        let ops = self
            .operators
            .iter()
            .enumerate()
            .map(|(i, d)| data_to_hermitian(d, &format!("operators[{i}]")))
            .collect::<Result<Vec<_>>>()?;
        MeasurementSet::new(self.dim, ops, self.rank_bound)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrInstanceFile {
    pub dim: usize,
    pub eps: f64,
    pub phi: f64,
    pub xi: f64,
    pub projectors: Vec<MatrixData>,
    pub input_state: MatrixData,
    #[serde(default)]
    pub meta: MetaBlock,
}

impl OrInstanceFile {
    pub fn to_instance(&self) -> Result<OrInstance> {
        let projectors = self
            .projectors
            .iter()
            .enumerate()
            .map(|(i, d)| data_to_hermitian(d, &format!("projectors[{i}]")))
            .collect::<Result<Vec<_>>>()?;
        let input = data_to_density(&self.input_state, "input_state")?;
        OrInstance::new(projectors, input, self.eps, self.phi, self.xi)
    }

    pub fn from_instance(inst: &OrInstance, seed: Option<u64>) -> Self {
        OrInstanceFile {
            dim: inst.dim(),
            eps: inst.eps,
            phi: inst.phi,
            xi: inst.xi,
            projectors: inst
                .projectors
                .iter()
                .map(|p| matrix_to_data(p.as_matrix()))
                .collect(),
            input_state: matrix_to_data(inst.input_state.as_matrix()),
            meta: MetaBlock {
                seed,
                ..MetaBlock::default()
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateFile {
    pub dim: usize,
    pub matrix: MatrixData,
    #[serde(default)]
    pub meta: MetaBlock,
}

impl StateFile {
    pub fn to_state(&self) -> Result<DensityMatrix> {
        data_to_density(&self.matrix, "matrix")
    }

    pub fn from_state(state: &DensityMatrix, seed: Option<u64>) -> Self {
        StateFile {
            dim: state.dim(),
            matrix: matrix_to_data(state.as_matrix()),
            meta: MetaBlock {
                seed,
                ..MetaBlock::default()
            },
        }
    }
}

/// Any instance document, dispatched by the `kind` tag.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InstanceFile {
    Sdp(SdpFile),
    GibbsSpec(GibbsSpecFile),
    MeasurementSet(MeasurementSetFile),
    OrInstance(OrInstanceFile),
    State(StateFile),
}

impl InstanceFile {
    pub fn kind(&self) -> &'static str {
        match self {
            InstanceFile::Sdp(_) => "sdp",
            InstanceFile::GibbsSpec(_) => "gibbs-spec",
            InstanceFile::MeasurementSet(_) => "measurement-set",
            InstanceFile::OrInstance(_) => "or-instance",
            InstanceFile::State(_) => "state",
        }
    }

    pub fn expect_sdp(&self) -> Result<&SdpFile> {
        match self {
            InstanceFile::Sdp(f) => Ok(f),
            other => Err(Error::Usage(format!(
                "expected kind \"sdp\", found \"{}\"",
                other.kind()
            ))),
        }
    }

    pub fn expect_gibbs(&self) -> Result<&GibbsSpecFile> {
        match self {
            InstanceFile::GibbsSpec(f) => Ok(f),
            other => Err(Error::Usage(format!(
                "expected kind \"gibbs-spec\", found \"{}\"",
                other.kind()
            ))),
        }
    }

    pub fn expect_measurements(&self) -> Result<&MeasurementSetFile> {
        match self {
            InstanceFile::MeasurementSet(f) => Ok(f),
            other => Err(Error::Usage(format!(
                "expected kind \"measurement-set\", found \"{}\"",
                other.kind()
            ))),
        }
    }

    pub fn expect_or(&self) -> Result<&OrInstanceFile> {
        match self {
            InstanceFile::OrInstance(f) => Ok(f),
            other => Err(Error::Usage(format!(
                "expected kind \"or-instance\", found \"{}\"",
                other.kind()
            ))),
        }
    }

    pub fn expect_state(&self) -> Result<&StateFile> {
        match self {
            InstanceFile::State(f) => Ok(f),
            other => Err(Error::Usage(format!(
                "expected kind \"state\", found \"{}\"",
                other.kind()
            ))),
        }
    }
}

pub fn to_json_string(file: &InstanceFile) -> Result<String> {
    let mut s = serde_json::to_string_pretty(file)?;
    s.push('\n');
    Ok(s)
}

pub fn load(path: &Path) -> Result<InstanceFile> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save(path: &Path, file: &InstanceFile) -> Result<()> {
    std::fs::write(path, to_json_string(file)?)?;
    Ok(())
}

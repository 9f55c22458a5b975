//! JSON input of raw quantum objects. A complex number is `[re, im]`, a
//! vector an array of complex numbers, a matrix an array of rows.

use num_complex::Complex64;
use serde::Deserialize;

use super::{CMatrix, DensityMatrix, Povm, SourceState, StateVector};
use crate::error::{Error, Result};

type RawMatrix = Vec<Vec<[f64; 2]>>;

/// `{"dims": [2, 2], "amplitudes": [...]}` or `{"dims": [2, 2], "density": [[...]]}`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateDoc {
    dims: Vec<usize>,
    #[serde(default)]
    amplitudes: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    density: Option<RawMatrix>,
}

/// `{"effects": [matrix, ...]}`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PovmDoc {
    effects: Vec<RawMatrix>,
}

fn matrix(raw: &RawMatrix) -> Result<CMatrix> {
    let n = raw.len();
    if raw.iter().any(|row| row.len() != n) {
        return Err(Error::Dimension("raw matrix is not square".into()));
    }
    Ok(CMatrix::from_fn(n, n, |i, j| Complex64::new(raw[i][j][0], raw[i][j][1])))
}

pub fn parse_state(text: &str) -> Result<SourceState> {
    let doc: StateDoc = serde_json::from_str(text)?;
    match (doc.amplitudes, doc.density) {
        (Some(a), None) => Ok(StateVector::new(
            a.iter().map(|z| Complex64::new(z[0], z[1])).collect(),
            doc.dims,
        )?
        .into()),
        (None, Some(m)) => Ok(DensityMatrix::new(matrix(&m)?, doc.dims)?.into()),
        _ => Err(Error::Quantum(
            "state file needs exactly one of `amplitudes` or `density`".into(),
        )),
    }
}

pub fn parse_povm(text: &str) -> Result<Povm> {
    let doc: PovmDoc = serde_json::from_str(text)?;
    Povm::new(doc.effects.iter().map(matrix).collect::<Result<Vec<_>>>()?)
}

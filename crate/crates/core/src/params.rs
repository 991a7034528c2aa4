//! Flat parameter storage with named 2-D tensor views.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::attn_net::NetKind;
use crate::numerics::{Matrix, Rng};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Builds a contiguous layout one tensor at a time.
#[derive(Debug, Default)]
pub(crate) struct LayoutBuilder {
    specs: Vec<TensorSpec>,
    next: usize,
}

impl LayoutBuilder {
    pub(crate) fn push(&mut self, name: &str, rows: usize, cols: usize) -> usize {
        let offset = self.next;
        self.specs.push(TensorSpec {
            name: name.to_string(),
            rows,
            cols,
            offset,
        });
        self.next += rows * cols;
        offset
    }

    pub(crate) fn finish(self) -> (Vec<TensorSpec>, usize) {
        (self.specs, self.next)
    }
}

/// How a freshly built tensor is filled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Init {
    Zeros,
    Ones,
    /// Uniform in `±1/sqrt(fan_in)`.
    FanIn(usize),
    /// `FanIn` shrunk by a factor, for policy output layers.
    ScaledFanIn(usize, f64),
}

/// Policy outputs start close to zero mean and unit variance.
pub(crate) fn output_init(kind: NetKind, fan_in: usize) -> Init {
    match kind {
        NetKind::Policy => Init::ScaledFanIn(fan_in, 0.01),
        NetKind::Value => Init::FanIn(fan_in),
    }
}

pub(crate) fn fill(values: &mut [f64], init: Init, rng: &mut Rng) {
    match init {
        Init::Zeros => values.fill(0.0),
        Init::Ones => values.fill(1.0),
        Init::FanIn(fan_in) => fill(values, Init::ScaledFanIn(fan_in, 1.0), rng),
        Init::ScaledFanIn(fan_in, scale) => {
            let bound = scale / (fan_in.max(1) as f64).sqrt();
            for v in values {
                *v = rng.uniform_in(-bound, bound);
            }
        }
    }
}

/// Named tensors, each a row-major 2-D block of one flat vector.
pub(crate) fn tensor_matrix(specs: &[TensorSpec], values: &[f64], name: &str) -> Option<Matrix> {
    let spec = specs.iter().find(|s| s.name == name)?;
    Some(
        Matrix::from_vec(spec.rows, spec.cols, values[spec.range()].to_vec())
            .expect("tensor spec matches its own length"),
    )
}

pub(crate) fn to_nested(specs: &[TensorSpec], values: &[f64]) -> Vec<(String, Vec<Vec<f64>>)> {
    specs
        .iter()
        .map(|s| {
            let block = &values[s.range()];
            let rows = block.chunks(s.cols.max(1)).map(<[f64]>::to_vec).collect();
            (s.name.clone(), rows)
        })
        .collect()
}

pub(crate) fn from_nested(
    specs: &[TensorSpec],
    total: usize,
    tensors: &[(String, Vec<Vec<f64>>)],
) -> Result<Vec<f64>> {
    if tensors.len() != specs.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {}",
            specs.len(),
            tensors.len()
        )));
    }
    let mut values = vec![0.0; total];
    for spec in specs {
        let (_, rows) = tensors
            .iter()
            .find(|(name, _)| *name == spec.name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{}`", spec.name)))?;
        if rows.len() != spec.rows || rows.iter().any(|r| r.len() != spec.cols) {
            let got_cols = rows.first().map_or(0, Vec::len);
            return Err(Error::Checkpoint(format!(
                "tensor `{}` should be {}x{} but is {}x{}",
                spec.name,
                spec.rows,
                spec.cols,
                rows.len(),
                got_cols
            )));
        }
        let dst = &mut values[spec.range()];
        for (chunk, row) in dst.chunks_mut(spec.cols.max(1)).zip(rows) {
            chunk.copy_from_slice(row);
        }
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Checkpoint(format!("non-finite parameter at index {i}")));
    }
    Ok(values)
}

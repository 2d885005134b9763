//! Named parameter tensors as they appear in checkpoint documents.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Mlp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Tensor {
    Scalar(f64),
    Vector(Vec<f64>),
    /// Row-major nested rows.
    Matrix(Vec<Vec<f64>>),
}

pub type TensorMap = BTreeMap<String, Tensor>;

impl Tensor {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Tensor::Matrix(m.row_iter().map(|r| r.iter().copied().collect()).collect())
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        Tensor::Vector(v.as_slice().to_vec())
    }
}

fn malformed(name: &str, why: &str) -> Error {
    Error::Malformed {
        format: "checkpoint",
        reason: format!("tensor {name}: {why}"),
    }
}

fn lookup<'a>(src: &'a TensorMap, name: &str) -> Result<&'a Tensor> {
    src.get(name).ok_or_else(|| malformed(name, "missing"))
}

pub fn load_matrix(src: &TensorMap, name: &str, target: &mut DMatrix<f64>) -> Result<()> {
    match lookup(src, name)? {
        Tensor::Matrix(rows) => {
            let (nr, nc) = target.shape();
            if rows.len() != nr || rows.iter().any(|r| r.len() != nc) {
                return Err(malformed(name, &format!("expected shape {nr}x{nc}")));
            }
            for (i, row) in rows.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    target[(i, j)] = *v;
                }
            }
            Ok(())
        }
        // Matrices with zero rows or columns serialize as empty vectors.
        Tensor::Vector(v) if v.is_empty() && target.is_empty() => Ok(()),
        _ => Err(malformed(name, "expected a matrix")),
    }
}

pub fn load_vector(src: &TensorMap, name: &str, target: &mut DVector<f64>) -> Result<()> {
    match lookup(src, name)? {
        Tensor::Vector(v) if v.len() == target.len() => {
            target.as_mut_slice().copy_from_slice(v);
            Ok(())
        }
        _ => Err(malformed(
            name,
            &format!("expected a vector of length {}", target.len()),
        )),
    }
}

pub fn load_scalar(src: &TensorMap, name: &str) -> Result<f64> {
    match lookup(src, name)? {
        Tensor::Scalar(v) => Ok(*v),
        _ => Err(malformed(name, "expected a scalar")),
    }
}

pub fn mlp_tensors(net: &Mlp, prefix: &str, out: &mut TensorMap) {
    for (l, layer) in net.layers.iter().enumerate() {
        out.insert(
            format!("{prefix}.{l}.weight"),
            Tensor::from_matrix(&layer.weight),
        );
        out.insert(
            format!("{prefix}.{l}.bias"),
            Tensor::from_vector(&layer.bias),
        );
    }
}

pub fn load_mlp(src: &TensorMap, prefix: &str, net: &mut Mlp) -> Result<()> {
    for (l, layer) in net.layers.iter_mut().enumerate() {
        load_matrix(src, &format!("{prefix}.{l}.weight"), &mut layer.weight)?;
        load_vector(src, &format!("{prefix}.{l}.bias"), &mut layer.bias)?;
    }
    Ok(())
}

/// Serde adapter writing a `DVector` as a plain array.
pub mod dvec {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

/// Serde adapter writing a list of `DVector`s as nested arrays.
pub mod dvec_list {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[DVector<f64>], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| x.as_slice()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DVector<f64>>, D::Error> {
        Ok(Vec::<Vec<f64>>::deserialize(d)?.into_iter().map(DVector::from_vec).collect())
    }
}

//! Model parameter bundles and elementwise bundle arithmetic.

use std::collections::BTreeMap;

use indexmap::IndexMap;
use nalgebra::DMatrix;
use thiserror::Error;

use crate::merge::{MergeOutcome, TaskMatrixSet};

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("bad magic: expected \"ISOT\", found {0:?}")]
    MagicMismatch([u8; 4]),
    #[error("unsupported ISOT version {0}")]
    VersionUnsupported(u32),
    #[error("malformed header: {0}")]
    HeaderMalformed(String),
    #[error("tensor `{name}` has unsupported dtype `{dtype}`")]
    UnsupportedDtype { name: String, dtype: String },
    #[error("payload truncated: {0}")]
    PayloadTruncated(String),
    #[error("tensor `{name}` contains a non-finite value at element {index}")]
    NonFiniteValue { name: String, index: usize },
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },
    #[error("parameter name must be non-empty")]
    EmptyName,
    #[error("duplicate parameter name `{0}`")]
    DuplicateName(String),
    #[error("parameter `{name}`: shape {left:?} does not match {right:?}")]
    ShapeMismatch {
        name: String,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("parameter name sets differ (first difference: `{0}`)")]
    NameSetMismatch(String),
    #[error("I/O failure on {path}: {source}")]
    IoFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A dense rank-1 or rank-2 f32 array stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, BundleError> {
        if shape.is_empty() || shape.len() > 2 {
            return Err(BundleError::InvalidShape {
                shape,
                reason: "only rank-1 and rank-2 tensors are supported".into(),
            });
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(BundleError::InvalidShape {
                shape,
                reason: "all extents must be at least 1".into(),
            });
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| BundleError::InvalidShape {
                shape: shape.clone(),
                reason: "element count overflows".into(),
            })?;
        if numel != data.len() {
            return Err(BundleError::InvalidShape {
                shape,
                reason: format!("expected {numel} elements, got {}", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn vector(data: Vec<f32>) -> Result<Self, BundleError> {
        Self::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, BundleError> {
        Self::new(vec![rows, cols], data)
    }

    /// Rounds a 64-bit matrix to f32, row-major.
    pub fn from_dmatrix(m: &DMatrix<f64>) -> Result<Self, BundleError> {
        let (rows, cols) = m.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(m[(i, j)] as f32);
            }
        }
        Self::matrix(rows, cols, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Widens a rank-2 tensor into a 64-bit matrix. Returns `None` for vectors.
    pub fn to_dmatrix(&self) -> Option<DMatrix<f64>> {
        match *self.shape.as_slice() {
            [rows, cols] => Some(DMatrix::from_row_iterator(
                rows,
                cols,
                self.data.iter().map(|&v| f64::from(v)),
            )),
            _ => None,
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }

    pub(crate) fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }
}

/// Named, ordered collection of tensors plus free-form string metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorBundle {
    entries: IndexMap<String, Tensor>,
    meta: BTreeMap<String, String>,
}

impl TensorBundle {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a bundle, rejecting empty or repeated names.
    pub fn from_entries<I>(entries: I) -> Result<Self, BundleError>
    where
        I: IntoIterator<Item = (String, Tensor)>,
    {
        let mut bundle = Self::new();
        for (name, tensor) in entries {
            bundle.insert(name, tensor)?;
        }
        Ok(bundle)
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<(), BundleError> {
        let name = name.into();
        if name.is_empty() {
            return Err(BundleError::EmptyName);
        }
        if self.entries.contains_key(&name) {
            return Err(BundleError::DuplicateName(name));
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut BTreeMap<String, String> {
        &mut self.meta
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta.insert(key.into(), value.into());
        self
    }

    /// Checks that `other` has exactly the same names (in any order) and shapes.
    pub fn check_aligned(&self, other: &TensorBundle) -> Result<(), BundleError> {
        for (name, tensor) in self.iter() {
            let theirs = other
                .get(name)
                .ok_or_else(|| BundleError::NameSetMismatch(name.to_string()))?;
            if theirs.shape() != tensor.shape() {
                return Err(BundleError::ShapeMismatch {
                    name: name.to_string(),
                    left: tensor.shape().to_vec(),
                    right: theirs.shape().to_vec(),
                });
            }
        }
        if let Some(extra) = other.names().find(|n| self.get(n).is_none()) {
            return Err(BundleError::NameSetMismatch(extra.to_string()));
        }
        Ok(())
    }
}

/// Task matrices `θ_t − θ_0`, in the base bundle's parameter order.
///
/// Differences are taken in f64, so adding the delta back with scale 1 and
/// rounding to f32 recovers the fine-tuned value exactly.
pub fn bundle_delta(
    fine_tuned: &TensorBundle,
    base: &TensorBundle,
) -> Result<TaskMatrixSet, BundleError> {
    base.check_aligned(fine_tuned)?;
    let label = fine_tuned
        .meta()
        .get("task")
        .cloned()
        .unwrap_or_default();
    let mut set = TaskMatrixSet::new(label);
    for (name, b) in base.iter() {
        let t = &fine_tuned.entries[name];
        let diff: Vec<f64> = t
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f64::from(x) - f64::from(y))
            .collect();
        match *b.shape() {
            [rows, cols] => {
                set.matrices
                    .insert(name.to_string(), DMatrix::from_row_slice(rows, cols, &diff));
            }
            _ => {
                set.vectors.insert(name.to_string(), diff);
            }
        }
    }
    Ok(set)
}

/// Reads a bundle that already stores task matrices (no base subtraction).
pub fn bundle_as_delta(bundle: &TensorBundle) -> TaskMatrixSet {
    let label = bundle.meta().get("task").cloned().unwrap_or_default();
    let mut set = TaskMatrixSet::new(label);
    for (name, t) in bundle.iter() {
        match t.to_dmatrix() {
            Some(m) => {
                set.matrices.insert(name.to_string(), m);
            }
            None => {
                set.vectors.insert(name.to_string(), t.to_f64_vec());
            }
        }
    }
    set
}

/// Returns `θ_0 + α·Δ` for every parameter, rounded back to f32.
pub fn apply_delta(
    base: &TensorBundle,
    merged: &MergeOutcome,
    alpha: f64,
) -> Result<TensorBundle, BundleError> {
    apply_task_set(base, &merged.deltas, alpha)
}

pub(crate) fn apply_task_set(
    base: &TensorBundle,
    deltas: &TaskMatrixSet,
    alpha: f64,
) -> Result<TensorBundle, BundleError> {
    let delta_names = deltas.matrices.len() + deltas.vectors.len();
    if delta_names != base.len() {
        let missing = base
            .names()
            .find(|n| !deltas.matrices.contains_key(*n) && !deltas.vectors.contains_key(*n))
            .or_else(|| {
                deltas
                    .matrices
                    .keys()
                    .chain(deltas.vectors.keys())
                    .map(String::as_str)
                    .find(|n| base.get(n).is_none())
            })
            .unwrap_or("?");
        return Err(BundleError::NameSetMismatch(missing.to_string()));
    }
    let mut out = TensorBundle {
        entries: IndexMap::with_capacity(base.len()),
        meta: base.meta.clone(),
    };
    for (name, b) in base.iter() {
        let data: Vec<f32> = if let Some(m) = deltas.matrices.get(name) {
            let expected = b.shape().to_vec();
            if expected != [m.nrows(), m.ncols()] {
                return Err(BundleError::ShapeMismatch {
                    name: name.to_string(),
                    left: expected,
                    right: vec![m.nrows(), m.ncols()],
                });
            }
            let cols = m.ncols();
            b.data()
                .iter()
                .enumerate()
                .map(|(idx, &v)| (f64::from(v) + alpha * m[(idx / cols, idx % cols)]) as f32)
                .collect()
        } else if let Some(v) = deltas.vectors.get(name) {
            if b.rank() != 1 || v.len() != b.len() {
                return Err(BundleError::ShapeMismatch {
                    name: name.to_string(),
                    left: b.shape().to_vec(),
                    right: vec![v.len()],
                });
            }
            b.data()
                .iter()
                .zip(v)
                .map(|(&x, &d)| (f64::from(x) + alpha * d) as f32)
                .collect()
        } else {
            return Err(BundleError::NameSetMismatch(name.to_string()));
        };
        out.entries
            .insert(name.to_string(), Tensor::new(b.shape().to_vec(), data)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::merge::merge_task_arithmetic;

    fn bundle(entries: Vec<(&str, Tensor)>) -> TensorBundle {
        TensorBundle::from_entries(entries.into_iter().map(|(n, t)| (n.to_string(), t))).unwrap()
    }

    #[test]
    fn tensor_shape_validation() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 4]).is_ok());
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
        assert!(Tensor::new(vec![1, 1, 1], vec![0.0]).is_err());
        assert!(Tensor::new(vec![], vec![]).is_err());
    }

    #[test]
    fn duplicate_and_empty_names_rejected() {
        let t = Tensor::vector(vec![1.0]).unwrap();
        let err = TensorBundle::from_entries(vec![
            ("a".to_string(), t.clone()),
            ("a".to_string(), t.clone()),
        ])
        .unwrap_err();
        assert!(matches!(err, BundleError::DuplicateName(n) if n == "a"));
        assert!(matches!(
            TensorBundle::new().insert("", t),
            Err(BundleError::EmptyName)
        ));
    }

    #[test]
    fn delta_of_scaled_identity() {
        let ft = bundle(vec![
            ("w", Tensor::matrix(2, 2, vec![2.0, 0.0, 0.0, 2.0]).unwrap()),
            ("b", Tensor::vector(vec![1.0, 2.0]).unwrap()),
        ]);
        let base = bundle(vec![
            ("w", Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap()),
            ("b", Tensor::vector(vec![1.0, 1.0]).unwrap()),
        ]);
        let d = bundle_delta(&ft, &base).unwrap();
        assert_eq!(d.matrices["w"], DMatrix::identity(2, 2));
        assert_eq!(d.vectors["b"], vec![0.0, 1.0]);

        let zero = bundle_delta(&base, &base).unwrap();
        assert!(zero.matrices["w"].iter().all(|&v| v == 0.0));
        assert!(zero.vectors["b"].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn delta_rejects_misaligned_bundles() {
        let a = bundle(vec![("w", Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap())]);
        let b = bundle(vec![("w", Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap())]);
        let c = bundle(vec![("v", Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap())]);
        assert!(matches!(bundle_delta(&a, &b), Err(BundleError::ShapeMismatch { .. })));
        assert!(matches!(bundle_delta(&a, &c), Err(BundleError::NameSetMismatch(_))));
    }

    #[test]
    fn apply_delta_scaling_cases() {
        let base = bundle(vec![("w", Tensor::matrix(2, 2, vec![0.0; 4]).unwrap())]);
        let ft = bundle(vec![("w", Tensor::matrix(2, 2, vec![1.0; 4]).unwrap())]);
        let outcome = merge_task_arithmetic(&[bundle_delta(&ft, &base).unwrap()]).unwrap();
        let doubled = apply_delta(&base, &outcome, 2.0).unwrap();
        assert_eq!(doubled.get("w").unwrap().data(), &[2.0; 4]);
        let same = apply_delta(&base, &outcome, 0.0).unwrap();
        assert_eq!(same, base);
    }

    #[test]
    fn single_task_round_trip_is_exact() {
        let base = bundle(vec![
            ("w", Tensor::matrix(1, 3, vec![0.1, -3.7e-5, 12.25]).unwrap()),
            ("b", Tensor::vector(vec![1e-7, 0.3]).unwrap()),
        ]);
        let ft = bundle(vec![
            ("w", Tensor::matrix(1, 3, vec![0.1000001, 2.5, -8.0]).unwrap()),
            ("b", Tensor::vector(vec![0.7, 0.30000001]).unwrap()),
        ]);
        let outcome = merge_task_arithmetic(&[bundle_delta(&ft, &base).unwrap()]).unwrap();
        let back = apply_delta(&base, &outcome, 1.0).unwrap();
        for (name, t) in ft.iter() {
            let got = back.get(name).unwrap();
            let bits: Vec<u32> = got.data().iter().map(|v| v.to_bits()).collect();
            let want: Vec<u32> = t.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits, want, "{name}");
        }
    }
}

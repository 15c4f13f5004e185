//! Tensor-product B-splines in `L` variables.
//!
//! Weight tensors are stored flat in lexicographic order with axis 1 slowest,
//! i.e. the index of `(m_1, …, m_L)` (0-based) is
//! `((m_1 · M_2 + m_2) · M_3 + m_3) …`.

use serde::{Deserialize, Serialize};

use crate::bspline::{derivative_weights, sparse_basis, KnotVector, SparseBasis};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl WeightTensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if shape.is_empty() || len != values.len() {
            return Err(Error::shape(
                format!("{len} values for shape {shape:?}"),
                values.len(),
            ));
        }
        Ok(Self { shape, values })
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            values: vec![value; len],
        }
    }

    /// Builds a tensor from a function of the 0-based multi-index.
    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let len: usize = shape.iter().product();
        let mut idx = vec![0; shape.len()];
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            values.push(f(&idx));
            increment(&mut idx, &shape);
        }
        Self { shape, values }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn strides(&self) -> Vec<usize> {
        strides(&self.shape)
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for l in (0..shape.len().saturating_sub(1)).rev() {
        s[l] = s[l + 1] * shape[l + 1];
    }
    s
}

/// Odometer increment of a multi-index, last axis fastest.
pub(crate) fn increment(idx: &mut [usize], shape: &[usize]) {
    for l in (0..idx.len()).rev() {
        idx[l] += 1;
        if idx[l] < shape[l] {
            return;
        }
        idx[l] = 0;
    }
}

/// Per-axis sparse bases; the tensor entries are their products.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBasisSparse {
    pub axes: Vec<SparseBasis>,
    counts: Vec<usize>,
}

impl TensorBasisSparse {
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// The full Kronecker-product vector of length `Π M_ℓ`.
    pub fn to_dense(&self) -> Vec<f64> {
        let dense_axes: Vec<Vec<f64>> = self
            .axes
            .iter()
            .zip(&self.counts)
            .map(|(b, &m)| b.to_dense(m))
            .collect();
        let mut out = vec![1.0];
        for axis in &dense_axes {
            out = out
                .iter()
                .flat_map(|a| axis.iter().map(move |b| a * b))
                .collect();
        }
        out
    }

    /// Visits `(flat index, value)` for every locally supported entry.
    pub fn for_each(&self, mut f: impl FnMut(usize, f64)) {
        let strides = strides(&self.counts);
        let local: Vec<usize> = self.axes.iter().map(|b| b.values.len()).collect();
        let total: usize = local.iter().product();
        let mut idx = vec![0; local.len()];
        for _ in 0..total {
            let mut flat = 0;
            let mut value = 1.0;
            for (l, b) in self.axes.iter().enumerate() {
                flat += (b.offset - 1 + idx[l]) * strides[l];
                value *= b.values[idx[l]];
            }
            f(flat, value);
            increment(&mut idx, &local);
        }
    }
}

pub fn tensor_basis(counts: &[usize], degrees: &[usize], y: &[f64]) -> Result<TensorBasisSparse> {
    if counts.len() != degrees.len() || counts.len() != y.len() {
        return Err(Error::shape(
            format!("{} axes", counts.len()),
            format!("{} degrees and {} coordinates", degrees.len(), y.len()),
        ));
    }
    let axes = counts
        .iter()
        .zip(degrees)
        .zip(y)
        .map(|((&m, &q), &yl)| sparse_basis(&KnotVector::open_uniform(m, q)?, yl))
        .collect::<Result<Vec<_>>>()?;
    Ok(TensorBasisSparse {
        axes,
        counts: counts.to_vec(),
    })
}

pub fn tensor_dot(w: &WeightTensor, b: &TensorBasisSparse) -> Result<f64> {
    if w.shape != b.counts {
        return Err(Error::shape(format!("{:?}", b.counts), format!("{:?}", w.shape)));
    }
    let mut sum = 0.0;
    b.for_each(|flat, value| sum += w.values[flat] * value);
    Ok(sum)
}

/// Weights of `∂/∂y_ℓ` of the tensor spline `(w, M, q)`, as a tensor spline
/// with `M_ℓ - 1` functions of degree `q_ℓ - 1` along `axis` (0-based).
///
/// Returns the transformed tensor and the lowered counts and degrees.
pub fn axis_derivative_weights(
    w: &WeightTensor,
    degrees: &[usize],
    counts: &[usize],
    axis: usize,
) -> Result<(WeightTensor, Vec<usize>, Vec<usize>)> {
    if w.shape != counts || degrees.len() != counts.len() {
        return Err(Error::shape(format!("{counts:?}"), format!("{:?}", w.shape)));
    }
    if axis >= counts.len() {
        return Err(Error::IndexOutOfRange {
            index: axis + 1,
            max: counts.len(),
        });
    }
    if degrees[axis] == 0 {
        return Err(Error::DegreeTooLow {
            degree: 0,
            needed: "an axis derivative needs q >= 1 on that axis",
        });
    }
    let kv = KnotVector::open_uniform(counts[axis], degrees[axis])?;
    let mut new_counts = counts.to_vec();
    new_counts[axis] -= 1;
    let mut new_degrees = degrees.to_vec();
    new_degrees[axis] -= 1;

    // view as (outer, M_axis, inner) and transform each fiber
    let outer: usize = counts[..axis].iter().product();
    let inner: usize = counts[axis + 1..].iter().product();
    let m = counts[axis];
    let mut out = vec![0.0; outer * (m - 1) * inner];
    let mut fiber = vec![0.0; m];
    for a in 0..outer {
        for c in 0..inner {
            for (j, f) in fiber.iter_mut().enumerate() {
                *f = w.values[(a * m + j) * inner + c];
            }
            for (j, d) in derivative_weights(&kv, &fiber).into_iter().enumerate() {
                out[(a * (m - 1) + j) * inner + c] = d;
            }
        }
    }
    Ok((
        WeightTensor {
            shape: new_counts.clone(),
            values: out,
        },
        new_counts,
        new_degrees,
    ))
}

/// Evaluates the tensor spline `(w, M, q)` at `y`.
pub fn tensor_eval(w: &WeightTensor, degrees: &[usize], y: &[f64]) -> Result<f64> {
    let b = tensor_basis(w.shape(), degrees, y)?;
    tensor_dot(w, &b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bspline::greville;

    #[test]
    fn dense_example() {
        let b = tensor_basis(&[2, 2], &[1, 1], &[0.3, 0.6]).unwrap();
        let dense = b.to_dense();
        let expected = [0.28, 0.42, 0.12, 0.18];
        for (a, e) in dense.iter().zip(expected) {
            assert!((a - e).abs() < 1e-15);
        }
        let w = WeightTensor::new(vec![2, 2], vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        assert!((tensor_dot(&w, &b).unwrap() - 0.18).abs() < 1e-15);
    }

    #[test]
    fn single_axis_reduces_to_univariate() {
        let b = tensor_basis(&[7], &[3], &[0.42]).unwrap();
        let s = crate::bspline::basis_sparse(7, 3, 0.42).unwrap();
        assert_eq!(b.axes[0], s);
        assert_eq!(b.to_dense(), s.to_dense(7));
    }

    #[test]
    fn constant_tensor() {
        let w = WeightTensor::filled(vec![4, 5, 3], 2.5);
        let b = tensor_basis(&[4, 5, 3], &[2, 3, 1], &[0.1, 0.8, 0.55]).unwrap();
        assert!((tensor_dot(&w, &b).unwrap() - 2.5).abs() < 1e-14);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let w = WeightTensor::filled(vec![3, 3], 1.0);
        let b = tensor_basis(&[2, 2], &[1, 1], &[0.3, 0.6]).unwrap();
        assert!(matches!(tensor_dot(&w, &b), Err(Error::ShapeMismatch { .. })));
        assert!(WeightTensor::new(vec![2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn out_of_domain_axis() {
        assert!(matches!(
            tensor_basis(&[2, 2], &[1, 1], &[0.3, 1.2]),
            Err(Error::OutOfDomain { .. })
        ));
    }

    #[test]
    fn greville_along_first_axis_reproduces_coordinate() {
        let g = greville(6, 3).unwrap();
        let w = WeightTensor::from_fn(vec![6, 4], |m| g[m[0]]);
        for (y1, y2) in [(0.1, 0.9), (0.77, 0.2), (1.0, 0.0)] {
            let v = tensor_eval(&w, &[3, 2], &[y1, y2]).unwrap();
            assert!((v - y1).abs() < 1e-14);
        }
    }

    #[test]
    fn derivative_of_constant_is_zero() {
        let w = WeightTensor::filled(vec![4, 3], 1.7);
        let (d, m, q) = axis_derivative_weights(&w, &[2, 1], &[4, 3], 1).unwrap();
        assert_eq!(m, vec![4, 2]);
        assert_eq!(q, vec![2, 0]);
        assert!(d.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn derivative_needs_positive_axis_degree() {
        let w = WeightTensor::filled(vec![4, 3], 1.0);
        assert!(matches!(
            axis_derivative_weights(&w, &[2, 0], &[4, 3], 1),
            Err(Error::DegreeTooLow { .. })
        ));
    }

    #[test]
    fn from_fn_is_lexicographic() {
        let w = WeightTensor::from_fn(vec![2, 3], |m| (10 * m[0] + m[1]) as f64);
        assert_eq!(w.values(), &[0.0, 1.0, 2.0, 10.0, 11.0, 12.0]);
        assert_eq!(w.strides(), vec![3, 1]);
    }
}

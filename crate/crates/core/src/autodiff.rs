//! Closed-form derivatives of a model: with respect to inputs (first and
//! second order) and with respect to all raw trainable parameters.
//!
//! Input derivatives go through explicit weight transforms: the derivative
//! of each inner spline is again a spline with weights `v̄`, and the partial
//! of each outer tensor spline along an axis is a tensor spline with weights
//! `w̄`. Parameter gradients use the evaluation kernel, which carries basis
//! derivatives alongside values. Both routes are checked against each other
//! and against finite differences in the tests.

use crate::bspline::{derivative_weights, KnotVector};
use crate::dataio::{Dataset, Targets};
use crate::error::{Error, Result};
use crate::eval::{finish_inner_grad, reduce_chunks, Workspace};
use crate::model::{ExSpliNet, ParamLayout};
use crate::tensor::{axis_derivative_weights, tensor_eval, WeightTensor};
use crate::training::Loss;

/// Gradient with respect to the raw parameter vector, index-aligned with
/// [`ExSpliNet::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    values: Vec<f64>,
    layout: ParamLayout,
}

impl GradientBundle {
    pub(crate) fn new(values: Vec<f64>, layout: ParamLayout) -> Self {
        Self { values, layout }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Block for the outer weights `w^{o,t}`.
    pub fn outer(&self, o: usize, t: usize) -> &[f64] {
        &self.values[self.layout.outer_range(o, t)]
    }

    /// Block for the raw inner weights `u^{t,ℓ,d}`.
    pub fn inner_raw(&self, t: usize, l: usize, d: usize) -> &[f64] {
        &self.values[self.layout.inner_range(t, l, d)]
    }
}

/// `O × D` matrix of `∂E_o/∂x_d`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct InputJacobian {
    pub outputs: usize,
    pub inputs: usize,
    pub values: Vec<f64>,
}

impl InputJacobian {
    pub fn get(&self, o: usize, d: usize) -> f64 {
        self.values[o * self.inputs + d]
    }

    pub fn row(&self, o: usize) -> &[f64] {
        &self.values[o * self.inputs..(o + 1) * self.inputs]
    }
}

/// Precomputed derivative weights of a model for repeated input-derivative
/// queries.
#[derive(Debug, Clone)]
pub struct InputDerivatives {
    order: usize,
    inner_kv1: Vec<KnotVector>,
    inner_kv2: Vec<KnotVector>,
    /// `v̄` per `(t, ℓ, d)`.
    inner1: Vec<Vec<f64>>,
    /// `v̄̄` per `(t, ℓ, d)` (order 2 only).
    inner2: Vec<Vec<f64>>,
    /// `w̄_ℓ` per `(o, t, ℓ)` with its degrees.
    outer1: Vec<(WeightTensor, Vec<usize>)>,
    /// `w̄_{ℓk}` per `(o, t, ℓ, k)` (order 2 only).
    outer2: Vec<(WeightTensor, Vec<usize>)>,
}

impl InputDerivatives {
    /// `order` is 1 (Jacobian) or 2 (also second derivatives). Order 1 needs
    /// all degrees `>= 1`, order 2 all degrees `>= 2`.
    pub fn new(model: &ExSpliNet, order: usize) -> Result<Self> {
        let cfg = model.config();
        if !(1..=2).contains(&order) {
            return Err(Error::InvalidHyperparameter(format!(
                "input derivative order {order} not supported"
            )));
        }
        let min = cfg.min_inner_degree().min(cfg.min_outer_degree());
        if min < order {
            return Err(Error::DegreeTooLow {
                degree: min,
                needed: if order == 1 {
                    "input derivatives need all inner and outer degrees >= 1"
                } else {
                    "second input derivatives need all inner and outer degrees >= 2"
                },
            });
        }
        let levels = cfg.levels();
        let lower = |kvs: &[KnotVector]| -> Result<Vec<KnotVector>> {
            kvs.iter()
                .map(|kv| KnotVector::open_uniform(kv.count() - 1, kv.degree() - 1))
                .collect()
        };
        let inner_kv1 = lower(&model.inner_knots)?;
        let inner_kv2 = if order == 2 { lower(&inner_kv1)? } else { Vec::new() };

        let mut inner1 = Vec::new();
        let mut inner2 = Vec::new();
        for t in 0..cfg.trees {
            for l in 0..levels {
                for d in 0..cfg.inputs {
                    let d1 = derivative_weights(&model.inner_knots[l], model.v(t, l, d));
                    if order == 2 {
                        inner2.push(derivative_weights(&inner_kv1[l], &d1));
                    }
                    inner1.push(d1);
                }
            }
        }

        let mut outer1 = Vec::new();
        let mut outer2 = Vec::new();
        for o in 0..cfg.outputs {
            for t in 0..cfg.trees {
                let w = WeightTensor::new(cfg.outer_counts.clone(), model.outer(o, t).to_vec())?;
                for l in 0..levels {
                    let (w1, m1, q1) =
                        axis_derivative_weights(&w, &cfg.outer_degrees, &cfg.outer_counts, l)?;
                    if order == 2 {
                        for k in 0..levels {
                            let (w2, _, q2) = axis_derivative_weights(&w1, &q1, &m1, k)?;
                            outer2.push((w2, q2));
                        }
                    }
                    outer1.push((w1, q1));
                }
            }
        }
        Ok(Self {
            order,
            inner_kv1,
            inner_kv2,
            inner1,
            inner2,
            outer1,
            outer2,
        })
    }

    fn spline(kv: &KnotVector, w: &[f64], x: f64) -> f64 {
        let mut b = vec![0.0; kv.degree() + 1];
        let first = kv.basis_into(x, &mut b);
        b.iter().zip(&w[first..]).map(|(a, c)| a * c).sum()
    }

    /// `Ψ'` per `(ℓ, d)` and, for order 2, `Ψ''` for tree `t`.
    fn inner_derivs(&self, model: &ExSpliNet, t: usize, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let cfg = model.config();
        let (levels, dim) = (cfg.levels(), cfg.inputs);
        let mut d1 = vec![0.0; levels * dim];
        let mut d2 = vec![0.0; if self.order == 2 { levels * dim } else { 0 }];
        for l in 0..levels {
            for d in 0..dim {
                let i = (t * levels + l) * dim + d;
                d1[l * dim + d] = Self::spline(&self.inner_kv1[l], &self.inner1[i], x[d]);
                if self.order == 2 {
                    d2[l * dim + d] = Self::spline(&self.inner_kv2[l], &self.inner2[i], x[d]);
                }
            }
        }
        (d1, d2)
    }

    pub fn jacobian(&self, model: &ExSpliNet, x: &[f64]) -> Result<InputJacobian> {
        model.check_point(x)?;
        let cfg = model.config();
        let (levels, dim) = (cfg.levels(), cfg.inputs);
        let mut values = vec![0.0; cfg.outputs * dim];
        for t in 0..cfg.trees {
            let y = model.features(t, x)?;
            let (d1, _) = self.inner_derivs(model, t, x);
            for o in 0..cfg.outputs {
                for l in 0..levels {
                    let (w, q) = &self.outer1[(o * cfg.trees + t) * levels + l];
                    let phi = tensor_eval(w, q, &y)?;
                    for d in 0..dim {
                        values[o * dim + d] += phi * d1[l * dim + d];
                    }
                }
            }
        }
        Ok(InputJacobian {
            outputs: cfg.outputs,
            inputs: dim,
            values,
        })
    }

    /// `∂²E_o/∂x_d²` for every output.
    pub fn second(&self, model: &ExSpliNet, x: &[f64], d: usize) -> Result<Vec<f64>> {
        let all = self.second_all(model, x)?;
        let dim = model.config().inputs;
        if d >= dim {
            return Err(Error::IndexOutOfRange {
                index: d + 1,
                max: dim,
            });
        }
        Ok(all.chunks(dim).map(|row| row[d]).collect())
    }

    /// `Δ_x E_o` for every output.
    pub fn laplacian(&self, model: &ExSpliNet, x: &[f64]) -> Result<Vec<f64>> {
        let dim = model.config().inputs;
        Ok(self
            .second_all(model, x)?
            .chunks(dim)
            .map(|row| row.iter().sum())
            .collect())
    }

    /// `O × D` matrix of pure second derivatives.
    fn second_all(&self, model: &ExSpliNet, x: &[f64]) -> Result<Vec<f64>> {
        if self.order < 2 {
            return Err(Error::InvalidHyperparameter(
                "derivative weights were prepared for first order only".into(),
            ));
        }
        model.check_point(x)?;
        let cfg = model.config();
        let (levels, dim) = (cfg.levels(), cfg.inputs);
        let mut out = vec![0.0; cfg.outputs * dim];
        for t in 0..cfg.trees {
            let y = model.features(t, x)?;
            let (d1, d2) = self.inner_derivs(model, t, x);
            for o in 0..cfg.outputs {
                let ot = o * cfg.trees + t;
                for l in 0..levels {
                    let (w, q) = &self.outer1[ot * levels + l];
                    let phi_l = tensor_eval(w, q, &y)?;
                    for d in 0..dim {
                        out[o * dim + d] += phi_l * d2[l * dim + d];
                    }
                    for k in 0..levels {
                        let (w, q) = &self.outer2[(ot * levels + l) * levels + k];
                        let phi_lk = tensor_eval(w, q, &y)?;
                        for d in 0..dim {
                            out[o * dim + d] += phi_lk * d1[l * dim + d] * d1[k * dim + d];
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Jacobian of the outputs with respect to the inputs. Degree-1 splines
/// give right-hand derivatives.
pub fn grad_input(model: &ExSpliNet, x: &[f64]) -> Result<InputJacobian> {
    InputDerivatives::new(model, 1)?.jacobian(model, x)
}

/// `∂²E_o/∂x_d²` for every output `o`; `d` is 0-based.
pub fn second_input_derivative(model: &ExSpliNet, x: &[f64], d: usize) -> Result<Vec<f64>> {
    InputDerivatives::new(model, 2)?.second(model, x, d)
}

/// Gradient of each output with respect to the raw parameters.
pub fn grad_params(model: &ExSpliNet, x: &[f64]) -> Result<Vec<GradientBundle>> {
    model.check_point(x)?;
    let cfg = model.config();
    let mut ws = Workspace::new(model, 0, 1);
    ws.evaluate(model, x);
    let mut r = vec![0.0; cfg.outputs];
    (0..cfg.outputs)
        .map(|o| {
            r.fill(0.0);
            r[o] = 1.0;
            let mut g = vec![0.0; model.param_count()];
            ws.add_value_grad(model, &r, &mut g);
            finish_inner_grad(model, &mut g);
            Ok(GradientBundle::new(g, model.layout().clone()))
        })
        .collect()
}

/// Gradient of the empirical risk over the whole dataset.
pub fn risk_grad(model: &ExSpliNet, data: &Dataset, loss: Loss) -> Result<GradientBundle> {
    Ok(risk_and_grad(model, data, None, loss)?.1)
}

/// Empirical risk and its gradient over `indices` (all rows when `None`),
/// summed in a fixed order.
pub fn risk_and_grad(
    model: &ExSpliNet,
    data: &Dataset,
    indices: Option<&[usize]>,
    loss: Loss,
) -> Result<(f64, GradientBundle)> {
    loss.check(data.targets(), model.config().outputs)?;
    if data.dim() != model.config().inputs {
        return Err(Error::shape(
            format!("{} input features", model.config().inputs),
            data.dim(),
        ));
    }
    let k = indices.map_or(data.len(), <[usize]>::len);
    if k == 0 {
        return Err(Error::EmptyDataset);
    }
    let row_of = |i: usize| indices.map_or(i, |ix| ix[i]);
    for i in 0..k {
        model.check_point(data.row(row_of(i)))?;
    }
    let outputs = model.config().outputs;
    let (sum, mut g) = reduce_chunks(model, 0, 1, k, model.param_count(), |ws, i, g| {
        let row = row_of(i);
        ws.evaluate(model, data.row(row));
        let mut out = [0.0; 16];
        let mut heap;
        let out: &mut [f64] = if outputs <= 16 {
            &mut out[..outputs]
        } else {
            heap = vec![0.0; outputs];
            &mut heap
        };
        ws.outputs(out);
        let mut s = 0.0;
        match data.targets() {
            Targets::Values { values, .. } => {
                for o in 0..outputs {
                    let e = out[o] - values[row * outputs + o];
                    s += e * e;
                    out[o] = 2.0 * e;
                }
            }
            Targets::Labels { labels, .. } => {
                for o in 0..outputs {
                    let target = if labels[row] == o { 1.0 } else { 0.0 };
                    let e = out[o] - target;
                    s += e * e;
                    out[o] = 2.0 * e;
                }
            }
        }
        ws.add_value_grad(model, out, g);
        s
    });
    let scale = 1.0 / k as f64;
    for v in g.iter_mut() {
        *v *= scale;
    }
    finish_inner_grad(model, &mut g);
    Ok((sum * scale, GradientBundle::new(g, model.layout().clone())))
}

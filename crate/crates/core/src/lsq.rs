//! Least-squares fitting of the outer weights with the inner weights held
//! fixed. The model is linear in the outer weights, so this is an ordinary
//! linear least-squares problem, solved through the normal equations.

use nalgebra::{DMatrix, DVector};

use crate::dataio::{Dataset, Targets};
use crate::error::{Error, Result};
use crate::model::ExSpliNet;
use crate::tensor::tensor_basis;

/// Refits every `w^{o,t}` to minimize `Σ_k (E_o(x^k) - y^k_o)²`.
///
/// `ridge` adds `ridge · I` to the normal matrix; zero gives the plain
/// least-squares solution and fails if the design is rank deficient.
pub fn fit_outer_least_squares(model: &ExSpliNet, data: &Dataset, ridge: f64) -> Result<ExSpliNet> {
    let cfg = model.config();
    let Targets::Values { outputs, values } = data.targets() else {
        return Err(Error::shape("real-valued targets", "class labels"));
    };
    if *outputs != cfg.outputs || data.dim() != cfg.inputs {
        return Err(Error::shape(
            format!("{} inputs and {} outputs", cfg.inputs, cfg.outputs),
            format!("{} inputs and {outputs} outputs", data.dim()),
        ));
    }
    let per_tree = model.layout().outer_size();
    let n = cfg.trees * per_tree;
    let mut ata = DMatrix::<f64>::zeros(n, n);
    let mut atb = DMatrix::<f64>::zeros(n, cfg.outputs);
    let mut cols: Vec<(usize, f64)> = Vec::new();
    for k in 0..data.len() {
        let x = data.row(k);
        model.check_point(x)?;
        cols.clear();
        for t in 0..cfg.trees {
            let y = model.features(t, x)?;
            let b = tensor_basis(&cfg.outer_counts, &cfg.outer_degrees, &y)?;
            b.for_each(|flat, v| {
                if v != 0.0 {
                    cols.push((t * per_tree + flat, v));
                }
            });
        }
        for &(i, a) in &cols {
            for &(j, b) in &cols {
                ata[(i, j)] += a * b;
            }
            for o in 0..cfg.outputs {
                atb[(i, o)] += a * values[k * cfg.outputs + o];
            }
        }
    }
    for i in 0..n {
        ata[(i, i)] += ridge;
    }
    let chol = ata.cholesky().ok_or_else(|| {
        Error::InvalidCoefficients(
            "normal equations are singular; add samples or a ridge term".into(),
        )
    })?;
    let mut outer = vec![0.0; model.layout().outer_len()];
    for o in 0..cfg.outputs {
        let rhs: DVector<f64> = atb.column(o).into_owned();
        let sol = chol.solve(&rhs);
        for t in 0..cfg.trees {
            let range = model.layout().outer_range(o, t);
            let base = range.start - model.layout().inner_len();
            for m in 0..per_tree {
                outer[base + m] = sol[t * per_tree + m];
            }
        }
    }
    model.clone().with_outer(outer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_identity, ModelConfig};

    #[test]
    fn recovers_a_representable_function() {
        // bilinear target is exact in the tensor space with q = 1
        let cfg = ModelConfig::uniform(2, 1, 1, 2, 2, 4, 1, 1);
        let m = ExSpliNet::init_random(cfg.clone(), 0)
            .unwrap()
            .with_inner(init_identity(&cfg).unwrap())
            .unwrap();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..12 {
            for j in 0..12 {
                let (a, b) = (i as f64 / 11.0, j as f64 / 11.0);
                xs.extend([a, b]);
                ys.push(1.0 + 2.0 * a - b + 0.5 * a * b);
            }
        }
        let ds = Dataset::new(xs, 2, Targets::Values { outputs: 1, values: ys }).unwrap();
        let fit = fit_outer_least_squares(&m, &ds, 0.0).unwrap();
        let v = fit.forward(&[0.37, 0.81]).unwrap()[0];
        assert!((v - (1.0 + 0.74 - 0.81 + 0.5 * 0.37 * 0.81)).abs() < 1e-10);
    }

    #[test]
    fn singular_design_is_reported() {
        let cfg = ModelConfig::uniform(1, 1, 1, 1, 2, 6, 1, 1);
        let m = ExSpliNet::init_random(cfg.clone(), 0)
            .unwrap()
            .with_inner(init_identity(&cfg).unwrap())
            .unwrap();
        let ds = Dataset::new(vec![0.1, 0.15], 1, Targets::Values { outputs: 1, values: vec![1.0, 2.0] })
            .unwrap();
        assert!(fit_outer_least_squares(&m, &ds, 0.0).is_err());
        assert!(fit_outer_least_squares(&m, &ds, 1e-8).is_ok());
    }
}

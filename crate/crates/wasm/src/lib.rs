//! Browser bindings for the demo page in `www/`.
//!
//! Each operation has a plain Rust function (tested natively) and a thin
//! `#[wasm_bindgen]` wrapper. Arrays cross the boundary as flat
//! `Float64Array`s in the layouts documented on each function.

use std::f64::consts::PI;

use exsplinet::pinn::{evaluation_grid, DifferentialProblem};
use exsplinet::{
    basis_dense, fit_outer_least_squares, init_identity, open_uniform_knots, pinn_train,
    sample_collocation, Dataset, ExSpliNet, ModelConfig, PinnConfig, Targets,
};
use wasm_bindgen::prelude::*;

/// Basis table over `samples` uniform points, row-major with `n + 1`
/// columns per row: `x, B_1(x), …, B_n(x)`.
pub fn basis_table(n: usize, p: usize, samples: usize) -> exsplinet::Result<Vec<f64>> {
    let knots = open_uniform_knots(n, p)?;
    let mut out = Vec::with_capacity(samples * (n + 1));
    for s in 0..samples {
        let x = s as f64 / (samples.max(2) - 1) as f64;
        out.push(x);
        out.extend(basis_dense(&knots, x)?);
    }
    Ok(out)
}

/// Target surfaces offered by the fit explorer.
pub fn surface(name: &str) -> Option<fn(f64, f64) -> f64> {
    match name {
        "wave" => Some(|x, y| (2.0 * PI * x).sin() * (2.0 * PI * y).cos()),
        "peak" => Some(|x, y| (-20.0 * ((x - 0.5).powi(2) + (y - 0.5).powi(2))).exp()),
        "ridge" => Some(|x, y| (x - y).abs()),
        _ => None,
    }
}

#[derive(Debug, Clone)]
pub struct Fit {
    /// Model values on a `view × view` node grid, row `i` at `x = i/(view-1)`.
    pub predicted: Vec<f64>,
    pub exact: Vec<f64>,
    pub rms: f64,
    pub params: usize,
}

/// Least-squares tensor spline of degree `q` with `k` intervals per axis
/// (identity inner features), fitted on a 64 × 64 cell-centred grid.
pub fn fit_surface(name: &str, k: usize, q: usize, view: usize) -> Result<Fit, String> {
    let f = surface(name).ok_or_else(|| format!("unknown surface `{name}`"))?;
    if k == 0 || view < 2 {
        return Err("need at least one interval and a 2-point view".into());
    }
    let g = 64;
    let mut xs = Vec::with_capacity(2 * g * g);
    let mut ys = Vec::with_capacity(g * g);
    for i in 0..g {
        for j in 0..g {
            let (a, b) = ((i as f64 + 0.5) / g as f64, (j as f64 + 0.5) / g as f64);
            xs.extend([a, b]);
            ys.push(f(a, b));
        }
    }
    let err = |e: exsplinet::Error| e.to_string();
    let data = Dataset::new(xs, 2, Targets::Values { outputs: 1, values: ys }).map_err(err)?;
    let cfg = ModelConfig::uniform(2, 1, 1, 2, 2, k + q, 1, q);
    let model = ExSpliNet::init_random(cfg.clone(), 0)
        .and_then(|m| m.with_inner(init_identity(&cfg)?))
        .map_err(err)?;
    let fit = fit_outer_least_squares(&model, &data, 0.0).map_err(err)?;
    let mut predicted = Vec::with_capacity(view * view);
    let mut exact = Vec::with_capacity(view * view);
    let mut sq = 0.0;
    for i in 0..view {
        for j in 0..view {
            let (a, b) = (i as f64 / (view - 1) as f64, j as f64 / (view - 1) as f64);
            let v = fit.forward(&[a, b]).map_err(err)?[0];
            let e = f(a, b);
            sq += (v - e) * (v - e);
            predicted.push(v);
            exact.push(e);
        }
    }
    Ok(Fit {
        predicted,
        exact,
        rms: (sq / (view * view) as f64).sqrt(),
        params: fit.param_count(),
    })
}

#[derive(Debug, Clone)]
pub struct Solve {
    pub x: Vec<f64>,
    pub predicted: Vec<f64>,
    pub exact: Vec<f64>,
    /// Differential risk before each epoch.
    pub history: Vec<f64>,
    pub mse: f64,
}

/// `-u'' = 4π² sin(2πx)` with zero boundary values, solved with a small
/// cubic network (`trees` trees, two levels, N = 5, M = 6).
pub fn solve_poisson(
    trees: usize,
    interior: usize,
    epochs: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<Solve, String> {
    let err = |e: exsplinet::Error| e.to_string();
    let problem = DifferentialProblem::exp3();
    let colloc = sample_collocation(&problem, interior, 2, seed).map_err(err)?;
    let model = ExSpliNet::init_random(ModelConfig::uniform(1, 1, trees, 2, 5, 6, 3, 3), seed).map_err(err)?;
    let config = PinnConfig {
        epochs,
        learning_rate,
        ..PinnConfig::default()
    };
    let (model, report) = pinn_train(model, &problem, &colloc, &config, |_, _| {}).map_err(err)?;
    let x = evaluation_grid(&problem);
    let predicted = model.forward_batch(&x).map_err(err)?;
    let exact = x.iter().map(|&z| (2.0 * PI * z).sin()).collect();
    Ok(Solve {
        x,
        predicted,
        exact,
        history: report.history,
        mse: report.mse.unwrap_or(f64::NAN),
    })
}

#[wasm_bindgen]
pub fn basis_curves(n: usize, p: usize, samples: usize) -> Result<Vec<f64>, JsError> {
    basis_table(n, p, samples).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub struct FitView(Fit);

#[wasm_bindgen]
impl FitView {
    pub fn predicted(&self) -> Vec<f64> {
        self.0.predicted.clone()
    }
    pub fn exact(&self) -> Vec<f64> {
        self.0.exact.clone()
    }
    pub fn rms(&self) -> f64 {
        self.0.rms
    }
    pub fn params(&self) -> usize {
        self.0.params
    }
}

#[wasm_bindgen]
pub fn tensor_fit(name: &str, k: usize, q: usize, view: usize) -> Result<FitView, JsError> {
    fit_surface(name, k, q, view).map(FitView).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub struct SolveView(Solve);

#[wasm_bindgen]
impl SolveView {
    pub fn x(&self) -> Vec<f64> {
        self.0.x.clone()
    }
    pub fn predicted(&self) -> Vec<f64> {
        self.0.predicted.clone()
    }
    pub fn exact(&self) -> Vec<f64> {
        self.0.exact.clone()
    }
    pub fn history(&self) -> Vec<f64> {
        self.0.history.clone()
    }
    pub fn mse(&self) -> f64 {
        self.0.mse
    }
}

#[wasm_bindgen]
pub fn pinn_1d(
    trees: usize,
    interior: usize,
    epochs: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<SolveView, JsError> {
    solve_poisson(trees, interior, epochs, learning_rate, seed)
        .map(SolveView)
        .map_err(|e| JsError::new(&e))
}

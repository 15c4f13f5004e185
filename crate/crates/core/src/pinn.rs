//! Physics-informed training for `-Δu = f` in `Ω`, `u = g` on `∂Ω`.
//!
//! Problems are posed in physical coordinates `x` and solved in unit
//! coordinates `z ∈ [0,1]^D` through the affine map `x = origin + s·z` with a
//! single scale `s`. Since `Δ_z = s² Δ_x`, the interior residual in unit
//! coordinates is `-Δ_z û - s² f(x(z))`; all risks reported here are in unit
//! coordinates.

use std::f64::consts::PI;
use std::sync::Arc;
use web_time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::InputDerivatives;
use crate::error::{Error, Result};
use crate::eval::{finish_inner_grad, reduce_chunks};
use crate::model::ExSpliNet;
use crate::training::Adam;

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Egg-shaped region `(x/a)² + (y / (b (1 + k x/a)))² <= 1` around `center`,
/// with boundary `x = a cos θ`, `y = b (1 + k cos θ) sin θ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EggDomain {
    pub a: f64,
    pub b: f64,
    pub k: f64,
    pub center: [f64; 2],
}

impl Default for EggDomain {
    fn default() -> Self {
        Self {
            a: 1.0,
            b: 0.8,
            k: 0.25,
            center: [0.0, 0.0],
        }
    }
}

impl EggDomain {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.b > 0.0 && self.k.abs() < 1.0) {
            return Err(Error::InvalidHyperparameter(format!(
                "egg domain needs a > 0, b > 0 and |k| < 1, got a = {}, b = {}, k = {}",
                self.a, self.b, self.k
            )));
        }
        Ok(())
    }

    /// Level-set function, negative inside.
    pub fn phi(&self, p: &[f64]) -> f64 {
        let x = (p[0] - self.center[0]) / self.a;
        let y = (p[1] - self.center[1]) / (self.b * (1.0 + self.k * x));
        x * x + y * y - 1.0
    }

    pub fn boundary_point(&self, theta: f64) -> [f64; 2] {
        let c = theta.cos();
        [
            self.center[0] + self.a * c,
            self.center[1] + self.b * (1.0 + self.k * c) * theta.sin(),
        ]
    }

    /// Axis-aligned bounding box `(lo, hi)`.
    pub fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        // dense scan of the boundary plus a margin for the sampling gap
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for i in 0..4096 {
            let p = self.boundary_point(2.0 * PI * i as f64 / 4096.0);
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let pad = 1e-3 * (self.a + self.b);
        ([lo[0] - pad, lo[1] - pad], [hi[0] + pad, hi[1] + pad])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    /// The unit interval itself.
    Interval,
    Egg(EggDomain),
}

/// `x = origin + scale · z`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AffineMap {
    pub origin: Vec<f64>,
    pub scale: f64,
}

impl AffineMap {
    pub fn to_physical(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.origin)
            .map(|(zi, o)| o + self.scale * zi)
            .collect()
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.origin)
            .map(|(xi, o)| ((xi - o) / self.scale).clamp(0.0, 1.0))
            .collect()
    }
}

/// A Poisson problem with Dirichlet data in physical coordinates.
#[derive(Clone)]
pub struct DifferentialProblem {
    pub name: String,
    pub dim: usize,
    pub domain: Domain,
    pub map: AffineMap,
    pub rhs: ScalarFn,
    pub boundary: ScalarFn,
    pub exact: Option<ScalarFn>,
}

impl std::fmt::Debug for DifferentialProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DifferentialProblem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("domain", &self.domain)
            .field("map", &self.map)
            .finish_non_exhaustive()
    }
}

impl DifferentialProblem {
    /// `-u'' = 4π² sin(2πx)` on `[0, 1]`, `u(0) = u(1) = 0`; exact
    /// solution `sin(2πx)`.
    pub fn exp3() -> Self {
        let exact: ScalarFn = Arc::new(|x: &[f64]| (2.0 * PI * x[0]).sin());
        Self {
            name: "exp3".into(),
            dim: 1,
            domain: Domain::Interval,
            map: AffineMap {
                origin: vec![0.0],
                scale: 1.0,
            },
            rhs: Arc::new(|x: &[f64]| 4.0 * PI * PI * (2.0 * PI * x[0]).sin()),
            boundary: exact.clone(),
            exact: Some(exact),
        }
    }

    /// Manufactured solution `u = sin(π(x² + y²))` on an egg domain, with
    /// `f = -Δu` and `g = u`.
    pub fn exp4(egg: EggDomain) -> Result<Self> {
        egg.validate()?;
        let (lo, hi) = egg.bounding_box();
        let scale = (hi[0] - lo[0]).max(hi[1] - lo[1]);
        // center the shorter side inside the unit square
        let origin = vec![
            lo[0] - (scale - (hi[0] - lo[0])) / 2.0,
            lo[1] - (scale - (hi[1] - lo[1])) / 2.0,
        ];
        let exact: ScalarFn = Arc::new(|x: &[f64]| (PI * (x[0] * x[0] + x[1] * x[1])).sin());
        Ok(Self {
            name: "exp4".into(),
            dim: 2,
            domain: Domain::Egg(egg),
            map: AffineMap { origin, scale },
            rhs: Arc::new(|x: &[f64]| {
                let rho = x[0] * x[0] + x[1] * x[1];
                4.0 * PI * PI * rho * (PI * rho).sin() - 4.0 * PI * (PI * rho).cos()
            }),
            boundary: exact.clone(),
            exact: Some(exact),
        })
    }

    /// Built-in problem by name (`exp3`, `exp4`).
    pub fn builtin(name: &str, egg: Option<EggDomain>) -> Result<Self> {
        match name {
            "exp3" => Ok(Self::exp3()),
            "exp4" => Self::exp4(egg.unwrap_or_default()),
            other => Err(Error::UnknownName(other.to_string())),
        }
    }

    /// `s² f(x(z))`.
    pub fn unit_rhs(&self, z: &[f64]) -> f64 {
        self.map.scale * self.map.scale * (self.rhs)(&self.map.to_physical(z))
    }

    pub fn unit_boundary(&self, z: &[f64]) -> f64 {
        (self.boundary)(&self.map.to_physical(z))
    }

    pub fn unit_exact(&self, z: &[f64]) -> Option<f64> {
        self.exact.as_ref().map(|u| u(&self.map.to_physical(z)))
    }

    /// Strict interior test in unit coordinates.
    pub fn contains(&self, z: &[f64]) -> bool {
        match &self.domain {
            Domain::Interval => z[0] > 0.0 && z[0] < 1.0,
            Domain::Egg(egg) => egg.phi(&self.map.to_physical(z)) < 0.0,
        }
    }
}

/// Collocation points in unit coordinates, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationSet {
    pub dim: usize,
    pub interior: Vec<f64>,
    pub boundary: Vec<f64>,
}

impl CollocationSet {
    pub fn interior_len(&self) -> usize {
        self.interior.len() / self.dim
    }

    pub fn boundary_len(&self) -> usize {
        self.boundary.len() / self.dim
    }
}

const STALL_DRAWS: u64 = 1_000_000;
const STALL_RATE: f64 = 1e-3;

/// Interior points by seeded rejection sampling on the unit box, boundary
/// points by uniform sampling of the boundary parameter. On an interval the
/// boundary points alternate between 0 and 1.
pub fn sample_collocation(
    problem: &DifferentialProblem,
    k_interior: usize,
    k_boundary: usize,
    seed: u64,
) -> Result<CollocationSet> {
    if k_interior == 0 || k_boundary == 0 {
        return Err(Error::InvalidHyperparameter(
            "need at least one interior and one boundary point".into(),
        ));
    }
    let dim = problem.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut interior = Vec::with_capacity(k_interior * dim);
    let mut draws: u64 = 0;
    let mut accepted: u64 = 0;
    let mut z = vec![0.0; dim];
    while (accepted as usize) < k_interior {
        for zi in z.iter_mut() {
            *zi = rng.random();
        }
        draws += 1;
        if problem.contains(&z) {
            interior.extend_from_slice(&z);
            accepted += 1;
        }
        if draws >= STALL_DRAWS && (accepted as f64) < STALL_RATE * draws as f64 {
            return Err(Error::RejectionStall {
                rate: accepted as f64 / draws as f64,
                draws,
            });
        }
    }
    let boundary = match &problem.domain {
        Domain::Interval => (0..k_boundary).map(|i| (i % 2) as f64).collect(),
        Domain::Egg(egg) => (0..k_boundary)
            .flat_map(|_| {
                let theta = rng.random_range(0.0..2.0 * PI);
                problem.map.to_unit(&egg.boundary_point(theta))
            })
            .collect(),
    };
    Ok(CollocationSet {
        dim,
        interior,
        boundary,
    })
}

/// `(E_i + λ E_b, E_i, E_b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskParts {
    pub total: f64,
    pub interior: f64,
    pub boundary: f64,
}

fn check_model(model: &ExSpliNet, problem: &DifferentialProblem) -> Result<()> {
    let cfg = model.config();
    let min = cfg.min_inner_degree().min(cfg.min_outer_degree());
    if min < 3 {
        return Err(Error::DegreeTooLow {
            degree: min,
            needed: "PINN training needs all inner and outer degrees >= 3 for C² splines",
        });
    }
    if cfg.outputs != 1 || cfg.inputs != problem.dim {
        return Err(Error::ConfigMismatch(format!(
            "PINN model needs D = {} and O = 1, got D = {} and O = {}",
            problem.dim, cfg.inputs, cfg.outputs
        )));
    }
    Ok(())
}

/// Differential empirical risk, computed through the derivative-weight
/// route of [`InputDerivatives`].
pub fn differential_risk(
    model: &ExSpliNet,
    problem: &DifferentialProblem,
    colloc: &CollocationSet,
    lambda: f64,
) -> Result<RiskParts> {
    check_model(model, problem)?;
    let prep = InputDerivatives::new(model, 2)?;
    let dim = problem.dim;
    let mut ei = 0.0;
    for z in colloc.interior.chunks(dim) {
        let lap = prep.laplacian(model, z)?[0];
        let r = -lap - problem.unit_rhs(z);
        ei += r * r;
    }
    let mut eb = 0.0;
    for z in colloc.boundary.chunks(dim) {
        let e = model.forward(z)?[0] - problem.unit_boundary(z);
        eb += e * e;
    }
    let ei = ei / colloc.interior_len() as f64;
    let eb = eb / colloc.boundary_len() as f64;
    Ok(RiskParts {
        total: ei + lambda * eb,
        interior: ei,
        boundary: eb,
    })
}

struct Targets {
    rhs: Vec<f64>,
    bc: Vec<f64>,
}

fn targets(problem: &DifferentialProblem, colloc: &CollocationSet) -> Targets {
    let dim = problem.dim;
    Targets {
        rhs: colloc.interior.chunks(dim).map(|z| problem.unit_rhs(z)).collect(),
        bc: colloc.boundary.chunks(dim).map(|z| problem.unit_boundary(z)).collect(),
    }
}

fn risk_and_grad(
    model: &ExSpliNet,
    colloc: &CollocationSet,
    tg: &Targets,
    lambda: f64,
) -> (RiskParts, Vec<f64>) {
    let dim = colloc.dim;
    let ki = colloc.interior_len();
    let kb = colloc.boundary_len();
    let (wi, wb) = (1.0 / ki as f64, lambda / kb as f64);
    // interior and boundary sums are reduced separately so the parts can be
    // reported; both go into one gradient
    let (si, mut g) = reduce_chunks(model, 2, 3, ki, model.param_count(), |ws, i, g| {
        let z = &colloc.interior[i * dim..(i + 1) * dim];
        ws.evaluate(model, z);
        let r = -ws.laplacian(0) - tg.rhs[i];
        ws.add_laplacian_grad(model, 0, -2.0 * r * wi, g);
        r * r
    });
    let (sb, gb) = reduce_chunks(model, 0, 1, kb, model.param_count(), |ws, i, g| {
        let z = &colloc.boundary[i * dim..(i + 1) * dim];
        ws.evaluate(model, z);
        let mut out = [0.0];
        ws.outputs(&mut out);
        let e = out[0] - tg.bc[i];
        ws.add_value_grad(model, &[2.0 * e * wb], g);
        e * e
    });
    for (a, b) in g.iter_mut().zip(&gb) {
        *a += b;
    }
    finish_inner_grad(model, &mut g);
    let ei = si / ki as f64;
    let eb = sb / kb as f64;
    (
        RiskParts {
            total: ei + lambda * eb,
            interior: ei,
            boundary: eb,
        },
        g,
    )
}

/// Gradient of the differential risk with respect to the raw parameters.
pub fn differential_risk_grad(
    model: &ExSpliNet,
    problem: &DifferentialProblem,
    colloc: &CollocationSet,
    lambda: f64,
) -> Result<(RiskParts, Vec<f64>)> {
    check_model(model, problem)?;
    check_colloc(model, colloc)?;
    Ok(risk_and_grad(model, colloc, &targets(problem, colloc), lambda))
}

fn check_colloc(model: &ExSpliNet, colloc: &CollocationSet) -> Result<()> {
    if colloc.interior.is_empty() || colloc.boundary.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for z in colloc.interior.chunks(colloc.dim).chain(colloc.boundary.chunks(colloc.dim)) {
        model.check_point(z)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PinnConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub lambda: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for PinnConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 5000,
            lambda: 1e4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PinnReport {
    pub lambda: f64,
    pub initial: RiskParts,
    pub final_risk: RiskParts,
    /// Total risk before each epoch's update.
    pub history: Vec<f64>,
    pub best_epoch: usize,
    /// Mean squared error against the exact solution on the evaluation grid.
    pub mse: Option<f64>,
    pub eval_points: usize,
    pub wall_seconds: f64,
    pub param_count: usize,
}

/// Full-batch Adam on the differential risk. Returns the parameters with
/// the lowest risk seen.
pub fn pinn_train(
    mut model: ExSpliNet,
    problem: &DifferentialProblem,
    colloc: &CollocationSet,
    config: &PinnConfig,
    mut observer: impl FnMut(usize, &RiskParts),
) -> Result<(ExSpliNet, PinnReport)> {
    let start = Instant::now();
    check_model(&model, problem)?;
    check_colloc(&model, colloc)?;
    if !(config.learning_rate > 0.0) || config.epochs == 0 || !(config.lambda >= 0.0) {
        return Err(Error::InvalidHyperparameter(
            "PINN training needs a positive learning rate, at least one epoch and λ >= 0".into(),
        ));
    }
    let tg = targets(problem, colloc);
    let mask = model.trainable_mask();
    let mut adam = Adam::new(model.param_count(), config.learning_rate);
    adam.beta1 = config.beta1;
    adam.beta2 = config.beta2;
    adam.epsilon = config.epsilon;
    let mut params = model.params().to_vec();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut initial = None;
    for epoch in 1..=config.epochs {
        let (parts, g) = risk_and_grad(&model, colloc, &tg, config.lambda);
        if !parts.total.is_finite() {
            return Err(Error::NonFinite(format!("differential risk at epoch {epoch}")));
        }
        initial.get_or_insert(parts);
        history.push(parts.total);
        if best.as_ref().is_none_or(|b| parts.total < b.0) {
            best = Some((parts.total, epoch - 1, params.clone()));
        }
        observer(epoch, &parts);
        adam.step(&mut params, &g, Some(&mask))?;
        model.set_params(&params)?;
    }
    let (final_parts, _) = risk_and_grad(&model, colloc, &tg, config.lambda);
    let mut best_epoch = config.epochs;
    if let Some((risk, epoch, p)) = best {
        if risk < final_parts.total {
            model.set_params(&p)?;
            best_epoch = epoch;
        }
    }
    let final_risk = differential_risk(&model, problem, colloc, config.lambda)?;
    let grid = evaluation_grid(problem);
    let mse = solution_mse(&model, problem, &grid)?;
    let report = PinnReport {
        lambda: config.lambda,
        initial: initial.unwrap_or(final_parts),
        final_risk,
        history,
        best_epoch,
        mse,
        eval_points: grid.len() / problem.dim,
        wall_seconds: start.elapsed().as_secs_f64(),
        param_count: model.param_count(),
    };
    Ok((model, report))
}

const TARGET_2D_POINTS: usize = 900;

/// Unit-coordinate evaluation points: 300 uniform points on `[0, 1]` in 1D;
/// in 2D the strictly interior nodes of the uniform grid whose interior
/// count is closest to 900.
pub fn evaluation_grid(problem: &DifferentialProblem) -> Vec<f64> {
    match problem.dim {
        1 => (0..300).map(|i| i as f64 / 299.0).collect(),
        _ => {
            let nodes = |n: usize| -> Vec<f64> {
                let mut pts = Vec::new();
                for i in 0..n {
                    for j in 0..n {
                        let z = [(i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64];
                        if problem.contains(&z) {
                            pts.extend(z);
                        }
                    }
                }
                pts
            };
            let mut best = Vec::new();
            let mut best_gap = usize::MAX;
            for n in 2..200 {
                let pts = nodes(n);
                let count = pts.len() / 2;
                let gap = count.abs_diff(TARGET_2D_POINTS);
                if gap < best_gap {
                    best_gap = gap;
                    best = pts;
                }
                if count > 2 * TARGET_2D_POINTS {
                    break;
                }
            }
            best
        }
    }
}

/// Mean squared error against the exact solution on the given unit points.
pub fn solution_mse(model: &ExSpliNet, problem: &DifferentialProblem, points: &[f64]) -> Result<Option<f64>> {
    if problem.exact.is_none() {
        return Ok(None);
    }
    let pred = model.forward_batch(points)?;
    let n = pred.len();
    let s: f64 = points
        .chunks(problem.dim)
        .zip(&pred)
        .map(|(z, p)| {
            let e = p - problem.unit_exact(z).unwrap_or(0.0);
            e * e
        })
        .sum();
    Ok(Some(s / n as f64))
}

/// One exported solution sample in physical coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionSample {
    pub x: Vec<f64>,
    pub predicted: f64,
    pub exact: Option<f64>,
}

pub fn solution_samples(model: &ExSpliNet, problem: &DifferentialProblem) -> Result<Vec<SolutionSample>> {
    let grid = evaluation_grid(problem);
    let pred = model.forward_batch(&grid)?;
    Ok(grid
        .chunks(problem.dim)
        .zip(pred)
        .map(|(z, p)| SolutionSample {
            x: problem.map.to_physical(z),
            predicted: p,
            exact: problem.unit_exact(z),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn egg_boundary_is_on_the_level_set() {
        let egg = EggDomain::default();
        for i in 0..100 {
            let p = egg.boundary_point(i as f64 * 0.0628);
            assert!(egg.phi(&p).abs() < 1e-9);
        }
        assert!(egg.phi(&egg.center) < 0.0);
        assert!(EggDomain { k: 1.2, ..egg }.validate().is_err());
    }

    #[test]
    fn collocation_in_one_dimension() {
        let p = DifferentialProblem::exp3();
        let c = sample_collocation(&p, 998, 2, 1).unwrap();
        assert_eq!(c.boundary, vec![0.0, 1.0]);
        assert_eq!(c.interior_len() + c.boundary_len(), 1000);
        assert!(c.interior.iter().all(|z| *z > 0.0 && *z < 1.0));
        assert_eq!(c, sample_collocation(&p, 998, 2, 1).unwrap());
    }

    #[test]
    fn collocation_on_the_egg() {
        let p = DifferentialProblem::exp4(EggDomain::default()).unwrap();
        let c = sample_collocation(&p, 2062, 600, 5).unwrap();
        assert_eq!((c.interior_len(), c.boundary_len()), (2062, 600));
        let Domain::Egg(egg) = p.domain else { panic!() };
        for z in c.interior.chunks(2) {
            assert!(egg.phi(&p.map.to_physical(z)) < 0.0);
        }
        for z in c.boundary.chunks(2) {
            assert!(z.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(egg.phi(&p.map.to_physical(z)).abs() < 1e-9);
        }
    }

    #[test]
    fn manufactured_rhs_matches_laplacian_of_solution() {
        let p = DifferentialProblem::exp4(EggDomain::default()).unwrap();
        let u = p.exact.clone().unwrap();
        let h = 1e-4;
        for pt in [[0.1, 0.2], [-0.4, 0.3], [0.5, -0.5]] {
            let c = u(&pt);
            let lap = (u(&[pt[0] + h, pt[1]]) + u(&[pt[0] - h, pt[1]]) + u(&[pt[0], pt[1] + h])
                + u(&[pt[0], pt[1] - h])
                - 4.0 * c)
                / (h * h);
            assert!(((p.rhs)(&pt) + lap).abs() < 1e-5 * (1.0 + lap.abs()));
        }
    }

    #[test]
    fn stall_is_detected() {
        let mut p = DifferentialProblem::exp4(EggDomain::default()).unwrap();
        // shrink the unit box view so the egg covers almost none of it
        p.map.origin = vec![5.0, 5.0];
        assert!(matches!(
            sample_collocation(&p, 10, 10, 0),
            Err(Error::RejectionStall { .. })
        ));
    }

    #[test]
    fn degree_is_checked_before_training() {
        let p = DifferentialProblem::exp3();
        let c = sample_collocation(&p, 20, 2, 0).unwrap();
        let m = ExSpliNet::init_random(ModelConfig::uniform(1, 1, 2, 2, 5, 5, 1, 1), 0).unwrap();
        assert!(matches!(
            pinn_train(m, &p, &c, &PinnConfig::default(), |_, _| {}),
            Err(Error::DegreeTooLow { .. })
        ));
    }

    #[test]
    fn zero_problem_zero_model() {
        let mut p = DifferentialProblem::exp3();
        p.rhs = Arc::new(|_| 0.0);
        p.boundary = Arc::new(|_| 0.0);
        let c = sample_collocation(&p, 30, 2, 0).unwrap();
        let m = ExSpliNet::init_random(ModelConfig::uniform(1, 1, 2, 2, 5, 5, 3, 3), 0).unwrap();
        let n = m.layout().outer_len();
        let m = m.with_outer(vec![0.0; n]).unwrap();
        let r = differential_risk(&m, &p, &c, 1e4).unwrap();
        assert_eq!(r.total, 0.0);
    }

    #[test]
    fn evaluation_grids() {
        assert_eq!(evaluation_grid(&DifferentialProblem::exp3()).len(), 300);
        let p = DifferentialProblem::exp4(EggDomain::default()).unwrap();
        let g = evaluation_grid(&p);
        let n = g.len() / 2;
        assert!((850..=950).contains(&n), "{n}");
    }

    #[test]
    fn kernel_risk_matches_weight_transform_risk() {
        let p = DifferentialProblem::exp4(EggDomain::default()).unwrap();
        let c = sample_collocation(&p, 40, 10, 2).unwrap();
        let m = ExSpliNet::init_random(ModelConfig::uniform(2, 1, 2, 2, 5, 6, 3, 3), 1).unwrap();
        let a = differential_risk(&m, &p, &c, 10.0).unwrap();
        let (b, _) = differential_risk_grad(&m, &p, &c, 10.0).unwrap();
        assert!((a.interior - b.interior).abs() <= 1e-9 * a.interior);
        assert!((a.boundary - b.boundary).abs() <= 1e-12 * a.boundary.max(1.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = DifferentialProblem::exp4(EggDomain::default()).unwrap();
        let c = sample_collocation(&p, 25, 8, 3).unwrap();
        let m = ExSpliNet::init_random(ModelConfig::uniform(2, 1, 2, 2, 5, 5, 3, 3), 7).unwrap();
        assert!(m.param_count() <= 200);
        let lambda = 10.0;
        let (_, g) = differential_risk_grad(&m, &p, &c, lambda).unwrap();
        let h = 1e-6;
        for i in 0..m.param_count() {
            let mut plus = m.clone();
            plus.update_params(|q| q[i] += h).unwrap();
            let mut minus = m.clone();
            minus.update_params(|q| q[i] -= h).unwrap();
            let fd = (differential_risk(&plus, &p, &c, lambda).unwrap().total
                - differential_risk(&minus, &p, &c, lambda).unwrap().total)
                / (2.0 * h);
            let scale = g[i].abs().max(fd.abs()).max(1e-3);
            assert!((g[i] - fd).abs() <= 1e-3 * scale, "param {i}: {} vs {fd}", g[i]);
        }
    }
}

//! The ExSpliNet function family.
//!
//! A model with `T` trees and `L` levels maps `x ∈ [0,1]^D` to
//!
//! ```text
//! E_o(x) = Σ_t Φ_{w^{o,t}}(y_{t,1}(x), …, y_{t,L}(x)),
//! y_{t,ℓ}(x) = Σ_d Σ_n v^{t,ℓ,d}_n B_{N_ℓ,p_ℓ,n}(x_d),
//! ```
//!
//! where each `Φ` is a tensor-product spline of degrees `q` with `M_ℓ`
//! functions per axis. The inner weights `v` are derived from unconstrained
//! raw weights `u` by `v = u² / Σ u²` per `(t, ℓ)` block.
//!
//! # Parameter layout
//!
//! The flat parameter vector holds all raw inner weights first, ordered by
//! `(t, ℓ, d, n)` with `n` fastest, followed by the outer weights ordered by
//! `(o, t, m_1, …, m_L)` with `m_L` fastest. All indices are 0-based in code.
//!
//! # Frozen blocks
//!
//! Some exact constructions (the Greville identity feature with `N_ℓ > 2`)
//! need inner weights whose grand sum is not 1. Such a block is stored
//! *frozen*: its raw entries are the `v` values themselves, it is excluded
//! from the unit-sum invariant, and it receives no gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bspline::{greville, KnotVector};
use crate::error::{check_unit, Error, Result};
use crate::eval::Workspace;

/// Hyperparameters `(D, O, T, L, N, M, p, q)`; `L` is the length of the
/// per-level vectors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub inputs: usize,
    pub outputs: usize,
    pub trees: usize,
    pub inner_counts: Vec<usize>,
    pub outer_counts: Vec<usize>,
    pub inner_degrees: Vec<usize>,
    pub outer_degrees: Vec<usize>,
}

impl ModelConfig {
    /// Config with the same `(N, M, p, q)` on every level.
    #[allow(clippy::too_many_arguments)]
    pub fn uniform(
        inputs: usize,
        outputs: usize,
        trees: usize,
        levels: usize,
        inner_count: usize,
        outer_count: usize,
        inner_degree: usize,
        outer_degree: usize,
    ) -> Self {
        Self {
            inputs,
            outputs,
            trees,
            inner_counts: vec![inner_count; levels],
            outer_counts: vec![outer_count; levels],
            inner_degrees: vec![inner_degree; levels],
            outer_degrees: vec![outer_degree; levels],
        }
    }

    pub fn levels(&self) -> usize {
        self.inner_counts.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidHyperparameter(msg));
        if self.inputs == 0 || self.outputs == 0 || self.trees == 0 {
            return bad("D, O and T must all be at least 1".into());
        }
        let l = self.levels();
        if l == 0 {
            return bad("at least one level is required".into());
        }
        if self.outer_counts.len() != l
            || self.inner_degrees.len() != l
            || self.outer_degrees.len() != l
        {
            return bad(format!(
                "per-level lists differ in length: N {}, M {}, p {}, q {}",
                l,
                self.outer_counts.len(),
                self.inner_degrees.len(),
                self.outer_degrees.len()
            ));
        }
        for lvl in 0..l {
            if self.inner_counts[lvl] <= self.inner_degrees[lvl] {
                return bad(format!(
                    "level {}: N = {} must exceed p = {}",
                    lvl + 1,
                    self.inner_counts[lvl],
                    self.inner_degrees[lvl]
                ));
            }
            if self.outer_counts[lvl] <= self.outer_degrees[lvl] {
                return bad(format!(
                    "level {}: M = {} must exceed q = {}",
                    lvl + 1,
                    self.outer_counts[lvl],
                    self.outer_degrees[lvl]
                ));
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        param_count(self)
    }

    pub fn min_inner_degree(&self) -> usize {
        self.inner_degrees.iter().copied().min().unwrap_or(0)
    }

    pub fn min_outer_degree(&self) -> usize {
        self.outer_degrees.iter().copied().min().unwrap_or(0)
    }
}

/// `D·T·Σ N_ℓ + O·T·Π M_ℓ`.
pub fn param_count(config: &ModelConfig) -> usize {
    let inner: usize = config.inner_counts.iter().sum();
    let outer: usize = config.outer_counts.iter().product();
    config.inputs * config.trees * inner + config.outputs * config.trees * outer
}

/// Offsets into the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    inputs: usize,
    outputs: usize,
    trees: usize,
    inner_counts: Vec<usize>,
    level_offsets: Vec<usize>,
    inner_per_tree: usize,
    outer_size: usize,
}

impl ParamLayout {
    pub fn new(config: &ModelConfig) -> Self {
        let mut level_offsets = Vec::with_capacity(config.levels());
        let mut acc = 0;
        for &n in &config.inner_counts {
            level_offsets.push(acc);
            acc += config.inputs * n;
        }
        Self {
            inputs: config.inputs,
            outputs: config.outputs,
            trees: config.trees,
            inner_counts: config.inner_counts.clone(),
            level_offsets,
            inner_per_tree: acc,
            outer_size: config.outer_counts.iter().product(),
        }
    }

    pub fn inner_len(&self) -> usize {
        self.trees * self.inner_per_tree
    }

    pub fn outer_len(&self) -> usize {
        self.outputs * self.trees * self.outer_size
    }

    pub fn len(&self) -> usize {
        self.inner_len() + self.outer_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn levels(&self) -> usize {
        self.inner_counts.len()
    }

    /// Entries per outer weight tensor, `Π M_ℓ`.
    pub fn outer_size(&self) -> usize {
        self.outer_size
    }

    /// Range of the `(t, ℓ)` inner block (`D · N_ℓ` entries, `d` slowest).
    pub fn inner_block(&self, t: usize, l: usize) -> std::ops::Range<usize> {
        let start = t * self.inner_per_tree + self.level_offsets[l];
        start..start + self.inputs * self.inner_counts[l]
    }

    pub fn inner_range(&self, t: usize, l: usize, d: usize) -> std::ops::Range<usize> {
        let n = self.inner_counts[l];
        let start = self.inner_block(t, l).start + d * n;
        start..start + n
    }

    pub fn outer_range(&self, o: usize, t: usize) -> std::ops::Range<usize> {
        let start = self.inner_len() + (o * self.trees + t) * self.outer_size;
        start..start + self.outer_size
    }
}

/// Raw inner weights for every `(t, ℓ)` block, in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerWeights {
    pub raw: Vec<f64>,
    /// One flag per `(t, ℓ)` block, `t` slowest.
    pub frozen: Vec<bool>,
}

/// `v = u² / Σ u²` over one block.
pub fn reparam(u: &[f64]) -> Result<Vec<f64>> {
    let mut v = vec![0.0; u.len()];
    if reparam_into(u, &mut v) {
        Ok(v)
    } else {
        Err(Error::DegenerateWeights { block: None })
    }
}

pub(crate) fn reparam_into(u: &[f64], v: &mut [f64]) -> bool {
    let s: f64 = u.iter().map(|x| x * x).sum();
    if !(s > 0.0) || !s.is_finite() {
        return false;
    }
    for (vi, ui) in v.iter_mut().zip(u) {
        *vi = ui * ui / s;
    }
    true
}

/// Pulls a gradient with respect to `v` back to the raw block `u`:
/// `g_u_i = (2 u_i / S) (g_v_i − Σ_j g_v_j v_j)`.
pub(crate) fn reparam_backward(u: &[f64], v: &[f64], g: &mut [f64]) {
    let s: f64 = u.iter().map(|x| x * x).sum();
    let dot: f64 = g.iter().zip(v).map(|(a, b)| a * b).sum();
    for (gi, ui) in g.iter_mut().zip(u) {
        *gi = 2.0 * ui / s * (*gi - dot);
    }
}

/// An ExSpliNet model: configuration, raw parameters and cached derived
/// inner weights.
#[derive(Debug, Clone)]
pub struct ExSpliNet {
    config: ModelConfig,
    layout: ParamLayout,
    params: Vec<f64>,
    frozen: Vec<bool>,
    v: Vec<f64>,
    pub(crate) inner_knots: Vec<KnotVector>,
    pub(crate) outer_knots: Vec<KnotVector>,
}

impl PartialEq for ExSpliNet {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params && self.frozen == other.frozen
    }
}

impl ExSpliNet {
    /// Assembles a model from raw parameters.
    pub fn from_parts(config: ModelConfig, inner: InnerWeights, outer: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        if inner.raw.len() != layout.inner_len() {
            return Err(Error::shape(
                format!("{} inner weights", layout.inner_len()),
                inner.raw.len(),
            ));
        }
        if inner.frozen.len() != config.trees * config.levels() {
            return Err(Error::shape(
                format!("{} frozen flags", config.trees * config.levels()),
                inner.frozen.len(),
            ));
        }
        if outer.len() != layout.outer_len() {
            return Err(Error::shape(
                format!("{} outer weights", layout.outer_len()),
                outer.len(),
            ));
        }
        let inner_knots = (0..config.levels())
            .map(|l| KnotVector::open_uniform(config.inner_counts[l], config.inner_degrees[l]))
            .collect::<Result<Vec<_>>>()?;
        let outer_knots = (0..config.levels())
            .map(|l| KnotVector::open_uniform(config.outer_counts[l], config.outer_degrees[l]))
            .collect::<Result<Vec<_>>>()?;
        let mut params = inner.raw;
        params.extend(outer);
        let mut model = Self {
            v: vec![0.0; layout.inner_len()],
            config,
            layout,
            params,
            frozen: inner.frozen,
            inner_knots,
            outer_knots,
        };
        model.refresh()?;
        Ok(model)
    }

    /// Random initialization: raw inner weights `U[0.5, 1.5]`, outer weights
    /// `U[-1/T, 1/T]`, drawn in parameter order from a ChaCha8 stream.
    pub fn init_random(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = (0..layout.inner_len())
            .map(|_| rng.random_range(0.5..=1.5))
            .collect();
        let s = 1.0 / config.trees as f64;
        let outer = (0..layout.outer_len())
            .map(|_| rng.random_range(-s..=s))
            .collect();
        let frozen = vec![false; config.trees * config.levels()];
        Self::from_parts(config, InnerWeights { raw, frozen }, outer)
    }

    /// Replaces the inner weights, keeping the outer ones.
    pub fn with_inner(self, inner: InnerWeights) -> Result<Self> {
        let outer = self.params[self.layout.inner_len()..].to_vec();
        Self::from_parts(self.config, inner, outer)
    }

    /// Replaces the outer weights, keeping the inner ones.
    pub fn with_outer(mut self, outer: Vec<f64>) -> Result<Self> {
        if outer.len() != self.layout.outer_len() {
            return Err(Error::shape(self.layout.outer_len(), outer.len()));
        }
        let start = self.layout.inner_len();
        self.params[start..].copy_from_slice(&outer);
        Ok(self)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Overwrites all raw parameters and re-derives `v`.
    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::shape(self.params.len(), params.len()));
        }
        self.params.copy_from_slice(params);
        self.refresh()
    }

    /// Mutates raw parameters in place, then re-derives `v`.
    pub fn update_params(&mut self, f: impl FnOnce(&mut [f64])) -> Result<()> {
        f(&mut self.params);
        self.refresh()
    }

    pub fn frozen(&self) -> &[bool] {
        &self.frozen
    }

    pub fn is_frozen(&self, t: usize, l: usize) -> bool {
        self.frozen[t * self.config.levels() + l]
    }

    /// Per-parameter flag: `true` for entries the optimizer may change.
    pub fn trainable_mask(&self) -> Vec<bool> {
        let mut mask = vec![true; self.params.len()];
        for t in 0..self.config.trees {
            for l in 0..self.config.levels() {
                if self.is_frozen(t, l) {
                    mask[self.layout.inner_block(t, l)].fill(false);
                }
            }
        }
        mask
    }

    /// Derived (constrained) inner weights, same layout as the inner part of
    /// the parameter vector.
    pub fn inner_v(&self) -> &[f64] {
        &self.v
    }

    pub fn v(&self, t: usize, l: usize, d: usize) -> &[f64] {
        &self.v[self.layout.inner_range(t, l, d)]
    }

    pub fn raw_inner(&self, t: usize, l: usize, d: usize) -> &[f64] {
        &self.params[self.layout.inner_range(t, l, d)]
    }

    pub fn outer(&self, o: usize, t: usize) -> &[f64] {
        &self.params[self.layout.outer_range(o, t)]
    }

    pub fn inner_weights(&self) -> InnerWeights {
        InnerWeights {
            raw: self.params[..self.layout.inner_len()].to_vec(),
            frozen: self.frozen.clone(),
        }
    }

    fn refresh(&mut self) -> Result<()> {
        let levels = self.config.levels();
        for t in 0..self.config.trees {
            for l in 0..levels {
                let range = self.layout.inner_block(t, l);
                let raw = &self.params[range.clone()];
                let block = Some((t + 1, l + 1));
                if self.frozen[t * levels + l] {
                    check_frozen_block(raw, self.config.inputs, block)?;
                    self.v[range].copy_from_slice(raw);
                } else if !reparam_into(raw, &mut self.v[range]) {
                    return Err(Error::DegenerateWeights { block });
                }
            }
        }
        Ok(())
    }

    /// The unclamped feature `y_{t,ℓ}(x)`.
    pub fn inner_feature(&self, t: usize, l: usize, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        if t >= self.config.trees || l >= self.config.levels() {
            return Err(Error::IndexOutOfRange {
                index: if t >= self.config.trees { t + 1 } else { l + 1 },
                max: if t >= self.config.trees {
                    self.config.trees
                } else {
                    self.config.levels()
                },
            });
        }
        let kv = &self.inner_knots[l];
        let mut basis = vec![0.0; kv.degree() + 1];
        let mut y = 0.0;
        for (d, &xd) in x.iter().enumerate() {
            let first = kv.basis_into(xd, &mut basis);
            let v = self.v(t, l, d);
            y += basis.iter().zip(&v[first..]).map(|(b, w)| b * w).sum::<f64>();
        }
        Ok(y)
    }

    /// All `L` features of tree `t`, clamped to `[0, 1]`.
    pub fn features(&self, t: usize, x: &[f64]) -> Result<Vec<f64>> {
        (0..self.config.levels())
            .map(|l| self.inner_feature(t, l, x).map(|y| y.clamp(0.0, 1.0)))
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let mut ws = Workspace::new(self, 0, 0);
        let mut out = vec![0.0; self.config.outputs];
        ws.forward_into(self, x, &mut out);
        Ok(out)
    }

    /// Forward pass over `K` row-major points.
    pub fn forward_batch(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        let dim = self.config.inputs;
        if inputs.len() % dim != 0 {
            return Err(Error::shape(format!("a multiple of {dim} values"), inputs.len()));
        }
        for x in inputs.chunks(dim) {
            self.check_point(x)?;
        }
        Ok(crate::eval::predict_rows(self, inputs))
    }

    pub(crate) fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.inputs {
            return Err(Error::shape(
                format!("{} input coordinates", self.config.inputs),
                x.len(),
            ));
        }
        x.iter().try_for_each(|&xd| check_unit(xd))
    }
}

fn check_frozen_block(raw: &[f64], inputs: usize, block: Option<(usize, usize)>) -> Result<()> {
    if raw.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidCoefficients(format!(
            "frozen inner block {block:?} has a negative or non-finite weight"
        )));
    }
    let n = raw.len() / inputs;
    let bound: f64 = raw
        .chunks(n)
        .map(|c| c.iter().copied().fold(0.0, f64::max))
        .sum();
    if bound > 1.0 + 1e-12 {
        return Err(Error::InvalidCoefficients(format!(
            "frozen inner block {block:?} can produce features above 1 (Σ_d max_n v = {bound})"
        )));
    }
    if bound == 0.0 {
        return Err(Error::DegenerateWeights { block });
    }
    Ok(())
}

/// Stores a target `v` block: trainable `u = √v` when it already sums to 1,
/// frozen otherwise.
fn store_block(target: &[f64], raw: &mut [f64]) -> bool {
    let sum: f64 = target.iter().sum();
    if (sum - 1.0).abs() <= 1e-12 {
        for (r, v) in raw.iter_mut().zip(target) {
            *r = v.sqrt();
        }
        false
    } else {
        raw.copy_from_slice(target);
        true
    }
}

fn build_inner(
    config: &ModelConfig,
    mut target: impl FnMut(usize, usize, &mut [f64]) -> Result<()>,
) -> Result<InnerWeights> {
    config.validate()?;
    let layout = ParamLayout::new(config);
    let mut raw = vec![0.0; layout.inner_len()];
    let mut frozen = Vec::with_capacity(config.trees * config.levels());
    for t in 0..config.trees {
        for l in 0..config.levels() {
            let range = layout.inner_block(t, l);
            let mut block = vec![0.0; range.len()];
            target(t, l, &mut block)?;
            frozen.push(store_block(&block, &mut raw[range]));
        }
    }
    Ok(InnerWeights { raw, frozen })
}

/// Greville weights on input `ℓ` for level `ℓ`, so that `y_{t,ℓ}(x) = x_ℓ`.
/// Requires `L = D` and every `p_ℓ >= 1`.
pub fn init_identity(config: &ModelConfig) -> Result<InnerWeights> {
    if config.levels() != config.inputs {
        return Err(Error::ConfigMismatch(format!(
            "identity inner weights need L = D, got L = {} and D = {}",
            config.levels(),
            config.inputs
        )));
    }
    let selection: Vec<Vec<usize>> = vec![(0..config.inputs).collect(); config.trees];
    init_coordinate_select(config, &selection)
}

/// Per-tree coordinate selection `y_{t,ℓ}(x) = x_{σ_t(ℓ)}` with 0-based `σ`.
pub fn init_coordinate_select(config: &ModelConfig, sigma: &[Vec<usize>]) -> Result<InnerWeights> {
    config.validate()?;
    if sigma.len() != config.trees {
        return Err(Error::shape(format!("{} selections", config.trees), sigma.len()));
    }
    for s in sigma {
        if s.len() != config.levels() {
            return Err(Error::shape(format!("{} levels", config.levels()), s.len()));
        }
        if let Some(&bad) = s.iter().find(|&&d| d >= config.inputs) {
            return Err(Error::IndexOutOfRange {
                index: bad + 1,
                max: config.inputs,
            });
        }
    }
    build_inner(config, |t, l, block| {
        let n = config.inner_counts[l];
        let d = sigma[t][l];
        block[d * n..(d + 1) * n].copy_from_slice(&greville(n, config.inner_degrees[l])?);
        Ok(())
    })
}

/// Convex combinations `y_{t,ℓ}(x) = Σ_d ν^{t,ℓ,d} x_d` for `p_ℓ = 1`,
/// `N_ℓ = 2`. `nu` is flat in `(t, ℓ, d)` order.
pub fn init_convex(config: &ModelConfig, nu: &[f64]) -> Result<InnerWeights> {
    config.validate()?;
    if config.inner_counts.iter().any(|&n| n != 2) || config.inner_degrees.iter().any(|&p| p != 1)
    {
        return Err(Error::InvalidHyperparameter(
            "convex-combination features need N = 2 and p = 1 on every level".into(),
        ));
    }
    let d = config.inputs;
    if nu.len() != config.trees * config.levels() * d {
        return Err(Error::shape(config.trees * config.levels() * d, nu.len()));
    }
    for (row, chunk) in nu.chunks(d).enumerate() {
        if chunk.iter().any(|c| !(*c >= 0.0)) {
            return Err(Error::InvalidCoefficients(format!(
                "row {} has a negative coefficient",
                row + 1
            )));
        }
        let sum: f64 = chunk.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidCoefficients(format!(
                "row {} sums to {sum}, expected 1",
                row + 1
            )));
        }
    }
    build_inner(config, |t, l, block| {
        let row = &nu[(t * config.levels() + l) * d..][..d];
        for (dd, c) in row.iter().enumerate() {
            block[2 * dd + 1] = *c;
        }
        Ok(())
    })
}

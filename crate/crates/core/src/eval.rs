//! Allocation-free evaluation kernel shared by the forward pass, parameter
//! gradients and the PINN residual.
//!
//! For one input point the kernel computes, per level `ℓ` and input `d`, the
//! local inner basis values and their derivatives in `x_d`; per tree the
//! features `y` with their first and second derivatives in each `x_d`; and
//! per tree and level the outer basis values with derivatives in `y` up to a
//! requested order. From these it forms, for every locally supported outer
//! weight `e` and multi-index `α`, the product `Π_ℓ ∂^{α_ℓ} B_{e_ℓ}(y_ℓ)`,
//! and the contracted partials `Φ_α = Σ_e w_e · prods[e][α]`.
//!
//! Inner-weight gradients are accumulated with respect to `v` and pulled
//! back to raw `u` once per batch by [`finish_inner_grad`].

use std::collections::HashMap;

use rayon::prelude::*;

use crate::bspline::DerivScratch;
use crate::model::{reparam_backward, ExSpliNet};
use crate::tensor::{increment, strides};

/// Multi-indices `α ∈ ℕ^L` with `|α| <= order` and lookup tables for the
/// ones the kernel needs.
#[derive(Debug, Clone)]
pub(crate) struct MultiIndex {
    items: Vec<Vec<usize>>,
    levels: usize,
    zero: usize,
    first: Vec<usize>,
    second: Vec<usize>,
    third: Vec<usize>,
}

impl MultiIndex {
    fn new(levels: usize, order: usize) -> Self {
        let mut items = Vec::new();
        let mut cur = vec![0; levels];
        fn rec(l: usize, left: usize, cur: &mut Vec<usize>, items: &mut Vec<Vec<usize>>) {
            if l == cur.len() {
                items.push(cur.clone());
                return;
            }
            for a in 0..=left {
                cur[l] = a;
                rec(l + 1, left - a, cur, items);
            }
            cur[l] = 0;
        }
        rec(0, order, &mut cur, &mut items);
        items.sort_by_key(|a| a.iter().sum::<usize>());
        let pos: HashMap<Vec<usize>, usize> =
            items.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect();
        let find = |bumps: &[usize]| {
            let mut a = vec![0; levels];
            for &b in bumps {
                a[b] += 1;
            }
            pos.get(&a).copied().unwrap_or(usize::MAX)
        };
        let zero = find(&[]);
        let first = (0..levels).map(|l| find(&[l])).collect();
        let mut second = Vec::new();
        let mut third = Vec::new();
        if order >= 2 {
            for l in 0..levels {
                for k in 0..levels {
                    second.push(find(&[l, k]));
                }
            }
        }
        if order >= 3 {
            for l in 0..levels {
                for k in 0..levels {
                    for a in 0..levels {
                        third.push(find(&[l, k, a]));
                    }
                }
            }
        }
        Self {
            items,
            levels,
            zero,
            first,
            second,
            third,
        }
    }

    fn len(&self) -> usize {
        self.items.len()
    }

    fn second(&self, l: usize, k: usize) -> usize {
        self.second[l * self.levels + k]
    }

    fn third(&self, l: usize, k: usize, a: usize) -> usize {
        self.third[(l * self.levels + k) * self.levels + a]
    }
}

/// Per-thread scratch space sized for one model configuration.
#[derive(Debug, Clone)]
pub(crate) struct Workspace {
    kin: usize,
    kout: usize,
    levels: usize,
    inputs: usize,
    trees: usize,
    outputs: usize,
    in_width: Vec<usize>,
    in_off: Vec<usize>,
    in_first: Vec<usize>,
    in_jet: Vec<f64>,
    in_block_start: Vec<usize>,
    inner_counts: Vec<usize>,
    y: Vec<f64>,
    dy: Vec<f64>,
    ddy: Vec<f64>,
    out_width: Vec<usize>,
    out_off: Vec<usize>,
    out_tree: usize,
    out_first: Vec<usize>,
    out_jet: Vec<f64>,
    local: Vec<usize>,
    n_local: usize,
    strides: Vec<usize>,
    flat: Vec<usize>,
    prods: Vec<f64>,
    phi: Vec<f64>,
    gram: Vec<f64>,
    hess: Vec<f64>,
    idx: Vec<usize>,
    mi: MultiIndex,
    scratch: DerivScratch,
}

impl Workspace {
    /// `kin`: derivative order of the inner bases in `x` (0..=2).
    /// `kout`: total derivative order of the outer tensor splines in `y`.
    pub(crate) fn new(model: &ExSpliNet, kin: usize, kout: usize) -> Self {
        let cfg = model.config();
        let levels = cfg.levels();
        let inputs = cfg.inputs;
        let trees = cfg.trees;
        let in_width: Vec<usize> = cfg.inner_degrees.iter().map(|p| p + 1).collect();
        let mut in_off = Vec::with_capacity(levels);
        let mut acc = 0;
        for w in &in_width {
            in_off.push(acc);
            acc += inputs * (kin + 1) * w;
        }
        let in_len = acc;
        let out_width: Vec<usize> = cfg.outer_degrees.iter().map(|q| q + 1).collect();
        let mut out_off = Vec::with_capacity(levels);
        let mut acc = 0;
        for w in &out_width {
            out_off.push(acc);
            acc += (kout + 1) * w;
        }
        let out_tree = acc;
        let n_local: usize = out_width.iter().product();
        let mi = MultiIndex::new(levels, kout);
        let layout = model.layout();
        let in_block_start = (0..trees)
            .flat_map(|t| (0..levels).map(move |l| (t, l)))
            .map(|(t, l)| layout.inner_block(t, l).start)
            .collect();
        let max_degree = cfg
            .inner_degrees
            .iter()
            .chain(&cfg.outer_degrees)
            .copied()
            .max()
            .unwrap_or(0);
        Self {
            kin,
            kout,
            levels,
            inputs,
            trees,
            outputs: cfg.outputs,
            in_first: vec![0; levels * inputs],
            in_jet: vec![0.0; in_len],
            in_block_start,
            inner_counts: cfg.inner_counts.clone(),
            y: vec![0.0; trees * levels],
            dy: vec![0.0; if kin >= 1 { trees * levels * inputs } else { 0 }],
            ddy: vec![0.0; if kin >= 2 { trees * levels * inputs } else { 0 }],
            out_first: vec![0; trees * levels],
            out_jet: vec![0.0; trees * out_tree],
            strides: strides(&cfg.outer_counts),
            flat: vec![0; trees * n_local],
            prods: vec![0.0; trees * n_local * mi.len()],
            phi: vec![0.0; trees * cfg.outputs * mi.len()],
            gram: vec![0.0; levels * levels],
            hess: vec![0.0; levels],
            idx: vec![0; levels],
            local: out_width.clone(),
            in_width,
            in_off,
            out_width,
            out_off,
            out_tree,
            n_local,
            mi,
            scratch: DerivScratch::new(max_degree),
        }
    }

    fn in_row(&self, l: usize, d: usize, k: usize) -> &[f64] {
        let w = self.in_width[l];
        let start = self.in_off[l] + (d * (self.kin + 1) + k) * w;
        &self.in_jet[start..start + w]
    }

    fn out_row(&self, t: usize, l: usize, k: usize) -> &[f64] {
        let w = self.out_width[l];
        let start = t * self.out_tree + self.out_off[l] + k * w;
        &self.out_jet[start..start + w]
    }

    /// Fills all per-point buffers for `x`, which must lie in `[0,1]^D`.
    pub(crate) fn evaluate(&mut self, model: &ExSpliNet, x: &[f64]) {
        let (levels, inputs, kin, kout) = (self.levels, self.inputs, self.kin, self.kout);
        for l in 0..levels {
            let kv = &model.inner_knots[l];
            let w = self.in_width[l];
            for (d, &xd) in x.iter().enumerate() {
                let start = self.in_off[l] + d * (kin + 1) * w;
                let out = &mut self.in_jet[start..start + (kin + 1) * w];
                self.in_first[l * inputs + d] = if kin == 0 {
                    kv.basis_into(xd, out)
                } else {
                    kv.basis_ders_into(xd, kin, out, &mut self.scratch)
                };
            }
        }
        let v = model.inner_v();
        for t in 0..self.trees {
            for l in 0..levels {
                let tl = t * levels + l;
                let w = self.in_width[l];
                let n = self.inner_counts[l];
                let mut y = 0.0;
                for d in 0..inputs {
                    let first = self.in_first[l * inputs + d];
                    let vs = &v[self.in_block_start[tl] + d * n + first..][..w];
                    let dot = |row: &[f64]| row.iter().zip(vs).map(|(a, b)| a * b).sum::<f64>();
                    y += dot(self.in_row(l, d, 0));
                    if kin >= 1 {
                        self.dy[tl * inputs + d] = dot(self.in_row(l, d, 1));
                    }
                    if kin >= 2 {
                        self.ddy[tl * inputs + d] = dot(self.in_row(l, d, 2));
                    }
                }
                let y = y.clamp(0.0, 1.0);
                self.y[tl] = y;
                let kv = &model.outer_knots[l];
                let wq = self.out_width[l];
                let start = t * self.out_tree + self.out_off[l];
                let out = &mut self.out_jet[start..start + (kout + 1) * wq];
                self.out_first[tl] = if kout == 0 {
                    kv.basis_into(y, out)
                } else {
                    kv.basis_ders_into(y, kout, out, &mut self.scratch)
                };
            }
            self.tree(model, t);
        }
    }

    fn tree(&mut self, model: &ExSpliNet, t: usize) {
        let na = self.mi.len();
        let levels = self.levels;
        self.idx.fill(0);
        for e in 0..self.n_local {
            let mut flat = 0;
            for l in 0..levels {
                flat += (self.out_first[t * levels + l] + self.idx[l]) * self.strides[l];
            }
            self.flat[t * self.n_local + e] = flat;
            let base = (t * self.n_local + e) * na;
            for a in 0..na {
                let mut prod = 1.0;
                for l in 0..levels {
                    let k = self.mi.items[a][l];
                    prod *= self.out_row(t, l, k)[self.idx[l]];
                }
                self.prods[base + a] = prod;
            }
            increment(&mut self.idx, &self.local);
        }
        for o in 0..self.outputs {
            let w = model.outer(o, t);
            let phi = &mut self.phi[(t * self.outputs + o) * na..][..na];
            phi.fill(0.0);
            for e in 0..self.n_local {
                let we = w[self.flat[t * self.n_local + e]];
                let pr = &self.prods[(t * self.n_local + e) * na..][..na];
                for (p, q) in phi.iter_mut().zip(pr) {
                    *p += we * q;
                }
            }
        }
    }

    fn phi(&self, t: usize, o: usize, a: usize) -> f64 {
        self.phi[(t * self.outputs + o) * self.mi.len() + a]
    }

    fn prod(&self, t: usize, e: usize, a: usize) -> f64 {
        self.prods[(t * self.n_local + e) * self.mi.len() + a]
    }

    /// Model outputs at the last evaluated point.
    pub(crate) fn outputs(&self, out: &mut [f64]) {
        for (o, slot) in out.iter_mut().enumerate() {
            *slot = (0..self.trees).map(|t| self.phi(t, o, self.mi.zero)).sum();
        }
    }

    pub(crate) fn forward_into(&mut self, model: &ExSpliNet, x: &[f64], out: &mut [f64]) {
        self.evaluate(model, x);
        self.outputs(out);
    }

    /// Adds `Σ_o r_o ∂E_o/∂θ` to `grad` (inner part with respect to `v`).
    /// Needs `kout >= 1` for the inner part.
    pub(crate) fn add_value_grad(&self, model: &ExSpliNet, r: &[f64], grad: &mut [f64]) {
        let layout = model.layout();
        let zero = self.mi.zero;
        for t in 0..self.trees {
            for (o, &ro) in r.iter().enumerate() {
                if ro == 0.0 {
                    continue;
                }
                let start = layout.outer_range(o, t).start;
                for e in 0..self.n_local {
                    grad[start + self.flat[t * self.n_local + e]] += ro * self.prod(t, e, zero);
                }
            }
            if self.kout == 0 {
                continue;
            }
            for l in 0..self.levels {
                let g: f64 = r
                    .iter()
                    .enumerate()
                    .map(|(o, ro)| ro * self.phi(t, o, self.mi.first[l]))
                    .sum();
                if g == 0.0 {
                    continue;
                }
                self.scatter_inner(t, l, grad, |row0, _, _, _| g * row0);
            }
        }
    }

    /// Adds `f(B, B', B'', d)` for every locally supported inner weight of
    /// block `(t, l)`.
    fn scatter_inner(
        &self,
        t: usize,
        l: usize,
        grad: &mut [f64],
        f: impl Fn(f64, f64, f64, usize) -> f64,
    ) {
        let n = self.inner_counts[l];
        let w = self.in_width[l];
        let block = self.in_block_start[t * self.levels + l];
        for d in 0..self.inputs {
            let first = self.in_first[l * self.inputs + d];
            let base = block + d * n + first;
            let r0 = self.in_row(l, d, 0);
            for j in 0..w {
                let b1 = if self.kin >= 1 { self.in_row(l, d, 1)[j] } else { 0.0 };
                let b2 = if self.kin >= 2 { self.in_row(l, d, 2)[j] } else { 0.0 };
                grad[base + j] += f(r0[j], b1, b2, d);
            }
        }
    }

    fn fill_gram(&mut self, t: usize) {
        let (levels, inputs) = (self.levels, self.inputs);
        for l in 0..levels {
            let a = &self.dy[(t * levels + l) * inputs..][..inputs];
            for k in 0..levels {
                let b = &self.dy[(t * levels + k) * inputs..][..inputs];
                self.gram[l * levels + k] = a.iter().zip(b).map(|(x, y)| x * y).sum();
            }
            self.hess[l] = self.ddy[(t * levels + l) * inputs..][..inputs].iter().sum();
        }
    }

    /// `Δ_x E_o` at the last evaluated point. Needs `kin >= 2`, `kout >= 2`.
    pub(crate) fn laplacian(&mut self, o: usize) -> f64 {
        let mut total = 0.0;
        for t in 0..self.trees {
            self.fill_gram(t);
            total += self.tree_laplacian(t, o);
        }
        total
    }

    fn tree_laplacian(&self, t: usize, o: usize) -> f64 {
        let levels = self.levels;
        let mut s = 0.0;
        for l in 0..levels {
            for k in 0..levels {
                s += self.phi(t, o, self.mi.second(l, k)) * self.gram[l * levels + k];
            }
            s += self.phi(t, o, self.mi.first[l]) * self.hess[l];
        }
        s
    }

    /// Adds `c · ∂(Δ_x E_o)/∂θ` to `grad` (inner part with respect to `v`).
    /// Needs `kin >= 2`, `kout >= 3`.
    pub(crate) fn add_laplacian_grad(&mut self, model: &ExSpliNet, o: usize, c: f64, grad: &mut [f64]) {
        let layout = model.layout();
        let levels = self.levels;
        for t in 0..self.trees {
            self.fill_gram(t);
            let start = layout.outer_range(o, t).start;
            for e in 0..self.n_local {
                let mut s = 0.0;
                for l in 0..levels {
                    for k in 0..levels {
                        s += self.prod(t, e, self.mi.second(l, k)) * self.gram[l * levels + k];
                    }
                    s += self.prod(t, e, self.mi.first[l]) * self.hess[l];
                }
                grad[start + self.flat[t * self.n_local + e]] += c * s;
            }
            for a in 0..levels {
                let mut coef_y = 0.0;
                for l in 0..levels {
                    for k in 0..levels {
                        coef_y += self.phi(t, o, self.mi.third(l, k, a)) * self.gram[l * levels + k];
                    }
                    coef_y += self.phi(t, o, self.mi.second(l, a)) * self.hess[l];
                }
                let coef_dd = self.phi(t, o, self.mi.first[a]);
                let inputs = self.inputs;
                let coef_d: Vec<f64> = (0..inputs)
                    .map(|d| {
                        2.0 * (0..levels)
                            .map(|k| {
                                self.phi(t, o, self.mi.second(a, k))
                                    * self.dy[(t * levels + k) * inputs + d]
                            })
                            .sum::<f64>()
                    })
                    .collect();
                self.scatter_inner(t, a, grad, |b0, b1, b2, d| {
                    c * (b0 * coef_y + b1 * coef_d[d] + b2 * coef_dd)
                });
            }
        }
    }
}

/// Converts the inner part of `grad` from `v`-space to raw `u`-space and
/// zeroes frozen blocks.
pub(crate) fn finish_inner_grad(model: &ExSpliNet, grad: &mut [f64]) {
    let cfg = model.config();
    let layout = model.layout();
    for t in 0..cfg.trees {
        for l in 0..cfg.levels() {
            let range = layout.inner_block(t, l);
            if model.is_frozen(t, l) {
                grad[range].fill(0.0);
            } else {
                let u = &model.params()[range.clone()];
                let v = &model.inner_v()[range.clone()];
                reparam_backward(u, v, &mut grad[range]);
            }
        }
    }
}

pub(crate) const CHUNK: usize = 64;
const CHUNKS_PER_GROUP: usize = 16;

/// Sums `f(ws, i, grad)` over `i in 0..n` with a gradient vector of length
/// `len`.
///
/// Items are processed in fixed chunks of [`CHUNK`], each accumulated
/// sequentially; chunk results are combined by a fixed pairwise tree. The
/// result is bitwise independent of the number of worker threads.
pub(crate) fn reduce_chunks<F>(
    model: &ExSpliNet,
    kin: usize,
    kout: usize,
    n: usize,
    len: usize,
    f: F,
) -> (f64, Vec<f64>)
where
    F: Fn(&mut Workspace, usize, &mut [f64]) -> f64 + Sync,
{
    let n_chunks = n.div_ceil(CHUNK);
    // binary-counter stack of (level, partial) keeps the tree shape fixed
    let mut stack: Vec<(usize, (f64, Vec<f64>))> = Vec::new();
    let mut c0 = 0;
    while c0 < n_chunks {
        let c1 = (c0 + CHUNKS_PER_GROUP).min(n_chunks);
        let parts: Vec<(f64, Vec<f64>)> = (c0..c1)
            .into_par_iter()
            .map(|c| {
                let mut ws = Workspace::new(model, kin, kout);
                let mut g = vec![0.0; len];
                let mut s = 0.0;
                for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                    s += f(&mut ws, i, &mut g);
                }
                (s, g)
            })
            .collect();
        for part in parts {
            let mut item = (0, part);
            while let Some((lvl, _)) = stack.last() {
                if *lvl != item.0 {
                    break;
                }
                let (lvl, left) = stack.pop().unwrap();
                item = (lvl + 1, add_pair(left, item.1));
            }
            stack.push(item);
        }
        c0 = c1;
    }
    let mut acc: Option<(f64, Vec<f64>)> = None;
    while let Some((_, part)) = stack.pop() {
        acc = Some(match acc {
            None => part,
            Some(right) => add_pair(part, right),
        });
    }
    acc.unwrap_or((0.0, vec![0.0; len]))
}

fn add_pair(mut a: (f64, Vec<f64>), b: (f64, Vec<f64>)) -> (f64, Vec<f64>) {
    a.0 += b.0;
    for (x, y) in a.1.iter_mut().zip(&b.1) {
        *x += y;
    }
    a
}

/// Forward pass over row-major inputs already checked to lie in the domain.
pub(crate) fn predict_rows(model: &ExSpliNet, inputs: &[f64]) -> Vec<f64> {
    let dim = model.config().inputs;
    let outs = model.config().outputs;
    let k = inputs.len() / dim;
    let mut result = vec![0.0; k * outs];
    result
        .par_chunks_mut(CHUNK * outs)
        .zip(inputs.par_chunks(CHUNK * dim))
        .for_each(|(out, xs)| {
            let mut ws = Workspace::new(model, 0, 0);
            for (o, x) in out.chunks_mut(outs).zip(xs.chunks(dim)) {
                ws.forward_into(model, x, o);
            }
        });
    result
}

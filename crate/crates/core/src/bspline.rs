//! Univariate B-splines on open-uniform knot vectors over `[0, 1]`.
//!
//! Basis indices are 1-based in every public type (`SparseBasis::offset`,
//! [`basis_oracle`]'s `n`), matching the usual `B_{N,p,n}` notation. Internal
//! helpers work 0-based.
//!
//! Evaluation uses the half-open interval convention `[ξ_m, ξ_{m+1})`, except at
//! `x = 1` where every function is defined by its limit from the left.

use crate::error::{check_unit, Error, Result};

/// Open-uniform knot sequence for `N` basis functions of degree `p`.
///
/// `p + 1` knots at 0, `p + 1` knots at 1 and `N - p - 1` equally spaced
/// interior knots with step `1 / (N - p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    count: usize,
    degree: usize,
    knots: Vec<f64>,
}

impl KnotVector {
    pub fn open_uniform(count: usize, degree: usize) -> Result<Self> {
        if count <= degree {
            return Err(Error::InvalidHyperparameter(format!(
                "basis count N = {count} must exceed degree p = {degree}"
            )));
        }
        let intervals = count - degree;
        let mut knots = Vec::with_capacity(count + degree + 1);
        knots.extend(std::iter::repeat_n(0.0, degree));
        knots.extend((0..=intervals).map(|i| i as f64 / intervals as f64));
        knots.extend(std::iter::repeat_n(1.0, degree));
        Ok(Self {
            count,
            degree,
            knots,
        })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of nonempty knot intervals, `N - p`.
    pub fn intervals(&self) -> usize {
        self.count - self.degree
    }

    /// 0-based knot index `μ` with `ξ[μ] <= x < ξ[μ+1]`, `p <= μ <= N-1`.
    /// `x = 1` maps to the last interval.
    pub(crate) fn span(&self, x: f64) -> usize {
        let (p, n) = (self.degree, self.count);
        let guess = (x * self.intervals() as f64).floor();
        let mut mu = if guess <= 0.0 {
            p
        } else {
            (p + guess as usize).min(n - 1)
        };
        while mu > p && x < self.knots[mu] {
            mu -= 1;
        }
        while mu < n - 1 && x >= self.knots[mu + 1] {
            mu += 1;
        }
        mu
    }

    /// Writes the `p + 1` basis values that can be nonzero at `x` into `out`
    /// and returns the 0-based index of the first one.
    pub(crate) fn basis_into(&self, x: f64, out: &mut [f64]) -> usize {
        let p = self.degree;
        let mu = self.span(x);
        let u = &self.knots;
        // left[j] = x - u[mu+1-j], right[j] = u[mu+j] - x
        let mut left = [0.0; MAX_STACK_DEGREE + 1];
        let mut right = [0.0; MAX_STACK_DEGREE + 1];
        if p > MAX_STACK_DEGREE {
            return self.basis_ders_into(x, 0, out, &mut DerivScratch::new(p));
        }
        if x == 1.0 {
            // the recurrence rounds `l / l` here; the left limit is exactly e_N
            out[..=p].fill(0.0);
            out[p] = 1.0;
            return mu - p;
        }
        out[0] = 1.0;
        for j in 1..=p {
            left[j] = x - u[mu + 1 - j];
            right[j] = u[mu + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = out[r] / (right[r + 1] + left[j - r]);
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
        mu - p
    }

    /// Basis values and their derivatives up to `order` at `x`.
    ///
    /// `out` is laid out row-major as `(order + 1) x (p + 1)`: row `k` holds the
    /// `k`-th derivatives of the `p + 1` locally supported functions. Rows with
    /// `k > p` are zero. Derivatives are right-hand derivatives at knots (left-hand at `x = 1`).
    pub(crate) fn basis_ders_into(
        &self,
        x: f64,
        order: usize,
        out: &mut [f64],
        scratch: &mut DerivScratch,
    ) -> usize {
        let p = self.degree;
        let w = p + 1;
        let mu = self.span(x);
        let u = &self.knots;
        scratch.ensure(p);
        let DerivScratch {
            ndu,
            a,
            left,
            right,
        } = scratch;

        // ndu[j][r] (row-major w x w): basis values in upper triangle, knot
        // differences in the lower one.
        ndu[0] = 1.0;
        for j in 1..=p {
            left[j] = x - u[mu + 1 - j];
            right[j] = u[mu + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j * w + r] = right[r + 1] + left[j - r];
                let temp = ndu[r * w + j - 1] / ndu[j * w + r];
                ndu[r * w + j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j * w + j] = saved;
        }
        for j in 0..=p {
            out[j] = ndu[j * w + p];
        }
        if x == 1.0 {
            out[..p].fill(0.0);
            out[p] = 1.0;
        }
        let top = order.min(p);
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0] = 1.0;
            for k in 1..=top {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    a[s2 * w] = a[s1 * w] / ndu[(pk + 1) * w + rk as usize];
                    d = a[s2 * w] * ndu[(rk as usize) * w + pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if r as isize - 1 <= pk as isize { k - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2 * w + j] = (a[s1 * w + j] - a[s1 * w + j - 1]) / ndu[(pk + 1) * w + idx];
                    d += a[s2 * w + j] * ndu[idx * w + pk];
                }
                if r <= pk {
                    a[s2 * w + k] = -a[s1 * w + k - 1] / ndu[(pk + 1) * w + r];
                    d += a[s2 * w + k] * ndu[r * w + pk];
                }
                out[k * w + r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = p as f64;
        for k in 1..=top {
            for j in 0..=p {
                out[k * w + j] *= factor;
            }
            factor *= (p - k) as f64;
        }
        for k in (top + 1)..=order {
            out[k * w..(k + 1) * w].fill(0.0);
        }
        mu - p
    }
}

const MAX_STACK_DEGREE: usize = 15;

/// Reusable buffers for [`KnotVector::basis_ders_into`].
#[derive(Debug, Clone, Default)]
pub(crate) struct DerivScratch {
    ndu: Vec<f64>,
    a: Vec<f64>,
    left: Vec<f64>,
    right: Vec<f64>,
}

impl DerivScratch {
    pub(crate) fn new(degree: usize) -> Self {
        let mut s = Self::default();
        s.ensure(degree);
        s
    }

    fn ensure(&mut self, degree: usize) {
        let w = degree + 1;
        if self.ndu.len() < w * w {
            self.ndu.resize(w * w, 0.0);
            self.a.resize(2 * w, 0.0);
            self.left.resize(w, 0.0);
            self.right.resize(w, 0.0);
        }
    }
}

/// The `p + 1` B-spline values that may be nonzero at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseBasis {
    /// 1-based index of `values[0]`.
    pub offset: usize,
    pub values: Vec<f64>,
}

impl SparseBasis {
    /// Expands to all `count` basis values.
    pub fn to_dense(&self, count: usize) -> Vec<f64> {
        let mut dense = vec![0.0; count];
        for (j, v) in self.values.iter().enumerate() {
            dense[self.offset - 1 + j] = *v;
        }
        dense
    }

    /// Value of the `n`-th (1-based) basis function, zero outside the window.
    pub fn get(&self, n: usize) -> f64 {
        if n < self.offset {
            return 0.0;
        }
        self.values.get(n - self.offset).copied().unwrap_or(0.0)
    }
}

/// A spline `Σ w_n B_{N,p,n}` on the open-uniform knots for `(N, p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spline1D {
    knots: KnotVector,
    weights: Vec<f64>,
}

impl Spline1D {
    pub fn new(knots: KnotVector, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != knots.count() {
            return Err(Error::shape(
                format!("{} weights", knots.count()),
                format!("{} weights", weights.len()),
            ));
        }
        Ok(Self { knots, weights })
    }

    pub fn knots(&self) -> &KnotVector {
        &self.knots
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        de_boor_eval(self, x)
    }
}

pub fn open_uniform_knots(count: usize, degree: usize) -> Result<KnotVector> {
    KnotVector::open_uniform(count, degree)
}

/// Literal two-term recursion for `B_{N,p,n}(x)`, `n` 1-based.
///
/// This is deliberately the slow textbook path; the fast evaluators are tested
/// against it.
pub fn basis_oracle(kv: &KnotVector, n: usize, x: f64) -> Result<f64> {
    check_unit(x)?;
    if n == 0 || n > kv.count() {
        return Err(Error::IndexOutOfRange {
            index: n,
            max: kv.count(),
        });
    }
    Ok(cox_de_boor(kv.knots(), n - 1, kv.degree(), x))
}

fn cox_de_boor(u: &[f64], i: usize, k: usize, x: f64) -> f64 {
    if u[i + k + 1] == u[i] {
        return 0.0;
    }
    if k == 0 {
        let inside = u[i] <= x && x < u[i + 1];
        // left limit at the right end: the last nonempty interval is closed
        let closing = x == 1.0 && u[i + 1] == 1.0 && u[i] < 1.0;
        return if inside || closing { 1.0 } else { 0.0 };
    }
    let mut value = 0.0;
    let d1 = u[i + k] - u[i];
    if d1 != 0.0 {
        value += (x - u[i]) / d1 * cox_de_boor(u, i, k - 1, x);
    }
    let d2 = u[i + k + 1] - u[i + 1];
    if d2 != 0.0 {
        value += (u[i + k + 1] - x) / d2 * cox_de_boor(u, i + 1, k - 1, x);
    }
    value
}

/// 1-based index window `[lo, hi]` containing every basis function that is
/// nonzero at `x`.
///
/// For `p >= 1` the window comes from `ζ = (1 - x) p + x N` and is clamped to
/// `[1, N]`; it may include zero entries. For `p = 0` it is the single active
/// index.
pub fn support_window(count: usize, degree: usize, x: f64) -> Result<(usize, usize)> {
    let kv = KnotVector::open_uniform(count, degree)?;
    check_unit(x)?;
    if degree == 0 {
        let m = kv.span(x) + 1;
        return Ok((m, m));
    }
    let zeta = (1.0 - x) * degree as f64 + x * count as f64;
    let lo = zeta.floor() + 1.0 - degree as f64;
    let hi = zeta.ceil();
    let clamp = |v: f64| v.clamp(1.0, count as f64) as usize;
    Ok((clamp(lo), clamp(hi)))
}

pub fn basis_sparse(count: usize, degree: usize, x: f64) -> Result<SparseBasis> {
    let kv = KnotVector::open_uniform(count, degree)?;
    sparse_basis(&kv, x)
}

pub fn sparse_basis(kv: &KnotVector, x: f64) -> Result<SparseBasis> {
    check_unit(x)?;
    let mut values = vec![0.0; kv.degree() + 1];
    let first = kv.basis_into(x, &mut values);
    Ok(SparseBasis {
        offset: first + 1,
        values,
    })
}

/// All `N` basis values at `x`.
pub fn basis_dense(kv: &KnotVector, x: f64) -> Result<Vec<f64>> {
    Ok(sparse_basis(kv, x)?.to_dense(kv.count()))
}

/// Evaluates a spline with the de Boor triangular scheme in `O(p²)`.
pub fn de_boor_eval(s: &Spline1D, x: f64) -> Result<f64> {
    check_unit(x)?;
    let kv = &s.knots;
    let p = kv.degree();
    let mu = kv.span(x);
    Ok(de_boor_at_span(kv.knots(), &s.weights, p, mu, x))
}

pub(crate) fn de_boor_at_span(u: &[f64], w: &[f64], p: usize, mu: usize, x: f64) -> f64 {
    let mut small = [0.0; MAX_STACK_DEGREE + 1];
    let mut heap;
    let d: &mut [f64] = if p <= MAX_STACK_DEGREE {
        &mut small[..=p]
    } else {
        heap = vec![0.0; p + 1];
        &mut heap
    };
    d.copy_from_slice(&w[mu - p..=mu]);
    for r in 0..p {
        for j in ((r + 1)..=p).rev() {
            // 0-based knot index of ξ_n for the weight d[j]
            let n = mu - p + j;
            let alpha = (x - u[n]) / (u[n + p - r] - u[n]);
            d[j] = alpha * d[j] + (1.0 - alpha) * d[j - 1];
        }
    }
    d[p]
}

/// Greville abscissae `ξ*_n = (ξ_{n+1} + … + ξ_{n+p}) / p`.
pub fn greville(count: usize, degree: usize) -> Result<Vec<f64>> {
    if degree == 0 {
        return Err(Error::InvalidHyperparameter(
            "Greville abscissae need degree p >= 1".into(),
        ));
    }
    let kv = KnotVector::open_uniform(count, degree)?;
    let u = kv.knots();
    Ok((0..count)
        .map(|i| u[i + 1..=i + degree].iter().sum::<f64>() / degree as f64)
        .collect())
}

/// Derivative weights `p (w_{n+1} - w_n) / (ξ_{n+p+1} - ξ_{n+1})` on the
/// knots for `(N - 1, p - 1)`.
pub(crate) fn derivative_weights(kv: &KnotVector, w: &[f64]) -> Vec<f64> {
    let p = kv.degree();
    let u = kv.knots();
    (0..kv.count() - 1)
        .map(|i| p as f64 * (w[i + 1] - w[i]) / (u[i + p + 1] - u[i + 1]))
        .collect()
}

/// The (right-hand) derivative of `s` as a spline of degree `p - 1` with
/// `N - 1` basis functions.
pub fn derivative_spline(s: &Spline1D) -> Result<Spline1D> {
    let kv = &s.knots;
    if kv.degree() == 0 {
        return Err(Error::DegreeTooLow {
            degree: 0,
            needed: "differentiation needs p >= 1",
        });
    }
    let lowered = KnotVector::open_uniform(kv.count() - 1, kv.degree() - 1)?;
    Spline1D::new(lowered, derivative_weights(kv, &s.weights))
}

/// Schoenberg quasi-interpolation weights `f(ξ*_n)`.
pub fn schoenberg_weights<F>(count: usize, degree: usize, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(f64) -> Result<f64>,
{
    greville(count, degree)?.into_iter().map(&mut f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knots_for_small_cases() {
        assert_eq!(open_uniform_knots(2, 1).unwrap().knots(), &[0.0, 0.0, 1.0, 1.0]);
        assert_eq!(
            open_uniform_knots(3, 1).unwrap().knots(),
            &[0.0, 0.0, 0.5, 1.0, 1.0]
        );
        let kv = open_uniform_knots(10, 2).unwrap();
        let mut expected = vec![0.0, 0.0];
        expected.extend((0..=8).map(|i| i as f64 / 8.0));
        expected.extend([1.0, 1.0]);
        assert_eq!(kv.knots(), expected.as_slice());
        assert_eq!(kv.knots().len(), 13);
    }

    #[test]
    fn knots_reject_bad_hyperparameters() {
        assert!(matches!(
            open_uniform_knots(2, 2),
            Err(Error::InvalidHyperparameter(_))
        ));
        assert!(open_uniform_knots(1, 0).is_ok());
    }

    #[test]
    fn oracle_hat_functions() {
        let kv = open_uniform_knots(2, 1).unwrap();
        assert!((basis_oracle(&kv, 2, 0.3).unwrap() - 0.3).abs() < 1e-15);
        assert!((basis_oracle(&kv, 1, 0.3).unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn oracle_last_function_is_one_at_right_end() {
        for (n, p) in [(2, 1), (5, 2), (10, 3), (4, 0), (7, 5)] {
            let kv = open_uniform_knots(n, p).unwrap();
            assert_eq!(basis_oracle(&kv, n, 1.0).unwrap(), 1.0, "N={n} p={p}");
        }
    }

    #[test]
    fn oracle_errors() {
        let kv = open_uniform_knots(3, 1).unwrap();
        assert!(matches!(basis_oracle(&kv, 1, 1.5), Err(Error::OutOfDomain { .. })));
        assert!(matches!(basis_oracle(&kv, 0, 0.5), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(basis_oracle(&kv, 4, 0.5), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn support_window_examples() {
        assert_eq!(support_window(10, 2, 0.0).unwrap(), (1, 2));
        assert_eq!(support_window(10, 2, 1.0).unwrap(), (9, 10));
        assert_eq!(support_window(2, 1, 0.5).unwrap(), (1, 2));
        // window contains every nonzero of the oracle
        let kv = open_uniform_knots(10, 2).unwrap();
        for x in [0.0, 1.0] {
            let (lo, hi) = support_window(10, 2, x).unwrap();
            for n in 1..=10 {
                if basis_oracle(&kv, n, x).unwrap() != 0.0 {
                    assert!(lo <= n && n <= hi);
                }
            }
        }
    }

    #[test]
    fn support_window_degree_zero_is_active_interval() {
        assert_eq!(support_window(4, 0, 0.3).unwrap(), (2, 2));
        assert_eq!(support_window(4, 0, 1.0).unwrap(), (4, 4));
    }

    #[test]
    fn sparse_basis_examples() {
        let b = basis_sparse(2, 1, 0.3).unwrap();
        assert_eq!(b.offset, 1);
        assert!((b.values[0] - 0.7).abs() < 1e-15 && (b.values[1] - 0.3).abs() < 1e-15);

        let b = basis_sparse(3, 1, 0.75).unwrap();
        assert_eq!(b.offset, 2);
        assert!((b.values[0] - 0.5).abs() < 1e-15 && (b.values[1] - 0.5).abs() < 1e-15);

        // 0.5 is an interior knot for (10, 2): the function starting there vanishes
        let b = basis_sparse(10, 2, 0.5).unwrap();
        assert_eq!(b.values.len(), 3);
        assert_eq!(b.values.iter().filter(|v| **v > 0.0).count(), 2);
        assert!((b.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let b = basis_sparse(10, 2, 0.53).unwrap();
        assert_eq!(b.values.iter().filter(|v| **v > 0.0).count(), 3);
        assert!((b.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sparse_basis_at_interior_knot_uses_right_interval() {
        // knots [0,0,.5,1,1]: x = 0.5 belongs to [0.5, 1)
        let b = basis_sparse(3, 1, 0.5).unwrap();
        assert_eq!(b.offset, 2);
        assert_eq!(b.values, vec![1.0, 0.0]);
    }

    #[test]
    fn de_boor_examples() {
        let kv = open_uniform_knots(2, 1).unwrap();
        let s = Spline1D::new(kv, vec![0.0, 1.0]).unwrap();
        assert!((de_boor_eval(&s, 0.8).unwrap() - 0.8).abs() < 1e-15);

        for (n, p) in [(4, 2), (7, 3), (12, 5)] {
            let kv = open_uniform_knots(n, p).unwrap();
            let ones = Spline1D::new(kv.clone(), vec![1.0; n]).unwrap();
            assert!((de_boor_eval(&ones, 0.41).unwrap() - 1.0).abs() < 1e-14);
            let id = Spline1D::new(kv, greville(n, p).unwrap()).unwrap();
            assert!((de_boor_eval(&id, 0.37).unwrap() - 0.37).abs() < 1e-14);
        }
    }

    #[test]
    fn spline_weight_count_checked() {
        let kv = open_uniform_knots(4, 2).unwrap();
        assert!(matches!(
            Spline1D::new(kv, vec![1.0; 3]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn greville_examples() {
        assert_eq!(greville(3, 1).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(greville(2, 1).unwrap(), vec![0.0, 1.0]);
        assert_eq!(greville(4, 2).unwrap(), vec![0.0, 0.25, 0.75, 1.0]);
        let g = greville(9, 3).unwrap();
        assert_eq!(g[0], 0.0);
        assert_eq!(g[8], 1.0);
        assert!(g[1..8].iter().all(|v| *v > 0.0 && *v < 1.0));
        assert!(greville(3, 0).is_err());
    }

    #[test]
    fn derivative_of_hat_combination_and_constant() {
        let kv = open_uniform_knots(2, 1).unwrap();
        let s = Spline1D::new(kv, vec![0.0, 1.0]).unwrap();
        let ds = derivative_spline(&s).unwrap();
        assert_eq!(ds.knots().degree(), 0);
        for x in [0.0, 0.2, 0.99] {
            assert!((ds.eval(x).unwrap() - 1.0).abs() < 1e-15);
        }
        let kv = open_uniform_knots(6, 3).unwrap();
        let c = Spline1D::new(kv, vec![2.5; 6]).unwrap();
        let dc = derivative_spline(&c).unwrap();
        assert!(dc.weights().iter().all(|w| *w == 0.0));
    }

    #[test]
    fn derivative_needs_positive_degree() {
        let kv = open_uniform_knots(3, 0).unwrap();
        let s = Spline1D::new(kv, vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(derivative_spline(&s), Err(Error::DegreeTooLow { .. })));
    }

    #[test]
    fn schoenberg_examples() {
        assert_eq!(
            schoenberg_weights(5, 2, |x| Ok(x)).unwrap(),
            greville(5, 2).unwrap()
        );
        assert_eq!(schoenberg_weights(4, 1, |_| Ok(3.0)).unwrap(), vec![3.0; 4]);
        let err = schoenberg_weights(4, 1, |_| Err(Error::Sampler("boom".into())));
        assert!(matches!(err, Err(Error::Sampler(_))));
    }

    #[test]
    fn ders_row_zero_matches_values() {
        let kv = open_uniform_knots(9, 3).unwrap();
        let mut scratch = DerivScratch::new(3);
        let mut ders = vec![0.0; 4 * 4];
        let mut vals = vec![0.0; 4];
        for x in [0.0, 0.13, 0.5, 0.77, 1.0] {
            let a = kv.basis_ders_into(x, 3, &mut ders, &mut scratch);
            let b = kv.basis_into(x, &mut vals);
            assert_eq!(a, b);
            for j in 0..4 {
                assert!((ders[j] - vals[j]).abs() < 1e-15);
            }
            // derivatives of a partition of unity sum to zero
            for k in 1..4 {
                let s: f64 = ders[k * 4..k * 4 + 4].iter().sum();
                assert!(s.abs() < 1e-9, "k={k} sum={s}");
            }
        }
    }
}

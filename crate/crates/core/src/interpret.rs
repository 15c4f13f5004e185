//! Reading a model as a forest of probabilistic trees.
//!
//! At level `ℓ` of tree `t` the outer basis value `B_{M_ℓ,q_ℓ,m}(y_{t,ℓ}(x))`
//! is read as the probability that `x` falls in hidden class `c_{ℓ,m}`.
//! Levels are independent, so the joint probability of a class tuple is the
//! product over levels, and each tree's contribution to output `o` is the
//! `w^{o,t}`-weighted sum of those joint probabilities.
//!
//! Function arguments are 0-based. Everything this module renders or
//! serializes (rules, gates, feature terms) uses 1-based indices.

use serde::Serialize;

use crate::bspline::{basis_dense, greville};
use crate::error::{check_unit, Error, Result};
use crate::model::ExSpliNet;
use crate::tensor::{increment, WeightTensor};
use crate::training::argmax;

/// Gating probabilities over the `M_ℓ` hidden classes of one level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelDistribution {
    pub tree: usize,
    pub level: usize,
    pub probabilities: Vec<f64>,
}

fn check_tree_level(model: &ExSpliNet, t: usize, l: Option<usize>) -> Result<()> {
    let cfg = model.config();
    if t >= cfg.trees {
        return Err(Error::IndexOutOfRange {
            index: t,
            max: cfg.trees - 1,
        });
    }
    if let Some(l) = l {
        if l >= cfg.levels() {
            return Err(Error::IndexOutOfRange {
                index: l,
                max: cfg.levels() - 1,
            });
        }
    }
    Ok(())
}

pub fn level_distribution(model: &ExSpliNet, t: usize, l: usize, x: &[f64]) -> Result<LevelDistribution> {
    check_tree_level(model, t, Some(l))?;
    let y = model.inner_feature(t, l, x)?.clamp(0.0, 1.0);
    Ok(LevelDistribution {
        tree: t,
        level: l,
        probabilities: basis_dense(&model.outer_knots[l], y)?,
    })
}

/// Outer product of the level distributions of tree `t`, shaped like the
/// outer weight tensors.
pub fn joint_distribution(model: &ExSpliNet, t: usize, x: &[f64]) -> Result<WeightTensor> {
    check_tree_level(model, t, None)?;
    let cfg = model.config();
    let levels = (0..cfg.levels())
        .map(|l| level_distribution(model, t, l, x).map(|d| d.probabilities))
        .collect::<Result<Vec<_>>>()?;
    Ok(WeightTensor::from_fn(cfg.outer_counts.clone(), |idx| {
        idx.iter().zip(&levels).map(|(&m, p)| p[m]).product()
    }))
}

/// `Σ_m w^{o,t}_m · P(x ∈ C_m)`, which equals tree `t`'s contribution to
/// output `o`.
pub fn reconstruct(model: &ExSpliNet, o: usize, t: usize, x: &[f64]) -> Result<f64> {
    if o >= model.config().outputs {
        return Err(Error::IndexOutOfRange {
            index: o,
            max: model.config().outputs - 1,
        });
    }
    let joint = joint_distribution(model, t, x)?;
    Ok(model
        .outer(o, t)
        .iter()
        .zip(joint.values())
        .map(|(w, p)| w * p)
        .sum())
}

/// One retained inner weight `v^{t,ℓ,d}_n` (1-based `input` and `basis`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureTerm {
    pub input: usize,
    pub basis: usize,
    pub weight: f64,
}

/// For `p_ℓ = 1`, `N_ℓ = 2` the feature is exactly affine:
/// `y = intercept + Σ_d slopes[d] · x_d`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AffineFeature {
    pub intercept: f64,
    pub slopes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureSummary {
    pub tree: usize,
    pub level: usize,
    pub threshold: f64,
    pub terms: Vec<FeatureTerm>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub affine: Option<AffineFeature>,
}

impl FeatureSummary {
    /// Inputs (0-based) ordered by influence: by absolute slope for affine
    /// features, otherwise by the largest retained weight. Ties keep the
    /// lower index.
    pub fn ranked_inputs(&self) -> Vec<usize> {
        let d = match &self.affine {
            Some(a) => a.slopes.len(),
            None => self.terms.iter().map(|t| t.input).max().unwrap_or(0),
        };
        let score = |i: usize| match &self.affine {
            Some(a) => a.slopes[i].abs(),
            None => self
                .terms
                .iter()
                .filter(|t| t.input == i + 1)
                .map(|t| t.weight)
                .fold(0.0, f64::max),
        };
        let mut idx: Vec<usize> = (0..d).collect();
        idx.sort_by(|&a, &b| score(b).total_cmp(&score(a)).then(a.cmp(&b)));
        idx
    }

    fn render(&self, names: &[String]) -> String {
        let var = |d: usize| match names.get(d - 1) {
            Some(n) => format!("x_{d} ({n})"),
            None => format!("x_{d}"),
        };
        let mut s = String::new();
        if let Some(a) = &self.affine {
            s.push_str(&format!("y_{} = {:.3}", self.level, a.intercept));
            for (d, c) in a.slopes.iter().enumerate() {
                if c.abs() >= self.threshold {
                    let sign = if *c < 0.0 { '-' } else { '+' };
                    s.push_str(&format!(" {sign} {:.3} {}", c.abs(), var(d + 1)));
                }
            }
            s.push('\n');
        }
        if self.terms.is_empty() {
            s.push_str(&format!("    no inner weight reaches {}\n", self.threshold));
        }
        for t in &self.terms {
            s.push_str(&format!(
                "    v[{}] on {} = {:.4}\n",
                t.basis,
                var(t.input),
                t.weight
            ));
        }
        s
    }
}

pub fn feature_summary(model: &ExSpliNet, t: usize, l: usize, threshold: f64) -> Result<FeatureSummary> {
    check_tree_level(model, t, Some(l))?;
    if !(threshold > 0.0) {
        return Err(Error::InvalidHyperparameter(format!(
            "pruning threshold must be positive, got {threshold}"
        )));
    }
    let cfg = model.config();
    let mut terms = Vec::new();
    for d in 0..cfg.inputs {
        for (n, &v) in model.v(t, l, d).iter().enumerate() {
            if v >= threshold {
                terms.push(FeatureTerm {
                    input: d + 1,
                    basis: n + 1,
                    weight: v,
                });
            }
        }
    }
    let affine = (cfg.inner_degrees[l] == 1 && cfg.inner_counts[l] == 2).then(|| {
        let mut intercept = 0.0;
        let slopes = (0..cfg.inputs)
            .map(|d| {
                let v = model.v(t, l, d);
                intercept += v[0];
                v[1] - v[0]
            })
            .collect();
        AffineFeature { intercept, slopes }
    });
    Ok(FeatureSummary {
        tree: t + 1,
        level: l + 1,
        threshold,
        terms,
        affine,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateKind {
    /// Where the class's hat function is the largest (`q = 1`).
    Dominance,
    /// The indicator cell `[lo, hi)` (`q = 0`).
    Cell,
    /// Support of the gating spline (`q >= 2`).
    Support,
}

/// Interval description of hidden class `c_{level,class}` on the feature
/// axis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Gate {
    pub level: usize,
    pub class: usize,
    pub kind: GateKind,
    pub lo: f64,
    pub hi: f64,
}

impl Gate {
    fn render(&self) -> String {
        let close = if self.kind == GateKind::Cell && self.hi < 1.0 {
            ')'
        } else {
            ']'
        };
        let what = match self.kind {
            GateKind::Dominance => "most likely",
            GateKind::Cell => "exactly",
            GateKind::Support => "possible",
        };
        format!(
            "c_{{{},{}}}: y_{} in [{:.3}, {:.3}{close} ({what})",
            self.level, self.class, self.level, self.lo, self.hi
        )
    }
}

/// Gates for one level, 0-based `l`.
pub fn level_gates(model: &ExSpliNet, l: usize) -> Result<Vec<Gate>> {
    let cfg = model.config();
    if l >= cfg.levels() {
        return Err(Error::IndexOutOfRange {
            index: l,
            max: cfg.levels() - 1,
        });
    }
    let (m, q) = (cfg.outer_counts[l], cfg.outer_degrees[l]);
    let gate = |c: usize, kind, lo: f64, hi: f64| Gate {
        level: l + 1,
        class: c + 1,
        kind,
        lo,
        hi,
    };
    Ok(match q {
        0 => (0..m)
            .map(|c| gate(c, GateKind::Cell, c as f64 / m as f64, (c + 1) as f64 / m as f64))
            .collect(),
        1 => {
            let g = greville(m, 1)?;
            (0..m)
                .map(|c| {
                    let lo = if c == 0 { 0.0 } else { (g[c - 1] + g[c]) / 2.0 };
                    let hi = if c + 1 == m { 1.0 } else { (g[c] + g[c + 1]) / 2.0 };
                    gate(c, GateKind::Dominance, lo, hi)
                })
                .collect()
        }
        _ => {
            let k = model.outer_knots[l].knots();
            (0..m)
                .map(|c| gate(c, GateKind::Support, k[c], k[c + q + 1]))
                .collect()
        }
    })
}

/// `[w] : c_{1,m_1} ∧ … ∧ c_{L,m_L} ⇒ output`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rule {
    pub output: usize,
    pub tree: usize,
    pub classes: Vec<usize>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuleSet {
    pub threshold: f64,
    /// Whether every tree's weights form a probability distribution over
    /// outputs for each class tuple.
    pub stochastic: bool,
    pub output_names: Vec<String>,
    pub feature_names: Vec<String>,
    pub features: Vec<FeatureSummary>,
    pub gates: Vec<Gate>,
    pub rules: Vec<Rule>,
}

impl RuleSet {
    pub fn with_names(mut self, outputs: &[String], features: &[String]) -> Self {
        self.output_names = outputs.to_vec();
        self.feature_names = features.to_vec();
        self
    }

    fn output_name(&self, o: usize) -> String {
        self.output_names
            .get(o - 1)
            .cloned()
            .unwrap_or_else(|| format!("output {o}"))
    }

    pub fn render_rule(&self, r: &Rule) -> String {
        let conds: Vec<String> = r
            .classes
            .iter()
            .enumerate()
            .map(|(l, m)| format!("c_{{{},{m}}}", l + 1))
            .collect();
        format!(
            "[{:.3}] : {} ⇒ {}",
            r.weight,
            conds.join(" ∧ "),
            self.output_name(r.output)
        )
    }

    pub fn to_text(&self) -> String {
        let label = if self.stochastic {
            "probabilities"
        } else {
            "weights (rows are not stochastic, so these are not probabilities)"
        };
        let mut s = format!("rule values: {label}\nthreshold: {}\n", self.threshold);
        let trees = self.features.iter().map(|f| f.tree).max().unwrap_or(0);
        for t in 1..=trees {
            s.push_str(&format!("\ntree {t}\n"));
            for f in self.features.iter().filter(|f| f.tree == t) {
                s.push_str(&format!("  level {} feature:\n", f.level));
                s.push_str(&indent(&f.render(&self.feature_names), "  "));
            }
            s.push_str("  gates:\n");
            for g in &self.gates {
                s.push_str(&format!("    {}\n", g.render()));
            }
            s.push_str("  rules:\n");
            for r in self.rules.iter().filter(|r| r.tree == t) {
                s.push_str(&format!("    {}\n", self.render_rule(r)));
            }
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }
}

fn indent(text: &str, prefix: &str) -> String {
    text.lines().map(|l| format!("{prefix}{l}\n")).collect()
}

const STOCHASTIC_TOL: f64 = 1e-6;

fn is_stochastic(model: &ExSpliNet) -> bool {
    let cfg = model.config();
    let size = model.layout().outer_size();
    (0..cfg.trees).all(|t| {
        (0..size).all(|m| {
            let col: Vec<f64> = (0..cfg.outputs).map(|o| model.outer(o, t)[m]).collect();
            col.iter().all(|w| *w >= -STOCHASTIC_TOL)
                && (col.iter().sum::<f64>() - 1.0).abs() <= STOCHASTIC_TOL
        })
    })
}

/// Feature summaries, gates and one rule per `(o, t, class tuple)`.
pub fn extract_rules(model: &ExSpliNet, threshold: f64) -> Result<RuleSet> {
    let cfg = model.config();
    let mut features = Vec::new();
    for t in 0..cfg.trees {
        for l in 0..cfg.levels() {
            features.push(feature_summary(model, t, l, threshold)?);
        }
    }
    let mut gates = Vec::new();
    for l in 0..cfg.levels() {
        gates.extend(level_gates(model, l)?);
    }
    let mut rules = Vec::new();
    for t in 0..cfg.trees {
        let mut idx = vec![0; cfg.levels()];
        for m in 0..model.layout().outer_size() {
            for o in 0..cfg.outputs {
                rules.push(Rule {
                    output: o + 1,
                    tree: t + 1,
                    classes: idx.iter().map(|i| i + 1).collect(),
                    weight: model.outer(o, t)[m],
                });
            }
            increment(&mut idx, &cfg.outer_counts);
        }
    }
    Ok(RuleSet {
        threshold,
        stochastic: is_stochastic(model),
        output_names: Vec::new(),
        feature_names: Vec::new(),
        features,
        gates,
        rules,
    })
}

/// Most probable class tuple of one tree at a point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreePath {
    pub tree: usize,
    /// 1-based class per level.
    pub classes: Vec<usize>,
    pub probability: f64,
    /// `w^{o,t}` at that tuple, per output.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Explanation {
    /// 0-based argmax of the outputs, lowest index on ties.
    pub label: usize,
    pub outputs: Vec<f64>,
    pub paths: Vec<TreePath>,
}

pub fn predict_explain(model: &ExSpliNet, x: &[f64]) -> Result<Explanation> {
    for &v in x {
        check_unit(v)?;
    }
    let cfg = model.config();
    let outputs = model.forward(x)?;
    let mut paths = Vec::with_capacity(cfg.trees);
    for t in 0..cfg.trees {
        let joint = joint_distribution(model, t, x)?;
        let flat = argmax(joint.values());
        let strides = joint.strides();
        let classes = strides
            .iter()
            .zip(&cfg.outer_counts)
            .map(|(s, m)| (flat / s) % m + 1)
            .collect();
        paths.push(TreePath {
            tree: t + 1,
            classes,
            probability: joint.values()[flat],
            weights: (0..cfg.outputs).map(|o| model.outer(o, t)[flat]).collect(),
        });
    }
    Ok(Explanation {
        label: argmax(&outputs),
        outputs,
        paths,
    })
}

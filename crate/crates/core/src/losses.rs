//! Supervised cross-entropy, the three representation dissimilarities and
//! the mini-batch hint penalty.
//!
//! The hint penalty over a mini-batch is
//!
//! ```text
//! J_H = 1/S' · Σ_s 1/n_s · Σ_{i∈s} 1/(n_s−1) · Σ_{j∈s, j≠i} C(r_i, r_j)
//! ```
//!
//! where `s` runs over the classes with at least two rows in the batch,
//! `S'` counts those classes and `n_s` is the number of rows of class `s`.
//! Pairs are ordered, so every unordered pair contributes twice and each
//! member receives gradient from both orderings.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Gradients, NetworkSplit};
use crate::tensor::{Tensor, TensorError};

/// Largest cosine used in the angular-similarity derivative. Keeps
/// `1/√(1−c²)` bounded at aligned pairs.
pub const AS_COS_LIMIT: f64 = 1.0 - 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    /// Squared Euclidean distance `Σ (a_v − b_v)²`.
    Sed,
    /// Normalized Manhattan distance `(1/V) Σ |a_v − b_v|`.
    Nmd,
    /// Angle `arccos(⟨a,b⟩ / (‖a‖‖b‖))`.
    As,
}

impl Measure {
    pub const ALL: [Measure; 3] = [Measure::Sed, Measure::Nmd, Measure::As];

    pub fn name(self) -> &'static str {
        match self {
            Measure::Sed => "sed",
            Measure::Nmd => "nmd",
            Measure::As => "as",
        }
    }

    /// Value of the measure. `rows` name the operands in error messages.
    pub fn value(self, a: &[f64], b: &[f64], rows: (usize, usize)) -> Result<f64> {
        check_pair(a, b)?;
        Ok(match self {
            Measure::Sed => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
            Measure::Nmd => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64,
            Measure::As => {
                let (_, na2, nb2) = dots(a, b);
                check_norms(na2, nb2, rows)?;
                angle(a, b, na2.sqrt(), nb2.sqrt())
            }
        })
    }

    /// Adds `weight · ∂C/∂a` to `ga` and `weight · ∂C/∂b` to `gb`, returning
    /// the unweighted value.
    pub fn accumulate(
        self,
        a: &[f64],
        b: &[f64],
        weight: f64,
        ga: &mut [f64],
        gb: &mut [f64],
        rows: (usize, usize),
    ) -> Result<f64> {
        check_pair(a, b)?;
        match self {
            Measure::Sed => {
                let mut total = 0.0;
                for v in 0..a.len() {
                    let d = a[v] - b[v];
                    total += d * d;
                    ga[v] += weight * 2.0 * d;
                    gb[v] -= weight * 2.0 * d;
                }
                Ok(total)
            }
            Measure::Nmd => {
                let inv = 1.0 / a.len() as f64;
                let mut total = 0.0;
                for v in 0..a.len() {
                    let d = a[v] - b[v];
                    total += d.abs();
                    let s = if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    ga[v] += weight * inv * s;
                    gb[v] -= weight * inv * s;
                }
                Ok(total * inv)
            }
            Measure::As => {
                let (dot, na2, nb2) = dots(a, b);
                check_norms(na2, nb2, rows)?;
                let (na, nb) = (na2.sqrt(), nb2.sqrt());
                let c = cosine(dot, na2, nb2);
                let cc = c.clamp(-AS_COS_LIMIT, AS_COS_LIMIT);
                let dacos = -1.0 / (1.0 - cc * cc).sqrt();
                let inv_ab = 1.0 / (na * nb);
                for v in 0..a.len() {
                    let dca = b[v] * inv_ab - c * a[v] / na2;
                    let dcb = a[v] * inv_ab - c * b[v] / nb2;
                    ga[v] += weight * dacos * dca;
                    gb[v] += weight * dacos * dcb;
                }
                Ok(angle(a, b, na, nb))
            }
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Measure {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sed" => Ok(Measure::Sed),
            "nmd" => Ok(Measure::Nmd),
            "as" => Ok(Measure::As),
            other => Err(format!("unknown measure `{other}` (expected sed, nmd or as)")),
        }
    }
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(TensorError::Shape {
            op: "dissimilarity",
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        }
        .into());
    }
    if a.is_empty() {
        return Err(Error::Config("representation dimension must be at least 1".into()));
    }
    Ok(())
}

fn dots(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let mut dot = 0.0;
    let mut na2 = 0.0;
    let mut nb2 = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na2 += x * x;
        nb2 += y * y;
    }
    (dot, na2, nb2)
}

fn check_norms(na2: f64, nb2: f64, rows: (usize, usize)) -> Result<()> {
    if na2 <= 0.0 {
        return Err(Error::ZeroNorm { row: rows.0 });
    }
    if nb2 <= 0.0 {
        return Err(Error::ZeroNorm { row: rows.1 });
    }
    Ok(())
}

fn cosine(dot: f64, na2: f64, nb2: f64) -> f64 {
    dot / (na2 * nb2).sqrt()
}

/// `arccos` of the cosine, evaluated as `2·atan2(‖â − b̂‖, ‖â + b̂‖)` on the
/// unit vectors. Exact at identical inputs and accurate near 0 and π.
fn angle(a: &[f64], b: &[f64], na: f64, nb: f64) -> f64 {
    let (mut diff, mut sum) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (p, q) = (x * nb, y * na);
        diff += (p - q) * (p - q);
        sum += (p + q) * (p + q);
    }
    2.0 * diff.sqrt().atan2(sum.sqrt())
}

/// Value and gradients of a single dissimilarity evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTerm {
    pub value: f64,
    pub grad_a: Vec<f64>,
    pub grad_b: Vec<f64>,
}

pub fn dissimilarity(a: &[f64], b: &[f64], measure: Measure) -> Result<PairTerm> {
    let mut grad_a = vec![0.0; a.len()];
    let mut grad_b = vec![0.0; b.len()];
    let value = measure.accumulate(a, b, 1.0, &mut grad_a, &mut grad_b, (0, 1))?;
    Ok(PairTerm { value, grad_a, grad_b })
}

/// Mean negative log-likelihood of the true classes and its gradient with
/// respect to the probabilities.
pub fn cross_entropy(probs: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (rows, classes) = match probs.shape() {
        &[r, c] => (r, c),
        other => {
            return Err(TensorError::Dimension {
                op: "cross_entropy",
                shape: other.to_vec(),
                reason: "probabilities must be B×S",
            }
            .into())
        }
    };
    if labels.len() != rows {
        return Err(TensorError::Shape {
            op: "cross_entropy",
            lhs: probs.shape().to_vec(),
            rhs: vec![labels.len()],
        }
        .into());
    }
    if rows == 0 {
        return Err(Error::Config("cross-entropy of an empty batch".into()));
    }
    let inv = 1.0 / rows as f64;
    let mut grad = vec![0.0; probs.len()];
    let mut loss = 0.0;
    for (row, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::LabelRange { row, label: y, classes });
        }
        let p = probs.row(row)[y].max(f64::MIN_POSITIVE);
        loss -= p.ln();
        grad[row * classes + y] = -inv / p;
    }
    Ok((loss * inv, Tensor::new(probs.shape().to_vec(), grad)?))
}

/// Tapped representations of a mini-batch together with its per-class
/// row lists.
#[derive(Debug, Clone)]
pub struct RepresentationBatch<'a> {
    reps: &'a Tensor,
    labels: &'a [usize],
    classes: BTreeMap<usize, Vec<usize>>,
}

impl<'a> RepresentationBatch<'a> {
    /// `reps` is read as `B × V` with `V` the product of the trailing axes.
    pub fn new(reps: &'a Tensor, labels: &'a [usize]) -> Result<Self> {
        if reps.rows() != labels.len() || reps.ndim() < 2 {
            return Err(TensorError::Shape {
                op: "RepresentationBatch",
                lhs: reps.shape().to_vec(),
                rhs: vec![labels.len()],
            }
            .into());
        }
        if reps.row_len() == 0 {
            return Err(Error::Config("representation dimension must be at least 1".into()));
        }
        let mut classes: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &y) in labels.iter().enumerate() {
            classes.entry(y).or_default().push(i);
        }
        Ok(Self { reps, labels, classes })
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.reps.row_len()
    }

    pub fn labels(&self) -> &[usize] {
        self.labels
    }

    pub fn class_rows(&self) -> &BTreeMap<usize, Vec<usize>> {
        &self.classes
    }

    /// Classes contributing pairs (at least two rows).
    pub fn paired_classes(&self) -> impl Iterator<Item = (usize, &[usize])> {
        self.classes
            .iter()
            .filter(|(_, rows)| rows.len() >= 2)
            .map(|(&c, rows)| (c, rows.as_slice()))
    }
}

/// Mini-batch hint penalty and its gradient with respect to the
/// representations. Singleton classes contribute nothing and are left out
/// of the class average.
pub fn hint_penalty_batch(batch: &RepresentationBatch<'_>, measure: Measure) -> Result<(f64, Tensor)> {
    let dim = batch.dim();
    let mut grad = vec![0.0; batch.reps.len()];
    let paired = batch.paired_classes().count();
    if paired == 0 {
        return Ok((0.0, Tensor::new(batch.reps.shape().to_vec(), grad)?));
    }
    let outer = 1.0 / paired as f64;
    let mut total = 0.0;
    let mut gi = vec![0.0; dim];
    let mut gj = vec![0.0; dim];
    for (_, rows) in batch.paired_classes() {
        let n = rows.len() as f64;
        let w = outer / (n * (n - 1.0));
        let mut class_sum = 0.0;
        for &i in rows {
            for &j in rows {
                if i == j {
                    continue;
                }
                gi.fill(0.0);
                gj.fill(0.0);
                class_sum += measure.accumulate(batch.reps.row(i), batch.reps.row(j), w, &mut gi, &mut gj, (i, j))?;
                for (g, v) in grad[i * dim..(i + 1) * dim].iter_mut().zip(&gi) {
                    *g += v;
                }
                for (g, v) in grad[j * dim..(j + 1) * dim].iter_mut().zip(&gj) {
                    *g += v;
                }
            }
        }
        total += class_sum / (n * (n - 1.0));
    }
    Ok((total * outer, Tensor::new(batch.reps.shape().to_vec(), grad)?))
}

/// Value-only hint penalty. Evaluates each unordered pair once; the measures
/// are symmetric so this equals the ordered-pair value of
/// [`hint_penalty_batch`] up to rounding.
pub fn hint_penalty_value(batch: &RepresentationBatch<'_>, measure: Measure) -> Result<f64> {
    let paired = batch.paired_classes().count();
    if paired == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (_, rows) in batch.paired_classes() {
        let n = rows.len() as f64;
        let mut class_sum = 0.0;
        for (k, &i) in rows.iter().enumerate() {
            for &j in &rows[k + 1..] {
                class_sum += measure.value(batch.reps.row(i), batch.reps.row(j), (i, j))?;
            }
        }
        total += 2.0 * class_sum / (n * (n - 1.0));
    }
    Ok(total / paired as f64)
}

/// Weights and placement of the hint term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HintConfig {
    pub measure: Measure,
    pub gamma: f64,
    pub lambda: f64,
    /// Number of layers in Γ; the hint acts on the output of layer `tap−1`.
    pub tap: usize,
}

impl Default for HintConfig {
    fn default() -> Self {
        Self {
            measure: Measure::Sed,
            gamma: 1.0,
            lambda: 1.0,
            tap: 3,
        }
    }
}

impl HintConfig {
    pub fn unregularized(tap: usize) -> Self {
        Self {
            lambda: 0.0,
            tap,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be a finite value ≥ 0, got {}", self.gamma)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be a finite value ≥ 0, got {}", self.lambda)));
        }
        if self.tap == 0 {
            return Err(Error::Config("tap must be at least 1".into()));
        }
        Ok(())
    }

    pub fn hint_active(&self) -> bool {
        self.lambda > 0.0
    }
}

/// The three reported parts of the training objective on one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub supervised: f64,
    pub hint: f64,
    pub total: f64,
}

fn prepare(net: &mut NetworkSplit, config: &HintConfig) -> Result<()> {
    config.validate()?;
    net.set_tap(config.tap)
}

/// `J = γ·J_sup + λ·J_H` on one batch. With `λ = 0` the hint term is not
/// evaluated and reported as zero.
pub fn full_objective(net: &mut NetworkSplit, x: &Tensor, labels: &[usize], config: &HintConfig) -> Result<Objective> {
    prepare(net, config)?;
    let taps = net.forward_with_taps(x)?;
    let (sup, _) = cross_entropy(taps.probs(), labels)?;
    let hint = if config.hint_active() {
        hint_penalty_batch(&RepresentationBatch::new(taps.tapped(), labels)?, config.measure)?.0
    } else {
        0.0
    };
    let total = if config.hint_active() {
        config.gamma * sup + config.lambda * hint
    } else {
        config.gamma * sup
    };
    Ok(Objective {
        supervised: sup,
        hint,
        total,
    })
}

/// Objective value together with `γ·∇J_sup + λ·∇J_H`. The hint part only
/// reaches θ_Γ.
pub fn objective_gradients(
    net: &mut NetworkSplit,
    x: &Tensor,
    labels: &[usize],
    config: &HintConfig,
) -> Result<(Objective, Gradients)> {
    prepare(net, config)?;
    let depth = net.depth();
    let tap = net.tap();
    let taps = net.forward_with_taps(x)?;
    let (sup, dprobs) = cross_entropy(taps.probs(), labels)?;
    let hint_part = if config.hint_active() {
        Some(hint_penalty_batch(&RepresentationBatch::new(taps.tapped(), labels)?, config.measure)?)
    } else {
        None
    };
    let mut grads = net.backward_from(depth - 1, &dprobs)?;
    grads.scale(config.gamma);
    let mut hint = 0.0;
    let mut total = config.gamma * sup;
    if let Some((value, dreps)) = hint_part {
        let hg = net.backward_from(tap - 1, &dreps)?;
        grads.add_scaled(&hg, config.lambda)?;
        hint = value;
        total += config.lambda * value;
    }
    Ok((
        Objective {
            supervised: sup,
            hint,
            total,
        },
        grads,
    ))
}

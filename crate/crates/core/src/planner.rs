//! Group-count selection.
//!
//! A unit block multiplies the gradient variance by
//! `K(G) = (n_out + 4G) / n_in`. The real-valued `G` with `K = 1` is
//! `(n_in − n_out)/4`; the practical choice is the divisor of `n_out`
//! nearest to it on a log scale after clamping to `[1, n_out]`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub n_in: usize,
    pub n_out: usize,
    pub activation: ActivationKind,
    /// Forward over backward activation gain, `F/B`.
    pub gain_ratio: f64,
}

impl LayerSpec {
    pub fn new(n_in: usize, n_out: usize) -> Self {
        LayerSpec {
            n_in,
            n_out,
            activation: ActivationKind::Relu,
            gain_ratio: 1.0,
        }
    }

    pub fn with_activation(mut self, activation: ActivationKind) -> Self {
        self.activation = activation;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseLabel {
    /// `n_in ≤ n_out`: K(G) > 1 for every G, take G = 1.
    Case1LowerBound,
    /// `n_in ≥ 5·n_out`: K(G) ≤ 1 for every G, take G = n_out.
    Case2UpperBound,
    Case3DivisorSearch,
}

impl CaseLabel {
    pub fn classify(n_in: f64, n_out: f64) -> Self {
        if n_in <= n_out {
            CaseLabel::Case1LowerBound
        } else if n_in >= 5.0 * n_out {
            CaseLabel::Case2UpperBound
        } else {
            CaseLabel::Case3DivisorSearch
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CaseLabel::Case1LowerBound => "case1_lower_bound",
            CaseLabel::Case2UpperBound => "case2_upper_bound",
            CaseLabel::Case3DivisorSearch => "case3_divisor_search",
        }
    }
}

impl fmt::Display for CaseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub n_in: usize,
    pub n_out: usize,
    pub activation: ActivationKind,
    /// `F/B` actually used for this layer.
    pub gain_ratio: f64,
    pub g_ideal: f64,
    pub g_clamped: f64,
    pub g_practical: usize,
    pub k_at_practical: f64,
    pub case_label: CaseLabel,
    /// Divisor minimizing `|K(d) − 1|` in linear scale.
    pub g_k_criterion: usize,
    pub k_at_k_criterion: f64,
}

impl LayerPlan {
    pub fn criteria_disagree(&self) -> bool {
        self.g_practical != self.g_k_criterion
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPlan {
    pub layers: Vec<LayerPlan>,
}

/// Measured `(F, B)` activation gains keyed by activation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GainTable {
    entries: BTreeMap<String, (f64, f64)>,
}

impl GainTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, kind: ActivationKind, forward: f64, backward: f64) {
        self.entries.insert(kind.to_string(), (forward, backward));
    }

    pub fn get(&self, kind: ActivationKind) -> Option<(f64, f64)> {
        self.entries.get(&kind.to_string()).copied()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// `(n_in − n_out) / 4`, unclamped.
pub fn ideal_groups(n_in: usize, n_out: usize) -> f64 {
    (n_in as f64 - n_out as f64) / 4.0
}

/// `((F/B)·n_in − n_out) / 4` for an activation with forward gain `F` and
/// backward gain `B`.
pub fn ideal_groups_generalized(n_in: usize, n_out: usize, forward_gain: f64, backward_gain: f64) -> Result<f64> {
    if !(forward_gain > 0.0 && backward_gain > 0.0) || !forward_gain.is_finite() || !backward_gain.is_finite() {
        return Err(Error::domain(format!(
            "activation gains must be positive, got F={forward_gain}, B={backward_gain}"
        )));
    }
    Ok(((forward_gain / backward_gain) * n_in as f64 - n_out as f64) / 4.0)
}

/// `K(G) = (n_out + 4G) / n_in`
pub fn k_ratio(n_in: usize, n_out: usize, g: f64) -> f64 {
    (n_out as f64 + 4.0 * g) / n_in as f64
}

/// All positive divisors of `n`, ascending. Empty for `n = 0`.
pub fn divisors(n: usize) -> Vec<usize> {
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut d = 1usize;
    while d.saturating_mul(d) <= n {
        if n % d == 0 {
            small.push(d);
            if d != n / d {
                large.push(n / d);
            }
        }
        d += 1;
    }
    small.extend(large.into_iter().rev());
    small
}

/// Clamps to `[1, n_out]`: lower bound first, then upper bound.
pub fn clamp_groups(g_ideal: f64, n_out: usize) -> f64 {
    g_ideal.max(1.0).min(n_out as f64)
}

/// The divisor of `n_out` nearest to `target` in log₂ distance, ties going
/// to the smaller divisor.
pub fn nearest_divisor_log(n_out: usize, target: f64) -> usize {
    let lt = target.log2();
    let mut best = 1usize;
    let mut best_dist = f64::INFINITY;
    for d in divisors(n_out) {
        let dist = ((d as f64).log2() - lt).abs();
        if dist < best_dist {
            best = d;
            best_dist = dist;
        }
    }
    best
}

/// Algorithm for the practical number of groups, given an already computed
/// ideal value. The case label is derived from the effective fan-in
/// `4·g_ideal + n_out`.
pub fn practical_groups_from_ideal(g_ideal: f64, n_out: usize) -> (usize, CaseLabel) {
    let effective_in = 4.0 * g_ideal + n_out as f64;
    let g = nearest_divisor_log(n_out, clamp_groups(g_ideal, n_out));
    (g, CaseLabel::classify(effective_in, n_out as f64))
}

pub fn practical_groups(n_in: usize, n_out: usize) -> (usize, CaseLabel) {
    practical_groups_from_ideal(ideal_groups(n_in, n_out), n_out)
}

/// Divisor of `n_out` with `K(d)` closest to 1 in linear scale, ties going
/// to the smaller divisor.
pub fn practical_groups_k_criterion(n_in: usize, n_out: usize) -> usize {
    let mut best = 1usize;
    let mut best_dist = f64::INFINITY;
    for d in divisors(n_out) {
        let dist = (k_ratio(n_in, n_out, d as f64) - 1.0).abs();
        if dist < best_dist {
            best = d;
            best_dist = dist;
        }
    }
    best
}

fn plan_layer(layer: &LayerSpec, gains: Option<&GainTable>) -> Result<LayerPlan> {
    if layer.n_in == 0 || layer.n_out == 0 {
        return Err(Error::domain(format!(
            "layer widths must be positive, got {}:{}",
            layer.n_in, layer.n_out
        )));
    }
    let (gain_ratio, g_ideal) = match gains.and_then(|t| t.get(layer.activation)) {
        Some((f, b)) => (f / b, ideal_groups_generalized(layer.n_in, layer.n_out, f, b)?),
        None if layer.gain_ratio == 1.0 => (1.0, ideal_groups(layer.n_in, layer.n_out)),
        None => {
            if !(layer.gain_ratio > 0.0) || !layer.gain_ratio.is_finite() {
                return Err(Error::domain(format!(
                    "gain ratio must be positive, got {}",
                    layer.gain_ratio
                )));
            }
            let g = (layer.gain_ratio * layer.n_in as f64 - layer.n_out as f64) / 4.0;
            (layer.gain_ratio, g)
        }
    };
    let g_clamped = clamp_groups(g_ideal, layer.n_out);
    let (g_practical, case_label) = practical_groups_from_ideal(g_ideal, layer.n_out);
    let g_k_criterion = practical_groups_k_criterion(layer.n_in, layer.n_out);
    Ok(LayerPlan {
        n_in: layer.n_in,
        n_out: layer.n_out,
        activation: layer.activation,
        gain_ratio,
        g_ideal,
        g_clamped,
        g_practical,
        k_at_practical: k_ratio(layer.n_in, layer.n_out, g_practical as f64),
        case_label,
        g_k_criterion,
        k_at_k_criterion: k_ratio(layer.n_in, layer.n_out, g_k_criterion as f64),
    })
}

/// Plans every layer independently. A gain-table entry for a layer's
/// activation overrides the layer's own `gain_ratio`.
pub fn plan_architecture(layers: &[LayerSpec], gains: Option<&GainTable>) -> Result<GroupPlan> {
    if layers.is_empty() {
        return Err(Error::domain("architecture has no layers"));
    }
    let layers = layers
        .iter()
        .map(|l| plan_layer(l, gains))
        .collect::<Result<Vec<_>>>()?;
    Ok(GroupPlan { layers })
}

//! Text formats accepted on the command line and in architecture files.
//!
//! * layer: `n_in:n_out[:activation]`, e.g. `784:512` or `784:512:prelu:0.25`
//! * architecture file: one layer per line, `n_in n_out [activation]`, with
//!   `#` starting a comment; or a JSON array of `{"n_in", "n_out",
//!   "activation"?}` objects (optionally wrapped as `{"layers": [...]}`)
//! * data source: `idx:<images>,<labels>` or `synth:key=value,...`

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::error::{Error, Result};
use crate::planner::LayerSpec;
use crate::trainer::SynthSpec;

/// Widths above this are rejected as typos rather than allocated.
pub const MAX_WIDTH: usize = 1 << 24;

fn parse_width(field: &str, what: &str) -> Result<usize> {
    let v: usize = field
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("{what} {field:?} is not a positive integer")))?;
    if v == 0 || v > MAX_WIDTH {
        return Err(Error::Parse(format!("{what} {v} out of range 1..={MAX_WIDTH}")));
    }
    Ok(v)
}

pub fn parse_layer_spec(s: &str) -> Result<LayerSpec> {
    let mut parts = s.trim().splitn(3, ':');
    let (n_in, n_out) = match (parts.next(), parts.next()) {
        (Some(a), Some(b)) => (parse_width(a, "n_in")?, parse_width(b, "n_out")?),
        _ => {
            return Err(Error::Parse(format!(
                "layer {s:?} must look like n_in:n_out[:activation]"
            )))
        }
    };
    let layer = LayerSpec::new(n_in, n_out);
    match parts.next() {
        Some(act) => Ok(layer.with_activation(act.parse()?)),
        None => Ok(layer),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerEntry {
    n_in: usize,
    n_out: usize,
    #[serde(default)]
    activation: Option<ActivationKind>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ArchitectureJson {
    Bare(Vec<LayerEntry>),
    Wrapped { layers: Vec<LayerEntry> },
}

fn parse_architecture_json(text: &str) -> Result<Vec<LayerSpec>> {
    let parsed: ArchitectureJson =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("architecture JSON: {e}")))?;
    let entries = match parsed {
        ArchitectureJson::Bare(v) | ArchitectureJson::Wrapped { layers: v } => v,
    };
    entries
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            for (v, what) in [(e.n_in, "n_in"), (e.n_out, "n_out")] {
                if v == 0 || v > MAX_WIDTH {
                    return Err(Error::Parse(format!("layer {i}: {what} {v} out of range 1..={MAX_WIDTH}")));
                }
            }
            Ok(LayerSpec::new(e.n_in, e.n_out).with_activation(e.activation.unwrap_or(ActivationKind::Relu)))
        })
        .collect()
}

fn parse_architecture_lines(text: &str) -> Result<Vec<LayerSpec>> {
    let mut layers = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let at = |e: Error| Error::Parse(format!("line {}: {e}", lineno + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(Error::Parse(format!(
                "line {}: expected `n_in n_out [activation]`, got {} fields",
                lineno + 1,
                fields.len()
            )));
        }
        let n_in = parse_width(fields[0], "n_in").map_err(at)?;
        let n_out = parse_width(fields[1], "n_out").map_err(at)?;
        let mut layer = LayerSpec::new(n_in, n_out);
        if let Some(act) = fields.get(2) {
            layer = layer.with_activation(act.parse().map_err(at)?);
        }
        layers.push(layer);
    }
    Ok(layers)
}

/// Parses either architecture format; at least one layer is required.
pub fn parse_architecture(text: &str) -> Result<Vec<LayerSpec>> {
    let trimmed = text.trim_start();
    let layers = if trimmed.starts_with('[') || trimmed.starts_with('{') {
        parse_architecture_json(trimmed)?
    } else {
        parse_architecture_lines(text)?
    };
    if layers.is_empty() {
        return Err(Error::Parse("architecture declares no layers".into()));
    }
    Ok(layers)
}

/// Renders layers in the line format accepted by [`parse_architecture`].
pub fn format_architecture(layers: &[LayerSpec]) -> String {
    layers
        .iter()
        .map(|l| format!("{} {} {}\n", l.n_in, l.n_out, l.activation))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSpec {
    Idx { images: PathBuf, labels: PathBuf },
    Synth(SynthSpec),
}

impl Default for SynthSpec {
    /// MNIST-shaped blobs: 10 classes in 784 dimensions.
    fn default() -> Self {
        SynthSpec {
            classes: 10,
            per_class: 200,
            test_per_class: 100,
            d: 784,
            separation: DEFAULT_SEPARATION,
            seed: 0,
        }
    }
}

/// Centre norm giving a nearest-centroid test error of a few percent on the
/// default synthetic task.
pub const DEFAULT_SEPARATION: f64 = 4.0;

fn parse_synth(body: &str) -> Result<SynthSpec> {
    let mut spec = SynthSpec::default();
    for pair in body.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("synth option {pair:?} must be key=value")))?;
        let value = value.trim();
        let bad = || Error::Parse(format!("invalid value {value:?} for synth option {key:?}"));
        match key.trim() {
            "classes" => spec.classes = parse_width(value, "classes")?,
            "per_class" => spec.per_class = parse_width(value, "per_class")?,
            "test_per_class" => spec.test_per_class = parse_width(value, "test_per_class")?,
            "d" => spec.d = parse_width(value, "d")?,
            "separation" => {
                spec.separation = value.parse().map_err(|_| bad())?;
                if !(spec.separation >= 0.0) || !spec.separation.is_finite() {
                    return Err(bad());
                }
            }
            "seed" => spec.seed = value.parse().map_err(|_| bad())?,
            other => {
                return Err(Error::Parse(format!(
                    "unknown synth option {other:?}; expected classes, per_class, test_per_class, d, separation, seed"
                )))
            }
        }
    }
    let total = [spec.per_class, spec.test_per_class]
        .iter()
        .map(|n| n.checked_mul(spec.classes).and_then(|v| v.checked_mul(spec.d)))
        .try_fold(0usize, |acc, v| v.and_then(|v| acc.checked_add(v)));
    match total {
        Some(t) if t <= MAX_SYNTH_VALUES => Ok(spec),
        _ => Err(Error::Parse(format!(
            "synthetic dataset larger than {MAX_SYNTH_VALUES} values"
        ))),
    }
}

/// Upper bound on generated feature values (about 2 GB of f64).
pub const MAX_SYNTH_VALUES: usize = 1 << 28;

pub fn parse_data_spec(s: &str) -> Result<DataSpec> {
    match s.split_once(':') {
        Some(("idx", rest)) => {
            let (images, labels) = rest
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("idx data {rest:?} must be <images>,<labels>")))?;
            if images.is_empty() || labels.is_empty() {
                return Err(Error::Parse("idx data needs both an image and a label path".into()));
            }
            Ok(DataSpec::Idx {
                images: images.into(),
                labels: labels.into(),
            })
        }
        Some(("synth", rest)) => Ok(DataSpec::Synth(parse_synth(rest)?)),
        _ => Err(Error::Parse(format!(
            "data source {s:?} must start with idx: or synth:"
        ))),
    }
}

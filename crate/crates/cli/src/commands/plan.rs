use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use serde_json::{json, Map};

use gncount::inputs::{parse_architecture, parse_layer_spec};
use gncount::planner::{plan_architecture, LayerSpec};
use gncount::probes::measure_gain_table;

use super::read_text;
use crate::report::{fmt_f, render_table, OutputArgs, Report, RunManifest};
use crate::CliError;

#[derive(Debug, Args, Serialize)]
pub struct PlanArgs {
    /// Layer as n_in:n_out[:activation]; repeat for each layer.
    #[arg(long = "layer", value_name = "SPEC")]
    pub layers: Vec<String>,
    /// Architecture file: `n_in n_out [activation]` per line, or JSON.
    #[arg(long)]
    pub arch: Option<PathBuf>,
    /// Measure F and B for activations whose gains differ and use
    /// `((F/B)·n_in − n_out)/4` as the ideal count.
    #[arg(long)]
    pub measure_gains: bool,
    #[arg(long, default_value_t = 1_000_000)]
    pub gain_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

const HEADER: [&str; 10] = [
    "layer",
    "n_in",
    "n_out",
    "activation",
    "g_ideal",
    "g_practical",
    "g_k_criterion",
    "k_at_practical",
    "case",
    "criteria_disagree",
];

fn collect_layers(args: &PlanArgs) -> Result<Vec<LayerSpec>, CliError> {
    let mut layers = Vec::new();
    if let Some(path) = &args.arch {
        let text = read_text(path)?;
        layers = parse_architecture(&text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    for spec in &args.layers {
        layers.push(parse_layer_spec(spec).map_err(|e| CliError::Usage(format!("--layer {spec}: {e}")))?);
    }
    if layers.is_empty() {
        return Err(CliError::Usage(
            "no layers given; pass --layer n_in:n_out[:activation] or --arch <file>".into(),
        ));
    }
    Ok(layers)
}

pub fn run(args: PlanArgs) -> Result<(), CliError> {
    let layers = collect_layers(&args)?;
    let gains = if args.measure_gains {
        let mut acts: Vec<_> = layers
            .iter()
            .map(|l| l.activation)
            .filter(|a| !a.has_unit_gain_ratio())
            .collect();
        acts.sort_by_key(|a| a.to_string());
        acts.dedup();
        Some(measure_gain_table(&acts, args.gain_samples, args.seed)?)
    } else {
        if let Some(l) = layers.iter().find(|l| !l.activation.has_unit_gain_ratio()) {
            return Err(CliError::Usage(format!(
                "{} has unequal forward/backward gains; pass --measure-gains",
                l.activation
            )));
        }
        None
    };
    let plan = plan_architecture(&layers, gains.as_ref())?;

    let rows: Vec<Vec<String>> = plan
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            vec![
                i.to_string(),
                l.n_in.to_string(),
                l.n_out.to_string(),
                l.activation.to_string(),
                fmt_f(l.g_ideal, 4),
                l.g_practical.to_string(),
                l.g_k_criterion.to_string(),
                fmt_f(l.k_at_practical, 6),
                l.case_label.to_string(),
                l.criteria_disagree().to_string(),
            ]
        })
        .collect();
    let mut table = render_table(&HEADER, &rows);
    if plan.layers.iter().any(|l| l.criteria_disagree()) {
        table.push_str("note: g_practical (log-nearest divisor) and g_k_criterion (K closest to 1) differ on some layers\n");
    }

    let mut body = Map::new();
    let layer_json: Vec<_> = plan
        .layers
        .iter()
        .map(|l| {
            let mut v = serde_json::to_value(l).expect("plan serializes");
            v["criteria_disagree"] = json!(l.criteria_disagree());
            v
        })
        .collect();
    body.insert("layers".into(), json!(layer_json));
    if let Some(g) = &gains {
        body.insert("gain_table".into(), serde_json::to_value(g).expect("gains serialize"));
    }
    let seeds = if args.measure_gains { vec![args.seed] } else { vec![] };
    Report {
        manifest: RunManifest::new("plan", &args, seeds),
        body,
        csv_header: HEADER.to_vec(),
        csv_rows: rows,
        table,
    }
    .emit(&args.output)
}

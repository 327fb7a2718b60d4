use clap::Args;
use serde::Serialize;
use serde_json::{json, Map};

use gncount::probes::{homogeneity_check, measure_activation_gains, GainConfig};
use gncount::ActivationKind;

use crate::report::{fmt_f, render_table, OutputArgs, Report, RunManifest};
use crate::CliError;

#[derive(Debug, Args, Serialize)]
pub struct GainsArgs {
    /// Activation name, e.g. relu, prelu:0.25, elu:1, gelu; repeatable.
    #[arg(long = "activation", required = true)]
    pub activations: Vec<ActivationKind>,
    /// Input standard deviation; repeatable.
    #[arg(long = "sigma", default_values_t = [1.0])]
    pub sigmas: Vec<f64>,
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also report whether each activation's gains stay within
    /// --homogeneity-tol (relative) across the given sigmas.
    #[arg(long)]
    pub check_homogeneity: bool,
    #[arg(long, default_value_t = 0.015)]
    pub homogeneity_tol: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

const HEADER: [&str; 5] = ["activation", "sigma", "forward_gain", "backward_gain", "ratio"];

pub fn run(args: GainsArgs) -> Result<(), CliError> {
    if args.check_homogeneity && args.sigmas.len() < 2 {
        return Err(CliError::Usage("--check-homogeneity needs at least two --sigma values".into()));
    }
    let mut reports = Vec::new();
    for &act in &args.activations {
        for &sigma in &args.sigmas {
            let cfg = GainConfig::new(act, sigma).with_samples(args.samples).with_seed(args.seed);
            reports.push(measure_activation_gains(&cfg)?);
        }
    }
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                r.activation.to_string(),
                r.sigma.to_string(),
                fmt_f(r.forward_gain, 6),
                fmt_f(r.backward_gain, 6),
                fmt_f(r.ratio, 6),
            ]
        })
        .collect();
    let mut table = render_table(&HEADER, &rows);

    let mut body = Map::new();
    body.insert("gains".into(), serde_json::to_value(&reports).expect("gains serialize"));
    if args.check_homogeneity {
        let mut checks = Vec::new();
        let mut hrows = Vec::new();
        for &act in &args.activations {
            let h = homogeneity_check(act, &args.sigmas, args.samples, args.seed, args.homogeneity_tol)?;
            hrows.push(vec![
                act.to_string(),
                fmt_f(h.max_forward_deviation, 6),
                fmt_f(h.max_backward_deviation, 6),
                h.homogeneous.to_string(),
            ]);
            checks.push(json!({
                "activation": act,
                "tol": h.tol,
                "max_forward_deviation": h.max_forward_deviation,
                "max_backward_deviation": h.max_backward_deviation,
                "homogeneous": h.homogeneous,
            }));
        }
        table.push('\n');
        table.push_str(&render_table(
            &["activation", "max_forward_dev", "max_backward_dev", "homogeneous"],
            &hrows,
        ));
        body.insert("homogeneity".into(), json!(checks));
    }
    Report {
        manifest: RunManifest::new("gains", &args, vec![args.seed]),
        body,
        csv_header: HEADER.to_vec(),
        csv_rows: rows,
        table,
    }
    .emit(&args.output)
}

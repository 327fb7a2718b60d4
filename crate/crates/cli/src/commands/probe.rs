use clap::Args;
use serde::Serialize;
use serde_json::{json, Map};

use gncount::probes::{measure_variance_ratios, ProbeConfig, ProbeSampler};

use crate::report::{fmt_f, render_table, OutputArgs, Report, RunManifest};
use crate::CliError;

#[derive(Debug, Args, Serialize)]
pub struct ProbeArgs {
    #[arg(long)]
    pub n_in: usize,
    #[arg(long)]
    pub n_out: usize,
    #[arg(long)]
    pub groups: usize,
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub weight_std: f64,
    /// Relative tolerance; exit status 1 if any ratio misses it.
    #[arg(long, default_value_t = 0.05)]
    pub tol: f64,
    /// `exact-law` draws only the quantities the ratios depend on;
    /// `literal` samples both weight matrices in full.
    #[arg(long, default_value_t = ProbeSampler::ExactLaw)]
    pub sampler: ProbeSampler,
    #[command(flatten)]
    pub output: OutputArgs,
}

const HEADER: [&str; 6] = ["ratio", "empirical", "theoretical", "rel_error", "std_err", "within_tol"];

pub fn run(args: ProbeArgs) -> Result<(), CliError> {
    if !(args.tol >= 0.0) {
        return Err(CliError::Usage(format!("--tol must be non-negative, got {}", args.tol)));
    }
    let mut config = ProbeConfig::new(args.n_in, args.n_out, args.groups)
        .with_trials(args.trials)
        .with_seed(args.seed)
        .with_sampler(args.sampler);
    config.weight_std = args.weight_std;
    config.validate()?;
    let report = measure_variance_ratios(&config)?;

    let rows: Vec<Vec<String>> = report
        .estimates()
        .iter()
        .map(|(name, e)| {
            vec![
                name.to_string(),
                fmt_f(e.empirical, 6),
                fmt_f(e.theoretical, 6),
                fmt_f(e.rel_error, 6),
                fmt_f(e.std_err, 6),
                e.within(args.tol).to_string(),
            ]
        })
        .collect();
    let mut table = format!(
        "n_in={} n_out={} groups={} trials={} seed={} resamples={}\n",
        args.n_in, args.n_out, args.groups, report.trials, report.seed, report.resamples
    );
    table.push_str(&render_table(&HEADER, &rows));
    let ok = report.all_within(args.tol);

    let mut body = Map::new();
    body.insert("report".into(), serde_json::to_value(&report).expect("report serializes"));
    body.insert("tol".into(), json!(args.tol));
    body.insert("all_within_tol".into(), json!(ok));
    Report {
        manifest: RunManifest::new("probe", &args, vec![args.seed]),
        body,
        csv_header: HEADER.to_vec(),
        csv_rows: rows,
        table,
    }
    .emit(&args.output)?;
    if ok {
        Ok(())
    } else {
        Err(CliError::Tolerance(format!(
            "at least one ratio is outside the relative tolerance {}",
            args.tol
        )))
    }
}

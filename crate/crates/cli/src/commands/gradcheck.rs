use clap::Args;
use serde::Serialize;
use serde_json::{json, Map};

use gncount::numerics::{sample_normal, RngStream};
use gncount::planner::divisors;
use gncount::unitblock::{finite_diff_check, UnitBlockParams};
use gncount::ActivationKind;

use crate::report::{render_table, OutputArgs, Report, RunManifest};
use crate::CliError;

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    /// Input widths to test; repeatable.
    #[arg(long = "n-in", default_values_t = [4usize, 9])]
    pub n_in: Vec<usize>,
    /// Output widths to test; repeatable.
    #[arg(long = "n-out", default_values_t = [6usize, 12])]
    pub n_out: Vec<usize>,
    /// Group counts to test; every divisor of n_out when omitted.
    #[arg(long = "groups")]
    pub groups: Vec<usize>,
    #[arg(long = "activation", default_values_t = [ActivationKind::Relu, ActivationKind::Gelu])]
    pub activations: Vec<ActivationKind>,
    #[arg(long, default_value_t = 3)]
    pub batch: usize,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub h: f64,
    #[arg(long, default_value_t = 0.0)]
    pub eps: f64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

const HEADER: [&str; 7] = ["n_in", "n_out", "groups", "activation", "max_rel_error", "status", "note"];

#[derive(Serialize)]
struct ConfigResult {
    n_in: usize,
    n_out: usize,
    groups: usize,
    activation: ActivationKind,
    max_rel_error: Option<f64>,
    status: &'static str,
    note: String,
}

/// Configurations whose gradient is identically zero, where relative error
/// only compares rounding noise.
fn degenerate_reason(n_in: usize, n_out: usize, groups: usize, eps: f64) -> Option<String> {
    if eps != 0.0 {
        return None;
    }
    let ng = n_out / groups;
    if ng <= 2 {
        Some(format!("group size {ng} with eps = 0: normalized output is constant"))
    } else if n_in == 1 {
        Some("n_in = 1 with eps = 0: output is invariant to the input".into())
    } else {
        None
    }
}

pub fn run(args: GradcheckArgs) -> Result<(), CliError> {
    if !(args.h > 0.0) || args.batch == 0 {
        return Err(CliError::Usage("--h and --batch must be positive".into()));
    }
    if !(args.eps >= 0.0) {
        return Err(CliError::Usage(format!("--eps must be non-negative, got {}", args.eps)));
    }
    if args.n_in.iter().chain(&args.n_out).any(|&n| n == 0) {
        return Err(CliError::Usage("widths must be positive".into()));
    }
    for &g in &args.groups {
        if let Some(n) = args.n_out.iter().find(|&&n| g == 0 || n % g != 0) {
            return Err(CliError::Usage(format!("--groups {g} does not divide n_out {n}")));
        }
    }
    let mut results = Vec::new();
    let mut index = 0u64;
    for &n_in in &args.n_in {
        for &n_out in &args.n_out {
            let groups = if args.groups.is_empty() {
                divisors(n_out)
            } else {
                args.groups.clone()
            };
            for &g in &groups {
                for &act in &args.activations {
                    index += 1;
                    let mut r = ConfigResult {
                        n_in,
                        n_out,
                        groups: g,
                        activation: act,
                        max_rel_error: None,
                        status: "skipped",
                        note: String::new(),
                    };
                    if let Some(why) = degenerate_reason(n_in, n_out, g, args.eps) {
                        r.note = why;
                        results.push(r);
                        continue;
                    }
                    let stream = RngStream::new(args.seed, 3 * index);
                    let w = sample_normal(&stream, 0.0, 1.0, n_in, n_out)?;
                    let x = sample_normal(&stream.with_index(3 * index + 1), 0.0, 1.0, args.batch, n_in)?;
                    let lw = sample_normal(&stream.with_index(3 * index + 2), 0.0, 1.0, args.batch, n_out)?;
                    let params = UnitBlockParams::new(w, g, act)?.with_eps(args.eps);
                    match finite_diff_check(&params, &x, &lw, args.h) {
                        Ok(err) => {
                            r.max_rel_error = Some(err);
                            r.status = if err < args.tol { "pass" } else { "fail" };
                        }
                        Err(gncount::Error::DegenerateGroup { .. }) => {
                            r.note = "zero-variance group in the sampled input".into();
                        }
                        Err(e) => return Err(e.into()),
                    }
                    results.push(r);
                }
            }
        }
    }

    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            vec![
                r.n_in.to_string(),
                r.n_out.to_string(),
                r.groups.to_string(),
                r.activation.to_string(),
                r.max_rel_error.map(|e| format!("{e:.3e}")).unwrap_or_default(),
                r.status.to_string(),
                r.note.clone(),
            ]
        })
        .collect();
    let failed = results.iter().filter(|r| r.status == "fail").count();
    let checked = results.iter().filter(|r| r.status != "skipped").count();
    let mut table = render_table(&HEADER, &rows);
    table.push_str(&format!(
        "{checked} checked, {failed} failed, {} skipped (tol {:e}, h {:e})\n",
        results.len() - checked,
        args.tol,
        args.h
    ));

    let mut body = Map::new();
    body.insert("configs".into(), json!(results));
    body.insert("failed".into(), json!(failed));
    Report {
        manifest: RunManifest::new("gradcheck", &args, vec![args.seed]),
        body,
        csv_header: HEADER.to_vec(),
        csv_rows: rows,
        table,
    }
    .emit(&args.output)?;
    if failed == 0 {
        Ok(())
    } else {
        Err(CliError::Tolerance(format!("{failed} configuration(s) exceeded relative error {:e}", args.tol)))
    }
}

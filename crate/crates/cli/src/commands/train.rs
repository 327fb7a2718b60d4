use std::fs;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Serialize;
use serde_json::{json, Map};

use gncount::idx::load_idx;
use gncount::inputs::{parse_data_spec, DataSpec};
use gncount::planner::practical_groups;
use gncount::trainer::{
    sweep_groups, train_mlp, Dataset, HiddenLayer, InitRule, MlpModel, MlpSpec, TrainConfig, TrainReport,
};
use gncount::ActivationKind;

use crate::report::{csv_document, fmt_f, render_table, write_file, OutputArgs, Report, RunManifest};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    /// Weights ~ N(0, 1).
    Unit,
    /// Weights ~ N(0, 2/n_in).
    FanIn,
}

impl From<Init> for InitRule {
    fn from(i: Init) -> Self {
        match i {
            Init::Unit => InitRule::Unit,
            Init::FanIn => InitRule::FanInScaled,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// `idx:<images>,<labels>` (test files via --test-data) or
    /// `synth:classes=..,per_class=..,test_per_class=..,d=..,separation=..,seed=..`.
    #[arg(long)]
    pub data: String,
    /// Held-out set for idx data, same `idx:` form.
    #[arg(long)]
    pub test_data: Option<String>,
    /// Hidden layer width; repeatable, one per hidden layer.
    #[arg(long = "hidden", default_values_t = [512usize])]
    pub hidden: Vec<usize>,
    /// Group count per hidden layer, a number or `practical`; a single value
    /// applies to every layer.
    #[arg(long = "groups", default_values = ["practical"], conflicts_with = "sweep")]
    pub groups: Vec<String>,
    /// Comma-separated group counts, each applied to all hidden layers.
    #[arg(long, value_delimiter = ',')]
    pub sweep: Vec<usize>,
    /// Independent runs per configuration; run r uses seed + r.
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Init::FanIn)]
    pub init: Init,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = ActivationKind::Relu)]
    pub activation: ActivationKind,
    /// Keep only the first N training samples.
    #[arg(long)]
    pub max_train: Option<usize>,
    /// Keep only the first N test samples.
    #[arg(long)]
    pub max_test: Option<usize>,
    /// Directory for per-epoch CSV files and summary.json.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}

fn load_idx_spec(spec: &str) -> Result<Dataset, CliError> {
    match parse_data_spec(spec).map_err(|e| CliError::Usage(e.to_string()))? {
        DataSpec::Idx { images, labels } => Ok(load_idx(images, labels)?),
        DataSpec::Synth(_) => Err(CliError::Usage("--test-data must be an idx: source".into())),
    }
}

fn load_data(args: &TrainArgs) -> Result<(Dataset, Dataset, Vec<u64>), CliError> {
    let spec = parse_data_spec(&args.data).map_err(|e| CliError::Usage(format!("--data: {e}")))?;
    let (train, test, seeds) = match spec {
        DataSpec::Synth(s) => {
            if args.test_data.is_some() {
                return Err(CliError::Usage("--test-data only applies to idx data".into()));
            }
            let (train, test) = s.generate()?;
            (train, test, vec![s.seed])
        }
        DataSpec::Idx { images, labels } => {
            let test_spec = args
                .test_data
                .as_deref()
                .ok_or_else(|| CliError::Usage("idx data needs --test-data idx:<images>,<labels>".into()))?;
            let train = load_idx(images, labels)?;
            (train, load_idx_spec(test_spec)?, vec![])
        }
    };
    let train = args.max_train.map_or(train.clone(), |n| train.truncate(n));
    let test = args.max_test.map_or(test.clone(), |n| test.truncate(n));
    if train.is_empty() || test.is_empty() {
        return Err(CliError::Usage("--max-train/--max-test leave an empty dataset".into()));
    }
    if train.dim() != test.dim() || train.classes != test.classes {
        return Err(CliError::Io(format!(
            "train ({} features, {} classes) and test ({} features, {} classes) sets differ",
            train.dim(),
            train.classes,
            test.dim(),
            test.classes
        )));
    }
    Ok((train, test, seeds))
}

/// Resolves `--groups` into one count per hidden layer.
fn resolve_groups(args: &TrainArgs, input_dim: usize) -> Result<Vec<usize>, CliError> {
    let per_layer: Vec<&String> = match args.groups.len() {
        1 => vec![&args.groups[0]; args.hidden.len()],
        n if n == args.hidden.len() => args.groups.iter().collect(),
        n => {
            return Err(CliError::Usage(format!(
                "{n} --groups values for {} hidden layers",
                args.hidden.len()
            )))
        }
    };
    let mut n_in = input_dim;
    let mut out = Vec::new();
    for (&width, g) in args.hidden.iter().zip(per_layer) {
        let groups = if g == "practical" {
            practical_groups(n_in, width).0
        } else {
            g.parse()
                .map_err(|_| CliError::Usage(format!("--groups {g:?} is neither a number nor `practical`")))?
        };
        out.push(groups);
        n_in = width;
    }
    Ok(out)
}

fn epoch_csv(manifest: &RunManifest, report: &TrainReport) -> Result<String, CliError> {
    let rows: Vec<Vec<String>> = report
        .epochs
        .iter()
        .map(|e| vec![e.epoch.to_string(), e.train_loss.to_string(), e.test_error_pct.to_string()])
        .collect();
    csv_document(manifest, &["epoch", "train_loss", "test_error_pct"], &rows)
}

pub fn run(args: TrainArgs) -> Result<(), CliError> {
    if args.runs == 0 {
        return Err(CliError::Usage("--runs must be positive".into()));
    }
    if args.hidden.contains(&0) {
        return Err(CliError::Usage("--hidden widths must be positive".into()));
    }
    let config = TrainConfig {
        learning_rate: args.lr,
        momentum: args.momentum,
        batch_size: args.batch_size,
        epochs: args.epochs,
        seed: args.seed,
        init: args.init.into(),
    };
    config.validate()?;
    if !(args.eps >= 0.0) {
        return Err(CliError::Usage(format!("--eps must be non-negative, got {}", args.eps)));
    }

    // Reject bad group counts before touching the data.
    let sweep = !args.sweep.is_empty();
    let check_divides = |groups: &[usize]| -> Result<(), CliError> {
        for (&w, &g) in args.hidden.iter().zip(groups) {
            if g == 0 || w % g != 0 {
                return Err(CliError::Usage(format!("groups {g} does not divide hidden width {w}")));
            }
        }
        Ok(())
    };
    if sweep {
        for &g in &args.sweep {
            check_divides(&vec![g; args.hidden.len()])?;
        }
    } else if !args.groups.iter().any(|g| g == "practical") {
        check_divides(&resolve_groups(&args, 1)?)?;
    }

    let (train, test, data_seeds) = load_data(&args)?;
    let mut spec = MlpSpec::new(
        train.dim(),
        args.hidden.iter().map(|&width| HiddenLayer { width, groups: 1 }).collect(),
        train.classes,
    );
    spec.activation = args.activation;
    spec.eps = args.eps;

    let run_seeds: Vec<u64> = (0..args.runs as u64).map(|r| args.seed.wrapping_add(r)).collect();
    // (groups label, reports)
    let mut entries: Vec<(String, Vec<TrainReport>)> = Vec::new();
    if sweep {
        let report = sweep_groups(&spec, &args.sweep, &train, &test, &config, args.runs)?;
        for e in report.entries {
            entries.push((e.groups.to_string(), e.reports));
        }
    } else {
        let groups = resolve_groups(&args, train.dim())?;
        check_divides(&groups)?;
        for (h, &g) in spec.hidden.iter_mut().zip(&groups) {
            h.groups = g;
        }
        let mut reports = Vec::new();
        for &seed in &run_seeds {
            let cfg = TrainConfig { seed, ..config };
            let mut model = MlpModel::init(&spec, cfg.init, seed)?;
            reports.push(train_mlp(&mut model, &train, &test, &cfg)?);
        }
        let label = groups.iter().map(|g| g.to_string()).collect::<Vec<_>>().join("/");
        entries.push((label, reports));
    }

    let mut seeds = run_seeds.clone();
    seeds.extend(data_seeds);
    let manifest = RunManifest::new("train", &args, seeds);

    if let Some(dir) = &args.out_dir {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        for (label, reports) in &entries {
            for (r, report) in reports.iter().enumerate() {
                let name = format!("epochs_g{}_run{r}.csv", label.replace('/', "-"));
                write_file(&dir.join(name), &epoch_csv(&manifest, report)?)?;
            }
        }
    }

    let header = ["groups", "run", "seed", "final_test_error_pct", "final_train_loss", "diverged"];
    let mut rows = Vec::new();
    let mut means = Vec::new();
    for (label, reports) in &entries {
        for (r, rep) in reports.iter().enumerate() {
            rows.push(vec![
                label.clone(),
                r.to_string(),
                rep.config.seed.to_string(),
                fmt_f(rep.final_test_error_pct, 3),
                rep.epochs.last().map(|e| fmt_f(e.train_loss, 6)).unwrap_or_default(),
                rep.diverged.to_string(),
            ]);
        }
        let mean = reports.iter().map(|r| r.final_test_error_pct).sum::<f64>() / reports.len() as f64;
        means.push(json!({"groups": label, "mean_final_test_error_pct": mean, "runs": reports.len()}));
    }
    let mut table = format!(
        "train {} samples, test {} samples, {} features, {} classes\n",
        train.len(),
        test.len(),
        train.dim(),
        train.classes
    );
    table.push_str(&render_table(&header, &rows));
    if args.runs > 1 {
        for m in &means {
            table.push_str(&format!(
                "groups {}: mean test error {:.3}% over {} runs\n",
                m["groups"].as_str().unwrap_or_default(),
                m["mean_final_test_error_pct"].as_f64().unwrap_or(f64::NAN),
                m["runs"]
            ));
        }
    }

    let mut body = Map::new();
    body.insert(
        "runs".into(),
        json!(entries
            .iter()
            .map(|(label, reports)| json!({"groups": label, "reports": reports}))
            .collect::<Vec<_>>()),
    );
    body.insert("summary".into(), json!(means));
    let report = Report {
        manifest,
        body,
        csv_header: header.to_vec(),
        csv_rows: rows,
        table,
    };
    if let Some(dir) = &args.out_dir {
        let doc = serde_json::to_string_pretty(&report.json()).expect("summary serializes") + "\n";
        write_file(&dir.join("summary.json"), &doc)?;
    }
    report.emit(&args.output)
}

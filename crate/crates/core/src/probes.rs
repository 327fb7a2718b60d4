//! Monte-Carlo checks of the gradient-variance identities across a unit
//! block and of the forward/backward activation gains.
//!
//! Every trial (or sample chunk) draws from its own `RngStream(seed, index)`
//! and per-trial results are reduced in index order, so reports are
//! bit-identical under any thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::error::{Error, Result};
use crate::numerics::{fill_normal, mean_unchecked, sample_normal_with, var_biased_unchecked, Matrix, RngStream};
use crate::planner::GainTable;
use crate::unitblock::{
    groupnorm_backward, groupnorm_forward, unit_block_backward, unit_block_forward, ForwardTrace, UnitBlockParams,
};

/// Trials that hit a zero-variance group are redrawn at most this many times.
const MAX_RESAMPLES_PER_TRIAL: u64 = 64;

/// Gain samples are drawn in chunks of this size, one stream per chunk.
const GAIN_CHUNK: usize = 1 << 16;

pub const MIN_GAIN_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub n_in: usize,
    pub n_out: usize,
    pub groups: usize,
    pub trials: usize,
    pub seed: u64,
    pub weight_std: f64,
    pub sampler: ProbeSampler,
}

/// How a trial realizes the random weight matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeSampler {
    /// Draws only what the measured quantities depend on, from its exact
    /// conditional law: `x0·W1` given `x0` is `N(0, ‖x0‖²s²I)`, and `W2`
    /// splits into its component along `x1` (fixed by `y2`) plus an
    /// independent Gaussian remainder orthogonal to `x1`. O(n_in + n_out)
    /// per trial; same distribution as `Literal`.
    #[default]
    ExactLaw,
    /// Samples both weight matrices in full. O(n_in² + n_in·n_out) per trial.
    Literal,
}

impl std::fmt::Display for ProbeSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ProbeSampler::ExactLaw => "exact-law",
            ProbeSampler::Literal => "literal",
        })
    }
}

impl std::str::FromStr for ProbeSampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact-law" | "exact_law" => Ok(ProbeSampler::ExactLaw),
            "literal" => Ok(ProbeSampler::Literal),
            other => Err(Error::Parse(format!(
                "unknown sampler '{other}', expected exact-law or literal"
            ))),
        }
    }
}

impl ProbeConfig {
    pub fn new(n_in: usize, n_out: usize, groups: usize) -> Self {
        ProbeConfig {
            n_in,
            n_out,
            groups,
            trials: 10_000,
            seed: 0,
            weight_std: 1.0,
            sampler: ProbeSampler::default(),
        }
    }

    pub fn with_sampler(mut self, sampler: ProbeSampler) -> Self {
        self.sampler = sampler;
        self
    }

    pub fn with_trials(mut self, trials: usize) -> Self {
        self.trials = trials;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_in < 2 || self.n_out == 0 {
            return Err(Error::domain(format!(
                "probe needs n_in >= 2 and n_out >= 1, got {}:{}",
                self.n_in, self.n_out
            )));
        }
        if self.groups == 0 || self.n_out % self.groups != 0 {
            return Err(Error::domain(format!(
                "groups {} must divide n_out {}",
                self.groups, self.n_out
            )));
        }
        if self.n_out / self.groups < 2 {
            return Err(Error::domain(format!(
                "groups {} equals n_out: every group has one feature and normalizes to zero",
                self.groups
            )));
        }
        if self.trials == 0 {
            return Err(Error::domain("trials must be positive"));
        }
        if !(self.weight_std > 0.0) || !self.weight_std.is_finite() {
            return Err(Error::domain(format!(
                "weight_std must be positive, got {}",
                self.weight_std
            )));
        }
        Ok(())
    }

    /// Group count of the first (feeding) block: the largest common divisor
    /// of `groups` and `n_in` that leaves at least two features per group.
    pub fn feeder_groups(&self) -> usize {
        let g = gcd(self.groups, self.n_in);
        if self.n_in / g >= 2 {
            g
        } else {
            1
        }
    }
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoreticalRatios {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

/// Right-hand sides for a ReLU block:
/// `A = n_out·Var[W]`, `B = 1 + 4/n_g`, `C = ½`, `D = (n_out/n_in)(1 + 4/n_g)`.
pub fn theoretical_ratios(n_in: usize, n_out: usize, groups: usize, weight_std: f64) -> Result<TheoreticalRatios> {
    if n_in == 0 || groups == 0 || n_out % groups != 0 {
        return Err(Error::domain(format!(
            "groups {groups} must divide n_out {n_out} and n_in must be positive"
        )));
    }
    let b = 1.0 + 4.0 * groups as f64 / n_out as f64;
    Ok(TheoreticalRatios {
        a: n_out as f64 * weight_std * weight_std,
        b,
        c: 0.5,
        d: n_out as f64 / n_in as f64 * b,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimate {
    pub empirical: f64,
    pub theoretical: f64,
    pub rel_error: f64,
    /// Standard error of the trial mean.
    pub std_err: f64,
}

impl RatioEstimate {
    fn from_samples(samples: &[f64], theoretical: f64) -> Self {
        let empirical = mean_unchecked(samples);
        let n = samples.len() as f64;
        let std_err = if samples.len() > 1 {
            (var_biased_unchecked(samples) * n / (n - 1.0) / n).sqrt()
        } else {
            f64::NAN
        };
        RatioEstimate {
            empirical,
            theoretical,
            rel_error: (empirical - theoretical).abs() / theoretical.abs(),
            std_err,
        }
    }

    pub fn within(&self, rel_tol: f64) -> bool {
        self.rel_error <= rel_tol
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub config: ProbeConfig,
    pub feeder_groups: usize,
    /// `Var[∂L/∂x] / Var[∂L/∂y]`
    pub eq_a: RatioEstimate,
    /// `σ²·Var[∂L/∂y] / Var[∂L/∂z]` with `σ² = Var[y]` over features
    pub eq_b: RatioEstimate,
    /// `Var[∂L/∂z] / Var[∂L/∂x_next]`
    pub eq_c: RatioEstimate,
    /// `Var[∂L/∂x] / Var[∂L/∂x_next]`
    pub eq_d: RatioEstimate,
    pub trials: usize,
    pub seed: u64,
    /// Trials redrawn because a group had zero variance.
    pub resamples: u64,
}

impl VarianceReport {
    pub fn estimates(&self) -> [(&'static str, &RatioEstimate); 4] {
        [
            ("A", &self.eq_a),
            ("B", &self.eq_b),
            ("C", &self.eq_c),
            ("D", &self.eq_d),
        ]
    }

    pub fn all_within(&self, rel_tol: f64) -> bool {
        self.estimates().iter().all(|(_, e)| e.within(rel_tol))
    }
}

/// Per-trial ratios `[A, B, C, D]` from the four gradients and `Var[y]`.
fn ratios(var_dx: f64, var_dy: f64, var_dz: f64, var_out: f64, var_y: f64) -> [f64; 4] {
    [var_dx / var_dy, var_y * var_dy / var_dz, var_dz / var_out, var_dx / var_out]
}

fn run_trial(config: &ProbeConfig, feeder_groups: usize, stream: RngStream) -> Result<[f64; 4]> {
    match config.sampler {
        ProbeSampler::ExactLaw => run_trial_exact_law(config, feeder_groups, stream),
        ProbeSampler::Literal => run_trial_literal(config, feeder_groups, stream),
    }
}

fn run_trial_literal(config: &ProbeConfig, feeder_groups: usize, stream: RngStream) -> Result<[f64; 4]> {
    let mut rng = stream.generator();
    let (n_in, n_out) = (config.n_in, config.n_out);
    let x0 = sample_normal_with(&mut rng, 0.0, 1.0, 1, n_in)?;
    let w1 = sample_normal_with(&mut rng, 0.0, config.weight_std, n_in, n_in)?;
    let w2 = sample_normal_with(&mut rng, 0.0, config.weight_std, n_in, n_out)?;
    let mut coeffs = vec![0.0; n_out];
    fill_normal(&mut rng, 0.0, 1.0, &mut coeffs);

    let feeder = UnitBlockParams::new(w1, feeder_groups, ActivationKind::Relu)?;
    let target = UnitBlockParams::new(w2, config.groups, ActivationKind::Relu)?;
    let first = unit_block_forward(&feeder, &x0)?;
    let trace = unit_block_forward(&target, &first.x_next)?;

    // L = Σ cᵢ·x_outᵢ, so ∂L/∂x_out = c
    let d_x_next = Matrix::from_vec(1, n_out, coeffs)?;
    let grads = unit_block_backward(&target, &trace, &d_x_next)?;

    Ok(ratios(
        var_biased_unchecked(grads.d_x.data()),
        var_biased_unchecked(grads.d_y.data()),
        var_biased_unchecked(grads.d_z.data()),
        var_biased_unchecked(d_x_next.data()),
        var_biased_unchecked(trace.y.data()),
    ))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Group norm + ReLU on a pre-activation row; the weight matrix is unused.
fn normalize_relu(y: Matrix, groups: usize) -> Result<ForwardTrace> {
    let params = UnitBlockParams::new(Matrix::zeros(1, y.cols()), groups, ActivationKind::Relu)?;
    let (z, mu, sigma2) = groupnorm_forward(&params, &y)?;
    let x_next = z.map(|v| v.max(0.0));
    Ok(ForwardTrace {
        x: Matrix::zeros(1, 1),
        y,
        mu,
        sigma2,
        z,
        x_next,
    })
}

fn run_trial_exact_law(config: &ProbeConfig, feeder_groups: usize, stream: RngStream) -> Result<[f64; 4]> {
    let mut rng = stream.generator();
    let (n_in, n_out, s) = (config.n_in, config.n_out, config.weight_std);
    let mut x0 = vec![0.0; n_in];
    fill_normal(&mut rng, 0.0, 1.0, &mut x0);
    let mut y1 = vec![0.0; n_in];
    fill_normal(&mut rng, 0.0, s * dot(&x0, &x0).sqrt(), &mut y1);
    let first = normalize_relu(Matrix::from_vec(1, n_in, y1)?, feeder_groups)?;
    let x1 = first.x_next.data();
    let x1_norm2 = dot(x1, x1);
    if x1_norm2 == 0.0 {
        return Err(Error::DegenerateGroup { sample: 0, group: 0 });
    }

    let mut y2 = vec![0.0; n_out];
    fill_normal(&mut rng, 0.0, s * x1_norm2.sqrt(), &mut y2);
    let mut coeffs = vec![0.0; n_out];
    fill_normal(&mut rng, 0.0, 1.0, &mut coeffs);
    let mut xi = vec![0.0; n_in];
    fill_normal(&mut rng, 0.0, 1.0, &mut xi);

    let target = UnitBlockParams::new(Matrix::zeros(1, n_out), config.groups, ActivationKind::Relu)?;
    let trace = normalize_relu(Matrix::from_vec(1, n_out, y2)?, config.groups)?;
    let d_z: Vec<f64> = trace
        .z
        .data()
        .iter()
        .zip(&coeffs)
        .map(|(&z, &c)| if z > 0.0 { c } else { 0.0 })
        .collect();
    let d_z = Matrix::from_vec(1, n_out, d_z)?;
    let d_y = groupnorm_backward(&target, &trace, &d_z)?;

    // d_x = W2·d_y with W2 = x1ᵀ·y2/‖x1‖² + (I − uuᵀ)H, H independent of y2
    let along = dot(trace.y.data(), d_y.data()) / x1_norm2;
    let spread = s * dot(d_y.data(), d_y.data()).sqrt();
    let u_xi = dot(x1, &xi) / x1_norm2;
    let d_x: Vec<f64> = x1
        .iter()
        .zip(&xi)
        .map(|(&x, &e)| x * along + spread * (e - x * u_xi))
        .collect();

    Ok(ratios(
        var_biased_unchecked(&d_x),
        var_biased_unchecked(d_y.data()),
        var_biased_unchecked(d_z.data()),
        var_biased_unchecked(&coeffs),
        var_biased_unchecked(trace.y.data()),
    ))
}

/// Runs `config.trials` independent two-block experiments and averages the
/// per-trial variance ratios around the second block.
///
/// The first block maps a standard-normal input through `n_in x n_in`
/// weights (realized according to `config.sampler`); the second block (the one measured) has `n_in x n_out` weights
/// and `config.groups` groups. Both use ReLU, γ = 1, β = 0 and eps = 0. The
/// loss is `Σ cᵢ·x_outᵢ` with fresh `cᵢ ~ N(0, 1)` each trial.
pub fn measure_variance_ratios(config: &ProbeConfig) -> Result<VarianceReport> {
    config.validate()?;
    let theory = theoretical_ratios(config.n_in, config.n_out, config.groups, config.weight_std)?;
    let feeder_groups = config.feeder_groups();
    let trials = config.trials as u64;

    let per_trial: Vec<([f64; 4], u64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            for attempt in 0..MAX_RESAMPLES_PER_TRIAL {
                let stream = RngStream::new(config.seed, t + attempt * trials);
                match run_trial(config, feeder_groups, stream) {
                    Ok(r) => return Ok((r, attempt)),
                    Err(Error::DegenerateGroup { .. }) => continue,
                    Err(e) => return Err(e),
                }
            }
            Err(Error::domain(format!(
                "trial {t} hit a degenerate group {MAX_RESAMPLES_PER_TRIAL} times"
            )))
        })
        .collect::<Result<_>>()?;

    let column = |i: usize| per_trial.iter().map(|(r, _)| r[i]).collect::<Vec<_>>();
    Ok(VarianceReport {
        config: *config,
        feeder_groups,
        eq_a: RatioEstimate::from_samples(&column(0), theory.a),
        eq_b: RatioEstimate::from_samples(&column(1), theory.b),
        eq_c: RatioEstimate::from_samples(&column(2), theory.c),
        eq_d: RatioEstimate::from_samples(&column(3), theory.d),
        trials: config.trials,
        seed: config.seed,
        resamples: per_trial.iter().map(|(_, a)| a).sum(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainConfig {
    pub activation: ActivationKind,
    pub sigma: f64,
    pub samples: usize,
    pub seed: u64,
}

impl GainConfig {
    pub fn new(activation: ActivationKind, sigma: f64) -> Self {
        GainConfig {
            activation,
            sigma,
            samples: 1_000_000,
            seed: 0,
        }
    }

    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples = samples;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainReport {
    pub activation: ActivationKind,
    pub sigma: f64,
    pub samples: usize,
    pub seed: u64,
    /// `E[f(X)²] / Var[X]`
    pub forward_gain: f64,
    /// `Var[f′(X)·Y] / Var[Y]`
    pub backward_gain: f64,
    /// `B / F`
    pub ratio: f64,
}

/// Estimates `F` and `B` for `X ~ N(0, σ²)` and an independent `Y ~ N(0, 1)`.
///
/// `X` is drawn as `σ·Z` from a σ-independent standard-normal stream, so runs
/// that differ only in σ see the same underlying draws.
pub fn measure_activation_gains(config: &GainConfig) -> Result<GainReport> {
    if !(config.sigma > 0.0) || !config.sigma.is_finite() {
        return Err(Error::domain(format!("sigma must be positive, got {}", config.sigma)));
    }
    if config.samples < MIN_GAIN_SAMPLES {
        return Err(Error::domain(format!(
            "at least {MIN_GAIN_SAMPLES} samples are required, got {}",
            config.samples
        )));
    }
    let n = config.samples;
    let chunks = n.div_ceil(GAIN_CHUNK);
    let parts: Vec<(Vec<f64>, Vec<f64>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = GAIN_CHUNK.min(n - c * GAIN_CHUNK);
            let mut rng = RngStream::new(config.seed, c as u64).generator();
            let mut z = vec![0.0; len];
            let mut y = vec![0.0; len];
            fill_normal(&mut rng, 0.0, 1.0, &mut z);
            fill_normal(&mut rng, 0.0, 1.0, &mut y);
            (z, y)
        })
        .collect();

    let f = config.activation;
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for (zc, yc) in parts {
        x.extend(zc.into_iter().map(|v| config.sigma * v));
        y.extend(yc);
    }
    let fx2: Vec<f64> = x.iter().map(|&v| f.apply(v).powi(2)).collect();
    let dy: Vec<f64> = x.iter().zip(&y).map(|(&v, &w)| f.derivative(v) * w).collect();

    let forward_gain = mean_unchecked(&fx2) / var_biased_unchecked(&x);
    let backward_gain = var_biased_unchecked(&dy) / var_biased_unchecked(&y);
    Ok(GainReport {
        activation: f,
        sigma: config.sigma,
        samples: n,
        seed: config.seed,
        forward_gain,
        backward_gain,
        ratio: backward_gain / forward_gain,
    })
}

/// `F = B = (1 + a²)/2` for PReLU with slope `a`.
pub fn prelu_gain_closed_form(a: f64) -> f64 {
    (1.0 + a * a) / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogeneityReport {
    pub activation: ActivationKind,
    pub tol: f64,
    pub gains: Vec<GainReport>,
    /// Largest `|F_σ − F_σ₀| / F_σ₀` over σ.
    pub max_forward_deviation: f64,
    pub max_backward_deviation: f64,
    pub homogeneous: bool,
}

/// Measures gains at every σ with a shared seed and reports whether they
/// stay within relative `tol` of the first σ.
pub fn homogeneity_check(
    activation: ActivationKind,
    sigmas: &[f64],
    samples: usize,
    seed: u64,
    tol: f64,
) -> Result<HomogeneityReport> {
    if sigmas.len() < 2 {
        return Err(Error::domain("homogeneity check needs at least two sigma values"));
    }
    let gains = sigmas
        .iter()
        .map(|&sigma| {
            measure_activation_gains(&GainConfig {
                activation,
                sigma,
                samples,
                seed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let base = gains[0];
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
    let max_forward_deviation = gains
        .iter()
        .map(|g| rel(g.forward_gain, base.forward_gain))
        .fold(0.0, f64::max);
    let max_backward_deviation = gains
        .iter()
        .map(|g| rel(g.backward_gain, base.backward_gain))
        .fold(0.0, f64::max);
    Ok(HomogeneityReport {
        activation,
        tol,
        gains,
        max_forward_deviation,
        max_backward_deviation,
        homogeneous: max_forward_deviation <= tol && max_backward_deviation <= tol,
    })
}

/// Measures `(F, B)` at σ = 1 for each activation, ready for the planner.
pub fn measure_gain_table(activations: &[ActivationKind], samples: usize, seed: u64) -> Result<GainTable> {
    let mut table = GainTable::new();
    for &a in activations {
        let r = measure_activation_gains(&GainConfig {
            activation: a,
            sigma: 1.0,
            samples,
            seed,
        })?;
        table.insert(a, r.forward_gain, r.backward_gain);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theoretical_columns() {
        let t = theoretical_ratios(1024, 512, 128, 1.0).unwrap();
        assert_eq!((t.a, t.b, t.c, t.d), (512.0, 2.0, 0.5, 1.0));
        let t = theoretical_ratios(256, 128, 32, 1.0).unwrap();
        assert_eq!((t.a, t.b, t.c, t.d), (128.0, 2.0, 0.5, 1.0));
        // groups = (n_in − n_out)/4 makes D exactly 1
        let t = theoretical_ratios(640, 512, 32, 1.0).unwrap();
        assert_eq!(t.d, 1.0);
        assert!(theoretical_ratios(64, 64, 7, 1.0).is_err());
    }

    #[test]
    fn instance_norm_limit_is_rejected() {
        let err = measure_variance_ratios(&ProbeConfig::new(64, 32, 32).with_trials(4)).unwrap_err();
        assert!(matches!(err, Error::Domain(_)), "{err}");
        assert!(measure_variance_ratios(&ProbeConfig::new(64, 32, 5)).is_err());
    }

    #[test]
    fn feeder_group_choice() {
        assert_eq!(ProbeConfig::new(1024, 512, 128).feeder_groups(), 128);
        assert_eq!(ProbeConfig::new(96, 64, 16).feeder_groups(), 16);
        assert_eq!(ProbeConfig::new(20, 64, 16).feeder_groups(), 4);
        assert_eq!(ProbeConfig::new(16, 64, 16).feeder_groups(), 1);
    }

    #[test]
    fn report_is_deterministic() {
        let cfg = ProbeConfig::new(32, 16, 4).with_trials(200).with_seed(77);
        let a = measure_variance_ratios(&cfg).unwrap();
        let b = measure_variance_ratios(&cfg).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let c = pool.install(|| measure_variance_ratios(&cfg)).unwrap();
        assert_eq!(a, c);
        let lit = cfg.with_sampler(ProbeSampler::Literal);
        assert_eq!(measure_variance_ratios(&lit).unwrap(), pool.install(|| measure_variance_ratios(&lit)).unwrap());
    }

    #[test]
    fn samplers_agree_in_distribution() {
        // n_g = 8 keeps every ratio's second moment finite
        let base = ProbeConfig::new(48, 32, 4).with_trials(20_000).with_seed(21);
        let exact = measure_variance_ratios(&base).unwrap();
        let literal = measure_variance_ratios(&base.with_sampler(ProbeSampler::Literal).with_seed(22)).unwrap();
        for ((name, e), (_, l)) in exact.estimates().iter().zip(literal.estimates()) {
            let z = (e.empirical - l.empirical).abs() / (e.std_err.powi(2) + l.std_err.powi(2)).sqrt();
            assert!(z < 4.0, "{name}: exact {e:?} literal {l:?}");
        }
    }

    #[test]
    fn sampler_names_round_trip() {
        for s in [ProbeSampler::ExactLaw, ProbeSampler::Literal] {
            assert_eq!(s.to_string().parse::<ProbeSampler>().unwrap(), s);
        }
        assert!("full".parse::<ProbeSampler>().is_err());
    }

    #[test]
    fn small_probe_tracks_theory() {
        let r = measure_variance_ratios(&ProbeConfig::new(256, 128, 32).with_trials(2000).with_seed(5)).unwrap();
        assert!(r.eq_a.within(0.03), "{:?}", r.eq_a);
        assert!(r.eq_c.within(0.02), "{:?}", r.eq_c);
        assert_eq!(r.resamples, 0);
    }

    #[test]
    fn composition_of_stage_ratios_matches_whole_block() {
        // A·(B/σ²)·C telescopes to D within each trial; the averaged factors
        // must compose to the averaged D.
        let cfg = ProbeConfig::new(128, 64, 8)
            .with_trials(3000)
            .with_seed(9)
            .with_sampler(ProbeSampler::Literal);
        let r = measure_variance_ratios(&cfg).unwrap();
        let mut b_norm = Vec::new();
        for t in 0..cfg.trials as u64 {
            let mut rng = RngStream::new(cfg.seed, t).generator();
            let x0 = sample_normal_with(&mut rng, 0.0, 1.0, 1, 128).unwrap();
            let w1 = sample_normal_with(&mut rng, 0.0, 1.0, 128, 128).unwrap();
            let w2 = sample_normal_with(&mut rng, 0.0, 1.0, 128, 64).unwrap();
            let mut c = vec![0.0; 64];
            fill_normal(&mut rng, 0.0, 1.0, &mut c);
            let feeder = UnitBlockParams::new(w1, cfg.feeder_groups(), ActivationKind::Relu).unwrap();
            let target = UnitBlockParams::new(w2, 8, ActivationKind::Relu).unwrap();
            let tr = unit_block_forward(&target, &unit_block_forward(&feeder, &x0).unwrap().x_next).unwrap();
            let g = unit_block_backward(&target, &tr, &Matrix::from_vec(1, 64, c).unwrap()).unwrap();
            b_norm.push(var_biased_unchecked(g.d_y.data()) / var_biased_unchecked(g.d_z.data()));
        }
        let composed = r.eq_a.empirical * mean_unchecked(&b_norm) * r.eq_c.empirical;
        let rel = (composed - r.eq_d.empirical).abs() / r.eq_d.empirical;
        assert!(rel < 0.02, "composed {composed} vs D {}", r.eq_d.empirical);
    }

    #[test]
    fn relu_gains_are_one_half() {
        for sigma in [0.1, 1.0, 10.0] {
            let g = measure_activation_gains(&GainConfig::new(ActivationKind::Relu, sigma).with_seed(3)).unwrap();
            assert!((g.forward_gain - 0.5).abs() < 0.005, "{g:?}");
            assert!((g.backward_gain - 0.5).abs() < 0.005, "{g:?}");
        }
    }

    #[test]
    fn identity_activation_has_unit_gains() {
        let id = ActivationKind::Prelu { slope: 1.0 };
        for sigma in [0.3, 4.0] {
            let g = measure_activation_gains(&GainConfig::new(id, sigma).with_samples(200_000)).unwrap();
            assert!((g.forward_gain - 1.0).abs() < 0.01, "{g:?}");
            assert!((g.backward_gain - 1.0).abs() < 0.01, "{g:?}");
        }
    }

    #[test]
    fn prelu_closed_form_values() {
        assert_eq!(prelu_gain_closed_form(0.0), 0.5);
        assert_eq!(prelu_gain_closed_form(0.25), 0.53125);
        assert_eq!(prelu_gain_closed_form(1.0), 1.0);
    }

    #[test]
    fn too_few_gain_samples_rejected() {
        assert!(measure_activation_gains(&GainConfig::new(ActivationKind::Relu, 1.0).with_samples(100)).is_err());
        assert!(measure_activation_gains(&GainConfig::new(ActivationKind::Relu, 0.0)).is_err());
        assert!(homogeneity_check(ActivationKind::Relu, &[1.0], 20_000, 0, 0.01).is_err());
    }

    #[test]
    fn gain_table_feeds_planner() {
        let table = measure_gain_table(&[ActivationKind::Tanh], 200_000, 1).unwrap();
        let (f, b) = table.get(ActivationKind::Tanh).unwrap();
        assert!((f - 0.394).abs() < 0.01 && (b - 0.464).abs() < 0.01, "{f} {b}");
    }
}

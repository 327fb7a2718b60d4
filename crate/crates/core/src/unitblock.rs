//! One unit block: weight layer → group normalization → activation, with
//! exact forward and analytic backward passes.
//!
//! All operations take a leading batch axis. Group statistics are computed
//! per sample over contiguous feature slices; samples never mix.

use serde::{Deserialize, Serialize};

use crate::activation::{activation_derivative, activation_forward, ActivationKind};
use crate::error::{Error, Result};
use crate::numerics::{matmul, matmul_transpose_b, transpose_matmul, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitBlockParams {
    pub n_in: usize,
    pub n_out: usize,
    pub groups: usize,
    pub group_size: usize,
    /// `n_in x n_out`
    pub weights: Matrix,
    pub gamma: f64,
    pub beta: f64,
    pub activation: ActivationKind,
    /// Added to the group variance inside the square root.
    pub eps: f64,
}

impl UnitBlockParams {
    /// γ = 1, β = 0, eps = 0.
    pub fn new(weights: Matrix, groups: usize, activation: ActivationKind) -> Result<Self> {
        let (n_in, n_out) = weights.shape();
        if groups == 0 || n_out % groups != 0 {
            return Err(Error::domain(format!(
                "groups {groups} must divide n_out {n_out}"
            )));
        }
        Ok(UnitBlockParams {
            n_in,
            n_out,
            groups,
            group_size: n_out / groups,
            weights,
            gamma: 1.0,
            beta: 0.0,
            activation,
            eps: 0.0,
        })
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn with_affine(mut self, gamma: f64, beta: f64) -> Self {
        self.gamma = gamma;
        self.beta = beta;
        self
    }

    fn check(&self) -> Result<()> {
        if self.weights.shape() != (self.n_in, self.n_out) {
            return Err(Error::shape(
                "unit block weights",
                self.weights.shape(),
                (self.n_in, self.n_out),
            ));
        }
        if self.groups == 0 || self.groups * self.group_size != self.n_out {
            return Err(Error::domain(format!(
                "groups {} x group size {} != n_out {}",
                self.groups, self.group_size, self.n_out
            )));
        }
        if !(self.eps >= 0.0) {
            return Err(Error::domain(format!("eps must be non-negative, got {}", self.eps)));
        }
        if self.gamma == 0.0 {
            return Err(Error::domain("gamma must be non-zero"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub x: Matrix,
    pub y: Matrix,
    /// `batch x groups`
    pub mu: Matrix,
    /// Biased group variance, without eps. `batch x groups`
    pub sigma2: Matrix,
    pub z: Matrix,
    pub x_next: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientTrace {
    pub d_x_next: Matrix,
    pub d_z: Matrix,
    pub d_y: Matrix,
    pub d_x: Matrix,
    /// `xᵀ · d_y`, summed over the batch.
    pub d_weights: Matrix,
}

/// `y = x · W`
pub fn linear_forward(params: &UnitBlockParams, x: &Matrix) -> Result<Matrix> {
    if x.cols() != params.n_in {
        return Err(Error::shape("linear_forward", x.shape(), params.weights.shape()));
    }
    matmul(x, &params.weights)
}

/// `d_x = d_y · Wᵀ`
pub fn linear_backward(params: &UnitBlockParams, x: &Matrix, d_y: &Matrix) -> Result<Matrix> {
    if x.cols() != params.n_in || d_y.cols() != params.n_out || x.rows() != d_y.rows() {
        return Err(Error::shape("linear_backward", x.shape(), d_y.shape()));
    }
    matmul_transpose_b(d_y, &params.weights)
}

/// Normalizes each contiguous group of `group_size` features per sample and
/// applies the scalar affine `γ·ẑ + β`. Returns `(z, mu, sigma2)`.
pub fn groupnorm_forward(params: &UnitBlockParams, y: &Matrix) -> Result<(Matrix, Matrix, Matrix)> {
    params.check()?;
    if y.cols() != params.n_out {
        return Err(Error::shape("groupnorm_forward", y.shape(), (y.rows(), params.n_out)));
    }
    let batch = y.rows();
    let ng = params.group_size;
    let mut z = Matrix::zeros(batch, params.n_out);
    let mut mu = Matrix::zeros(batch, params.groups);
    let mut sigma2 = Matrix::zeros(batch, params.groups);
    for s in 0..batch {
        let y_row = y.row(s);
        let z_row = z.row_mut(s);
        for g in 0..params.groups {
            let slice = &y_row[g * ng..(g + 1) * ng];
            let m = slice.iter().sum::<f64>() / ng as f64;
            let v = slice.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / ng as f64;
            let denom = v + params.eps;
            if !(denom > 0.0) {
                return Err(Error::DegenerateGroup { sample: s, group: g });
            }
            let inv_std = 1.0 / denom.sqrt();
            for (zo, &yi) in z_row[g * ng..(g + 1) * ng].iter_mut().zip(slice) {
                *zo = params.gamma * (yi - m) * inv_std + params.beta;
            }
            mu.set(s, g, m);
            sigma2.set(s, g, v);
        }
    }
    Ok((z, mu, sigma2))
}

/// Backward through group normalization.
///
/// Per sample and group, with `g = d_z` and `ẑ = (z − β)/γ` restricted to the
/// group: `d_y = γ/√(σ²+eps) · (g − mean(g) − ẑ·mean(ẑ·g))`. This is the sum
/// over `k` of `∂L/∂z_k · ∂z_k/∂y_j`, i.e. T1 − T2 − T3.
///
/// With eps = 0 and groups of size 1 or 2 the normalized output is constant
/// (0, resp. ±1) so the Jacobian is identically zero; that case returns exact
/// zeros instead of rounding noise.
pub fn groupnorm_backward(params: &UnitBlockParams, trace: &ForwardTrace, d_z: &Matrix) -> Result<Matrix> {
    params.check()?;
    if d_z.shape() != trace.z.shape() {
        return Err(Error::shape("groupnorm_backward", d_z.shape(), trace.z.shape()));
    }
    if trace.sigma2.shape() != (trace.z.rows(), params.groups) {
        return Err(Error::shape("groupnorm_backward", trace.sigma2.shape(), (trace.z.rows(), params.groups)));
    }
    let batch = d_z.rows();
    let ng = params.group_size;
    let mut d_y = Matrix::zeros(batch, params.n_out);
    if params.eps == 0.0 && ng <= 2 {
        return Ok(d_y);
    }
    let inv_n = 1.0 / ng as f64;
    let mut z_hat = vec![0.0; ng];
    for s in 0..batch {
        let z_row = trace.z.row(s);
        let g_row = d_z.row(s);
        let out = d_y.row_mut(s);
        for g in 0..params.groups {
            let range = g * ng..(g + 1) * ng;
            let zs = &z_row[range.clone()];
            let gs = &g_row[range.clone()];
            for (zh, &zv) in z_hat.iter_mut().zip(zs) {
                *zh = (zv - params.beta) / params.gamma;
            }
            let mut sum_g = 0.0;
            let mut sum_zg = 0.0;
            for (zh, gv) in z_hat.iter().zip(gs) {
                sum_g += gv;
                sum_zg += zh * gv;
            }
            let mean_g = sum_g * inv_n;
            let mean_zg = sum_zg * inv_n;
            let scale = params.gamma / (trace.sigma2.get(s, g) + params.eps).sqrt();
            for ((o, zh), gv) in out[range].iter_mut().zip(&z_hat).zip(gs) {
                *o = scale * (gv - mean_g - zh * mean_zg);
            }
        }
    }
    Ok(d_y)
}

/// linear → group norm → activation.
pub fn unit_block_forward(params: &UnitBlockParams, x: &Matrix) -> Result<ForwardTrace> {
    let y = linear_forward(params, x)?;
    let (z, mu, sigma2) = groupnorm_forward(params, &y)?;
    let x_next = activation_forward(params.activation, &z);
    Ok(ForwardTrace {
        x: x.clone(),
        y,
        mu,
        sigma2,
        z,
        x_next,
    })
}

pub fn unit_block_backward(
    params: &UnitBlockParams,
    trace: &ForwardTrace,
    d_x_next: &Matrix,
) -> Result<GradientTrace> {
    if d_x_next.shape() != trace.x_next.shape() {
        return Err(Error::shape("unit_block_backward", d_x_next.shape(), trace.x_next.shape()));
    }
    let d_z = activation_derivative(params.activation, &trace.z).hadamard(d_x_next)?;
    let d_y = groupnorm_backward(params, trace, &d_z)?;
    let d_x = linear_backward(params, &trace.x, &d_y)?;
    let d_weights = transpose_matmul(&trace.x, &d_y)?;
    Ok(GradientTrace {
        d_x_next: d_x_next.clone(),
        d_z,
        d_y,
        d_x,
        d_weights,
    })
}

fn read_out(params: &UnitBlockParams, x: &Matrix, loss_weights: &Matrix) -> Result<f64> {
    let trace = unit_block_forward(params, x)?;
    Ok(trace
        .x_next
        .data()
        .iter()
        .zip(loss_weights.data())
        .map(|(a, b)| a * b)
        .sum())
}

/// Relative discrepancy between two derivative estimates:
/// `|a − c| / max(|a|, |c|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Compares the analytic gradient of `L = Σ loss_weights ⊙ x_next` with
/// central differences of step `h`, over every input entry and every weight.
/// Returns the worst [`relative_error`].
pub fn finite_diff_check(params: &UnitBlockParams, x: &Matrix, loss_weights: &Matrix, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::domain(format!("step h must be positive, got {h}")));
    }
    let trace = unit_block_forward(params, x)?;
    if loss_weights.shape() != trace.x_next.shape() {
        return Err(Error::shape("finite_diff_check", loss_weights.shape(), trace.x_next.shape()));
    }
    let grads = unit_block_backward(params, &trace, loss_weights)?;

    let mut worst: f64 = 0.0;
    let mut xp = x.clone();
    for i in 0..x.data().len() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + h;
        let up = read_out(params, &xp, loss_weights)?;
        xp.data_mut()[i] = orig - h;
        let down = read_out(params, &xp, loss_weights)?;
        xp.data_mut()[i] = orig;
        worst = worst.max(relative_error(grads.d_x.data()[i], (up - down) / (2.0 * h)));
    }
    let mut pp = params.clone();
    for i in 0..params.weights.data().len() {
        let orig = pp.weights.data()[i];
        pp.weights.data_mut()[i] = orig + h;
        let up = read_out(&pp, x, loss_weights)?;
        pp.weights.data_mut()[i] = orig - h;
        let down = read_out(&pp, x, loss_weights)?;
        pp.weights.data_mut()[i] = orig;
        worst = worst.max(relative_error(grads.d_weights.data()[i], (up - down) / (2.0 * h)));
    }
    Ok(worst)
}

//! Dual Laplacian regularized least squares predictor.
//!
//! Minimizes
//! `J = ||K_d a_d + (K_t a_t)^T - 2 Y||_F^2 + l_d tr(a_d^T L_d a_d) + l_t tr(a_t^T L_t a_t)`
//! over the coefficient pair by alternating closed-form updates, each a
//! symmetric linear solve against the jittered normal matrix. Prediction
//! averages the two kernel-side reconstructions.

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::linalg::{solve_general, solve_spd};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Which normalization the Laplacian uses.
///
/// `Symmetric` is `D^{-1/2} (D - K) D^{-1/2}`, the form that makes the
/// trace regularizer a norm. `AsPrinted` is the `D^{-1/2} (D - K) D^{1/2}`
/// variant kept for comparison; it is generally not symmetric and routes
/// the updates through an LU solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaplacianForm {
    Symmetric,
    AsPrinted,
}

/// Solver hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DlaprlsConfig {
    pub lambda_d: f64,
    pub lambda_t: f64,
    /// Relative jitter: the solve adds `jitter * mean(diag)` to the
    /// normal matrix diagonal, escalating 10x then 100x on failure.
    pub jitter: f64,
    /// Closed-form alternation passes per outer training iteration.
    pub inner_passes: usize,
    pub laplacian_form: LaplacianForm,
}

impl Default for DlaprlsConfig {
    fn default() -> Self {
        DlaprlsConfig {
            lambda_d: 2f64.powi(-3),
            lambda_t: 2f64.powi(-4),
            jitter: 1e-8,
            inner_passes: 1,
            laplacian_form: LaplacianForm::Symmetric,
        }
    }
}

impl DlaprlsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_d < 0.0 || self.lambda_t < 0.0 {
            return Err(Error::config("dlaprls: lambdas must be >= 0"));
        }
        if self.jitter <= 0.0 {
            return Err(Error::config("dlaprls: jitter must be > 0"));
        }
        if self.inner_passes == 0 {
            return Err(Error::config("dlaprls: inner_passes must be >= 1"));
        }
        Ok(())
    }
}

/// Trainable coefficient matrices: `d` is `N_d x N_t`, `t` is `N_t x N_d`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AlphaPair {
    pub d: Array2<f64>,
    pub t: Array2<f64>,
}

impl AlphaPair {
    pub fn zeros(n_drugs: usize, n_targets: usize) -> Self {
        AlphaPair {
            d: Array2::zeros((n_drugs, n_targets)),
            t: Array2::zeros((n_targets, n_drugs)),
        }
    }
}

/// Normalized Laplacians and degree matrices for both sides.
#[derive(Debug, Clone)]
pub struct LaplacianPair {
    pub l_d: Array2<f64>,
    pub l_t: Array2<f64>,
    pub d_d: Array2<f64>,
    pub d_t: Array2<f64>,
}

/// Diagonal degree matrix: `D(k, k) = sum_m K(k, m)`.
pub fn degree_matrix(k: &Array2<f64>) -> Array2<f64> {
    let n = k.nrows();
    assert_eq!(k.ncols(), n, "degree_matrix: kernel must be square");
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        d[[i, i]] = k.row(i).sum();
    }
    d
}

/// Normalized Laplacian `D^{-1/2} (D - K) D^{-1/2}` (or the as-printed
/// `D^{1/2}` right factor). Zero degrees get a jitter bump and a warning.
pub fn normalized_laplacian(
    k: &Array2<f64>,
    d: &Array2<f64>,
    form: LaplacianForm,
    jitter: f64,
) -> Array2<f64> {
    let n = k.nrows();
    assert_eq!(d.dim(), (n, n), "degree matrix shape mismatch");
    let mut degrees: Vec<f64> = (0..n).map(|i| d[[i, i]]).collect();
    let mut bumped = 0usize;
    for deg in degrees.iter_mut() {
        if *deg <= 0.0 {
            *deg += jitter;
            bumped += 1;
        }
    }
    if bumped > 0 {
        log::warn!("{bumped} zero-degree row(s) in Laplacian; added jitter {jitter}");
    }
    let mut l = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let delta = if i == j { degrees[i] - k[[i, j]] } else { -k[[i, j]] };
            let right = match form {
                LaplacianForm::Symmetric => degrees[j].powf(-0.5),
                LaplacianForm::AsPrinted => degrees[j].powf(0.5),
            };
            l[[i, j]] = degrees[i].powf(-0.5) * delta * right;
        }
    }
    l
}

/// Build both Laplacians from the fused kernels.
pub fn build_laplacians(
    k_d: &Array2<f64>,
    k_t: &Array2<f64>,
    config: &DlaprlsConfig,
) -> LaplacianPair {
    let d_d = degree_matrix(k_d);
    let d_t = degree_matrix(k_t);
    let l_d = normalized_laplacian(k_d, &d_d, config.laplacian_form, config.jitter);
    let l_t = normalized_laplacian(k_t, &d_t, config.laplacian_form, config.jitter);
    LaplacianPair { l_d, l_t, d_d, d_t }
}

/// Loss decomposition: `total = data + reg_d + reg_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub data: f64,
    pub reg_d: f64,
    pub reg_t: f64,
}

/// Evaluate the objective off-tape.
pub fn loss_terms(
    k_d: &Array2<f64>,
    k_t: &Array2<f64>,
    alpha: &AlphaPair,
    lap: &LaplacianPair,
    y_train: &Array2<f64>,
    lambda_d: f64,
    lambda_t: f64,
) -> LossTerms {
    let recon = k_d.dot(&alpha.d) + &k_t.dot(&alpha.t).t();
    let residual = &recon - &y_train.mapv(|v| 2.0 * v);
    let data: f64 = residual.iter().map(|x| x * x).sum();
    let tq = |a: &Array2<f64>, l: &Array2<f64>| -> f64 {
        let la = l.dot(a);
        la.iter().zip(a.iter()).map(|(p, q)| p * q).sum()
    };
    let reg_d = lambda_d * tq(&alpha.d, &lap.l_d);
    let reg_t = lambda_t * tq(&alpha.t, &lap.l_t);
    LossTerms {
        total: data + reg_d + reg_t,
        data,
        reg_d,
        reg_t,
    }
}

/// Objective value only.
pub fn loss_value(
    k_d: &Array2<f64>,
    k_t: &Array2<f64>,
    alpha: &AlphaPair,
    lap: &LaplacianPair,
    y_train: &Array2<f64>,
    lambda_d: f64,
    lambda_t: f64,
) -> f64 {
    loss_terms(k_d, k_t, alpha, lap, y_train, lambda_d, lambda_t).total
}

/// The objective on the tape, differentiable with respect to the kernel
/// inputs. Coefficients and Laplacians enter as constants, matching the
/// optimization split: only the data term carries gradient back to the
/// encoder.
pub struct TapeLoss {
    pub total: Tensor,
    pub data: Tensor,
    pub reg_d: Tensor,
    pub reg_t: Tensor,
}

pub fn loss_tensor(
    tape: &mut Tape,
    k_d: Tensor,
    k_t: Tensor,
    alpha: &AlphaPair,
    lap: &LaplacianPair,
    y_train: &Array2<f64>,
    lambda_d: f64,
    lambda_t: f64,
) -> TapeLoss {
    let a_d = tape.constant(alpha.d.clone());
    let a_t = tape.constant(alpha.t.clone());
    let neg2y = tape.constant(y_train.mapv(|v| -2.0 * v));
    let left = tape.matmul(k_d, a_d);
    let right_raw = tape.matmul(k_t, a_t);
    let right = tape.transpose(right_raw);
    let sum = tape.add(left, right);
    let residual = tape.add(sum, neg2y);
    let data = tape.frobenius_sq(residual);
    let tq_d = tape.trace_quadratic(a_d, &lap.l_d);
    let reg_d = tape.scale(tq_d, lambda_d);
    let tq_t = tape.trace_quadratic(a_t, &lap.l_t);
    let reg_t = tape.scale(tq_t, lambda_t);
    let partial = tape.add(data, reg_d);
    let total = tape.add(partial, reg_t);
    TapeLoss {
        total,
        data,
        reg_d,
        reg_t,
    }
}

/// Shared solve for both closed-form updates: `(K K + lambda L + eps I) X = K RHS`
/// with jitter escalation `eps, 10 eps, 100 eps`.
fn closed_form_solve(
    k: &Array2<f64>,
    l: &Array2<f64>,
    rhs: &Array2<f64>,
    lambda: f64,
    jitter: f64,
    form: LaplacianForm,
) -> Result<Array2<f64>> {
    let n = k.nrows();
    let normal = k.dot(k) + &l.mapv(|x| lambda * x);
    let mean_diag = (0..n).map(|i| normal[[i, i]]).sum::<f64>() / n as f64;
    let base = jitter * if mean_diag > 0.0 { mean_diag } else { 1.0 };
    let b = k.dot(rhs);
    for escalation in [1.0, 10.0, 100.0] {
        let eps = base * escalation;
        let mut m = normal.clone();
        for i in 0..n {
            m[[i, i]] += eps;
        }
        let solved = match form {
            LaplacianForm::Symmetric => solve_spd(&m, &b),
            LaplacianForm::AsPrinted => solve_general(&m, &b),
        };
        if let Some(x) = solved {
            if x.iter().all(|v| v.is_finite()) {
                return Ok(x);
            }
        }
    }
    Err(Error::numerical(format!(
        "closed-form solve failed after jitter escalation; n = {n}, \
         mean diag = {mean_diag:.3e}, jitter base = {base:.3e}, lambda = {lambda:.3e}"
    )))
}

/// Closed-form drug-side update:
/// `a_d = (K_d K_d + l_d L_d + eps I)^{-1} K_d (2 Y - a_t^T K_t^T)`.
pub fn update_alpha_d(
    k_d: &Array2<f64>,
    k_t: &Array2<f64>,
    alpha_t: &Array2<f64>,
    y_train: &Array2<f64>,
    l_d: &Array2<f64>,
    lambda_d: f64,
    jitter: f64,
    form: LaplacianForm,
) -> Result<Array2<f64>> {
    let rhs = y_train.mapv(|v| 2.0 * v) - k_t.dot(alpha_t).t();
    closed_form_solve(k_d, l_d, &rhs, lambda_d, jitter, form)
}

/// Closed-form target-side update, the mirror of [`update_alpha_d`] on the
/// transposed training matrix:
/// `a_t = (K_t K_t + l_t L_t + eps I)^{-1} K_t (2 Y^T - a_d^T K_d^T)`.
pub fn update_alpha_t(
    k_t: &Array2<f64>,
    k_d: &Array2<f64>,
    alpha_d: &Array2<f64>,
    y_train: &Array2<f64>,
    l_t: &Array2<f64>,
    lambda_t: f64,
    jitter: f64,
    form: LaplacianForm,
) -> Result<Array2<f64>> {
    let rhs = y_train.t().mapv(|v| 2.0 * v) - k_d.dot(alpha_d).t();
    closed_form_solve(k_t, l_t, &rhs, lambda_t, jitter, form)
}

/// One Gauss-Seidel alternation (drug side first), repeated
/// `config.inner_passes` times.
pub fn alternate(
    k_d: &Array2<f64>,
    k_t: &Array2<f64>,
    alpha: &mut AlphaPair,
    lap: &LaplacianPair,
    y_train: &Array2<f64>,
    config: &DlaprlsConfig,
) -> Result<()> {
    for _ in 0..config.inner_passes {
        alpha.d = update_alpha_d(
            k_d,
            k_t,
            &alpha.t,
            y_train,
            &lap.l_d,
            config.lambda_d,
            config.jitter,
            config.laplacian_form,
        )?;
        alpha.t = update_alpha_t(
            k_t,
            k_d,
            &alpha.d,
            y_train,
            &lap.l_t,
            config.lambda_t,
            config.jitter,
            config.laplacian_form,
        )?;
    }
    Ok(())
}

/// Prediction matrix `Y* = (K_d a_d + (K_t a_t)^T) / 2`.
pub fn predict(k_d: &Array2<f64>, k_t: &Array2<f64>, alpha: &AlphaPair) -> Array2<f64> {
    let sum = k_d.dot(&alpha.d) + &k_t.dot(&alpha.t).t();
    sum.mapv(|v| 0.5 * v)
}

/// Gradient of the objective with respect to `a_d` (for stationarity
/// checks): `2 K_d (K_d a_d + a_t^T K_t^T - 2Y) + 2 l_d L_d a_d`.
pub fn grad_alpha_d(
    k_d: &Array2<f64>,
    k_t: &Array2<f64>,
    alpha: &AlphaPair,
    y_train: &Array2<f64>,
    l_d: &Array2<f64>,
    lambda_d: f64,
) -> Array2<f64> {
    let residual = k_d.dot(&alpha.d) + &k_t.dot(&alpha.t).t() - &y_train.mapv(|v| 2.0 * v);
    k_d.dot(&residual).mapv(|v| 2.0 * v) + &l_d.dot(&alpha.d).mapv(|v| 2.0 * lambda_d * v)
}

/// Mirror of [`grad_alpha_d`] for the target side.
pub fn grad_alpha_t(
    k_t: &Array2<f64>,
    k_d: &Array2<f64>,
    alpha: &AlphaPair,
    y_train: &Array2<f64>,
    l_t: &Array2<f64>,
    lambda_t: f64,
) -> Array2<f64> {
    let residual =
        k_t.dot(&alpha.t) + &k_d.dot(&alpha.d).t() - &y_train.t().mapv(|v| 2.0 * v);
    k_t.dot(&residual).mapv(|v| 2.0 * v) + &l_t.dot(&alpha.t).mapv(|v| 2.0 * lambda_t * v)
}

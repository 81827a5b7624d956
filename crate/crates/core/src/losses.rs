//! Adversarial, cycle-consistency and total objectives with their gradients.
//!
//! Expectations are batch means. For patch discriminators the mean runs
//! over batch items and patch positions together.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

const RANGE_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GanForm {
    /// Generators minimize `log(1 - D(fake))`, the literal minimax form.
    LogSaturating,
    /// Generators minimize `-log D(fake)`.
    LogNonSaturating,
}

impl GanForm {
    pub fn as_str(self) -> &'static str {
        match self {
            GanForm::LogSaturating => "log_saturating",
            GanForm::LogNonSaturating => "log_nonsaturating",
        }
    }
}

impl fmt::Display for GanForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GanForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "log_saturating" => Ok(GanForm::LogSaturating),
            "log_nonsaturating" => Ok(GanForm::LogNonSaturating),
            _ => Err(Error::Param(format!("unknown gan_form {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_cyc: f64,
    pub epsilon_log: f64,
    pub gan_form: GanForm,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_cyc: 10.0,
            epsilon_log: 1e-7,
            gan_form: GanForm::LogNonSaturating,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_cyc >= 0.0) || !self.lambda_cyc.is_finite() {
            return Err(Error::Param(format!("lambda_cyc must be >= 0, got {}", self.lambda_cyc)));
        }
        if !(self.epsilon_log > 0.0 && self.epsilon_log <= 1e-3) {
            return Err(Error::Param(format!("epsilon_log must be in (0, 1e-3], got {}", self.epsilon_log)));
        }
        Ok(())
    }
}

fn check_probabilities<T: Scalar>(xs: &[T]) -> Result<()> {
    for &x in xs {
        let v = x.as_f64();
        if !(v >= -RANGE_TOLERANCE && v <= 1.0 + RANGE_TOLERANCE) {
            return Err(Error::Domain(v));
        }
    }
    Ok(())
}

fn clamped_log(x: f64, eps: f64) -> f64 {
    x.clamp(eps, 1.0).ln()
}

/// `mean(log(clamp(x, eps, 1)))`.
pub fn mean_log<T: Scalar>(xs: &[T], eps: f64) -> f64 {
    xs.iter().map(|v| clamped_log(v.as_f64(), eps)).sum::<f64>() / xs.len() as f64
}

/// `mean(log(clamp(1 - x, eps, 1)))`.
pub fn mean_log_one_minus<T: Scalar>(xs: &[T], eps: f64) -> f64 {
    xs.iter().map(|v| clamped_log(1.0 - v.as_f64(), eps)).sum::<f64>() / xs.len() as f64
}

/// Gradient of `coeff * mean_log(x)`; zero where the clamp is active.
pub fn mean_log_grad<T: Scalar>(x: &Tensor<T>, eps: f64, coeff: f64) -> Tensor<T> {
    let n = x.data().len() as f64;
    x.map(|v| {
        let v = v.as_f64();
        T::from_f64(if v > eps && v < 1.0 { coeff / (n * v) } else { 0.0 })
    })
}

/// Gradient of `coeff * mean_log_one_minus(x)`; zero where the clamp is active.
pub fn mean_log_one_minus_grad<T: Scalar>(x: &Tensor<T>, eps: f64, coeff: f64) -> Tensor<T> {
    let n = x.data().len() as f64;
    x.map(|v| {
        let q = 1.0 - v.as_f64();
        T::from_f64(if q > eps && q < 1.0 { -coeff / (n * q) } else { 0.0 })
    })
}

/// Adversarial value: `E log D(real) + E log(1 - D(fake))`.
///
/// The discriminator maximizes it; its maximum 0 is reached at
/// `D(real) = 1`, `D(fake) = 0`.
pub fn gan_value<T: Scalar>(d_real: &[T], d_fake: &[T], eps: f64) -> Result<f64> {
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(Error::Dataset("empty discriminator output".into()));
    }
    check_probabilities(d_real)?;
    check_probabilities(d_fake)?;
    Ok(mean_log(d_real, eps) + mean_log_one_minus(d_fake, eps))
}

/// Generator-side adversarial term for one direction (to be minimized).
pub fn generator_adversarial<T: Scalar>(d_fake: &[T], w: &LossWeights) -> f64 {
    match w.gan_form {
        GanForm::LogNonSaturating => -mean_log(d_fake, w.epsilon_log),
        GanForm::LogSaturating => mean_log_one_minus(d_fake, w.epsilon_log),
    }
}

pub fn generator_adversarial_grad<T: Scalar>(d_fake: &Tensor<T>, w: &LossWeights) -> Tensor<T> {
    match w.gan_form {
        GanForm::LogNonSaturating => mean_log_grad(d_fake, w.epsilon_log, -1.0),
        GanForm::LogSaturating => mean_log_one_minus_grad(d_fake, w.epsilon_log, 1.0),
    }
}

/// Mean absolute difference per element.
pub fn l1_mean<T: Scalar>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("reconstruction elements", a.len(), b.len()));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x.as_f64() - y.as_f64()).abs()).sum::<f64>() / a.len() as f64)
}

/// Gradient of `coeff * l1_mean(rec, target)` with respect to `rec`.
pub fn l1_mean_grad<T: Scalar>(rec: &Tensor<T>, target: &Tensor<T>, coeff: f64) -> Tensor<T> {
    let n = rec.data().len() as f64;
    let mut out = Tensor::zeros(rec.shape());
    for ((o, &a), &b) in out.data_mut().iter_mut().zip(rec.data()).zip(target.data()) {
        let d = a.as_f64() - b.as_f64();
        *o = T::from_f64(if d > 0.0 {
            coeff / n
        } else if d < 0.0 {
            -coeff / n
        } else {
            0.0
        });
    }
    out
}

/// `mean|F(G(v)) - v| + mean|G(F(r)) - r|`.
pub fn cycle_loss<T: Scalar>(v: &Tensor<T>, v_rec: &Tensor<T>, r: &Tensor<T>, r_rec: &Tensor<T>) -> Result<f64> {
    if v.shape() != v_rec.shape() {
        return Err(Error::shape("virtual reconstruction elements", v.data().len(), v_rec.data().len()));
    }
    if r.shape() != r_rec.shape() {
        return Err(Error::shape("real reconstruction elements", r.data().len(), r_rec.data().len()));
    }
    Ok(l1_mean(v_rec.data(), v.data())? + l1_mean(r_rec.data(), r.data())?)
}

/// `gan_g + gan_f + lambda * cyc`.
pub fn total_loss(gan_g: f64, gan_f: f64, cyc: f64, w: &LossWeights) -> f64 {
    gan_g + gan_f + w.lambda_cyc * cyc
}

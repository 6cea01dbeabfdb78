//! Central finite-difference verification of analytic gradients (64-bit).

use crate::error::{Error, Result};
use crate::nn::stack::LayerStack;
use crate::tensor::Tensor;

/// Finite-difference step for a coordinate of magnitude `x`.
pub fn fd_step(x: f64) -> f64 {
    1e-6 * x.abs().max(1.0)
}

/// Result of a gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `(tensor name, relative error)`; `"input"` is the stack input.
    pub entries: Vec<(String, f64)>,
    pub max_relative_error: f64,
    pub worst: String,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    fn from_entries(entries: Vec<(String, f64)>, tolerance: f64) -> Self {
        let (worst, max_relative_error) = entries
            .iter()
            .fold((String::new(), 0.0f64), |(wn, we), (n, e)| if *e > we { (n.clone(), *e) } else { (wn, we) });
        Self { passed: max_relative_error < tolerance, entries, max_relative_error, worst, tolerance }
    }
}

/// `||a - n|| / max(||a||, ||n||)` with a small floor, so two vanishing
/// gradients compare equal.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-10)
}

fn ensure_finite(name: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite gradient for {name}")))
    }
}

/// Numeric gradient of a scalar function by central differences.
pub fn numeric_gradient(mut f: impl FnMut(&Tensor<f64>) -> Result<f64>, x: &Tensor<f64>) -> Result<Tensor<f64>> {
    let mut probe = x.clone();
    let mut grad = x.zeros_like();
    for i in 0..x.len() {
        let orig = x.data()[i];
        let h = fd_step(orig);
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// Compares the analytic gradient returned by `f` with central differences.
pub fn check_function_gradient(
    mut f: impl FnMut(&Tensor<f64>) -> Result<(f64, Tensor<f64>)>,
    x: &Tensor<f64>,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let (_, analytic) = f(x)?;
    ensure_finite("input", analytic.data())?;
    let numeric = numeric_gradient(|p| Ok(f(p)?.0), x)?;
    let err = relative_error(analytic.data(), numeric.data());
    Ok(GradCheckReport::from_entries(vec![("input".into(), err)], tolerance))
}

/// Checks every parameter of `stack` and its input against central finite
/// differences of `loss(stack(input))`.
///
/// `loss` returns the scalar loss and its gradient with respect to the
/// stack output.
pub fn gradient_check(
    stack: &mut LayerStack<f64>,
    loss: impl Fn(&Tensor<f64>) -> Result<(f64, Tensor<f64>)>,
    input: &Tensor<f64>,
    tolerance: f64,
) -> Result<GradCheckReport> {
    stack.zero_grad();
    let out = stack.forward(input)?;
    let (_, dout) = loss(&out)?;
    let grad_input = stack.backward(&dout)?;
    ensure_finite("input", grad_input.data())?;
    let analytic: Vec<(String, Vec<f64>)> =
        stack.params().iter().map(|p| (p.name.clone(), p.grad.data().to_vec())).collect();
    for (name, g) in &analytic {
        ensure_finite(name, g)?;
    }

    let mut entries = Vec::new();
    for (pi, (name, a)) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; a.len()];
        for (i, n) in numeric.iter_mut().enumerate() {
            let orig = stack.params()[pi].value.data()[i];
            let h = fd_step(orig);
            let mut eval = |v: f64| -> Result<f64> {
                stack.params_mut()[pi].value.data_mut()[i] = v;
                loss(&stack.forward(input)?).map(|(l, _)| l)
            };
            let up = eval(orig + h)?;
            let down = eval(orig - h)?;
            eval(orig)?;
            *n = (up - down) / (2.0 * h);
        }
        entries.push((name.clone(), relative_error(a, &numeric)));
    }
    let numeric = numeric_gradient(|x| loss(&stack.forward(x)?).map(|(l, _)| l), input)?;
    entries.push(("input".into(), relative_error(grad_input.data(), numeric.data())));
    Ok(GradCheckReport::from_entries(entries, tolerance))
}

/// `0.5 * ||output - target||^2` and its gradient.
pub fn squared_error(output: &Tensor<f64>, target: &Tensor<f64>) -> Result<(f64, Tensor<f64>)> {
    let diff = output.sub(target)?;
    Ok((0.5 * diff.dot(&diff)?, diff))
}

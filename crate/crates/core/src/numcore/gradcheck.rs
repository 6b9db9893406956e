use super::graph::{Graph, Mode, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Seed for the dropout generator of every graph built by [`grad_check`], so
/// that analytic and perturbed evaluations see identical masks.
pub const GRAD_CHECK_SEED: u64 = 0x5eed;

/// Largest `|analytic - numeric| / max(1, |analytic|)` over every coordinate
/// of every tensor in `point`, with `numeric` the central difference at step
/// `eps`.
///
/// `f` receives a train-mode graph and one trainable leaf per tensor in
/// `point` and must return a one-element loss. It is called once for the
/// analytic gradient and twice per coordinate.
pub fn grad_check<F>(f: F, point: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::Invalid(format!("finite-difference step {eps} must be positive")));
    }
    let eval = |tensors: &[Tensor], want_grad: bool| -> Result<(f64, Vec<Tensor>)> {
        let mut g = Graph::new(Mode::Train, GRAD_CHECK_SEED);
        let vars: Vec<Var> = tensors
            .iter()
            .map(|t| g.param(t.clone()))
            .collect::<Result<_>>()?;
        let loss = f(&mut g, &vars)?;
        let value = g.value(loss).item()?;
        if !value.is_finite() {
            return Err(Error::NonFinite("grad_check objective".into()));
        }
        if !want_grad {
            return Ok((value, Vec::new()));
        }
        let mut grads = g.backward(loss)?;
        Ok((value, grads.take(&vars)?))
    };

    let (_, analytic) = eval(point, true)?;
    let mut worst = 0.0f64;
    let mut probe = point.to_vec();
    for (ti, grad) in analytic.iter().enumerate() {
        for j in 0..grad.numel() {
            let orig = point[ti].data()[j];
            probe[ti].data_mut()[j] = orig + eps;
            let (up, _) = eval(&probe, false)?;
            probe[ti].data_mut()[j] = orig - eps;
            let (down, _) = eval(&probe, false)?;
            probe[ti].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = grad.data()[j];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}

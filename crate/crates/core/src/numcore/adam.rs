use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Self::default()
        }
    }
}

/// Moment estimates for one parameter list.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Result<Self> {
        let AdamConfig { lr, beta1, beta2, epsilon } = config;
        let valid = lr > 0.0
            && lr.is_finite()
            && (0.0..1.0).contains(&beta1)
            && beta1 > 0.0
            && (0.0..1.0).contains(&beta2)
            && beta2 > 0.0
            && epsilon > 0.0;
        if !valid {
            return Err(Error::Invalid(format!("bad Adam config {config:?}")));
        }
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Ok(AdamState {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        })
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "{} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::shape(
                "adam_step",
                format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape()),
            ));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of parameter {i}")));
        }
    }

    let AdamConfig { lr, beta1, beta2, epsilon } = state.config;
    state.t += 1;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((w, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("adam update".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut params = vec![Tensor::new(vec![3], vec![1.0, 1.0, 1.0]).unwrap()];
        let grads = vec![Tensor::new(vec![3], vec![0.5, -2.0, 7.0]).unwrap()];
        let mut state = AdamState::new(AdamConfig::with_lr(0.01), &params).unwrap();
        adam_step(&mut params, &grads, &mut state).unwrap();
        let want = [1.0 - 0.01, 1.0 + 0.01, 1.0 - 0.01];
        for (got, want) in params[0].data().iter().zip(want) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
        assert_eq!(state.t, 1);
    }

    #[test]
    fn zero_gradient_is_a_no_op_except_step_count() {
        let mut params = vec![Tensor::new(vec![2], vec![0.3, -0.4]).unwrap()];
        let before = params.clone();
        let grads = vec![Tensor::zeros(&[2])];
        let mut state = AdamState::new(AdamConfig::default(), &params).unwrap();
        adam_step(&mut params, &grads, &mut state).unwrap();
        assert_eq!(params, before);
        assert_eq!(state.m[0], Tensor::zeros(&[2]));
        assert_eq!(state.v[0], Tensor::zeros(&[2]));
        assert_eq!(state.t, 1);
    }

    #[test]
    fn rejects_mismatch_and_non_finite() {
        let mut params = vec![Tensor::zeros(&[2])];
        let mut state = AdamState::new(AdamConfig::default(), &params).unwrap();
        assert!(adam_step(&mut params, &[Tensor::zeros(&[3])], &mut state).is_err());
        let bad = Tensor::from_parts(vec![2], vec![f64::NAN, 0.0]);
        assert!(matches!(
            adam_step(&mut params, &[bad], &mut state),
            Err(Error::NonFinite(_))
        ));
        assert!(AdamState::new(AdamConfig { beta1: 1.0, ..AdamConfig::default() }, &params).is_err());
    }
}

use crate::error::{DgcfError, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moment accumulators for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(len: usize) -> Self {
        OptimizerState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.len() {
        return Err(DgcfError::Contract(format!(
            "adam shapes differ: params {}, grads {}, state {}",
            params.len(),
            grads.len(),
            state.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = vec![0.5, -1.0];
        let mut s = OptimizerState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, 0.1).unwrap();
        assert_eq!(p, vec![0.5, -1.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let mut p = vec![0.0, 0.0, 0.0];
        let mut s = OptimizerState::new(3);
        adam_step(&mut p, &[3.0, -0.02, 1e3], &mut s, 0.01).unwrap();
        assert_abs_diff_eq!(p[0], -0.01, epsilon = 1e-8);
        assert_abs_diff_eq!(p[1], 0.01, epsilon = 1e-7);
        assert_abs_diff_eq!(p[2], -0.01, epsilon = 1e-8);
    }

    #[test]
    fn two_steps_match_hand_recursion() {
        // g1 = (1, -2), g2 = (0.5, 1), lr = 0.1
        let mut p = vec![1.0, 1.0];
        let mut s = OptimizerState::new(2);
        adam_step(&mut p, &[1.0, -2.0], &mut s, 0.1).unwrap();
        adam_step(&mut p, &[0.5, 1.0], &mut s, 0.1).unwrap();
        // coordinate 0: m1=.1 v1=.001; m2=.09+.05=.14 v2=.000999+.00025=.001249
        let m_hat = 0.14 / (1.0 - 0.81);
        let v_hat: f64 = 0.001249 / (1.0 - 0.998001);
        let p0 = 1.0 - 0.1 * 1.0 - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        // coordinate 1: m1=-.2 v1=.004; m2=-.18+.1=-.08 v2=.003996+.001=.004996
        let m_hat1 = -0.08 / (1.0 - 0.81);
        let v_hat1: f64 = 0.004996 / (1.0 - 0.998001);
        let p1 = 1.0 + 0.1 - 0.1 * m_hat1 / (v_hat1.sqrt() + 1e-8);
        assert_abs_diff_eq!(p[0], p0, epsilon = 1e-8);
        assert_abs_diff_eq!(p[1], p1, epsilon = 1e-8);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![0.0; 2];
        let mut s = OptimizerState::new(3);
        assert!(adam_step(&mut p, &[0.0, 0.0], &mut s, 0.1).is_err());
    }
}

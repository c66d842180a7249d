//! SGD with momentum, weight decay, and polynomial learning-rate decay.

use crate::error::{Error, Result};
use crate::network::{Param, ParamGroup};

/// `lr_base * (1 - iteration/total)^power`.
pub fn poly_lr(iteration: usize, total_iterations: usize, lr_base: f64, power: f64) -> Result<f64> {
    if total_iterations == 0 {
        return Err(Error::Precondition(
            "poly_lr needs a positive iteration total".into(),
        ));
    }
    if iteration > total_iterations {
        return Err(Error::Precondition(format!(
            "iteration {iteration} beyond total {total_iterations}"
        )));
    }
    Ok(lr_base * (1.0 - iteration as f64 / total_iterations as f64).powf(power))
}

/// Hyperparameters of one SGD update.
#[derive(Debug, Clone, Copy)]
pub struct SgdHyper {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub head_lr_multiplier: f64,
}

/// The update rule on raw f64 buffers: `g' = g + wd*theta`,
/// `v <- momentum*v + g'`, `theta <- theta - lr*v`. This is the exact
/// arithmetic the tensor optimizer applies per element.
pub fn sgd_update_values(
    theta: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if theta.len() != grads.len() || theta.len() != velocity.len() {
        return Err(Error::Dim(format!(
            "sgd buffers disagree: {} params, {} grads, {} velocities",
            theta.len(),
            grads.len(),
            velocity.len()
        )));
    }
    for i in 0..theta.len() {
        let g = grads[i] + weight_decay * theta[i];
        velocity[i] = momentum * velocity[i] + g;
        theta[i] -= lr * velocity[i];
    }
    Ok(())
}

/// Per-parameter velocity buffers, zero-initialized, aligned with the
/// parameter list handed to [`SgdState::new`].
pub struct SgdState {
    velocities: Vec<Vec<f64>>,
}

impl SgdState {
    pub fn new(params: &[Param]) -> SgdState {
        SgdState {
            velocities: params.iter().map(|p| vec![0.0; p.tensor.numel()]).collect(),
        }
    }

    /// Apply one step. Head-tagged parameters use `lr * head_lr_multiplier`.
    /// Parameters without a gradient are treated as zero-gradient.
    pub fn step(&mut self, params: &[Param], hyper: &SgdHyper) -> Result<()> {
        if params.len() != self.velocities.len() {
            return Err(Error::Dim(format!(
                "optimizer state holds {} buffers for {} parameters",
                self.velocities.len(),
                params.len()
            )));
        }
        for (param, vel) in params.iter().zip(&mut self.velocities) {
            let lr_eff = match param.group {
                ParamGroup::Head => hyper.lr * hyper.head_lr_multiplier,
                ParamGroup::Backbone => hyper.lr,
            };
            let grad = param.tensor.grad();
            let mut theta = param.tensor.data_mut();
            if let Some(g) = grad.as_ref() {
                if g.len() != theta.len() {
                    return Err(Error::Dim(format!(
                        "gradient length {} != parameter length {} for {}",
                        g.len(),
                        theta.len(),
                        param.name
                    )));
                }
            }
            for i in 0..theta.len() {
                let g = grad.as_ref().map_or(0.0, |g| g[i] as f64)
                    + hyper.weight_decay * theta[i] as f64;
                vel[i] = hyper.momentum * vel[i] + g;
                theta[i] = (theta[i] as f64 - lr_eff * vel[i]) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{NetworkConfig, SegNet};

    #[test]
    fn poly_lr_endpoints_and_midpoint() {
        assert_eq!(poly_lr(0, 100, 0.01, 0.9).unwrap(), 0.01);
        assert_eq!(poly_lr(100, 100, 0.01, 0.9).unwrap(), 0.0);
        let mid = poly_lr(50, 100, 0.01, 0.9).unwrap();
        assert!((mid - 0.01 * 0.5f64.powf(0.9)).abs() < 1e-15);
        assert!((mid / 0.01 - 0.535887).abs() < 1e-6);
    }

    #[test]
    fn poly_lr_rejects_zero_total() {
        assert!(matches!(
            poly_lr(0, 0, 0.01, 0.9),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn plain_sgd_without_momentum_or_decay() {
        let mut theta = vec![1.0, -2.0];
        let mut vel = vec![0.0, 0.0];
        sgd_update_values(&mut theta, &[0.5, -1.0], &mut vel, 0.1, 0.0, 0.0).unwrap();
        assert_eq!(theta, vec![1.0 - 0.05, -2.0 + 0.1]);
    }

    #[test]
    fn two_step_momentum_unroll() {
        // v1 = g, v2 = 1.9 g => theta = -(1 + 1.9) g
        let g = 0.37;
        let mut theta = vec![0.0];
        let mut vel = vec![0.0];
        for _ in 0..2 {
            sgd_update_values(&mut theta, &[g], &mut vel, 1.0, 0.9, 0.0).unwrap();
        }
        assert!((theta[0] - (-2.9 * g)).abs() < 1e-9);
    }

    #[test]
    fn head_parameters_move_ten_times_further() {
        let net = SegNet::build(&NetworkConfig {
            block_channels: vec![4],
            seed: 3,
            ..NetworkConfig::new(3)
        })
        .unwrap();
        let params = net.parameters();
        let before: Vec<Vec<f32>> = params.iter().map(|p| p.tensor.to_vec()).collect();
        // identical unit gradients everywhere
        for p in &params {
            p.tensor.zero_grad();
            p.tensor.accumulate_grad(&vec![1.0; p.tensor.numel()]);
        }
        let mut opt = SgdState::new(&params);
        let hyper = SgdHyper {
            lr: 0.01,
            momentum: 0.0,
            weight_decay: 0.0,
            head_lr_multiplier: 10.0,
        };
        opt.step(&params, &hyper).unwrap();
        for (param, old) in params.iter().zip(&before) {
            let expect = match param.group {
                ParamGroup::Head => 0.1f32,
                ParamGroup::Backbone => 0.01f32,
            };
            for (new, old) in param.tensor.data().iter().zip(old) {
                assert!(((old - new) - expect).abs() < 1e-7, "{}", param.name);
            }
        }
    }

    #[test]
    fn missing_grad_is_zero_grad() {
        let net = SegNet::build(&NetworkConfig {
            block_channels: vec![4],
            seed: 3,
            ..NetworkConfig::new(3)
        })
        .unwrap();
        let params = net.parameters();
        let before: Vec<Vec<f32>> = params.iter().map(|p| p.tensor.to_vec()).collect();
        let mut opt = SgdState::new(&params);
        let hyper = SgdHyper {
            lr: 0.5,
            momentum: 0.9,
            weight_decay: 0.0,
            head_lr_multiplier: 10.0,
        };
        opt.step(&params, &hyper).unwrap();
        let after: Vec<Vec<f32>> = params.iter().map(|p| p.tensor.to_vec()).collect();
        assert_eq!(before, after);
    }
}

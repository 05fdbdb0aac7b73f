use crate::error::{Result, TcglError};
use crate::numcore::tensor::Tensor;

/// SGD with momentum and weight decay:
///   g' = g + wd * p;  v = momentum * v + g';  p = p - lr * v
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub velocity: Tensor,
}

impl OptimizerState {
    pub fn new(param_shape: Vec<usize>, lr: f64, momentum: f64, weight_decay: f64) -> Self {
        OptimizerState {
            lr,
            momentum,
            weight_decay,
            velocity: Tensor::zeros(param_shape),
        }
    }
}

pub fn sgd_step(param: &mut Tensor, grad: &Tensor, state: &mut OptimizerState) -> Result<()> {
    if param.shape != grad.shape || param.shape != state.velocity.shape {
        return Err(TcglError::ShapeMismatch(format!(
            "sgd_step: param {:?}, grad {:?}, velocity {:?}",
            param.shape, grad.shape, state.velocity.shape
        )));
    }
    for i in 0..param.data.len() {
        let g = grad.data[i] + state.weight_decay * param.data[i];
        state.velocity.data[i] = state.momentum * state.velocity.data[i] + g;
        param.data[i] -= state.lr * state.velocity.data[i];
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vanilla_step() {
        let mut p = Tensor::scalar(1.0);
        let g = Tensor::scalar(0.1);
        let mut st = OptimizerState::new(vec![], 0.1, 0.0, 0.0);
        sgd_step(&mut p, &g, &mut st).unwrap();
        assert!((p.data[0] - 0.99).abs() < 1e-15);
    }

    #[test]
    fn zero_grad_is_fixed_point() {
        let mut p = Tensor::vector(vec![1.0, -2.0]);
        let g = Tensor::vector(vec![0.0, 0.0]);
        let mut st = OptimizerState::new(vec![2], 0.5, 0.0, 0.0);
        let before = p.clone();
        sgd_step(&mut p, &g, &mut st).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn momentum_recurrence_unrolled() {
        // p: 0 -> -1 -> -2.9 with momentum 0.9, g = 1, lr = 1
        let mut p = Tensor::scalar(0.0);
        let g = Tensor::scalar(1.0);
        let mut st = OptimizerState::new(vec![], 1.0, 0.9, 0.0);
        sgd_step(&mut p, &g, &mut st).unwrap();
        assert!((p.data[0] + 1.0).abs() < 1e-15);
        sgd_step(&mut p, &g, &mut st).unwrap();
        assert!((p.data[0] + 2.9).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Tensor::vector(vec![1.0]);
        let g = Tensor::vector(vec![1.0, 2.0]);
        let mut st = OptimizerState::new(vec![1], 0.1, 0.9, 0.0);
        assert!(sgd_step(&mut p, &g, &mut st).is_err());
    }
}

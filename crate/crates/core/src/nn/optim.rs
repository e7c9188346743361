use super::{NnError, Tensor};

/// Momentum buffers, one per parameter tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SgdState {
    velocity: Vec<Vec<f64>>,
}

impl SgdState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// `v = momentum * v - lr * g; p = p + v` for every tensor.
pub fn sgd_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut SgdState,
    lr: f64,
    momentum: f64,
) -> Result<(), NnError> {
    if params.len() != grads.len() {
        return Err(NnError::ShapeMismatch { expected: vec![params.len()], actual: vec![grads.len()] });
    }
    if state.velocity.is_empty() {
        state.velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
        if p.shape() != g.shape() || v.len() != p.len() {
            return Err(NnError::ShapeMismatch { expected: p.shape().to_vec(), actual: g.shape().to_vec() });
        }
        for ((pi, gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
            *vi = momentum * *vi - lr * gi;
            *pi += *vi;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(steps: usize, lr: f64, momentum: f64, g: f64) -> f64 {
        let mut p = Tensor::from_vec(vec![0.0]);
        let grads = [Tensor::from_vec(vec![g])];
        let mut state = SgdState::new();
        for _ in 0..steps {
            sgd_step(&mut [&mut p], &grads, &mut state, lr, momentum).unwrap();
        }
        p.data()[0]
    }

    #[test]
    fn step_examples() {
        assert!((run(1, 0.1, 0.0, 1.0) + 0.1).abs() < 1e-15);
        assert_eq!(run(5, 0.1, 0.9, 0.0), 0.0);
        assert!((run(2, 0.01, 0.9, 1.0) + 0.029).abs() < 1e-15);
    }

    #[test]
    fn shape_checks() {
        let mut p = Tensor::from_vec(vec![0.0, 1.0]);
        let mut s = SgdState::new();
        assert!(sgd_step(&mut [&mut p], &[Tensor::from_vec(vec![1.0])], &mut s, 0.1, 0.0).is_err());
        assert!(sgd_step(&mut [&mut p], &[], &mut SgdState::new(), 0.1, 0.0).is_err());
    }
}

use super::param::Param;
use crate::scalar::Scalar;

/// Adam with bias correction; moment buffers follow parameter order.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self { lr, beta1, beta2, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step(&mut self, params: &mut [&mut Param<T>]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), params.len(), "optimizer bound to a different parameter set");
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::from_f64c(self.beta1);
        let b2 = T::from_f64c(self.beta2);
        let one = T::one();
        let c1 = T::from_f64c(1.0 - self.beta1.powi(t));
        let c2 = T::from_f64c(1.0 - self.beta2.powi(t));
        let lr = T::from_f64c(self.lr);
        let eps = T::from_f64c(self.eps);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for (((w, &g), mi), vi) in p.value.iter_mut().zip(&p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (one - b1) * g;
                *vi = b2 * *vi + (one - b2) * g * g;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = Param::new(vec![0.5f32, -1.0, 2.0]);
        let before = p.value.clone();
        let mut opt = Adam::new(1e-4, 0.9, 0.999);
        opt.step(&mut [&mut p]);
        assert_eq!(p.value, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // bias-corrected first step is lr * sign(g)
        let mut p = Param::new(vec![1.0f64, 1.0]);
        p.grad = vec![3.0, -0.5];
        let mut opt = Adam::new(0.01, 0.9, 0.999);
        opt.step(&mut [&mut p]);
        assert!((p.value[0] - 0.99).abs() < 1e-8);
        assert!((p.value[1] - 1.01).abs() < 1e-8);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut p = Param::new(vec![3.0f64]);
        let mut opt = Adam::new(0.05, 0.9, 0.999);
        for _ in 0..2000 {
            p.grad[0] = 2.0 * (p.value[0] - 1.0);
            opt.step(&mut [&mut p]);
        }
        assert!((p.value[0] - 1.0).abs() < 1e-3);
    }
}

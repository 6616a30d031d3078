use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Adam with bias-corrected first and second moments.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    /// Standard moment decays (0.9, 0.999) and ε = 1e-8.
    pub fn new(lr: T) -> Result<Self> {
        Self::with_params(lr, T::lit(0.9), T::lit(0.999), T::lit(1e-8))
    }

    pub fn with_params(lr: T, beta1: T, beta2: T, eps: T) -> Result<Self> {
        if !(lr > T::zero()) || !lr.is_finite() {
            return Err(Error::Parameter(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        let unit = |b: T| b >= T::zero() && b < T::one();
        if !unit(beta1) || !unit(beta2) || !(eps > T::zero()) {
            return Err(Error::Parameter(
                "moment decays must lie in [0,1) and eps > 0".into(),
            ));
        }
        Ok(Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn lr(&self) -> T {
        self.lr
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update using the gradient buffers stored on `params`.
    /// Parameters without a gradient buffer are treated as having zero gradient.
    pub fn step(&mut self, params: &mut [Tensor<T>]) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len()
            || self
                .m
                .iter()
                .zip(params.iter())
                .any(|(m, p)| m.len() != p.len())
        {
            return Err(Error::Dimension(
                "optimizer state does not match parameters".into(),
            ));
        }
        for (i, p) in params.iter().enumerate() {
            if let Some(g) = p.grad() {
                if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "gradient of parameter {i} element {j} is {}",
                        g[j]
                    )));
                }
            }
        }
        self.step += 1;
        let t = i32::try_from(self.step).unwrap_or(i32::MAX);
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let (data, grad) = p.data_and_grad_mut();
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for e in 0..data.len() {
                let g = grad[e];
                m[e] = self.beta1 * m[e] + (T::one() - self.beta1) * g;
                v[e] = self.beta2 * v[e] + (T::one() - self.beta2) * g * g;
                let mhat = m[e] / bc1;
                let vhat = v[e] / bc2;
                data[e] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_grad(x: f64, g: f64) -> Tensor<f64> {
        let mut t = Tensor::scalar(x);
        t.accumulate_grad(&[g]).unwrap();
        t
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![with_grad(1.5, 0.0)];
        let mut opt = Adam::new(0.1).unwrap();
        opt.step(&mut p).unwrap();
        assert_eq!(p[0].data(), &[1.5]);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![with_grad(0.0, 1.0)];
        let mut opt = Adam::new(0.1).unwrap();
        opt.step(&mut p).unwrap();
        // m̂ = v̂ = 1 at t = 1, so the step is lr / (1 + ε)
        assert!((p[0].data()[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_descends() {
        let mut p = vec![with_grad(0.0, -2.0)];
        let mut opt = Adam::new(0.01).unwrap();
        let mut prev = 0.0;
        for _ in 0..50 {
            opt.step(&mut p).unwrap();
            assert!(p[0].data()[0] > prev);
            prev = p[0].data()[0];
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(Adam::<f64>::new(0.0).is_err());
        assert!(Adam::<f64>::new(-1.0).is_err());
        let mut p = vec![with_grad(0.0, f64::NAN)];
        let mut opt = Adam::new(0.1).unwrap();
        assert!(matches!(opt.step(&mut p), Err(Error::NonFinite(_))));
        assert_eq!(opt.steps(), 0);
    }
}

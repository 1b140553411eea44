//! Adam and the reduce-on-plateau learning-rate schedule.

use crate::error::{Error, Result};
use crate::model::{Gradients, ParamStore, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<T: Scalar>(params: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.data.len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Bias-corrected Adam update. A nonfinite gradient leaves parameters
    /// and state untouched.
    pub fn step<T: Scalar>(
        &mut self,
        params: &mut ParamStore<T>,
        grads: &Gradients<T>,
        lr: f64,
    ) -> Result<()> {
        if !grads.all_finite() {
            return Err(Error::Numerics("nonfinite gradient".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(&grads.values)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((w, &g), m), v) in p.data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g.to_f64();
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let update = lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
                *w = T::from_f64(w.to_f64() - update);
            }
        }
        Ok(())
    }
}

/// Divides the learning rate by `1 / factor` once the best validation loss
/// has not improved for `patience` consecutive epochs, never going below
/// `min_lr`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauSchedule {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    best: f64,
    stagnant: usize,
}

impl PlateauSchedule {
    pub fn new(lr: f64, factor: f64, patience: usize, min_lr: f64) -> Self {
        Self {
            lr,
            factor,
            patience,
            min_lr,
            best: f64::INFINITY,
            stagnant: 0,
        }
    }

    /// Records one epoch's validation loss and returns the learning rate for
    /// the next epoch.
    pub fn observe(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best {
            self.best = val_loss;
            self.stagnant = 0;
        } else {
            self.stagnant += 1;
            if self.stagnant >= self.patience {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.stagnant = 0;
            }
        }
        self.lr
    }
}

/// Replays a validation history through [`PlateauSchedule`].
pub fn plateau_schedule(history: &[f64], lr: f64) -> f64 {
    let mut s = PlateauSchedule::new(lr, 0.2, 10, 1e-10);
    history.iter().fold(lr, |_, &v| s.observe(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar_store(w: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let id = s.add_zeros("w".into(), vec![1]);
        s.get_mut(id)[0] = w;
        s
    }

    fn grads_of(store: &ParamStore<f64>, g: f64) -> Gradients<f64> {
        let mut grads = Gradients::zeros_like(store);
        grads.values[0][0] = g;
        grads
    }

    #[test]
    fn adam_examples() {
        let mut s = scalar_store(1.0);
        let mut adam = Adam::new(&s);
        {
            let g = grads_of(&s, 0.0);
            adam.step(&mut s, &g, 0.1)
        }
        .unwrap();
        assert_eq!(s.get(0)[0], 1.0);

        let mut s = scalar_store(0.0);
        let mut adam = Adam::new(&s);
        {
            let g = grads_of(&s, 1.0);
            adam.step(&mut s, &g, 1e-3)
        }
        .unwrap();
        assert!((s.get(0)[0] + 1e-3).abs() < 1e-9);

        let mut s = scalar_store(0.0);
        let mut adam = Adam::new(&s);
        for _ in 0..200 {
            let g = 2.0 * (s.get(0)[0] - 3.0);
            {
                let g = grads_of(&s, g);
                adam.step(&mut s, &g, 0.1)
            }
            .unwrap();
        }
        assert!((s.get(0)[0] - 3.0).abs() < 0.05, "{}", s.get(0)[0]);
    }

    #[test]
    fn adam_rejects_nonfinite() {
        let mut s = scalar_store(1.0);
        let mut adam = Adam::new(&s);
        let before = adam.clone();
        assert!(matches!(
            {
                let g = grads_of(&s, f64::NAN);
                adam.step(&mut s, &g, 0.1)
            },
            Err(Error::Numerics(_))
        ));
        assert_eq!(s.get(0)[0], 1.0);
        assert_eq!(adam, before);
    }

    #[test]
    fn plateau_examples() {
        let decreasing: Vec<f64> = (0..30).map(|i| 1.0 / (i + 1) as f64).collect();
        assert_eq!(plateau_schedule(&decreasing, 1e-5), 1e-5);
        let stagnant = [1.0; 11];
        assert!((plateau_schedule(&stagnant, 1e-5) - 2e-6).abs() < 1e-18);
        assert_eq!(plateau_schedule(&[1.0; 2000], 1e-5), 1e-10);
    }

    proptest! {
        #[test]
        fn lr_trace_non_increasing_with_floor(history in proptest::collection::vec(0.0f64..1.0, 1..300)) {
            let mut s = PlateauSchedule::new(1e-5, 0.2, 10, 1e-10);
            let mut prev = s.lr;
            for v in history {
                let lr = s.observe(v);
                prop_assert!(lr <= prev && lr >= 1e-10);
                prev = lr;
            }
        }
    }
}

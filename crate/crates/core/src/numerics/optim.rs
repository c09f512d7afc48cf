use super::array::DenseArray;
use super::store::ParameterStore;

/// Adam moments, step counter and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<DenseArray>,
    second: Vec<DenseArray>,
}

impl AdamState {
    pub fn new(store: &ParameterStore, lr: f64) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, v, _)| DenseArray::zeros(v.shape().to_vec()))
                .collect::<Vec<_>>()
        };
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update from the store's gradient slots.
pub fn adam_step(store: &mut ParameterStore, state: &mut AdamState) {
    state.step += 1;
    let t = state.step as i32;
    let correct1 = 1.0 - state.beta1.powi(t);
    let correct2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);
    for ((value, grad), (m, v)) in store
        .iter_mut()
        .zip(state.first.iter_mut().zip(state.second.iter_mut()))
    {
        let it = value
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut()));
        for ((p, &g), (m, v)) in it {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / correct1;
            let v_hat = *v / correct2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Plain gradient descent: `value ← value − lr·grad`.
pub fn sgd_step(store: &mut ParameterStore, lr: f64) {
    for (value, grad) in store.iter_mut() {
        for (p, g) in value.data_mut().iter_mut().zip(grad.data()) {
            *p -= lr * g;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Gradients, Tape};

    fn scalar_store(value: f64, grad: f64) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert("p", DenseArray::new([1], vec![value]).unwrap()).unwrap();
        s.accumulate_grads(&Gradients::new(vec![DenseArray::new([1], vec![grad]).unwrap()]))
            .unwrap();
        s
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut s = scalar_store(1.25, 0.0);
        let before = s.clone();
        let mut st = AdamState::new(&s, 1e-3);
        adam_step(&mut s, &mut st);
        assert_eq!(s.value("p").unwrap(), before.value("p").unwrap());
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn adam_first_step_hand_value() {
        // m̂ = 1, v̂ = 1 after bias correction: update = α / (1 + ε).
        let mut s = scalar_store(1.0, 1.0);
        let mut st = AdamState::new(&s, 0.1);
        adam_step(&mut s, &mut st);
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((s.value("p").unwrap().item() - expected).abs() < 1e-15);
        assert!((s.value("p").unwrap().item() - 0.9).abs() < 1e-8);
    }

    #[test]
    fn adam_constant_gradient_strictly_decreases() {
        let mut s = scalar_store(1.0, 1.0);
        let mut st = AdamState::new(&s, 0.01);
        let mut last = 1.0;
        for _ in 0..2 {
            adam_step(&mut s, &mut st);
            let now = s.value("p").unwrap().item();
            assert!(now < last);
            last = now;
        }
    }

    #[test]
    fn sgd_arithmetic_and_direction() {
        let mut s = scalar_store(2.0, 1.0);
        sgd_step(&mut s, 0.5);
        assert_eq!(s.value("p").unwrap().item(), 1.5);

        let mut z = scalar_store(2.0, 0.0);
        sgd_step(&mut z, 0.5);
        assert_eq!(z.value("p").unwrap().item(), 2.0);

        // Both optimizers move against the gradient, by different amounts.
        let mut a = scalar_store(2.0, 3.0);
        let mut st = AdamState::new(&a, 0.5);
        adam_step(&mut a, &mut st);
        let mut b = scalar_store(2.0, 3.0);
        sgd_step(&mut b, 0.5);
        let (da, db) = (a.value("p").unwrap().item() - 2.0, b.value("p").unwrap().item() - 2.0);
        assert!(da < 0.0 && db < 0.0 && (da - db).abs() > 1e-3);
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut s = ParameterStore::new();
        s.insert("w", DenseArray::new([3], vec![1.0, -2.0, 0.5]).unwrap()).unwrap();
        let mut st = AdamState::new(&s, 0.05);
        for _ in 0..400 {
            s.zero_grads();
            let mut t = Tape::new();
            let b = t.bind(&s);
            let w = b.var("w").unwrap();
            let sq = t.mul(w, w).unwrap();
            let l = t.sum(sq);
            t.backward_into(l, &mut s).unwrap();
            adam_step(&mut s, &mut st);
        }
        assert!(s.sum_squares() < 1e-3);
    }
}

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::store::ParameterStore;
use super::tape::{Bound, Tape, Var};
use crate::Result;

/// Records a scalar function of the bound parameters on a tape.
pub trait ScalarFn: Fn(&mut Tape, &Bound) -> Result<Var> {}
impl<F: Fn(&mut Tape, &Bound) -> Result<Var>> ScalarFn for F {}

fn evaluate<F: ScalarFn>(f: &F, store: &ParameterStore) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = tape.bind(store);
    let out = f(&mut tape, &bound)?;
    Ok(tape.value(out).item())
}

/// Max relative error between tape gradients and central differences over
/// every coordinate of every parameter.
pub fn grad_check<F: ScalarFn>(f: F, store: &ParameterStore, eps: f64) -> Result<f64> {
    grad_check_sampled(f, store, eps, usize::MAX, 0)
}

/// Like [`grad_check`], but checks at most `max_per_param` coordinates per
/// parameter, picked with a seeded RNG.
///
/// The error at a coordinate is
/// `|analytic − numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check_sampled<F: ScalarFn>(
    f: F,
    store: &ParameterStore,
    eps: f64,
    max_per_param: usize,
    seed: u64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = tape.bind(store);
    let loss = f(&mut tape, &bound)?;
    let analytic = tape.backward(loss)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = store.clone();
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let mut worst: f64 = 0.0;
    for (name, grad) in names.iter().zip(analytic.as_slice()) {
        let len = grad.len();
        let coords: Vec<usize> = if len <= max_per_param {
            (0..len).collect()
        } else {
            let mut picked = sample(&mut rng, len, max_per_param).into_vec();
            picked.sort_unstable();
            picked
        };
        for i in coords {
            let original = probe.value(name)?.data()[i];
            probe.value_mut(name)?.data_mut()[i] = original + eps;
            let plus = evaluate(&f, &probe)?;
            probe.value_mut(name)?.data_mut()[i] = original - eps;
            let minus = evaluate(&f, &probe)?;
            probe.value_mut(name)?.data_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[i];
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

//! Two-layer graph convolution `σ(Â · relu(Â · X · W0) · W1)`.

use rand::Rng;

use crate::numerics::{Bound, ParameterStore, Tape, Var};
use crate::Result;

pub const W0: &str = "gcn.w0";
pub const W1: &str = "gcn.w1";

/// Output nonlinearity of the second graph convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Linear,
    Tanh,
    Relu,
}

/// Layer widths: `F_in → hidden → out`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GcnShape {
    pub in_features: usize,
    pub hidden: usize,
    pub out_features: usize,
}

impl Default for GcnShape {
    fn default() -> Self {
        Self {
            in_features: 1,
            hidden: 16,
            out_features: 10,
        }
    }
}

pub fn init_params<R: Rng + ?Sized>(
    store: &mut ParameterStore,
    shape: GcnShape,
    rng: &mut R,
) -> Result<()> {
    store.insert_glorot(W0, [shape.in_features, shape.hidden], shape.in_features, shape.hidden, rng)?;
    store.insert_glorot(W1, [shape.hidden, shape.out_features], shape.hidden, shape.out_features, rng)
}

/// `adjacency` is `N×N`; `features` is `N×F_in` or batched `B×N×F_in`.
pub fn gcn_forward(
    tape: &mut Tape,
    adjacency: Var,
    features: Var,
    params: &Bound,
    activation: OutputActivation,
) -> Result<Var> {
    let (w0, w1) = (params.var(W0)?, params.var(W1)?);
    let ax = tape.matmul(adjacency, features)?;
    let h = tape.matmul(ax, w0)?;
    let h = tape.relu(h);
    let ah = tape.matmul(adjacency, h)?;
    let out = tape.matmul(ah, w1)?;
    Ok(match activation {
        OutputActivation::Linear => out,
        OutputActivation::Tanh => tape.tanh(out),
        OutputActivation::Relu => tape.relu(out),
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numerics::DenseArray;

    fn store_with(w0: DenseArray, w1: DenseArray) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert(W0, w0).unwrap();
        s.insert(W1, w1).unwrap();
        s
    }

    fn run(adj: &DenseArray, x: &DenseArray, s: &ParameterStore, act: OutputActivation) -> DenseArray {
        let mut t = Tape::new();
        let b = t.bind(s);
        let a = t.constant(adj.clone());
        let xv = t.constant(x.clone());
        let out = gcn_forward(&mut t, a, xv, &b, act).unwrap();
        t.value(out).clone()
    }

    #[test]
    fn identity_chain_passes_nonnegative_input() {
        let x = DenseArray::from_rows(&[vec![1.0, 0.5], vec![0.0, 2.0], vec![3.0, 0.25]]).unwrap();
        let s = store_with(DenseArray::eye(2), DenseArray::eye(2));
        assert_eq!(run(&DenseArray::eye(3), &x, &s, OutputActivation::Linear), x);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = store_with(
            DenseArray::uniform([2, 4], 1.0, &mut rng),
            DenseArray::uniform([4, 3], 1.0, &mut rng),
        );
        let adj = DenseArray::uniform([3, 3], 1.0, &mut rng);
        for act in [OutputActivation::Linear, OutputActivation::Tanh] {
            let out = run(&adj, &DenseArray::zeros([3, 2]), &s, act);
            assert!(out.data().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn matches_hand_rolled_two_step_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let adj = DenseArray::uniform([4, 4], 1.0, &mut rng);
        let x = DenseArray::uniform([4, 2], 1.0, &mut rng);
        let w0 = DenseArray::uniform([2, 5], 1.0, &mut rng);
        let w1 = DenseArray::uniform([5, 3], 1.0, &mut rng);
        // Oracle: explicit index loops, no shared code with the tape.
        let mm = |a: &Vec<Vec<f64>>, b: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            (0..a.len())
                .map(|i| {
                    (0..b[0].len())
                        .map(|j| (0..b.len()).map(|k| a[i][k] * b[k][j]).sum())
                        .collect()
                })
                .collect()
        };
        let rows = |m: &DenseArray| -> Vec<Vec<f64>> {
            m.data().chunks(m.shape()[1]).map(<[f64]>::to_vec).collect()
        };
        let (a, xr, w0r, w1r) = (rows(&adj), rows(&x), rows(&w0), rows(&w1));
        let mut h = mm(&mm(&a, &xr), &w0r);
        h.iter_mut().flatten().for_each(|v| *v = v.max(0.0));
        let expect = mm(&mm(&a, &h), &w1r);

        let got = run(&adj, &x, &store_with(w0, w1), OutputActivation::Linear);
        for (g, e) in got.data().iter().zip(expect.iter().flatten()) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 5;
        let mut adj = DenseArray::zeros([n, n]);
        for i in 0..n {
            for j in 0..=i {
                let v = rng.random_range(0.0..1.0);
                adj.set2(i, j, v);
                adj.set2(j, i, v);
            }
        }
        let x = DenseArray::uniform([n, 1], 1.0, &mut rng);
        let s = store_with(
            DenseArray::uniform([1, 4], 1.0, &mut rng),
            DenseArray::uniform([4, 2], 1.0, &mut rng),
        );
        let perm = [3, 0, 4, 1, 2];
        let mut padj = DenseArray::zeros([n, n]);
        let mut px = DenseArray::zeros([n, 1]);
        for i in 0..n {
            px.set2(i, 0, x.at2(perm[i], 0));
            for j in 0..n {
                padj.set2(i, j, adj.at2(perm[i], perm[j]));
            }
        }
        let base = run(&adj, &x, &s, OutputActivation::Linear);
        let permuted = run(&padj, &px, &s, OutputActivation::Linear);
        for i in 0..n {
            for f in 0..2 {
                assert!((permuted.at2(i, f) - base.at2(perm[i], f)).abs() < 1e-12);
            }
        }
    }
}

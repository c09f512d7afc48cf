//! Dense arrays with reverse-mode gradients, parameter storage, optimizers
//! and finite-difference gradient checking.
//!
//! Everything is `f64`. A forward pass records primitives on a [`Tape`];
//! [`Tape::backward`] returns gradients for every parameter bound from a
//! [`ParameterStore`].

mod array;
mod gradcheck;
mod optim;
mod store;
mod tape;

pub use array::DenseArray;
pub use gradcheck::{grad_check, grad_check_sampled, ScalarFn};
pub use optim::{adam_step, sgd_step, AdamState};
pub use store::{Gradients, ParameterStore};
pub use tape::{Bound, Tape, Var};


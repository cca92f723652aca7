// Negated float comparisons are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baselines;
pub mod bench;
pub mod diffuser;
pub mod error;
pub mod gmm;
pub mod metrics;
pub mod optim;
pub mod ou;
pub mod rgo;
pub mod rng;
pub mod schedule;
pub mod score;
pub mod target;

pub use error::{Error, Result};

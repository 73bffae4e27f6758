// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod battery;
pub mod certificates;
pub mod error;
pub mod exec;
pub mod game;
pub mod matrix;
pub mod numerics;
pub mod scenario;
pub mod simulator;
pub mod vi;

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adp;
pub mod export;
pub mod maxent;
pub mod point_process;
pub mod rate;
pub mod rng;
pub mod spiking;
pub mod stats;

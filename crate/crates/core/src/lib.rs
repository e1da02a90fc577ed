#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod boost;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod experiment;
pub mod lmc;
pub mod netcore;
pub mod optim;
pub mod smoother;
pub mod telescope;
pub mod train;

pub use error::{Error, Result};

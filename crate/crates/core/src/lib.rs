#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod dataset;
pub mod error;
pub mod image;
pub mod io;
pub mod metrics;
pub mod oracle;
pub mod pipeline;
pub mod relight;
pub mod synthesis;

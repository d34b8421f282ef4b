//! Skeleton-based temporal action segmentation guided by text-derived
//! relational graphs.

mod error;
pub mod augment;
pub mod io;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod refine;
pub mod spatial;
pub mod supervision;
pub mod temporal;
pub mod tensor;
pub mod textgraph;

pub use error::{Error, Result};

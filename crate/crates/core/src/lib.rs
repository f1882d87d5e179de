//! Modeling multi-step document editing processes.

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod edit_ops;
pub mod error;
pub mod metrics;
pub mod model;
pub mod sampler;
pub mod tensor;
pub mod tokenizer;

pub use edit_ops::{apply, diff, extract_spans, EditScript, EditSpan, OpTag, TokenId};
pub use error::{Error, Result};

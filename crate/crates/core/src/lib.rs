//! Delete-and-generate text style transfer.
//!
//! A convolutional classifier scores how strongly each word marks the source
//! style; the deleter strips the strongest markers; a Transformer
//! encoder-decoder rewrites the remaining content in the target style.

pub mod checkpoint;
pub mod classifier;
pub mod corpus;
pub mod deleter;
pub mod error;
pub mod evaluator;
pub mod experiment;
pub mod generator;
pub mod lm;
pub mod nn;
pub mod tokenizer;

pub use error::{Error, Result};

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod annotation;
pub mod corpus;
pub mod decode;
pub mod error;
pub mod features;
pub mod io;
pub mod nnet;
pub mod score;
pub mod sim;
pub mod tensor;
pub mod train;

pub use annotation::{Annotation, Segment};
pub use error::{Error, Result};
pub use features::FeatureMatrix;

pub mod encoder;
pub mod bench;
pub mod cli;
pub mod config;
pub mod error;
pub mod global_attn;
pub mod graph;
pub mod nn;
pub mod rng;
pub mod seqpack;
pub mod stream;
pub mod synth;
pub mod tasks;
pub mod tensor;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};

pub mod grid;
pub mod model;
pub mod protocol;
pub mod runtime;
pub mod pipeline;
pub mod eval;
pub mod grpo;
pub mod cli;

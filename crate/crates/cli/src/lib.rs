//! Problem files, pipelines and artifacts for the `weakkam` command.

pub mod expr;
pub mod oracle;
pub mod output;
pub mod pipeline;
pub mod problem;
pub mod spec;

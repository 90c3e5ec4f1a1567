//! Library API parameter security rule generation, validation and misuse
//! detection for C libraries.

pub mod cli;
pub mod consistency;
pub mod corpus;
pub mod detect;
pub mod harness;
pub mod llm;
pub mod pipeline;
pub mod prompt;
pub mod rem;

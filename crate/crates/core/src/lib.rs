//! Multilingual retrieval-augmented question answering: four retrieval and
//! translation strategies, offline mock providers, and the evaluation
//! harness that compares them.

pub mod cli;
pub mod corpus;
pub mod evaluation;
pub mod experiments;
pub mod lang;
pub mod pipeline;
pub mod providers;
pub mod queries;
pub mod retrieval;
pub mod translation;

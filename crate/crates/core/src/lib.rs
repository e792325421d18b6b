//! Self-generated rationales for in-context learning.
//!
//! The pipeline selects demonstrations from a corpus using the model's own
//! zero-shot predictions, explains the model's answer on each demonstration
//! with a post hoc attribution method (or asks the model itself), turns the
//! explanation into a short rationale, and compares the enriched prompt
//! against a plain input-output prompt over the same shots.

pub mod attribution;
pub mod backend;
pub mod corpus;
pub mod harness;
pub mod prompt;
pub mod rationale;
pub mod selection;

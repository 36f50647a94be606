//! Centrality-aware asynchronous message passing (CAMP) for graph
//! classification.

pub mod autodiff;
pub mod centrality;
pub mod diagnostics;
pub mod experiment;
pub mod graph;
pub mod models;
pub mod scheduler;
pub mod seeds;
pub mod tensor;

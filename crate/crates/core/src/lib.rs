//! Stochastic definite clause grammars whose rule probabilities may come
//! from fixed numbers, learnable weights or an external language model.

pub mod circuit;
pub mod fixtures;
pub mod grammar;
pub mod leaf;
pub mod oracle;
pub mod resolver;
pub mod terms;
pub mod trainer;

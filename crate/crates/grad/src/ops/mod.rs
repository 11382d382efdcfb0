//! Differentiable operations, grouped by kind. All are methods on [`crate::Graph`].

pub mod conv;
pub mod elementwise;
pub mod linalg;
pub mod norm;
pub mod shape;

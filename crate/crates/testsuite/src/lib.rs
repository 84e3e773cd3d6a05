//! Shared fixtures and reference implementations for the gradient and
//! acceptance suites.

pub mod fixtures;
pub mod gradcheck;
pub mod reference;

//! Slow, obviously-correct reference implementations and synthetic image
//! fixtures shared by the test suites.

pub mod fixtures;
pub mod oracles;

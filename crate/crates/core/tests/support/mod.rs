//! Oracles and generators shared by the integration tests.
#![allow(dead_code)]

pub mod formats;
pub mod gradients;
pub mod pool;
pub mod rouge;

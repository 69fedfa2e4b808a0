//! Hierarchical CPU scheduler deployment.
//!
//! Applications declare scheduling contracts (`TYPE[param]`). The
//! [`deployment`] protocol either attaches them to a compatible scheduler
//! already in the [`hierarchy`] or loads their own scheduler, recomposing
//! grants with reallocation. The [`engine`] simulates the resulting tree tick
//! by tick and [`verify`] checks the trace against every admitted contract.

pub mod cli;
pub mod contracts;
pub mod deployment;
pub mod engine;
pub mod hierarchy;
pub mod scenario;
pub mod verify;

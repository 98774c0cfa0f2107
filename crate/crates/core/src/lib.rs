//! Teammate generation for ad hoc teamwork.

pub mod aht;
pub mod cli;
pub mod diversity;
pub mod envs;
pub mod marl;
pub mod mcs;
pub mod nn;

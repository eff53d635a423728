pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod preset;

pub use dynaguide_core as core;

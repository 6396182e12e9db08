//! Batch pipeline around `widac-core`: configuration, per-stage commands,
//! run manifests and replay.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod pipeline;

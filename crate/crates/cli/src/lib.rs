//! Command line runner and HTTP JSON API over the kernel.

pub mod api;
pub mod commands;

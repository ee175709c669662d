//! Command-line tool and HTTP service around `redcyan-core`.

pub mod commands;
pub mod dto;
pub mod server;

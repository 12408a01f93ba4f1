//! Library half of the harness binary; each module backs one subcommand
//! and returns plain serializable reports so tests can drive them without
//! spawning processes.

pub mod bench;
pub mod config;
pub mod maskdump;
pub mod schedule;
pub mod separation;
pub mod simulate;
pub mod verify;

//! Document formats for the `vgbn` command-line tool: JSON schemas for
//! networks and filter runs, with conversions to and from library types.

pub mod document;

//! Library surface of the command-line harness: the run configuration and
//! its strict parser, shared by the binary and the test suites.

pub mod config;

//! Library half of the `truster` binary, exposed for integration tests.

pub mod server;

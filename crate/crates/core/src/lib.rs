//! QUIC connection coalescing testbed.

pub mod campaign;
pub mod corpus;
pub mod dnswire;
pub mod emulink;
pub mod endpoint;
pub mod h3lite;
pub mod scenario;
pub mod visit;

//! The register protocols over TCP: server daemons that run the same state
//! machines as the simulator, and clients that record histories.

use std::io;
use std::net::SocketAddr;

use ohram_core::{OpId, ProtocolError};
use thiserror::Error;

pub mod client;
pub mod frame;
mod membership;
pub mod server;

pub use client::{Client, ClientOptions, Clock};
pub use membership::Membership;
pub use server::{serve, serve_on, ServerHandle, LISTEN_ENV};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("membership: {0}")]
    Membership(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("{op}: no quorum answered after {resends} resends")]
    QuorumUnreachable { op: OpId, resends: u32 },
}

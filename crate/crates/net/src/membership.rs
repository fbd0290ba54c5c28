use std::net::SocketAddr;
use std::path::Path;

use ohram_core::{Config, ProcessId, Protocol};
use serde::{Deserialize, Serialize};

use crate::NetError;

/// The shared view of the deployment: protocol plus ordered server
/// addresses. The server at position `i` is `s{i+1}`.
///
/// ```json
/// {"protocol": "ohsam", "servers": ["127.0.0.1:7001", "127.0.0.1:7002", "127.0.0.1:7003"]}
/// ```
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Membership {
    pub protocol: Protocol,
    pub servers: Vec<SocketAddr>,
}

impl Membership {
    pub fn new(protocol: Protocol, servers: Vec<SocketAddr>) -> Result<Self, NetError> {
        let m = Membership { protocol, servers };
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, NetError> {
        let text = std::fs::read_to_string(path)?;
        let m: Membership =
            serde_json::from_str(&text).map_err(|e| NetError::Membership(format!("{}: {e}", path.display())))?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if !self.protocol.is_sound() {
            return Err(NetError::Membership(format!(
                "protocol {} is only available in simulation",
                self.protocol
            )));
        }
        if self.servers.is_empty() {
            return Err(NetError::Membership("no servers listed".into()));
        }
        Ok(())
    }

    /// Configuration used to build the state machines. Client counts are
    /// not needed by any node.
    pub fn config(&self) -> Config {
        let n = self.servers.len();
        Config::new(n, 0, 0, (n - 1) / 2)
    }

    pub fn server_ids(&self) -> Vec<ProcessId> {
        self.config().servers()
    }

    pub fn address(&self, server: ProcessId) -> Option<SocketAddr> {
        if !server.is_server() || server.index == 0 {
            return None;
        }
        self.servers.get(server.index as usize - 1).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unsound_protocol_and_parses_json() {
        assert!(Membership::new(Protocol::Naive3x, vec!["127.0.0.1:1".parse().unwrap()]).is_err());
        let m: Membership =
            serde_json::from_str(r#"{"protocol":"abd-mwmr","servers":["127.0.0.1:7001","127.0.0.1:7002"]}"#).unwrap();
        assert_eq!(m.address(ProcessId::server(2)), Some("127.0.0.1:7002".parse().unwrap()));
        assert_eq!(m.address(ProcessId::server(3)), None);
        assert_eq!(m.config().f, 0);
    }
}

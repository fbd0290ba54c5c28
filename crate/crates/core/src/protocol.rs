//! Protocol selection and construction of the per-process state machines.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::node::{ClientNode, ServerNode};
use crate::relay_read::RelayGc;
use crate::types::{Config, Mode, ProcessId, Role};
use crate::{abd, naive3x, ohmam, ohsam};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "ohsam")]
    OhSam,
    #[serde(rename = "ohmam")]
    OhMam,
    #[serde(rename = "abd-swmr")]
    AbdSwmr,
    #[serde(rename = "abd-mwmr")]
    AbdMwmr,
    /// Unsound three-exchange writes; simulation and replay only.
    #[serde(rename = "naive3x")]
    Naive3x,
}

impl Protocol {
    /// The four correct protocols.
    pub const CORRECT: [Protocol; 4] = [Protocol::OhSam, Protocol::OhMam, Protocol::AbdSwmr, Protocol::AbdMwmr];

    pub fn name(&self) -> &'static str {
        match self {
            Protocol::OhSam => "ohsam",
            Protocol::OhMam => "ohmam",
            Protocol::AbdSwmr => "abd-swmr",
            Protocol::AbdMwmr => "abd-mwmr",
            Protocol::Naive3x => "naive3x",
        }
    }

    pub fn mode(&self) -> Mode {
        match self {
            Protocol::OhSam | Protocol::AbdSwmr => Mode::Swmr,
            Protocol::OhMam | Protocol::AbdMwmr | Protocol::Naive3x => Mode::Mwmr,
        }
    }

    pub fn is_sound(&self) -> bool {
        *self != Protocol::Naive3x
    }

    pub fn build_server(&self, id: ProcessId, config: &Config, options: &ProtocolOptions) -> Box<dyn ServerNode> {
        let servers = config.servers();
        match self {
            Protocol::OhSam => Box::new(ohsam::Server::new(id, servers, options.relay_gc)),
            Protocol::OhMam => Box::new(ohmam::Server::new(id, servers, options.relay_gc)),
            Protocol::AbdSwmr | Protocol::AbdMwmr => Box::new(abd::Server::new(id)),
            Protocol::Naive3x => {
                let x = options
                    .naive_threshold
                    .unwrap_or_else(|| naive3x::default_threshold(config.n_servers));
                Box::new(naive3x::Server::new(id, servers, x))
            }
        }
    }

    /// Build the state machine of a reader or writer.
    pub fn build_client(&self, id: ProcessId, config: &Config) -> Box<dyn ClientNode> {
        let servers = config.servers();
        match (self, id.role) {
            (Protocol::OhSam, Role::Writer) => Box::new(ohsam::Writer::new(id, servers)),
            (Protocol::OhMam, Role::Writer) => Box::new(ohmam::Writer::new(id, servers)),
            (Protocol::AbdSwmr, Role::Writer) => Box::new(abd::Writer::swmr(id, servers)),
            (Protocol::AbdMwmr, Role::Writer) => Box::new(abd::Writer::mwmr(id, servers)),
            (Protocol::Naive3x, Role::Writer) => Box::new(naive3x::Writer::new(id, servers)),
            (Protocol::AbdSwmr | Protocol::AbdMwmr, _) => Box::new(abd::Reader::new(id, servers)),
            (_, _) => Box::new(ohsam::Reader::new(id, servers)),
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            Protocol::OhSam,
            Protocol::OhMam,
            Protocol::AbdSwmr,
            Protocol::AbdMwmr,
            Protocol::Naive3x,
        ]
        .into_iter()
        .find(|p| p.name() == s)
        .ok_or_else(|| format!("unknown protocol `{s}` (ohsam, ohmam, abd-swmr, abd-mwmr, naive3x)"))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolOptions {
    #[serde(default)]
    pub relay_gc: RelayGc,
    /// Decision threshold `x` of the three-exchange write protocol.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub naive_threshold: Option<usize>,
}

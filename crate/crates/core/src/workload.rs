//! Planned client operations for a simulation run.

use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Config, Mode, ProcessId, Role};

/// What a client is asked to do. Written data is optional: the simulator
/// fills in a unique payload when it is absent.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum OpSpec {
    Read,
    Write {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        data: Option<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedOp {
    pub process: ProcessId,
    pub op: OpSpec,
}

impl PlannedOp {
    pub fn read(process: ProcessId) -> Self {
        PlannedOp {
            process,
            op: OpSpec::Read,
        }
    }

    pub fn write(process: ProcessId) -> Self {
        PlannedOp {
            process,
            op: OpSpec::Write { data: None },
        }
    }
}

/// The operations of one run.
///
/// A sequential workload invokes each operation only after the previous
/// one responded. Otherwise every client works through its own operations
/// in order while the clients run concurrently with each other.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workload {
    pub ops: Vec<PlannedOp>,
    #[serde(default)]
    pub sequential: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WorkloadError {
    #[error("`{0}` is not a client (expected w<N> or r<N>)")]
    NotAClient(String),
    #[error("{process} is outside the configuration")]
    UnknownClient { process: ProcessId },
}

impl Workload {
    pub fn sequential(ops: Vec<PlannedOp>) -> Self {
        Workload { ops, sequential: true }
    }

    pub fn concurrent(ops: Vec<PlannedOp>) -> Self {
        Workload {
            ops,
            sequential: false,
        }
    }

    /// Check that every planned client exists in `config`.
    pub fn validate(&self, config: &Config) -> Result<(), WorkloadError> {
        for op in &self.ops {
            let limit = match op.process.role {
                Role::Writer => config.n_writers,
                Role::Reader => config.n_readers,
                Role::Server => return Err(WorkloadError::NotAClient(op.process.to_string())),
            };
            if op.process.index == 0 || op.process.index as usize > limit {
                return Err(WorkloadError::UnknownClient { process: op.process });
            }
        }
        Ok(())
    }

    /// A random concurrent workload of `1..=max_ops` operations spread over
    /// the configured clients.
    pub fn random(rng: &mut impl Rng, config: &Config, mode: Mode, max_ops: usize) -> Self {
        let writers = match mode {
            Mode::Swmr => config.writers().into_iter().take(1).collect::<Vec<_>>(),
            Mode::Mwmr => config.writers(),
        };
        let readers = config.readers();
        let n = rng.gen_range(1..=max_ops.max(1));
        let ops = (0..n)
            .map(|_| {
                let pick_write = readers.is_empty() || (!writers.is_empty() && rng.gen_bool(0.5));
                if pick_write {
                    PlannedOp::write(writers[rng.gen_range(0..writers.len())])
                } else {
                    PlannedOp::read(readers[rng.gen_range(0..readers.len())])
                }
            })
            .collect();
        Workload::concurrent(ops)
    }
}

/// Parses the comma-separated form `w1,r1,r2` into a sequential workload;
/// a writer entry plans a write, a reader entry a read.
impl FromStr for Workload {
    type Err = WorkloadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let ops = s
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| {
                let p: ProcessId = t.parse().map_err(|_| WorkloadError::NotAClient(t.to_string()))?;
                match p.role {
                    Role::Writer => Ok(PlannedOp::write(p)),
                    Role::Reader => Ok(PlannedOp::read(p)),
                    Role::Server => Err(WorkloadError::NotAClient(t.to_string())),
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Workload::sequential(ops))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parses_op_lists() {
        let w: Workload = "w1, r1,r2".parse().unwrap();
        assert!(w.sequential);
        assert_eq!(w.ops[0], PlannedOp::write(ProcessId::writer(1)));
        assert_eq!(w.ops[2], PlannedOp::read(ProcessId::reader(2)));
        assert!("s1".parse::<Workload>().is_err());
        assert!("x".parse::<Workload>().is_err());
    }

    #[test]
    fn validate_rejects_unknown_clients() {
        let config = Config::new(3, 1, 1, 1);
        assert!("w1,r1".parse::<Workload>().unwrap().validate(&config).is_ok());
        assert_eq!(
            "r2".parse::<Workload>().unwrap().validate(&config),
            Err(WorkloadError::UnknownClient {
                process: ProcessId::reader(2)
            })
        );
    }

    #[test]
    fn random_workloads_stay_in_bounds() {
        let config = Config::new(5, 3, 4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let w = Workload::random(&mut rng, &config, Mode::Swmr, 10);
            assert!((1..=10).contains(&w.ops.len()));
            assert!(w.validate(&config).is_ok());
            assert!(w
                .ops
                .iter()
                .all(|op| op.process.role != Role::Writer || op.process.index == 1));
        }
    }
}

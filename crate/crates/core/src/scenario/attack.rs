//! Record-and-replay adversary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vector;

/// Windows of a replay attack: outputs are recorded over `[record_start, record_start + record_len)`
/// and played back over `[replay_start, replay_start + record_len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub record_start: u64,
    pub record_len: u64,
    pub replay_start: u64,
}

impl Default for AttackSpec {
    fn default() -> Self {
        Self {
            record_start: 1,
            record_len: 100,
            replay_start: 101,
        }
    }
}

impl AttackSpec {
    pub fn validate(&self) -> Result<()> {
        if self.record_len == 0 {
            return Err(Error::InvalidConfig(
                "attack record_len must be at least 1".into(),
            ));
        }
        if self.replay_start < self.record_start {
            return Err(Error::InvalidConfig(format!(
                "replay_start ({}) precedes record_start ({})",
                self.replay_start, self.record_start
            )));
        }
        Ok(())
    }

    pub fn replay_end(&self) -> u64 {
        self.replay_start + self.record_len
    }

    pub fn in_replay(&self, k: u64) -> bool {
        (self.replay_start..self.replay_end()).contains(&k)
    }

    fn in_record(&self, k: u64) -> bool {
        (self.record_start..self.record_start + self.record_len).contains(&k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayAttacker {
    pub spec: AttackSpec,
    pub buffer: Vec<Vector>,
}

impl ReplayAttacker {
    pub fn new(spec: AttackSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            buffer: Vec::with_capacity(spec.record_len as usize),
        })
    }

    /// Output delivered to the detector at step `k` given the live output `y`.
    /// Steps must be presented in increasing order.
    pub fn process(&mut self, k: u64, y: &Vector) -> Vector {
        if self.spec.in_record(k) {
            self.buffer.push(y.clone());
        }
        if self.spec.in_replay(k) {
            let idx = (k - self.spec.replay_start) as usize;
            if let Some(recorded) = self.buffer.get(idx) {
                return recorded.clone();
            }
        }
        y.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn y(k: u64) -> Vector {
        Vector::from_element(1, k as f64)
    }

    #[test]
    fn replays_recorded_outputs_with_fixed_delay() {
        let spec = AttackSpec {
            record_start: 2,
            record_len: 3,
            replay_start: 10,
        };
        let mut attacker = ReplayAttacker::new(spec).unwrap();
        let out: Vec<f64> = (0..15).map(|k| attacker.process(k, &y(k))[0]).collect();
        assert_eq!(
            out,
            vec![0., 1., 2., 3., 4., 5., 6., 7., 8., 9., 2., 3., 4., 13., 14.]
        );
    }

    #[test]
    fn zero_delay_passes_live_signal() {
        let spec = AttackSpec {
            record_start: 3,
            record_len: 4,
            replay_start: 3,
        };
        let mut attacker = ReplayAttacker::new(spec).unwrap();
        for k in 0..10 {
            assert_eq!(attacker.process(k, &y(k)), y(k));
        }
    }

    #[test]
    fn replay_before_record_is_rejected() {
        let spec = AttackSpec {
            record_start: 5,
            record_len: 3,
            replay_start: 4,
        };
        assert!(ReplayAttacker::new(spec).is_err());
        assert!(ReplayAttacker::new(AttackSpec {
            record_len: 0,
            ..AttackSpec::default()
        })
        .is_err());
    }
}

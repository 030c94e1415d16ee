use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Change severity `n_t`, change frequency `tau_t`, and the number of
/// environments of one dynamic run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnvironmentSchedule {
    pub severity: u32,
    pub frequency: u32,
    pub num_environments: u32,
}

impl Default for EnvironmentSchedule {
    fn default() -> Self {
        Self {
            severity: 10,
            frequency: 10,
            num_environments: 30,
        }
    }
}

impl EnvironmentSchedule {
    pub fn new(severity: u32, frequency: u32, num_environments: u32) -> Result<Self> {
        if severity == 0 || frequency == 0 || num_environments == 0 {
            return Err(Error::Config(format!(
                "schedule values must be positive (n_t={severity}, tau_t={frequency}, environments={num_environments})"
            )));
        }
        Ok(Self {
            severity,
            frequency,
            num_environments,
        })
    }

    /// `t = floor(gen / tau_t) / n_t`.
    pub fn time_of_generation(&self, gen: u64) -> f64 {
        self.time_of_environment(self.environment_of_generation(gen))
    }

    pub fn environment_of_generation(&self, gen: u64) -> u64 {
        gen / u64::from(self.frequency)
    }

    pub fn time_of_environment(&self, env: u64) -> f64 {
        env as f64 / f64::from(self.severity)
    }

    pub fn total_generations(&self) -> u64 {
        u64::from(self.num_environments) * u64::from(self.frequency)
    }

    /// Normalized environment index in `[0, 1]`.
    pub fn normalized_environment(&self, env: u64) -> f64 {
        if self.num_environments <= 1 {
            0.0
        } else {
            env as f64 / f64::from(self.num_environments - 1)
        }
    }
}

/// Free function form of [`EnvironmentSchedule::time_of_generation`].
pub fn time_of_generation(schedule: &EnvironmentSchedule, gen: u64) -> f64 {
    schedule.time_of_generation(gen)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adopted_time_mapping() {
        let s = EnvironmentSchedule::new(10, 10, 30).unwrap();
        assert!((s.time_of_generation(25) - 0.2).abs() < 1e-15);
        let s = EnvironmentSchedule::new(5, 10, 30).unwrap();
        assert_eq!(s.time_of_generation(9), 0.0);
        let s = EnvironmentSchedule::new(10, 5, 30).unwrap();
        assert!((s.time_of_generation(5) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn piecewise_constant_blocks() {
        let s = EnvironmentSchedule::new(10, 7, 4).unwrap();
        assert_eq!(s.total_generations(), 28);
        for gen in 0..28 {
            let block_start = (gen / 7) * 7;
            assert_eq!(s.time_of_generation(gen), s.time_of_generation(block_start));
        }
    }

    #[test]
    fn zero_values_rejected() {
        assert!(EnvironmentSchedule::new(0, 10, 30).is_err());
        assert!(EnvironmentSchedule::new(10, 0, 30).is_err());
    }
}

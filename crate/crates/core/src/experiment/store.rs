//! Collected trajectories with their provenance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    /// Smooth random policy before the first round.
    Initial,
    /// The current policy.
    Policy,
    /// The current policy plus exploration noise.
    Exploration,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Provenance::Initial => "initial",
            Provenance::Policy => "policy",
            Provenance::Exploration => "exploration",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredTrajectory {
    pub provenance: Provenance,
    /// Round of collection; 0 for the initial data.
    pub round: usize,
    pub trajectory: Trajectory,
    /// Noise-free physical states at the observation times.
    pub physical: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperienceStore {
    pub entries: Vec<StoredTrajectory>,
}

impl ExperienceStore {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, entry: StoredTrajectory) -> Result<()> {
        entry.trajectory.validate()?;
        if entry.physical.len() != entry.trajectory.len() {
            return Err(Error::Shape(format!(
                "{} physical states for {} observations",
                entry.physical.len(),
                entry.trajectory.len()
            )));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn trajectories(&self) -> Vec<Trajectory> {
        self.entries.iter().map(|e| e.trajectory.clone()).collect()
    }

    /// The last `n` trajectories not collected for exploration, or all of
    /// them while fewer exist.
    pub fn recent_non_exploration(&self, n: usize) -> Vec<&StoredTrajectory> {
        let mut recent: Vec<&StoredTrajectory> = self
            .entries
            .iter()
            .rev()
            .filter(|e| e.provenance != Provenance::Exploration)
            .take(n)
            .collect();
        recent.reverse();
        recent
    }

    pub fn count(&self, provenance: Provenance) -> usize {
        self.entries.iter().filter(|e| e.provenance == provenance).count()
    }
}

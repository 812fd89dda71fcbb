//! Timestamped observation/action sequences and their JSON-lines form.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    t: f64,
    s: Vec<f64>,
    a: Vec<f64>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<Vec<f64>>, actions: Vec<Vec<f64>>) -> Result<Self> {
        let traj = Trajectory {
            times,
            states,
            actions,
        };
        traj.validate()?;
        Ok(traj)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn action_dim(&self) -> usize {
        self.actions.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.states.len() != self.times.len() || self.actions.len() != self.times.len() {
            return Err(Error::Shape(format!(
                "{} times, {} states, {} actions",
                self.times.len(),
                self.states.len(),
                self.actions.len()
            )));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("trajectory times must be strictly increasing".into()));
        }
        let (d, m) = (self.state_dim(), self.action_dim());
        if self.states.iter().any(|s| s.len() != d) || self.actions.iter().any(|a| a.len() != m) {
            return Err(Error::Shape("ragged states or actions".into()));
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for ((t, s), a) in self.times.iter().zip(&self.states).zip(&self.actions) {
            out.push_str(&serde_json::to_string(&Record {
                t: *t,
                s: s.clone(),
                a: a.clone(),
            })?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        Self::from_lines(text.lines().map(|l| Ok(l.to_owned())))
    }

    fn from_lines(lines: impl Iterator<Item = Result<String>>) -> Result<Self> {
        let (mut times, mut states, mut actions) = (Vec::new(), Vec::new(), Vec::new());
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r: Record = serde_json::from_str(&line)?;
            times.push(r.t);
            states.push(r.s);
            actions.push(r.a);
        }
        Self::new(times, states, actions)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(self.to_jsonl()?.as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_lines(
            BufReader::new(file)
                .lines()
                .map(|l| l.map_err(|e| Error::io(path, e))),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip_is_exact() {
        let traj = Trajectory::new(
            vec![0.0, 0.1, 0.30000000000000004, 1.0 / 3.0],
            vec![vec![1e-300, -0.0], vec![std::f64::consts::PI, 2.5], vec![1.0, 2.0], vec![-7.25, 1e17]],
            vec![vec![0.1], vec![0.2], vec![-1.9999999999999998], vec![0.0]],
        )
        .unwrap();
        let back = Trajectory::from_jsonl(&traj.to_jsonl().unwrap()).unwrap();
        for (a, b) in traj.times.iter().zip(&back.times) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(traj, back);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        traj.write_jsonl(&path).unwrap();
        assert_eq!(Trajectory::read_jsonl(&path).unwrap(), traj);
    }

    #[test]
    fn rejects_unordered_or_ragged() {
        assert!(Trajectory::new(vec![0.0, 0.0], vec![vec![1.0]; 2], vec![vec![]; 2]).is_err());
        assert!(Trajectory::new(vec![0.0, 1.0], vec![vec![1.0], vec![1.0, 2.0]], vec![vec![]; 2]).is_err());
        assert!(Trajectory::new(vec![0.0], vec![], vec![]).is_err());
    }
}

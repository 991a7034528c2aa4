//! One agent, one step, reward `−a²`: the optimum is the zero action.

use crate::error::{Error, Result};
use crate::graph::{AgentGraph, ObservationBatch};
use crate::numerics::{Matrix, Rng};
use crate::rollout::{MultiAgentEnv, Observation, StepOutcome};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticBandit {
    classes: usize,
    finished: bool,
}

impl QuadraticBandit {
    /// `classes` must match the edge-class count of the network driving it.
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            finished: false,
        }
    }
}

impl MultiAgentEnv for QuadraticBandit {
    fn obs_dim(&self) -> usize {
        1
    }

    fn act_dim(&self) -> usize {
        1
    }

    fn horizon(&self) -> usize {
        1
    }

    fn reset(&mut self, _rng: Rng) -> Result<()> {
        self.finished = false;
        Ok(())
    }

    fn observe(&mut self) -> Result<Observation> {
        Ok(Observation {
            obs: ObservationBatch::new(Matrix::from_rows(&[[1.0]])?),
            graph: AgentGraph::self_loops(vec![0], 0, self.classes)?,
        })
    }

    fn step(&mut self, actions: &Matrix, _active: &[bool]) -> Result<StepOutcome> {
        if actions.shape() != (1, 1) {
            return Err(Error::shape("the bandit takes exactly one scalar action"));
        }
        if self.finished {
            return Err(Error::config("bandit", "stepped after the episode ended"));
        }
        self.finished = true;
        let a = actions.get(0, 0);
        Ok(StepOutcome {
            reward: -a * a,
            done: true,
            mean_speed: None,
        })
    }
}

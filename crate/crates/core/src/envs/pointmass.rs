use super::{checked_action, ActionBounds, EnvError, Environment, Step};
use crate::rng::Rng;

/// Constants of the point-mass task.
#[derive(Clone, Debug, PartialEq)]
pub struct PointMassParams {
    pub dt: f64,
    pub goal: [f64; 2],
    pub action_cost: f64,
    pub horizon: usize,
}

impl Default for PointMassParams {
    fn default() -> Self {
        Self {
            dt: 0.05,
            goal: [1.0, 1.0],
            action_cost: 0.01,
            horizon: 100,
        }
    }
}

/// Semi-implicit Euler step of a unit mass pushed by `action` in the plane.
///
/// `state = (x, y, vx, vy)`; returns the next state and
/// `-‖p' - goal‖² - action_cost·‖a‖²`.
pub fn pointmass_step(state: &[f64; 4], action: &[f64; 2], params: &PointMassParams) -> ([f64; 4], f64) {
    let h = params.dt;
    let vx = state[2] + h * action[0];
    let vy = state[3] + h * action[1];
    let x = state[0] + h * vx;
    let y = state[1] + h * vy;
    let dist2 = (x - params.goal[0]).powi(2) + (y - params.goal[1]).powi(2);
    let reward = -dist2 - params.action_cost * (action[0].powi(2) + action[1].powi(2));
    ([x, y, vx, vy], reward)
}

#[derive(Clone, Debug)]
pub struct PointMass {
    params: PointMassParams,
    bounds: ActionBounds,
    state: [f64; 4],
    warned: bool,
}

impl PointMass {
    pub fn new(params: PointMassParams) -> Self {
        Self {
            params,
            bounds: ActionBounds::symmetric(2, 1.0),
            state: [0.0; 4],
            warned: false,
        }
    }

    pub fn set_state(&mut self, state: [f64; 4]) {
        self.state = state;
    }
}

impl Environment for PointMass {
    fn state_dim(&self) -> usize {
        4
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn action_bounds(&self) -> &ActionBounds {
        &self.bounds
    }

    fn horizon(&self) -> usize {
        self.params.horizon
    }

    /// Always starts at rest at the origin; the generator is not consumed.
    fn reset(&mut self, _rng: &mut Rng) -> Vec<f64> {
        self.state = [0.0; 4];
        self.state.to_vec()
    }

    fn step(&mut self, action: &[f64]) -> Result<Step, EnvError> {
        let a = checked_action(action, &self.bounds, &mut self.warned, "pointmass")?;
        let (next, reward) = pointmass_step(&self.state, &[a[0], a[1]], &self.params);
        self.state = next;
        Ok(Step {
            observation: next.to_vec(),
            reward,
            done: false,
        })
    }

    fn observe(&self) -> Vec<f64> {
        self.state.to_vec()
    }
}

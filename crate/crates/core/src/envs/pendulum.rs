use std::f64::consts::PI;

use rand::Rng as _;

use super::{checked_action, ActionBounds, EnvError, Environment, Step};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct PendulumParams {
    pub gravity: f64,
    pub mass: f64,
    pub length: f64,
    pub dt: f64,
    pub max_speed: f64,
    pub max_torque: f64,
    pub horizon: usize,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            gravity: 10.0,
            mass: 1.0,
            length: 1.0,
            dt: 0.05,
            max_speed: 8.0,
            max_torque: 2.0,
            horizon: 200,
        }
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let w = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// One step of the torque-driven pendulum, `θ = 0` upright.
///
/// Takes and returns `(θ, θ̇)`; the reward is charged on the pre-step state:
/// `-(wrap(θ)² + 0.1·θ̇² + 0.001·u²)`.
pub fn pendulum_step(state: (f64, f64), torque: f64, p: &PendulumParams) -> ((f64, f64), f64) {
    let (theta, theta_dot) = state;
    let u = torque.clamp(-p.max_torque, p.max_torque);
    let reward = -(wrap_angle(theta).powi(2) + 0.1 * theta_dot * theta_dot + 0.001 * u * u);
    let accel = 3.0 * p.gravity / (2.0 * p.length) * theta.sin() + 3.0 * u / (p.mass * p.length * p.length);
    let new_dot = (theta_dot + accel * p.dt).clamp(-p.max_speed, p.max_speed);
    let new_theta = theta + new_dot * p.dt;
    ((new_theta, new_dot), reward)
}

#[derive(Clone, Debug)]
pub struct Pendulum {
    params: PendulumParams,
    bounds: ActionBounds,
    theta: f64,
    theta_dot: f64,
    warned: bool,
}

impl Pendulum {
    pub fn new(params: PendulumParams) -> Self {
        let bounds = ActionBounds::symmetric(1, params.max_torque);
        Self {
            params,
            bounds,
            theta: PI,
            theta_dot: 0.0,
            warned: false,
        }
    }

    pub fn set_state(&mut self, theta: f64, theta_dot: f64) {
        self.theta = theta;
        self.theta_dot = theta_dot;
    }

    pub fn angle_state(&self) -> (f64, f64) {
        (self.theta, self.theta_dot)
    }
}

impl Environment for Pendulum {
    fn state_dim(&self) -> usize {
        3
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn action_bounds(&self) -> &ActionBounds {
        &self.bounds
    }

    fn horizon(&self) -> usize {
        self.params.horizon
    }

    fn reset(&mut self, rng: &mut Rng) -> Vec<f64> {
        self.theta = rng.random_range(-PI..=PI);
        self.theta_dot = rng.random_range(-1.0..=1.0);
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<Step, EnvError> {
        let a = checked_action(action, &self.bounds, &mut self.warned, "pendulum")?;
        let ((theta, theta_dot), reward) = pendulum_step((self.theta, self.theta_dot), a[0], &self.params);
        self.theta = theta;
        self.theta_dot = theta_dot;
        Ok(Step {
            observation: self.observe(),
            reward,
            done: false,
        })
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }
}

use super::{Dynamics, EnvSpec, EnvState, HealthBound, InitialRange, Observation, Transition};
use serde::{Deserialize, Serialize};

use crate::rng::Stream;

pub const CARTPOLE_ID: &str = "cartpole-balance-v1";
pub(super) const POSITION_DIM: usize = 2;

const INIT_HALF_WIDTH: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CartPoleBalanceParams {
    pub m_cart: f64,
    pub m_pole: f64,
    pub half_length: f64,
    pub gravity: f64,
    pub force_max: f64,
    pub dt: f64,
    pub theta_bound: f64,
    pub x_bound: f64,
    pub action_cost: f64,
    pub l_max: u64,
}

impl Default for CartPoleBalanceParams {
    fn default() -> Self {
        Self {
            m_cart: 1.0,
            m_pole: 0.1,
            half_length: 0.5,
            gravity: 9.8,
            force_max: 10.0,
            dt: 0.02,
            theta_bound: 0.2095,
            x_bound: 2.4,
            action_cost: 0.01,
            l_max: 1000,
        }
    }
}

impl CartPoleBalanceParams {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            self.m_cart,
            self.m_pole,
            self.half_length,
            self.gravity,
            self.force_max,
            self.dt,
            self.theta_bound,
            self.x_bound,
            self.action_cost,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err("cart-pole parameters must all be positive".into());
        }
        if self.theta_bound >= std::f64::consts::FRAC_PI_2 {
            return Err("theta_bound must be below pi/2".into());
        }
        if self.l_max == 0 {
            return Err("l_max must be at least 1".into());
        }
        Ok(())
    }
}

/// Cart-pole balancing with a continuous force. State: `q = (x, theta)`,
/// `qdot = (x_dot, theta_dot)`.
#[derive(Clone, Debug)]
pub struct CartPoleBalance {
    params: CartPoleBalanceParams,
    spec: EnvSpec,
}

impl CartPoleBalance {
    pub fn new(params: CartPoleBalanceParams) -> Self {
        params.validate().expect("valid cart-pole parameters");
        let spec = EnvSpec {
            d_obs: 4,
            d_act: 1,
            l_max: params.l_max,
            health_bounds: vec![
                HealthBound {
                    name: "x",
                    lo: -params.x_bound,
                    hi: params.x_bound,
                },
                HealthBound {
                    name: "theta",
                    lo: -params.theta_bound,
                    hi: params.theta_bound,
                },
            ],
            initial_distribution: ["x", "theta", "x_dot", "theta_dot"]
                .into_iter()
                .map(|name| InitialRange {
                    name,
                    lo: -INIT_HALF_WIDTH,
                    hi: INIT_HALF_WIDTH,
                })
                .collect(),
        };
        Self { params, spec }
    }

    pub fn params(&self) -> &CartPoleBalanceParams {
        &self.params
    }
}

impl Dynamics for CartPoleBalance {
    fn env_id(&self) -> &'static str {
        CARTPOLE_ID
    }

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn sample_initial(&self, rng: &mut Stream) -> (Vec<f64>, Vec<f64>, u32) {
        let mut draw = || (2.0 * rng.uniform() - 1.0) * INIT_HALF_WIDTH;
        let (x, theta, x_dot, theta_dot) = (draw(), draw(), draw(), draw());
        (vec![x, theta], vec![x_dot, theta_dot], 0)
    }

    fn advance(&self, state: &EnvState, action: &[f64]) -> Transition {
        let p = &self.params;
        let (mut x, mut theta) = (state.q[0], state.q[1]);
        let (mut x_dot, mut theta_dot) = (state.qdot[0], state.qdot[1]);
        let force = action[0] * p.force_max;
        let total_mass = p.m_cart + p.m_pole;
        let (sin, cos) = theta.sin_cos();
        let temp = (force + p.m_pole * p.half_length * theta_dot * theta_dot * sin) / total_mass;
        let theta_acc = (p.gravity * sin - cos * temp)
            / (p.half_length * (4.0 / 3.0 - p.m_pole * cos * cos / total_mass));
        let x_acc = temp - p.m_pole * p.half_length * theta_acc * cos / total_mass;
        // semi-implicit Euler
        x_dot += p.dt * x_acc;
        x += p.dt * x_dot;
        theta_dot += p.dt * theta_acc;
        theta += p.dt * theta_dot;
        Transition {
            q: vec![x, theta],
            qdot: vec![x_dot, theta_dot],
            phase: 0,
            reward: 1.0 - p.action_cost * action[0] * action[0],
        }
    }

    fn observe(&self, state: &EnvState) -> Observation {
        Observation {
            values: vec![state.q[0], state.qdot[0], state.q[1], state.qdot[1]],
        }
    }

    fn health_values(&self, state: &EnvState) -> Vec<f64> {
        vec![state.q[0], state.q[1]]
    }

    fn position_dim(&self) -> usize {
        POSITION_DIM
    }

    fn velocity_dim(&self) -> usize {
        2
    }
}

#[cfg(test)]
mod tests {
    use super::super::{ActionVector, Env};
    use super::*;

    fn state(x: f64, theta: f64, x_dot: f64, theta_dot: f64) -> EnvState {
        EnvState {
            env_id: CARTPOLE_ID.into(),
            q: vec![x, theta],
            qdot: vec![x_dot, theta_dot],
            phase: 0,
            step_index: 0,
            rng_state: Stream::from_seed(0).to_bytes(),
        }
    }

    #[test]
    fn reset_stays_inside_initial_box() {
        let mut env = Env::by_id(CARTPOLE_ID).unwrap();
        for seed in 0..10_000 {
            let (obs, _) = env.reset(seed);
            assert!(obs.values.iter().all(|v| v.abs() <= 0.05), "seed {seed}");
        }
    }

    #[test]
    fn upright_equilibrium_is_preserved_exactly() {
        let env = Env::by_id(CARTPOLE_ID).unwrap();
        let mut s = state(0.0, 0.0, 0.0, 0.0);
        let mut ret = 0.0;
        for t in 0..1000 {
            let r = env.step_from(&s, &ActionVector::zeros(1)).unwrap();
            assert_eq!(r.state.q, vec![0.0, 0.0]);
            assert!(!r.terminated);
            assert_eq!(r.truncated, t == 999);
            ret += r.reward;
            s = r.state;
        }
        assert_eq!(ret, 1000.0);
    }

    #[test]
    fn small_tilt_falls_at_the_reference_step() {
        // Step count from an independent re-integration of the same
        // equations (scratch script, double precision): the pole first
        // leaves |theta| <= 0.2095 on control step 47.
        let env = Env::by_id(CARTPOLE_ID).unwrap();
        let mut s = state(0.0, 0.01, 0.0, 0.0);
        let mut fell = None;
        for t in 1..=1000 {
            let r = env.step_from(&s, &ActionVector::zeros(1)).unwrap();
            s = r.state;
            if r.terminated {
                fell = Some(t);
                break;
            }
        }
        assert_eq!(fell, Some(CARTPOLE_FALL_STEP));
    }

    const CARTPOLE_FALL_STEP: u32 = 47;

    #[test]
    fn crossing_the_angle_bound_in_one_step_terminates() {
        // theta = 0.2 with theta_dot = 0.5: one step adds
        // dt * (theta_dot + dt * theta_acc) > 0.0095 so the bound is crossed.
        let env = Env::by_id(CARTPOLE_ID).unwrap();
        let r = env
            .step_from(&state(0.0, 0.2, 0.0, 0.5), &ActionVector::zeros(1))
            .unwrap();
        assert!(r.state.q[1] > 0.2095);
        assert!(r.terminated && !r.truncated);
    }

    #[test]
    fn health_bounds_are_closed() {
        let env = Env::by_id(CARTPOLE_ID).unwrap();
        assert!(env.is_healthy(&state(2.4, 0.2095, 0.0, 0.0)));
        assert!(env.is_healthy(&state(-2.4, -0.2095, 0.0, 0.0)));
        assert!(!env.is_healthy(&state(2.4 + 1e-12, 0.0, 0.0, 0.0)));
        assert!(!env.is_healthy(&state(0.0, -0.2095 - 1e-12, 0.0, 0.0)));
    }

    #[test]
    fn reward_charges_action_cost() {
        let env = Env::by_id(CARTPOLE_ID).unwrap();
        let r = env
            .step_from(&state(0.0, 0.0, 0.0, 0.0), &ActionVector::new(vec![-0.5]))
            .unwrap();
        assert_eq!(r.reward, 1.0 - 0.01 * 0.25);
    }

    #[test]
    fn truncation_at_time_limit() {
        let env = Env::by_id(CARTPOLE_ID).unwrap();
        let mut s = state(0.0, 0.0, 0.0, 0.0);
        s.step_index = 999;
        let r = env.step_from(&s, &ActionVector::zeros(1)).unwrap();
        assert!(r.truncated && !r.terminated);
    }
}

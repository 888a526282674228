use super::{Dynamics, EnvSpec, EnvState, HealthBound, InitialRange, Observation, Transition};
use serde::{Deserialize, Serialize};

use crate::rng::Stream;

pub const HOPPER_ID: &str = "planar-hopper-v1";
pub(super) const POSITION_DIM: usize = 6;

/// Phase flag bit set while the foot is on the ground.
pub const STANCE: u32 = 1;

// q layout
const X: usize = 0;
const Z: usize = 1;
const LEG_ANGLE: usize = 2;
const LEG_LENGTH: usize = 3;
/// Foot position relative to the body, horizontal. Relative so that the
/// absolute `x` never enters the dynamics.
const FOOT_DX: usize = 4;
const FOOT_Z: usize = 5;
// qdot layout
const VX: usize = 0;
const VZ: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanarHopperParams {
    pub m_body: f64,
    pub leg_rest_length: f64,
    pub spring_k: f64,
    pub thrust_max: f64,
    pub gravity: f64,
    pub dt_physics: f64,
    pub action_repeat: u32,
    pub touchdown_angle_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub compression_min: f64,
    pub forward_weight: f64,
    pub alive_bonus: f64,
    pub action_cost: f64,
    /// Radial damping in stance, N·s/m. The only loss mechanism.
    pub leg_damping: f64,
    /// Flight-phase leg servo rate limit, rad/s.
    pub leg_slew_rate: f64,
    pub l_max: u64,
}

impl Default for PlanarHopperParams {
    fn default() -> Self {
        Self {
            m_body: 1.0,
            leg_rest_length: 1.0,
            spring_k: 300.0,
            thrust_max: 60.0,
            gravity: 9.8,
            dt_physics: 0.01,
            action_repeat: 5,
            touchdown_angle_max: 0.5,
            z_min: 0.35,
            z_max: 4.0,
            compression_min: 0.4,
            forward_weight: 1.0,
            alive_bonus: 1.0,
            action_cost: 0.005,
            leg_damping: 2.0,
            leg_slew_rate: 8.0,
            l_max: 1000,
        }
    }
}

impl PlanarHopperParams {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            self.m_body,
            self.leg_rest_length,
            self.spring_k,
            self.thrust_max,
            self.gravity,
            self.dt_physics,
            self.touchdown_angle_max,
            self.z_min,
            self.z_max,
            self.compression_min,
            self.forward_weight,
            self.alive_bonus,
            self.action_cost,
            self.leg_slew_rate,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) || self.action_repeat == 0 {
            return Err("hopper parameters must all be positive".into());
        }
        if !(self.leg_damping >= 0.0) {
            return Err("leg_damping must be non-negative".into());
        }
        if self.z_min >= self.z_max {
            return Err("z_min must be below z_max".into());
        }
        if self.compression_min >= self.leg_rest_length {
            return Err("compression_min must be below leg_rest_length".into());
        }
        if self.l_max == 0 {
            return Err("l_max must be at least 1".into());
        }
        Ok(())
    }
}

/// Spring-loaded inverted pendulum hopper in the sagittal plane.
///
/// A point-mass body on a massless spring leg. In flight the body is
/// ballistic and the leg angle is servoed toward the commanded touchdown
/// angle. Touchdown pins the foot; in stance the leg pushes radially with
/// the spring force plus commanded thrust. Liftoff happens when the leg is
/// back at rest length.
#[derive(Clone, Debug)]
pub struct PlanarHopper {
    params: PlanarHopperParams,
    spec: EnvSpec,
}

impl PlanarHopper {
    pub fn new(params: PlanarHopperParams) -> Self {
        params.validate().expect("valid hopper parameters");
        let spec = EnvSpec {
            d_obs: 6,
            d_act: 2,
            l_max: params.l_max,
            health_bounds: vec![
                HealthBound {
                    name: "z",
                    lo: params.z_min,
                    hi: params.z_max,
                },
                HealthBound {
                    name: "leg_length",
                    lo: params.compression_min,
                    hi: f64::INFINITY,
                },
            ],
            initial_distribution: vec![
                InitialRange {
                    name: "z",
                    lo: 1.1,
                    hi: 1.3,
                },
                InitialRange {
                    name: "vx",
                    lo: -0.1,
                    hi: 0.1,
                },
            ],
        };
        Self { params, spec }
    }

    pub fn params(&self) -> &PlanarHopperParams {
        &self.params
    }

    /// Hooke force along the leg at `length`.
    pub fn spring_force(&self, length: f64) -> f64 {
        self.params.spring_k * (self.params.leg_rest_length - length)
    }

    /// Net radial leg force in stance; the foot cannot pull on the ground.
    pub fn radial_force(&self, length: f64, length_rate: f64, thrust: f64) -> f64 {
        (self.spring_force(length) - self.params.leg_damping * length_rate + thrust).max(0.0)
    }

    /// Kinetic plus gravitational energy of the body.
    pub fn mechanical_energy(&self, state: &EnvState) -> f64 {
        let p = &self.params;
        let (vx, vz) = (state.qdot[VX], state.qdot[VZ]);
        0.5 * p.m_body * (vx * vx + vz * vz) + p.m_body * p.gravity * state.q[Z]
    }

    /// A flight-phase state with the leg vertical at rest length.
    pub fn flight_state(&self, x: f64, z: f64, vx: f64, vz: f64) -> EnvState {
        let rest = self.params.leg_rest_length;
        EnvState {
            env_id: HOPPER_ID.to_string(),
            q: vec![x, z, 0.0, rest, 0.0, z - rest],
            qdot: vec![vx, vz],
            phase: 0,
            step_index: 0,
            rng_state: Stream::from_seed(0).to_bytes(),
        }
    }

    fn healthy(&self, z: f64, length: f64) -> bool {
        let p = &self.params;
        z >= p.z_min && z <= p.z_max && length >= p.compression_min
    }
}

impl Dynamics for PlanarHopper {
    fn env_id(&self) -> &'static str {
        HOPPER_ID
    }

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn sample_initial(&self, rng: &mut Stream) -> (Vec<f64>, Vec<f64>, u32) {
        let z = 1.1 + 0.2 * rng.uniform();
        let vx = -0.1 + 0.2 * rng.uniform();
        let s = self.flight_state(0.0, z, vx, 0.0);
        (s.q, s.qdot, s.phase)
    }

    fn advance(&self, state: &EnvState, action: &[f64]) -> Transition {
        let p = &self.params;
        let dt = p.dt_physics;
        let rest = p.leg_rest_length;
        let q = &state.q;
        let (mut x, mut z, mut phi, mut len) = (q[X], q[Z], q[LEG_ANGLE], q[LEG_LENGTH]);
        let (mut foot_dx, mut foot_z) = (q[FOOT_DX], q[FOOT_Z]);
        let (mut vx, mut vz) = (state.qdot[VX], state.qdot[VZ]);
        let mut stance = state.phase & STANCE != 0;

        let target = action[0] * p.touchdown_angle_max;
        let thrust = action[1].max(0.0) * p.thrust_max;
        let max_turn = p.leg_slew_rate * dt;

        let mut vx_sum = 0.0;
        let mut substeps = 0u32;
        for _ in 0..p.action_repeat {
            if stance {
                let (dx, dz) = (-foot_dx, z - foot_z);
                let l = dx.hypot(dz);
                let (ux, uz) = (dx / l, dz / l);
                let l_rate = vx * ux + vz * uz;
                let f = self.radial_force(l, l_rate, thrust) / p.m_body;
                vx += f * ux * dt;
                vz += (f * uz - p.gravity) * dt;
                x += vx * dt;
                z += vz * dt;
                foot_dx -= vx * dt;
                len = foot_dx.hypot(z - foot_z);
                phi = foot_dx.atan2(z - foot_z);
                if len >= rest {
                    stance = false;
                    len = rest;
                }
            } else {
                // constant acceleration: exact kinematics
                x += vx * dt;
                z += vz * dt - 0.5 * p.gravity * dt * dt;
                vz -= p.gravity * dt;
                phi += (target - phi).clamp(-max_turn, max_turn);
                len = rest;
                let (sin, cos) = phi.sin_cos();
                foot_dx = rest * sin;
                foot_z = z - rest * cos;
                if foot_z <= 0.0 {
                    stance = true;
                }
            }
            vx_sum += vx;
            substeps += 1;
            if !self.healthy(z, len) {
                break;
            }
        }

        let mean_vx = vx_sum / f64::from(substeps);
        let effort = action[0] * action[0] + action[1] * action[1];
        Transition {
            q: vec![x, z, phi, len, foot_dx, foot_z],
            qdot: vec![vx, vz],
            phase: if stance { STANCE } else { 0 },
            reward: p.forward_weight * mean_vx + p.alive_bonus - p.action_cost * effort,
        }
    }

    fn observe(&self, state: &EnvState) -> Observation {
        let q = &state.q;
        let stance = if state.phase & STANCE != 0 { 1.0 } else { 0.0 };
        Observation {
            values: vec![
                q[Z],
                state.qdot[VX],
                state.qdot[VZ],
                q[LEG_ANGLE],
                q[LEG_LENGTH],
                stance,
            ],
        }
    }

    fn health_values(&self, state: &EnvState) -> Vec<f64> {
        vec![state.q[Z], state.q[LEG_LENGTH]]
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

    fn hopper() -> (Env, PlanarHopper) {
        let p = PlanarHopperParams::default();
        (Env::hopper(p.clone()), PlanarHopper::new(p))
    }

    #[test]
    fn spring_force_vanishes_at_rest_length() {
        let (_, h) = hopper();
        assert_eq!(h.spring_force(1.0), 0.0);
        assert_eq!(h.radial_force(1.0, 0.0, 0.0), 0.0);
        assert_eq!(h.spring_force(0.9), 300.0 * (1.0 - 0.9));
    }

    #[test]
    fn observation_ignores_absolute_x() {
        let (env, h) = hopper();
        let a = h.flight_state(0.0, 1.2, 0.3, -0.5);
        let b = h.flight_state(100.0, 1.2, 0.3, -0.5);
        assert_eq!(env.observe(&a), env.observe(&b));
    }

    #[test]
    fn stance_flag_is_exactly_zero_or_one() {
        let (mut env, _) = hopper();
        env.reset(3);
        for _ in 0..200 {
            let r = env.step(&ActionVector::new(vec![0.0, 0.3])).unwrap();
            let flag = r.observation.values[5];
            assert!(flag == 0.0 || flag == 1.0);
            if r.terminated {
                break;
            }
        }
    }

    #[test]
    fn vertical_drop_without_thrust_has_non_increasing_apexes() {
        let (env, h) = hopper();
        let mut s = h.flight_state(0.0, 1.2, 0.0, 0.0);
        let mut apexes = Vec::new();
        let mut prev_vz = 0.0;
        let mut bounces = 0;
        for _ in 0..400 {
            let r = env.step_from(&s, &ActionVector::zeros(2)).unwrap();
            assert!(!r.terminated);
            let vz = r.state.qdot[1];
            if prev_vz > 0.0 && vz <= 0.0 {
                apexes.push(r.state.q[1]);
            }
            if r.state.phase & STANCE != 0 && s.phase & STANCE == 0 {
                bounces += 1;
            }
            assert_eq!(r.state.qdot[0], 0.0);
            prev_vz = vz;
            s = r.state;
        }
        assert!(bounces >= 3, "only {bounces} bounces");
        assert!(apexes.len() >= 2);
        for w in apexes.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-6), "apexes {apexes:?}");
        }
    }

    #[test]
    fn flight_conserves_energy() {
        let (env, h) = hopper();
        let mut rng = Stream::from_seed(12);
        let mut checked = 0;
        for _ in 0..2000 {
            let s = h.flight_state(
                rng.uniform() * 10.0,
                2.0 + rng.uniform(),
                rng.normal(),
                rng.normal(),
            );
            let a = ActionVector::new(vec![2.0 * rng.uniform() - 1.0, 0.0]);
            let r = env.step_from(&s, &a).unwrap();
            if r.state.phase & STANCE != 0 {
                continue;
            }
            let (e0, e1) = (h.mechanical_energy(&s), h.mechanical_energy(&r.state));
            assert!((e1 - e0).abs() <= 1e-6 * e0.abs(), "{e0} -> {e1}");
            checked += 1;
        }
        assert!(checked > 1000);
    }

    #[test]
    fn zero_thrust_eventually_fails() {
        // From the default reset distribution the body has a small
        // horizontal drift; with a vertical leg and no thrust the hop decays
        // and the body topples in stance. Fixture from an independent
        // re-integration of the same model started at seed 0's reset state
        // (z = 1.14524, vx = -0.08962).
        let (mut env, _) = hopper();
        env.reset(0);
        let mut failed_at = None;
        for t in 1..=1000 {
            let r = env.step(&ActionVector::zeros(2)).unwrap();
            if r.terminated {
                failed_at = Some(t);
                break;
            }
        }
        assert_eq!(failed_at, Some(HOPPER_ZERO_THRUST_FAIL_STEP));
    }

    const HOPPER_ZERO_THRUST_FAIL_STEP: u32 = 54;

    #[test]
    fn health_bounds_are_closed() {
        let (env, h) = hopper();
        let mut s = h.flight_state(0.0, 0.35, 0.0, 0.0);
        assert!(env.is_healthy(&s));
        s.q[Z] = 0.35 - 1e-12;
        assert!(!env.is_healthy(&s));
        s.q[Z] = 4.0;
        assert!(env.is_healthy(&s));
        s.q[Z] = 4.0 + 1e-12;
        assert!(!env.is_healthy(&s));
        s.q[Z] = 1.0;
        s.q[LEG_LENGTH] = 0.4;
        assert!(env.is_healthy(&s));
        s.q[LEG_LENGTH] = 0.4 - 1e-12;
        assert!(!env.is_healthy(&s));
    }

    #[test]
    fn terminated_snapshot_reports_termination_on_next_step() {
        let (env, h) = hopper();
        let s = h.flight_state(0.0, 0.2, 0.0, -1.0);
        assert!(!env.is_healthy(&s));
        let r = env.step_from(&s, &ActionVector::zeros(2)).unwrap();
        assert!(r.terminated);
    }

    #[test]
    fn translation_does_not_change_rollouts() {
        let (env, _) = hopper();
        let mut rng = Stream::from_seed(2);
        for seed in 0..20 {
            let mut e = Env::by_id(HOPPER_ID).unwrap();
            let (_, mut a) = e.reset(seed);
            let mut b = a.clone();
            b.q[X] += 100.0 * (seed as f64 + 1.0);
            for _ in 0..300 {
                let act = ActionVector::new(vec![2.0 * rng.uniform() - 1.0, rng.uniform()]);
                let ra = env.step_from(&a, &act).unwrap();
                let rb = env.step_from(&b, &act).unwrap();
                assert_eq!(ra.observation, rb.observation);
                assert_eq!(ra.reward.to_bits(), rb.reward.to_bits());
                assert_eq!(ra.terminated, rb.terminated);
                if ra.terminated {
                    break;
                }
                a = ra.state;
                b = rb.state;
            }
        }
    }
}

//! Cart-pole benchmark: pole-balancing ODE dynamics, online model learning
//! with a shallow relu network, a softmax policy trained by policy
//! gradients, and the episode loop in both real-dynamics and learned-model
//! modes.

use crate::approx::{Activation, ShallowNet};
use crate::core::LearningRateSchedule;
use crate::{Result, SgdctError};
use rand::Rng;

/// Force applied to the cart, ±10 N.
pub const FORCE_MAG: f64 = 10.0;
/// Action hold / reward interval in seconds.
pub const ACTION_DT: f64 = 0.02;
/// Euler integration step in seconds.
pub const EULER_DT: f64 = 1e-3;
/// |x| bound in meters.
pub const X_LIMIT: f64 = 2.4;
/// |β| bound in radians (12°).
pub const BETA_LIMIT: f64 = 24.0 * std::f64::consts::PI / 360.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartPoleState {
    pub x: f64,
    pub x_dot: f64,
    pub beta: f64,
    pub beta_dot: f64,
}

impl CartPoleState {
    pub fn alive(&self) -> bool {
        self.x.abs() <= X_LIMIT && self.beta.abs() <= BETA_LIMIT
    }

    pub fn to_vec(&self) -> [f64; 4] {
        [self.x, self.x_dot, self.beta, self.beta_dot]
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self {
            x: s[0],
            x_dot: s[1],
            beta: s[2],
            beta_dot: s[3],
        }
    }
}

/// Which transcription of the β̈ denominator to integrate. `Canonical` is
/// the benchmark form `l [4/3 − m cos²β/(m_c+m)]`; `PaperLiteral` divides
/// the pole mass by the cart mass in that factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DenominatorConvention {
    #[default]
    Canonical,
    PaperLiteral,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicsParams {
    pub g: f64,
    pub m_c: f64,
    pub m: f64,
    /// Half-length of the pole.
    pub l: f64,
    pub mu_c: f64,
    pub mu_p: f64,
    pub denominator: DenominatorConvention,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        Self {
            g: 9.8,
            m_c: 1.0,
            m: 0.1,
            l: 0.5,
            mu_c: 0.0005,
            mu_p: 0.000002,
            denominator: DenominatorConvention::Canonical,
        }
    }
}

impl PhysicsParams {
    pub fn frictionless() -> Self {
        Self {
            mu_c: 0.0,
            mu_p: 0.0,
            ..Self::default()
        }
    }
}

fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartPoleDerivs {
    pub x_dot: f64,
    pub x_ddot: f64,
    pub beta_dot: f64,
    pub beta_ddot: f64,
}

impl CartPoleDerivs {
    pub fn to_vec(&self) -> [f64; 4] {
        [self.x_dot, self.x_ddot, self.beta_dot, self.beta_ddot]
    }
}

/// Pole-on-cart accelerations, β̈ computed first and then ẍ from it.
pub fn cartpole_derivs(s: &CartPoleState, force: f64, p: &PhysicsParams) -> CartPoleDerivs {
    let total = p.m_c + p.m;
    let (sin_b, cos_b) = s.beta.sin_cos();
    let num = p.g * sin_b
        + cos_b * ((-force - p.m * p.l * s.beta_dot * s.beta_dot * sin_b
            + p.mu_c * sgn(s.x_dot))
            / total)
        - p.mu_p * s.beta_dot / (p.m * p.l);
    let mass_factor = match p.denominator {
        DenominatorConvention::Canonical => p.m,
        DenominatorConvention::PaperLiteral => p.m / p.m_c,
    };
    let den = p.l * (4.0 / 3.0 - mass_factor * cos_b * cos_b / total);
    let beta_ddot = num / den;
    let x_ddot = (force
        + p.m * p.l * (s.beta_dot * s.beta_dot * sin_b - beta_ddot * cos_b)
        - p.mu_c * sgn(s.x_dot))
        / total;
    CartPoleDerivs {
        x_dot: s.x_dot,
        x_ddot,
        beta_dot: s.beta_dot,
        beta_ddot,
    }
}

/// Per-action dynamics nets (4 → 4 relu): one for pushing right (+10 N) and
/// one for pulling left, so the learned model stays action-conditional.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsModel {
    pub push: ShallowNet,
    pub pull: ShallowNet,
}

impl DynamicsModel {
    pub fn init<R: Rng + ?Sized>(hidden: usize, rng: &mut R) -> Self {
        Self {
            push: ShallowNet::init_uniform(4, hidden, 4, Activation::Relu, rng),
            pull: ShallowNet::init_uniform(4, hidden, 4, Activation::Relu, rng),
        }
    }

    pub fn net_for(&self, force: f64) -> &ShallowNet {
        if force > 0.0 {
            &self.push
        } else {
            &self.pull
        }
    }

    pub fn net_for_mut(&mut self, force: f64) -> &mut ShallowNet {
        if force > 0.0 {
            &mut self.push
        } else {
            &mut self.pull
        }
    }
}

/// One online model update on ODE data: the Eq.-(2)-style drift update with
/// identity preconditioner and `ds = s_dot_observed · dt`,
/// `θ' = θ + α ∇_θ f(s, θ)(ds − f(s, θ) dt)`.
pub fn model_learn_step(
    net: &mut ShallowNet,
    s: &[f64],
    s_dot_observed: &[f64],
    dt: f64,
    schedule: &LearningRateSchedule,
    t_learn: f64,
) -> Result<()> {
    if s.len() != net.n_in || s_dot_observed.len() != net.n_out {
        return Err(SgdctError::DimensionMismatch(format!(
            "state {} / observation {} vs net {} -> {}",
            s.len(),
            s_dot_observed.len(),
            net.n_in,
            net.n_out
        )));
    }
    let alpha = schedule.rate(t_learn);
    let f = net.eval(s)?;
    let jac = net.param_grad(s)?;
    let p = net.param_count();
    let mut g = vec![0.0; p];
    for o in 0..net.n_out {
        let resid = (s_dot_observed[o] - f[o]) * dt;
        if resid != 0.0 {
            let row = &jac[o * p..(o + 1) * p];
            for k in 0..p {
                g[k] += row[k] * resid;
            }
        }
    }
    net.add_scaled(&g, alpha);
    if !net.params_finite() {
        return Err(SgdctError::Divergence { step: 0, t: t_learn });
    }
    Ok(())
}

/// Softmax (two-action) policy: P(F = +10 | s) is the logistic of a scalar
/// relu-net logit; P(+10) + P(−10) = 1 by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy {
    pub net: ShallowNet,
}

impl SoftmaxPolicy {
    pub fn init<R: Rng + ?Sized>(hidden: usize, rng: &mut R) -> Self {
        Self {
            net: ShallowNet::init_uniform(4, hidden, 1, Activation::Relu, rng),
        }
    }

    pub fn logit(&self, s: &[f64]) -> f64 {
        self.net.eval(s).expect("4-dim state")[0]
    }

    /// P(F = +10 | s).
    pub fn prob_push(&self, s: &[f64]) -> f64 {
        let z = self.logit(s);
        1.0 / (1.0 + (-z).exp())
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, s: &[f64], rng: &mut R) -> f64 {
        if rng.random::<f64>() < self.prob_push(s) {
            FORCE_MAG
        } else {
            -FORCE_MAG
        }
    }
}

pub fn policy_prob(policy: &SoftmaxPolicy, s: &[f64]) -> f64 {
    policy.prob_push(s)
}

/// One (state, action, reward) step of an episode.
#[derive(Debug, Clone, Copy)]
pub struct Transition {
    pub state: [f64; 4],
    pub action: f64,
    pub reward: f64,
}

/// REINFORCE with episode-normalized discounted returns: the return-to-go
/// `R_t = r_t + γ R_{t+1}` (the reward a transition stores is the one its
/// action caused, so it belongs to that action's credit) standardized to
/// zero mean and unit variance across the episode, then
/// `θ ← θ + η Σ_t R̂_t ∇ log μ(a_t | s_t)`.
pub fn policy_gradient_update(
    policy: &mut SoftmaxPolicy,
    episode: &[Transition],
    gamma: f64,
    eta: f64,
) -> Result<()> {
    if episode.is_empty() {
        return Err(SgdctError::InvalidParameter("empty episode".into()));
    }
    let n = episode.len();
    let mut returns = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        acc = episode[t].reward + gamma * acc;
        returns[t] = acc;
    }
    let mean = returns.iter().sum::<f64>() / n as f64;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n as f64;
    let std = var.sqrt().max(1e-8);
    let p = policy.net.param_count();
    let mut g = vec![0.0; p];
    for (tr, ret) in episode.iter().zip(returns.iter()) {
        let rhat = (ret - mean) / std;
        if rhat == 0.0 {
            continue;
        }
        let prob = policy.prob_push(&tr.state);
        // ∇ log μ = (1{a=+} − P(+)) ∇z for the logistic logit
        let coef = if tr.action > 0.0 { 1.0 - prob } else { -prob };
        let jac = policy.net.param_grad(&tr.state)?;
        for k in 0..p {
            g[k] += rhat * coef * jac[k];
        }
    }
    policy.net.add_scaled(&g, eta);
    if !policy.net.params_finite() {
        return Err(SgdctError::Divergence { step: 0, t: 0.0 });
    }
    Ok(())
}

/// Which dynamics an episode runs on.
pub enum EpisodeMode<'a> {
    Real(&'a PhysicsParams),
    Model(&'a DynamicsModel),
}

#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub transitions: Vec<Transition>,
    pub reward: f64,
    pub intervals: usize,
    pub alive_time: f64,
    pub terminated: bool,
}

/// Hooks into the real-episode integration; the model learner taps every
/// Euler substep.
pub trait SubstepObserver {
    fn observe(&mut self, s: &[f64], s_dot: &[f64], force: f64, dt: f64) -> Result<()>;
}

pub struct NoObserver;
impl SubstepObserver for NoObserver {
    fn observe(&mut self, _: &[f64], _: &[f64], _: f64, _: f64) -> Result<()> {
        Ok(())
    }
}

/// Run one episode: initial state uniform in ±0.05 per coordinate, action
/// resampled every 0.02 s and held, Euler integration at 1e-3 s, +1 per
/// interval alive, −100 and termination on a bound violation, capped at
/// `max_intervals`.
pub fn run_episode<R: Rng + ?Sized, O: SubstepObserver>(
    policy: &SoftmaxPolicy,
    mode: EpisodeMode<'_>,
    rng: &mut R,
    max_intervals: usize,
    observer: &mut O,
) -> Result<EpisodeRecord> {
    let mut s = CartPoleState {
        x: rng.random_range(-0.05..0.05),
        x_dot: rng.random_range(-0.05..0.05),
        beta: rng.random_range(-0.05..0.05),
        beta_dot: rng.random_range(-0.05..0.05),
    };
    assert!(s.alive(), "initial state must satisfy the bounds");
    let substeps = (ACTION_DT / EULER_DT).round() as usize;
    let mut transitions = Vec::new();
    let mut reward_total = 0.0;
    let mut intervals = 0;
    let mut terminated = false;

    'outer: for _ in 0..max_intervals {
        let sv = s.to_vec();
        let force = policy.sample_action(&sv, rng);
        for _ in 0..substeps {
            let sv_sub = s.to_vec();
            let deriv: [f64; 4] = match mode {
                EpisodeMode::Real(p) => cartpole_derivs(&s, force, p).to_vec(),
                EpisodeMode::Model(m) => {
                    let out = m.net_for(force).eval(&sv_sub)?;
                    [out[0], out[1], out[2], out[3]]
                }
            };
            observer.observe(&sv_sub, &deriv, force, EULER_DT)?;
            s = CartPoleState {
                x: s.x + deriv[0] * EULER_DT,
                x_dot: s.x_dot + deriv[1] * EULER_DT,
                beta: s.beta + deriv[2] * EULER_DT,
                beta_dot: s.beta_dot + deriv[3] * EULER_DT,
            };
            if !s.x.is_finite() || !s.beta.is_finite() {
                // learned models can be arbitrarily wrong early on
                terminated = true;
                let r = -100.0;
                reward_total += r;
                transitions.push(Transition {
                    state: sv,
                    action: force,
                    reward: r,
                });
                break 'outer;
            }
        }
        intervals += 1;
        let r = if s.alive() { 1.0 } else { -100.0 };
        reward_total += r;
        transitions.push(Transition {
            state: sv,
            action: force,
            reward: r,
        });
        if !s.alive() {
            terminated = true;
            break;
        }
    }
    Ok(EpisodeRecord {
        transitions,
        reward: reward_total,
        intervals,
        alive_time: intervals as f64 * ACTION_DT,
        terminated,
    })
}

/// Configuration of the episode/reward training loop.
#[derive(Debug, Clone)]
pub struct LoopConfig {
    pub physics: PhysicsParams,
    pub max_episodes: usize,
    pub max_intervals: usize,
    pub target_reward: f64,
    /// REINFORCE step size η.
    pub policy_eta: f64,
    pub gamma: f64,
    /// Constant learning rate for the model nets.
    pub model_alpha: f64,
    pub model_hidden: usize,
    pub policy_hidden: usize,
    /// Policy refreshed from the model every this many real episodes.
    pub update_every: usize,
    /// Simulated episodes per policy refresh.
    pub sim_episodes: usize,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            physics: PhysicsParams::default(),
            max_episodes: 150,
            max_intervals: 500,
            target_reward: 100.0,
            policy_eta: 0.02,
            gamma: 0.99,
            model_alpha: 0.05,
            model_hidden: 32,
            policy_hidden: 32,
            update_every: 5,
            sim_episodes: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoopOutcome {
    /// Reward of each real episode, in order.
    pub rewards: Vec<f64>,
    /// First episode (1-based) whose reward reached the target, if any.
    pub episodes_to_target: Option<usize>,
}

struct ModelTap<'a> {
    model: &'a mut DynamicsModel,
    schedule: LearningRateSchedule,
    t_learn: f64,
}

impl SubstepObserver for ModelTap<'_> {
    fn observe(&mut self, s: &[f64], s_dot: &[f64], force: f64, dt: f64) -> Result<()> {
        let t = self.t_learn;
        model_learn_step(self.model.net_for_mut(force), s, s_dot, dt, &self.schedule, t)?;
        self.t_learn += dt;
        Ok(())
    }
}

/// Model-based arm: learn the dynamics online from real episodes and refresh
/// the policy by REINFORCE on model-simulated episodes every
/// `update_every` real episodes.
pub fn run_model_based_case<R: Rng + ?Sized>(cfg: &LoopConfig, rng: &mut R) -> Result<LoopOutcome> {
    let mut model = DynamicsModel::init(cfg.model_hidden, rng);
    let mut policy = SoftmaxPolicy::init(cfg.policy_hidden, rng);
    let schedule = LearningRateSchedule::constant(cfg.model_alpha)?;
    let mut tap_time = 0.0;
    let mut rewards = Vec::new();
    let mut hit = None;

    for ep in 0..cfg.max_episodes {
        let mut tap = ModelTap {
            model: &mut model,
            schedule: schedule.clone(),
            t_learn: tap_time,
        };
        let rec = run_episode(
            &policy,
            EpisodeMode::Real(&cfg.physics),
            rng,
            cfg.max_intervals,
            &mut tap,
        )?;
        tap_time = tap.t_learn;
        rewards.push(rec.reward);
        if hit.is_none() && rec.reward >= cfg.target_reward {
            hit = Some(ep + 1);
            break;
        }
        if (ep + 1) % cfg.update_every == 0 {
            for _ in 0..cfg.sim_episodes {
                let sim = run_episode(
                    &policy,
                    EpisodeMode::Model(&model),
                    rng,
                    cfg.max_intervals,
                    &mut NoObserver,
                )?;
                if !sim.transitions.is_empty() {
                    policy_gradient_update(&mut policy, &sim.transitions, cfg.gamma, cfg.policy_eta)?;
                }
            }
        }
    }
    Ok(LoopOutcome {
        rewards,
        episodes_to_target: hit,
    })
}

/// Direct arm: REINFORCE on each real episode, no model.
pub fn run_direct_case<R: Rng + ?Sized>(cfg: &LoopConfig, rng: &mut R) -> Result<LoopOutcome> {
    let mut policy = SoftmaxPolicy::init(cfg.policy_hidden, rng);
    let mut rewards = Vec::new();
    let mut hit = None;
    for ep in 0..cfg.max_episodes {
        let rec = run_episode(
            &policy,
            EpisodeMode::Real(&cfg.physics),
            rng,
            cfg.max_intervals,
            &mut NoObserver,
        )?;
        rewards.push(rec.reward);
        if hit.is_none() && rec.reward >= cfg.target_reward {
            hit = Some(ep + 1);
            break;
        }
        policy_gradient_update(&mut policy, &rec.transitions, cfg.gamma, cfg.policy_eta)?;
    }
    Ok(LoopOutcome {
        rewards,
        episodes_to_target: hit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn equilibrium_is_stationary() {
        let s = CartPoleState {
            x: 0.0,
            x_dot: 0.0,
            beta: 0.0,
            beta_dot: 0.0,
        };
        let d = cartpole_derivs(&s, 0.0, &PhysicsParams::frictionless());
        assert_eq!(d.to_vec(), [0.0, 0.0, 0.0, 0.0]);
    }

    /// Hand-computed push from rest with canonical parameters.
    #[test]
    fn push_from_rest_hand_values() {
        let s = CartPoleState {
            x: 0.0,
            x_dot: 0.0,
            beta: 0.0,
            beta_dot: 0.0,
        };
        let d = cartpole_derivs(&s, 10.0, &PhysicsParams::frictionless());
        assert_relative_eq!(d.beta_ddot, -14.634146341463413, max_relative = 1e-9);
        assert_relative_eq!(d.x_ddot, 9.75609756097561, max_relative = 1e-9);
    }

    #[test]
    fn paper_literal_denominator_differs() {
        let s = CartPoleState {
            x: 0.0,
            x_dot: 0.0,
            beta: 0.0,
            beta_dot: 0.0,
        };
        let mut p = PhysicsParams::frictionless();
        p.denominator = DenominatorConvention::PaperLiteral;
        let d = cartpole_derivs(&s, 10.0, &p);
        // l [4/3 − (m/m_c) cos²β/(m_c+m)] = 0.5 (4/3 − 0.1/1.1)
        let den = 0.5 * (4.0 / 3.0 - (0.1 / 1.0) / 1.1);
        assert_relative_eq!(d.beta_ddot, (-10.0 / 1.1) / den, max_relative = 1e-12);
    }

    #[test]
    fn reflection_symmetry_without_friction() {
        let p = PhysicsParams::frictionless();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        for _ in 0..200 {
            let s = CartPoleState {
                x: rng.random_range(-1.0..1.0),
                x_dot: rng.random_range(-2.0..2.0),
                beta: rng.random_range(-0.2..0.2),
                beta_dot: rng.random_range(-2.0..2.0),
            };
            let f = rng.random_range(-10.0..10.0);
            let neg = CartPoleState {
                x: -s.x,
                x_dot: -s.x_dot,
                beta: -s.beta,
                beta_dot: -s.beta_dot,
            };
            let d1 = cartpole_derivs(&s, f, &p);
            let d2 = cartpole_derivs(&neg, -f, &p);
            assert_relative_eq!(d2.x_ddot, -d1.x_ddot, max_relative = 1e-12, epsilon = 1e-12);
            assert_relative_eq!(
                d2.beta_ddot,
                -d1.beta_ddot,
                max_relative = 1e-12,
                epsilon = 1e-12
            );
        }
    }

    /// Independent re-derivation from the Lagrangian of the cart + uniform
    /// rod, solved as a 2×2 linear system in (ẍ, β̈).
    fn lagrangian_derivs(s: &CartPoleState, force: f64, p: &PhysicsParams) -> (f64, f64) {
        // M [ẍ, β̈]ᵀ = rhs with
        //   [m_c+m,        m l cosβ ] [ẍ ]   [F + m l β̇² sinβ − μ_c sgn ẋ]
        //   [m l cosβ,  (4/3) m l²  ] [β̈ ] = [m g l sinβ − μ_p β̇]
        let (sin_b, cos_b) = s.beta.sin_cos();
        let a11 = p.m_c + p.m;
        let a12 = p.m * p.l * cos_b;
        let a22 = 4.0 / 3.0 * p.m * p.l * p.l;
        let r1 = force + p.m * p.l * s.beta_dot * s.beta_dot * sin_b - p.mu_c * sgn(s.x_dot);
        let r2 = p.m * p.g * p.l * sin_b - p.mu_p * s.beta_dot;
        let det = a11 * a22 - a12 * a12;
        ((a22 * r1 - a12 * r2) / det, (a11 * r2 - a12 * r1) / det)
    }

    #[test]
    fn derivs_match_lagrangian_rederivation() {
        let p = PhysicsParams::default();
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        for _ in 0..1000 {
            let s = CartPoleState {
                x: rng.random_range(-2.0..2.0),
                x_dot: rng.random_range(-3.0..3.0),
                beta: rng.random_range(-0.21..0.21),
                beta_dot: rng.random_range(-3.0..3.0),
            };
            let f = if rng.random::<bool>() { 10.0 } else { -10.0 };
            let d = cartpole_derivs(&s, f, &p);
            let (xdd, bdd) = lagrangian_derivs(&s, f, &p);
            assert_relative_eq!(d.x_ddot, xdd, max_relative = 1e-12, epsilon = 1e-12);
            assert_relative_eq!(d.beta_ddot, bdd, max_relative = 1e-12, epsilon = 1e-12);
        }
    }

    /// Integration-quality sentinel: mechanical energy drift below 1% over
    /// one second of frictionless Euler at 1e-3 s.
    #[test]
    fn energy_drift_sentinel() {
        let p = PhysicsParams::frictionless();
        let energy = |s: &CartPoleState| {
            let v_cm2 = (s.x_dot + p.l * s.beta_dot * s.beta.cos()).powi(2)
                + (p.l * s.beta_dot * s.beta.sin()).powi(2);
            0.5 * p.m_c * s.x_dot * s.x_dot
                + 0.5 * p.m * v_cm2
                + 0.5 * (p.m * p.l * p.l / 3.0) * s.beta_dot * s.beta_dot
                + p.m * p.g * p.l * s.beta.cos()
        };
        let mut s = CartPoleState {
            x: 0.0,
            x_dot: 0.0,
            beta: 0.04,
            beta_dot: 0.0,
        };
        let e0 = energy(&s);
        let mut max_drift = 0.0f64;
        for _ in 0..1000 {
            let d = cartpole_derivs(&s, 0.0, &p);
            s = CartPoleState {
                x: s.x + d.x_dot * EULER_DT,
                x_dot: s.x_dot + d.x_ddot * EULER_DT,
                beta: s.beta + d.beta_dot * EULER_DT,
                beta_dot: s.beta_dot + d.beta_ddot * EULER_DT,
            };
            max_drift = max_drift.max(((energy(&s) - e0) / e0).abs());
        }
        assert!(max_drift < 0.01, "energy drift {max_drift}");
    }

    #[test]
    fn policy_probabilities_are_valid() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        // all-zero weights: both actions equally likely
        let zero = SoftmaxPolicy {
            net: ShallowNet::zeros(4, 8, 1, Activation::Relu),
        };
        assert_eq!(policy_prob(&zero, &[0.1, 0.2, 0.3, 0.4]), 0.5);

        for _ in 0..100 {
            let pol = SoftmaxPolicy::init(8, &mut rng);
            let s: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let p = policy_prob(&pol, &s);
            assert!(p > 0.0 && p < 1.0);
        }

        // large positive logit pushes P(+10) toward 1 monotonically
        let mut pol = SoftmaxPolicy {
            net: ShallowNet::zeros(4, 2, 1, Activation::Relu),
        };
        let mut last = 0.5;
        for b in [1.0, 3.0, 10.0, 30.0] {
            pol.net.b2[0] = b;
            let p = policy_prob(&pol, &[0.0; 4]);
            assert!(p > last);
            last = p;
        }
        assert!(last > 0.9999);
    }

    #[test]
    fn policy_gradient_edge_cases() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let mut pol = SoftmaxPolicy::init(8, &mut rng);
        let before = pol.clone();

        // zero rewards: every return is equal, so normalization zeroes them
        let flat: Vec<Transition> = (0..10)
            .map(|_| Transition {
                state: [0.01, 0.0, 0.01, 0.0],
                action: FORCE_MAG,
                reward: 0.0,
            })
            .collect();
        policy_gradient_update(&mut pol, &flat, 0.99, 0.05).unwrap();
        assert_eq!(pol, before);

        // single-step episodes likewise normalize to a zero coefficient
        let single = [Transition {
            state: [0.01, 0.0, 0.01, 0.0],
            action: FORCE_MAG,
            reward: 5.0,
        }];
        policy_gradient_update(&mut pol, &single, 0.99, 0.05).unwrap();
        assert_eq!(pol, before);

        // η = 0 is the identity
        let mixed = vec![
            Transition {
                state: [0.0; 4],
                action: FORCE_MAG,
                reward: 1.0,
            },
            Transition {
                state: [0.0; 4],
                action: -FORCE_MAG,
                reward: -100.0,
            },
        ];
        policy_gradient_update(&mut pol, &mixed, 0.99, 0.0).unwrap();
        assert_eq!(pol, before);

        assert!(policy_gradient_update(&mut pol, &[], 0.99, 0.1).is_err());
    }

    /// The +10 action with the positive normalized return must have its
    /// probability increased (and the fatal −10 action discouraged).
    #[test]
    fn policy_gradient_sign() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let mut pol = SoftmaxPolicy::init(8, &mut rng);
        let s = [0.02, -0.01, 0.03, 0.01];
        let s2 = [1.5, 0.4, 0.1, 0.2];
        let p_before = pol.prob_push(&s);
        let p2_before = pol.prob_push(&s2);
        let episode = vec![
            Transition {
                state: s,
                action: FORCE_MAG,
                reward: 1.0,
            },
            Transition {
                state: s2,
                action: -FORCE_MAG,
                reward: -100.0,
            },
        ];
        policy_gradient_update(&mut pol, &episode, 0.99, 0.05).unwrap();
        assert!(
            pol.prob_push(&s) > p_before,
            "{} -> {}",
            p_before,
            pol.prob_push(&s)
        );
        assert!(
            pol.prob_push(&s2) > p2_before,
            "the losing pull action should lose probability mass"
        );
    }

    #[test]
    fn model_learn_step_fixed_points() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let mut net = ShallowNet::init_uniform(4, 8, 4, Activation::Relu, &mut rng);
        let sched = LearningRateSchedule::constant(0.1).unwrap();
        let s = [0.1, -0.2, 0.05, 0.3];
        // observation equal to the model's own prediction leaves it unchanged
        let f = net.eval(&s).unwrap();
        let before = net.clone();
        model_learn_step(&mut net, &s, &f, 1e-3, &sched, 0.0).unwrap();
        assert_eq!(net, before);

        let zero = LearningRateSchedule::custom_table(vec![(0.0, 0.0)]).unwrap();
        model_learn_step(&mut net, &s, &[1.0, 2.0, 3.0, 4.0], 1e-3, &zero, 0.0).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn model_learning_reduces_prediction_error() {
        let p = PhysicsParams::default();
        let sched = LearningRateSchedule::constant(0.05).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let mut net = ShallowNet::init_uniform(4, 32, 4, Activation::Relu, &mut rng);
        let sample = |rng: &mut ChaCha12Rng| CartPoleState {
            x: rng.random_range(-0.1..0.1),
            x_dot: rng.random_range(-0.5..0.5),
            beta: rng.random_range(-0.1..0.1),
            beta_dot: rng.random_range(-0.5..0.5),
        };
        let sq_err = |net: &ShallowNet, rng: &mut ChaCha12Rng| {
            let mut acc = 0.0;
            for _ in 0..200 {
                let s = sample(rng);
                let truth = cartpole_derivs(&s, FORCE_MAG, &p).to_vec();
                let pred = net.eval(&s.to_vec()).unwrap();
                acc += truth
                    .iter()
                    .zip(pred.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
            }
            acc / 200.0
        };
        let before = sq_err(&net, &mut rng);
        let mut t = 0.0;
        for _ in 0..10_000 {
            let s = sample(&mut rng);
            let truth = cartpole_derivs(&s, FORCE_MAG, &p).to_vec();
            model_learn_step(&mut net, &s.to_vec(), &truth, 1e-3, &sched, t).unwrap();
            t += 1e-3;
        }
        let after = sq_err(&net, &mut rng);
        assert!(
            after * 10.0 <= before,
            "one-step prediction error {before} -> {after}"
        );
    }

    #[test]
    fn episodes_are_deterministic_given_seed() {
        let cfg = LoopConfig::default();
        let mut rng1 = ChaCha12Rng::seed_from_u64(9);
        let mut rng2 = ChaCha12Rng::seed_from_u64(9);
        let mut pol_rng = ChaCha12Rng::seed_from_u64(11);
        let pol = SoftmaxPolicy::init(8, &mut pol_rng);
        let a = run_episode(
            &pol,
            EpisodeMode::Real(&cfg.physics),
            &mut rng1,
            200,
            &mut NoObserver,
        )
        .unwrap();
        let b = run_episode(
            &pol,
            EpisodeMode::Real(&cfg.physics),
            &mut rng2,
            200,
            &mut NoObserver,
        )
        .unwrap();
        assert_eq!(a.reward, b.reward);
        assert_eq!(a.intervals, b.intervals);
    }

    /// Always pushing right from rest drives the cart over the +x boundary:
    /// the episode ends with a finite negative reward.
    #[test]
    fn constant_push_exits_right_boundary() {
        let mut pol = SoftmaxPolicy {
            net: ShallowNet::zeros(4, 2, 1, Activation::Relu),
        };
        pol.net.b2[0] = 1e6; // P(+10) ≈ 1
        let mut rng = ChaCha12Rng::seed_from_u64(20);
        let rec = run_episode(
            &pol,
            EpisodeMode::Real(&PhysicsParams::default()),
            &mut rng,
            2000,
            &mut NoObserver,
        )
        .unwrap();
        assert!(rec.terminated);
        assert!(rec.reward < 0.0);
        assert_eq!(rec.reward, rec.intervals as f64 - 1.0 - 100.0);
    }
}

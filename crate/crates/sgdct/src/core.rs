//! Learning-rate schedules and the online SGDCT parameter updates.
//!
//! One update is applied per observation increment, with the model evaluated
//! at the left endpoint of the interval (Euler-Maruyama consistent):
//!
//! ```text
//! θ' = θ + α_t ∇_θ f(x, θ) P (dx − f(x, θ) dt),   P = (σσᵀ)⁻¹ or I
//! ν' = ν + α_t Σ_ij ∇_ν (σσᵀ)_ij (dqv_ij − (σσᵀ)_ij dt)
//! ```
//!
//! Non-finite parameters abort the run with [`SgdctError::Divergence`] rather
//! than being clamped; a blow-up is a reportable outcome, not a nuisance.

use crate::{Result, SgdctError};
use nalgebra::DMatrix;

/// Learning-rate schedule α_t.
///
/// `CappedInverse` evaluates to `min(alpha0, alpha0 * cap_time / t)`, i.e. a
/// flat phase of length `cap_time` followed by 1/t decay. With `cap_time = 1`
/// this is the classical `min(α, α/t)`; t = 0 maps to `alpha0`.
#[derive(Debug, Clone, PartialEq)]
pub enum LearningRateSchedule {
    CappedInverse { alpha0: f64, cap_time: f64 },
    Constant { alpha0: f64 },
    /// Right-continuous step function given as `(t_k, α_k)` knots sorted by
    /// time; α before the first knot equals the first value. Zero rates are
    /// permitted here (diagnostics use an all-zero table).
    CustomTable { knots: Vec<(f64, f64)> },
}

impl LearningRateSchedule {
    pub fn capped_inverse(alpha0: f64, cap_time: f64) -> Result<Self> {
        if !(alpha0 > 0.0) {
            return Err(SgdctError::InvalidParameter(format!(
                "alpha0 must be positive, got {alpha0}"
            )));
        }
        if !(cap_time >= 0.0) {
            return Err(SgdctError::InvalidParameter(format!(
                "cap_time must be nonnegative, got {cap_time}"
            )));
        }
        Ok(Self::CappedInverse { alpha0, cap_time })
    }

    pub fn constant(alpha0: f64) -> Result<Self> {
        if !(alpha0 > 0.0) {
            return Err(SgdctError::InvalidParameter(format!(
                "alpha0 must be positive, got {alpha0}"
            )));
        }
        Ok(Self::Constant { alpha0 })
    }

    pub fn custom_table(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(SgdctError::InvalidParameter("empty rate table".into()));
        }
        if knots.windows(2).any(|w| w[0].0 > w[1].0) {
            return Err(SgdctError::InvalidParameter(
                "rate table knots must be sorted by time".into(),
            ));
        }
        if knots.iter().any(|&(t, a)| !t.is_finite() || !(a >= 0.0)) {
            return Err(SgdctError::InvalidParameter(
                "rate table entries must be finite with α ≥ 0".into(),
            ));
        }
        Ok(Self::CustomTable { knots })
    }

    /// α_t. Negative `t` is a contract violation.
    pub fn rate(&self, t: f64) -> f64 {
        assert!(t >= 0.0, "learning rate queried at negative time {t}");
        match self {
            Self::CappedInverse { alpha0, cap_time } => {
                if t <= *cap_time {
                    *alpha0
                } else {
                    alpha0 * cap_time / t
                }
            }
            Self::Constant { alpha0 } => *alpha0,
            Self::CustomTable { knots } => {
                let mut current = knots[0].1;
                for &(tk, ak) in knots {
                    if tk <= t {
                        current = ak;
                    } else {
                        break;
                    }
                }
                current
            }
        }
    }
}

/// Evaluate the schedule; free-function form of [`LearningRateSchedule::rate`].
pub fn learning_rate(schedule: &LearningRateSchedule, t: f64) -> f64 {
    schedule.rate(t)
}

/// Numerical diagnostic for the two learning-rate conditions
/// ∫₀^∞ α_t dt = ∞ and ∫₀^∞ α_t² dt < ∞.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleReport {
    pub divergent_integral: bool,
    pub convergent_square_integral: bool,
}

/// Midpoint-rule scan of α and α² over `[0, horizon]`.
///
/// `divergent_integral` is set when ∫α still grows over the last octave of
/// the horizon; `convergent_square_integral` when the last-octave increment
/// of ∫α² and a 1/t-decay tail bound α(h)²·h both fall below 1e-6. This is a
/// diagnostic, not a proof.
pub fn check_schedule_conditions(
    schedule: &LearningRateSchedule,
    horizon: f64,
    grid: f64,
) -> Result<ScheduleReport> {
    if !(horizon > 0.0) || !(grid > 0.0) {
        return Err(SgdctError::InvalidParameter(
            "horizon and grid must be positive".into(),
        ));
    }
    let steps = ((horizon / grid).ceil() as usize).max(2);
    let h = horizon / steps as f64;
    let half = horizon / 2.0;
    let (mut int_a, mut int_a2) = (0.0f64, 0.0f64);
    let (mut tail_a, mut tail_a2) = (0.0f64, 0.0f64);
    for k in 0..steps {
        let tm = (k as f64 + 0.5) * h;
        let a = schedule.rate(tm);
        int_a += a * h;
        int_a2 += a * a * h;
        if tm > half {
            tail_a += a * h;
            tail_a2 += a * a * h;
        }
    }
    let alpha_end = schedule.rate(horizon);
    let divergent_integral = tail_a > 1e-9 * (1.0 + int_a);
    let convergent_square_integral =
        tail_a2 <= 1e-6 * (1.0 + int_a2) && alpha_end * alpha_end * horizon <= 1e-6;
    Ok(ScheduleReport {
        divergent_integral,
        convergent_square_integral,
    })
}

/// Flat real vector of model parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Preconditioner applied to the drift residual in the θ update.
///
/// The update converges with `(σσᵀ)⁻¹` replaced by the identity; both modes
/// are supported and the choice is recorded in the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PreconditionMode {
    InverseSigmaSigmaT,
    Identity,
}

/// Mutable estimation state threaded through the online updates.
///
/// Single-writer by construction: steps consume the state and return the
/// successor, so a state can move between threads but never aliases.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdctState {
    pub theta: ParamVector,
    pub nu: ParamVector,
    pub t: f64,
    pub step_count: u64,
    pub precondition_mode: PreconditionMode,
}

impl SgdctState {
    pub fn new(theta: ParamVector, nu: ParamVector, mode: PreconditionMode) -> Self {
        Self {
            theta,
            nu,
            t: 0.0,
            step_count: 0,
            precondition_mode: mode,
        }
    }

    pub fn drift_only(theta: ParamVector) -> Self {
        Self::new(theta, ParamVector::zeros(0), PreconditionMode::InverseSigmaSigmaT)
    }
}

/// One observation interval: state `x` at time `t`, the increment `dx` over
/// `[t, t+dt)`, and optionally the realized quadratic-variation increment.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationIncrement {
    pub t: f64,
    pub x: Vec<f64>,
    pub dx: Vec<f64>,
    /// m×m row-major realized QV increment; symmetric PSD.
    pub dqv: Option<Vec<f64>>,
    pub dt: f64,
}

impl ObservationIncrement {
    /// Validating constructor: checks dt > 0, dimensions, and symmetry/PSD of
    /// `dqv` (eigenvalues above a −1e-10 · scale tolerance).
    pub fn new(t: f64, x: Vec<f64>, dx: Vec<f64>, dqv: Option<Vec<f64>>, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(SgdctError::InvalidParameter(format!(
                "dt must be positive, got {dt}"
            )));
        }
        let m = x.len();
        if dx.len() != m {
            return Err(SgdctError::DimensionMismatch(format!(
                "x has dim {m}, dx has dim {}",
                dx.len()
            )));
        }
        if let Some(q) = &dqv {
            if q.len() != m * m {
                return Err(SgdctError::DimensionMismatch(format!(
                    "dqv has {} entries, expected {}",
                    q.len(),
                    m * m
                )));
            }
            let scale = q.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1e-300);
            for i in 0..m {
                for j in (i + 1)..m {
                    if (q[i * m + j] - q[j * m + i]).abs() > 1e-10 * scale {
                        return Err(SgdctError::InvalidParameter(
                            "dqv is not symmetric".into(),
                        ));
                    }
                }
            }
            let mat = DMatrix::from_row_slice(m, m, q);
            let eigs = mat.symmetric_eigenvalues();
            if eigs.iter().any(|&l| l < -1e-10 * scale) {
                return Err(SgdctError::InvalidParameter(
                    "dqv is not positive semidefinite".into(),
                ));
            }
        }
        Ok(Self { t, x, dx, dqv, dt })
    }

    /// Build an increment whose dqv is the realized outer product `dx dxᵀ`
    /// (symmetric PSD by construction, so no validation pass is needed).
    pub fn with_realized_qv(t: f64, x: Vec<f64>, dx: Vec<f64>, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(SgdctError::InvalidParameter(format!(
                "dt must be positive, got {dt}"
            )));
        }
        let m = x.len();
        if dx.len() != m {
            return Err(SgdctError::DimensionMismatch(format!(
                "x has dim {m}, dx has dim {}",
                dx.len()
            )));
        }
        let mut dqv = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                dqv[i * m + j] = dx[i] * dx[j];
            }
        }
        Ok(Self {
            t,
            x,
            dx,
            dqv: Some(dqv),
            dt,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.x.len()
    }
}

/// Drift model family contract: supplies `f(x, θ)` and the parameter Jacobian.
///
/// `jac` is row-major `param_dim × state_dim`: `jac[p * state_dim + j] =
/// ∂f_j/∂θ_p`.
pub trait DriftModel {
    fn state_dim(&self) -> usize;
    fn param_dim(&self) -> usize;
    fn eval(&self, x: &[f64], theta: &[f64], f: &mut [f64], jac: &mut [f64]) -> Result<()>;
}

/// Volatility model family contract: supplies `σσᵀ(x, ν)` and its parameter
/// gradient.
///
/// `grad` is row-major `param_dim × (state_dim · state_dim)`:
/// `grad[p * m * m + i * m + j] = ∂(σσᵀ)_ij/∂ν_p`.
pub trait VolatilityModel {
    fn state_dim(&self) -> usize;
    fn param_dim(&self) -> usize;
    fn sigma_sigma_t(&self, x: &[f64], nu: &[f64], out: &mut [f64]) -> Result<()>;
    fn grad_sigma_sigma_t(&self, x: &[f64], nu: &[f64], grad: &mut [f64]) -> Result<()>;
}

fn invert_spd(mat: &[f64], m: usize) -> Result<Vec<f64>> {
    if m == 1 {
        if mat[0] <= 0.0 || !mat[0].is_finite() {
            return Err(SgdctError::PreconditionerFailure(format!(
                "σσᵀ = {} is not positive",
                mat[0]
            )));
        }
        return Ok(vec![1.0 / mat[0]]);
    }
    let a = DMatrix::from_row_slice(m, m, mat);
    let chol = a
        .cholesky()
        .ok_or_else(|| SgdctError::PreconditionerFailure("σσᵀ is not SPD".into()))?;
    let inv = chol.inverse();
    Ok(inv.transpose().as_slice().to_vec()) // symmetric; transpose fixes layout
}

/// One drift update per Eq.-style residual `dx − f dt`, preconditioned by
/// `(σσᵀ)⁻¹` or the identity per the state's mode. Advances `t` by `obs.dt`.
pub fn drift_step<M: DriftModel + ?Sized>(
    state: SgdctState,
    model: &M,
    sigma_sigma_t: &[f64],
    obs: &ObservationIncrement,
    schedule: &LearningRateSchedule,
) -> Result<SgdctState> {
    let m = model.state_dim();
    let p = model.param_dim();
    if obs.state_dim() != m {
        return Err(SgdctError::DimensionMismatch(format!(
            "model state dim {m} vs observation dim {}",
            obs.state_dim()
        )));
    }
    if state.theta.dim() != p {
        return Err(SgdctError::DimensionMismatch(format!(
            "model param dim {p} vs theta dim {}",
            state.theta.dim()
        )));
    }
    let alpha = schedule.rate(state.t);

    let mut f = vec![0.0; m];
    let mut jac = vec![0.0; p * m];
    model.eval(&obs.x, &state.theta, &mut f, &mut jac)?;

    // residual r = dx − f dt, then pr = P r
    let mut r = vec![0.0; m];
    for j in 0..m {
        r[j] = obs.dx[j] - f[j] * obs.dt;
    }
    let pr = match state.precondition_mode {
        PreconditionMode::Identity => r,
        PreconditionMode::InverseSigmaSigmaT => {
            if sigma_sigma_t.len() != m * m {
                return Err(SgdctError::DimensionMismatch(format!(
                    "σσᵀ has {} entries, expected {}",
                    sigma_sigma_t.len(),
                    m * m
                )));
            }
            let inv = invert_spd(sigma_sigma_t, m)?;
            let mut pr = vec![0.0; m];
            for i in 0..m {
                let mut acc = 0.0;
                for j in 0..m {
                    acc += inv[i * m + j] * r[j];
                }
                pr[i] = acc;
            }
            pr
        }
    };

    let mut state = state;
    for q in 0..p {
        let mut acc = 0.0;
        for j in 0..m {
            acc += jac[q * m + j] * pr[j];
        }
        state.theta.0[q] += alpha * acc;
    }
    // set rather than accumulate: k·dt products do not drift like 10⁶ sums
    state.t = obs.t + obs.dt;
    state.step_count += 1;
    if !state.theta.is_finite() {
        return Err(SgdctError::Divergence {
            step: state.step_count,
            t: state.t,
        });
    }
    Ok(state)
}

/// One diffusion-coefficient update from the realized QV increment. Does not
/// advance `t`; pair it with [`drift_step`] on the same increment.
pub fn diffusion_step<V: VolatilityModel + ?Sized>(
    state: SgdctState,
    vol_model: &V,
    obs: &ObservationIncrement,
    schedule: &LearningRateSchedule,
) -> Result<SgdctState> {
    let m = vol_model.state_dim();
    let k = vol_model.param_dim();
    if obs.state_dim() != m {
        return Err(SgdctError::DimensionMismatch(format!(
            "vol model state dim {m} vs observation dim {}",
            obs.state_dim()
        )));
    }
    if state.nu.dim() != k {
        return Err(SgdctError::DimensionMismatch(format!(
            "vol model param dim {k} vs nu dim {}",
            state.nu.dim()
        )));
    }
    let dqv = obs.dqv.as_ref().ok_or_else(|| {
        SgdctError::InvalidParameter("observation carries no dqv increment".into())
    })?;
    let alpha = schedule.rate(state.t);

    let mut sst = vec![0.0; m * m];
    vol_model.sigma_sigma_t(&obs.x, &state.nu, &mut sst)?;
    let mut grad = vec![0.0; k * m * m];
    vol_model.grad_sigma_sigma_t(&obs.x, &state.nu, &mut grad)?;

    let mut resid = vec![0.0; m * m];
    for ij in 0..m * m {
        resid[ij] = dqv[ij] - sst[ij] * obs.dt;
    }
    let mut state = state;
    for q in 0..k {
        let mut acc = 0.0;
        let row = &grad[q * m * m..(q + 1) * m * m];
        for ij in 0..m * m {
            acc += row[ij] * resid[ij];
        }
        state.nu.0[q] += alpha * acc;
    }
    if !state.nu.is_finite() {
        return Err(SgdctError::Divergence {
            step: state.step_count + 1,
            t: state.t,
        });
    }
    Ok(state)
}

/// A sampled point of the online estimation trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub theta: ParamVector,
    pub nu: ParamVector,
}

impl TrajectoryPoint {
    fn of(state: &SgdctState) -> Self {
        Self {
            t: state.t,
            theta: state.theta.clone(),
            nu: state.nu.clone(),
        }
    }
}

/// Fold the online updates over an observation stream.
///
/// Per increment: a diffusion update when `vol_model` is present (the
/// increment must then carry dqv), followed by the drift update, both at the
/// left-endpoint learning rate. The trajectory records the initial state,
/// the state at each crossing of a requested sample time, and the terminal
/// state; `on_sample` fires at the sample-time crossings.
#[allow(clippy::too_many_arguments)]
pub fn run_online<M, V, I, F>(
    stream: I,
    model: &M,
    vol_model: Option<&V>,
    sigma_sigma_t: Option<&[f64]>,
    schedule: &LearningRateSchedule,
    init: SgdctState,
    sample_times: &[f64],
    mut on_sample: F,
) -> Result<Vec<TrajectoryPoint>>
where
    M: DriftModel + ?Sized,
    V: VolatilityModel + ?Sized,
    I: IntoIterator<Item = ObservationIncrement>,
    F: FnMut(&SgdctState),
{
    let m = model.state_dim();
    let identity: Vec<f64> = {
        let mut id = vec![0.0; m * m];
        for i in 0..m {
            id[i * m + i] = 1.0;
        }
        id
    };
    let sst = sigma_sigma_t.unwrap_or(&identity);

    let mut traj = vec![TrajectoryPoint::of(&init)];
    let mut state = init;
    let mut next_sample = 0usize;
    let mut last_t = state.t;
    let mut any = false;

    for obs in stream {
        if obs.t < last_t - 1e-12 {
            return Err(SgdctError::NonMonotoneTime(format!(
                "increment at t = {} after t = {}",
                obs.t, last_t
            )));
        }
        last_t = obs.t + obs.dt;
        if let Some(v) = vol_model {
            state = diffusion_step(state, v, &obs, schedule)?;
        }
        state = drift_step(state, model, sst, &obs, schedule)?;
        any = true;
        while next_sample < sample_times.len()
            && state.t >= sample_times[next_sample] - 1e-9 * sample_times[next_sample].abs().max(1.0)
        {
            on_sample(&state);
            traj.push(TrajectoryPoint::of(&state));
            next_sample += 1;
        }
    }
    if any {
        let dup = traj
            .last()
            .map(|p| (p.t - state.t).abs() < 1e-12)
            .unwrap_or(false);
        if !dup {
            traj.push(TrajectoryPoint::of(&state));
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Ou1dDrift, Ou1dParams};
    use approx::assert_relative_eq;

    fn capped(alpha0: f64) -> LearningRateSchedule {
        LearningRateSchedule::capped_inverse(alpha0, 1.0).unwrap()
    }

    #[test]
    fn capped_inverse_rates() {
        let s = capped(1e-2);
        assert_eq!(s.rate(0.0), 1e-2);
        assert_eq!(s.rate(0.5), 1e-2);
        assert_relative_eq!(s.rate(100.0), 1e-4, max_relative = 1e-15);
    }

    #[test]
    fn constant_rate() {
        let s = LearningRateSchedule::constant(0.1).unwrap();
        assert_eq!(s.rate(7.0), 0.1);
    }

    #[test]
    fn invalid_schedules_rejected() {
        assert!(LearningRateSchedule::capped_inverse(0.0, 1.0).is_err());
        assert!(LearningRateSchedule::constant(-1.0).is_err());
        assert!(LearningRateSchedule::custom_table(vec![]).is_err());
        assert!(LearningRateSchedule::custom_table(vec![(1.0, 0.1), (0.5, 0.1)]).is_err());
    }

    #[test]
    fn schedule_conditions_capped_inverse() {
        let s = capped(1e-2);
        let rep = check_schedule_conditions(&s, 1e6, 10.0).unwrap();
        assert!(rep.divergent_integral);
        assert!(rep.convergent_square_integral);
    }

    #[test]
    fn schedule_conditions_constant() {
        let s = LearningRateSchedule::constant(0.1).unwrap();
        let rep = check_schedule_conditions(&s, 1e6, 10.0).unwrap();
        assert!(rep.divergent_integral);
        assert!(!rep.convergent_square_integral);
    }

    #[test]
    fn schedule_conditions_zero_table() {
        let s = LearningRateSchedule::custom_table(vec![(0.0, 0.0)]).unwrap();
        let rep = check_schedule_conditions(&s, 1e6, 10.0).unwrap();
        assert!(!rep.divergent_integral);
        assert!(rep.convergent_square_integral);
    }

    fn ou_obs(x: f64, dx: f64, dt: f64) -> ObservationIncrement {
        ObservationIncrement::new(0.0, vec![x], vec![dx], None, dt).unwrap()
    }

    /// Hand-computed example: 1-d OU, θ = (c=1, m=2), x = 1, σ = 1,
    /// dx = 0.02, dt = 0.01, α = 0.1 → θ' = (1.001, 2.001).
    #[test]
    fn drift_step_hand_example() {
        let model = Ou1dDrift;
        let state = SgdctState::drift_only(ParamVector::new(vec![1.0, 2.0]));
        let sched = LearningRateSchedule::constant(0.1).unwrap();
        let next = drift_step(state, &model, &[1.0], &ou_obs(1.0, 0.02, 0.01), &sched).unwrap();
        assert_relative_eq!(next.theta[0], 1.001, max_relative = 1e-12);
        assert_relative_eq!(next.theta[1], 2.001, max_relative = 1e-12);
        assert_relative_eq!(next.t, 0.01, max_relative = 1e-12);
        assert_eq!(next.step_count, 1);
    }

    #[test]
    fn drift_step_zero_residual_is_fixed_point() {
        let model = Ou1dDrift;
        let theta = ParamVector::new(vec![1.3, 1.7]);
        let state = SgdctState::drift_only(theta.clone());
        let sched = LearningRateSchedule::constant(0.1).unwrap();
        // dx = f(x, θ) dt exactly
        let f = 1.3 * (1.7 - 0.8);
        let next = drift_step(state, &model, &[1.0], &ou_obs(0.8, f * 0.01, 0.01), &sched).unwrap();
        assert_eq!(next.theta, theta);
    }

    #[test]
    fn drift_step_zero_rate_is_identity_on_theta() {
        let model = Ou1dDrift;
        let theta = ParamVector::new(vec![1.0, 2.0]);
        let state = SgdctState::drift_only(theta.clone());
        let sched = LearningRateSchedule::custom_table(vec![(0.0, 0.0)]).unwrap();
        let next = drift_step(state, &model, &[1.0], &ou_obs(1.0, 0.5, 0.01), &sched).unwrap();
        assert_eq!(next.theta, theta);
    }

    #[test]
    fn drift_step_rejects_singular_preconditioner() {
        let model = Ou1dDrift;
        let state = SgdctState::drift_only(ParamVector::new(vec![1.0, 2.0]));
        let sched = LearningRateSchedule::constant(0.1).unwrap();
        let err = drift_step(state, &model, &[0.0], &ou_obs(1.0, 0.02, 0.01), &sched).unwrap_err();
        assert!(matches!(err, SgdctError::PreconditionerFailure(_)));
    }

    #[test]
    fn drift_step_reports_divergence() {
        let model = Ou1dDrift;
        let state = SgdctState::drift_only(ParamVector::new(vec![1.0, 2.0]));
        let sched = LearningRateSchedule::constant(1e300).unwrap();
        let obs = ou_obs(1.0, 1e300, 0.01);
        let err = drift_step(state, &model, &[1.0], &obs, &sched).unwrap_err();
        assert!(matches!(err, SgdctError::Divergence { step: 1, .. }));
    }

    struct ConstVol;
    impl VolatilityModel for ConstVol {
        fn state_dim(&self) -> usize {
            1
        }
        fn param_dim(&self) -> usize {
            1
        }
        fn sigma_sigma_t(&self, _x: &[f64], nu: &[f64], out: &mut [f64]) -> Result<()> {
            out[0] = nu[0] * nu[0];
            Ok(())
        }
        fn grad_sigma_sigma_t(&self, _x: &[f64], nu: &[f64], grad: &mut [f64]) -> Result<()> {
            grad[0] = 2.0 * nu[0];
            Ok(())
        }
    }

    /// Hand-computed example: σ(x,ν) = ν, ν = 1, dqv = 0.02, dt = 0.01,
    /// α = 0.1 → ν' = 1 + 0.1·2·(0.02 − 0.01) = 1.002.
    #[test]
    fn diffusion_step_hand_example() {
        let state = SgdctState::new(
            ParamVector::zeros(0),
            ParamVector::new(vec![1.0]),
            PreconditionMode::Identity,
        );
        let sched = LearningRateSchedule::constant(0.1).unwrap();
        let obs =
            ObservationIncrement::new(0.0, vec![1.0], vec![0.0], Some(vec![0.02]), 0.01).unwrap();
        let next = diffusion_step(state, &ConstVol, &obs, &sched).unwrap();
        assert_relative_eq!(next.nu[0], 1.002, max_relative = 1e-12);
    }

    #[test]
    fn diffusion_step_zero_residual_and_zero_rate() {
        let sched = LearningRateSchedule::constant(0.1).unwrap();
        let state = SgdctState::new(
            ParamVector::zeros(0),
            ParamVector::new(vec![1.5]),
            PreconditionMode::Identity,
        );
        // dqv = ν² dt exactly
        let obs =
            ObservationIncrement::new(0.0, vec![1.0], vec![0.0], Some(vec![2.25 * 0.01]), 0.01)
                .unwrap();
        let next = diffusion_step(state.clone(), &ConstVol, &obs, &sched).unwrap();
        assert_eq!(next.nu[0], 1.5);

        let zero = LearningRateSchedule::custom_table(vec![(0.0, 0.0)]).unwrap();
        let obs2 =
            ObservationIncrement::new(0.0, vec![1.0], vec![0.0], Some(vec![0.5]), 0.01).unwrap();
        let next2 = diffusion_step(state, &ConstVol, &obs2, &zero).unwrap();
        assert_eq!(next2.nu[0], 1.5);
    }

    #[test]
    fn observation_increment_validation() {
        assert!(ObservationIncrement::new(0.0, vec![1.0], vec![0.1], None, 0.0).is_err());
        assert!(ObservationIncrement::new(0.0, vec![1.0], vec![0.1, 0.2], None, 0.1).is_err());
        // asymmetric dqv
        let bad = ObservationIncrement::new(
            0.0,
            vec![1.0, 2.0],
            vec![0.0, 0.0],
            Some(vec![1.0, 0.5, -0.5, 1.0]),
            0.1,
        );
        assert!(bad.is_err());
        // negative-definite dqv
        let bad2 = ObservationIncrement::new(
            0.0,
            vec![1.0, 2.0],
            vec![0.0, 0.0],
            Some(vec![-1.0, 0.0, 0.0, -1.0]),
            0.1,
        );
        assert!(bad2.is_err());
        // realized outer product is always accepted
        let ok =
            ObservationIncrement::with_realized_qv(0.0, vec![1.0, 2.0], vec![0.1, -0.2], 0.1)
                .unwrap();
        let q = ok.dqv.unwrap();
        assert_relative_eq!(q[1], -0.02, max_relative = 1e-15);
        assert_relative_eq!(q[3], 0.04, max_relative = 1e-15);
    }

    #[test]
    fn run_online_empty_stream_returns_init() {
        let model = Ou1dDrift;
        let init = SgdctState::drift_only(ParamVector::new(vec![1.0, 2.0]));
        let sched = LearningRateSchedule::constant(0.1).unwrap();
        let traj = run_online(
            std::iter::empty(),
            &model,
            None::<&ConstVol>,
            None,
            &sched,
            init.clone(),
            &[],
            |_| {},
        )
        .unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj[0].theta, init.theta);
    }

    #[test]
    fn run_online_single_increment_matches_drift_step() {
        let model = Ou1dDrift;
        let init = SgdctState::drift_only(ParamVector::new(vec![1.0, 2.0]));
        let sched = LearningRateSchedule::constant(0.1).unwrap();
        let obs = ou_obs(1.0, 0.02, 0.01);
        let expected = drift_step(init.clone(), &model, &[1.0], &obs, &sched).unwrap();
        let traj = run_online(
            vec![obs],
            &model,
            None::<&ConstVol>,
            None,
            &sched,
            init,
            &[],
            |_| {},
        )
        .unwrap();
        assert_eq!(traj.len(), 2);
        assert_eq!(traj[1].theta, expected.theta);
    }

    #[test]
    fn run_online_rejects_non_monotone_stream() {
        let model = Ou1dDrift;
        let init = SgdctState::drift_only(ParamVector::new(vec![1.0, 2.0]));
        let sched = LearningRateSchedule::constant(0.1).unwrap();
        let a = ObservationIncrement::new(1.0, vec![1.0], vec![0.0], None, 0.5).unwrap();
        let b = ObservationIncrement::new(0.2, vec![1.0], vec![0.0], None, 0.5).unwrap();
        let err = run_online(
            vec![a, b],
            &model,
            None::<&ConstVol>,
            None,
            &sched,
            init,
            &[],
            |_| {},
        )
        .unwrap_err();
        assert!(matches!(err, SgdctError::NonMonotoneTime(_)));
    }

    /// Zero-residual fixed point of the full fold: exact data keeps (θ, ν)
    /// invariant across a whole stream.
    #[test]
    fn run_online_exact_data_invariance() {
        let model = Ou1dDrift;
        let sched = LearningRateSchedule::constant(0.5).unwrap();
        let theta = vec![1.2, 1.9];
        let nu = vec![0.8];
        let init = SgdctState::new(
            ParamVector::new(theta.clone()),
            ParamVector::new(nu.clone()),
            PreconditionMode::Identity,
        );
        let dt = 0.01;
        let mut x = 1.0f64;
        let mut t = 0.0f64;
        let mut stream = Vec::new();
        for _ in 0..200 {
            let f = theta[0] * (theta[1] - x);
            let dx = f * dt;
            let dqv = nu[0] * nu[0] * dt;
            stream
                .push(ObservationIncrement::new(t, vec![x], vec![dx], Some(vec![dqv]), dt).unwrap());
            x += dx;
            t += dt;
        }
        let traj = run_online(
            stream,
            &model,
            Some(&ConstVol),
            None,
            &sched,
            init,
            &[],
            |_| {},
        )
        .unwrap();
        let last = traj.last().unwrap();
        assert_eq!(last.theta.as_slice(), &theta[..]);
        assert_eq!(last.nu.as_slice(), &nu[..]);
    }

    #[test]
    fn run_online_samples_at_requested_times() {
        let model = Ou1dDrift;
        let init = SgdctState::drift_only(ParamVector::new(vec![1.0, 2.0]));
        let sched = LearningRateSchedule::constant(0.0001).unwrap();
        let mut stream = Vec::new();
        let dt = 0.1;
        for k in 0..50 {
            stream.push(
                ObservationIncrement::new(k as f64 * dt, vec![1.0], vec![0.01], None, dt).unwrap(),
            );
        }
        let mut hits = Vec::new();
        let traj = run_online(
            stream,
            &model,
            None::<&ConstVol>,
            None,
            &sched,
            init,
            &[1.0, 3.0],
            |s| hits.push(s.t),
        )
        .unwrap();
        assert_eq!(hits.len(), 2);
        assert!((hits[0] - 1.0).abs() < 0.1 + 1e-9);
        assert!((hits[1] - 3.0).abs() < 0.1 + 1e-9);
        // init + 2 samples + terminal
        assert_eq!(traj.len(), 4);
    }
}

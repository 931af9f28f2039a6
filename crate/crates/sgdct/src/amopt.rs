//! Continuous-time Q-learning for discounted value functions and the SGDCT
//! American-option trainer, with a Cox-Ross-Rubinstein oracle and a
//! dimension-reduction helper for geometric baskets.
//!
//! The option trainer iterates: draw an initial state, simulate the stock
//! path, descend the squared generator residual
//! `∂_t Q + L_x Q − rQ` along the path until the stopping time
//! `τ = inf{ t : Q(t, X_t) < g(X_t) }`, then match `Q` to the payoff at
//! `τ ∧ T`.

use crate::approx::{Activation, ShallowNet};
use crate::core::LearningRateSchedule;
use crate::sim::{correlated_increments, BrownianSpec};
use crate::{Result, SgdctError};
use rand::Rng;
use rand_distr::StandardNormal;

/// Single-stock dynamics family; all basket components are identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dynamics {
    /// dX = (r − c) dt + σ dW (additive noise).
    Bachelier,
    /// dX = (r − c) X dt + σ X dW.
    BlackScholes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayoffKind {
    ArithmeticBasketCall,
    GeometricBasketCall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptionKind {
    Call,
    Put,
}

/// Basket option on `d` identical stocks with constant pairwise correlation.
#[derive(Debug, Clone, PartialEq)]
pub struct OptionSpec {
    pub d: usize,
    pub dynamics: Dynamics,
    pub r: f64,
    /// Continuous dividend rate.
    pub dividend: f64,
    pub sigma: f64,
    /// Pairwise Brownian correlation ρ_ij for i ≠ j.
    pub rho: f64,
    pub strike: f64,
    pub maturity: f64,
    pub payoff: PayoffKind,
    /// Common initial stock price.
    pub x0: f64,
}

impl OptionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(SgdctError::InvalidParameter("d must be at least 1".into()));
        }
        if !(self.maturity > 0.0) {
            return Err(SgdctError::InvalidParameter("maturity must be positive".into()));
        }
        if !(self.sigma >= 0.0) {
            return Err(SgdctError::InvalidParameter("sigma must be nonnegative".into()));
        }
        if self.d > 1 {
            let lo = -1.0 / (self.d as f64 - 1.0);
            if self.rho < lo - 1e-12 || self.rho > 1.0 + 1e-12 {
                return Err(SgdctError::NotPositiveSemidefinite);
            }
        }
        Ok(())
    }

    pub fn payoff_value(&self, x: &[f64]) -> f64 {
        let d = self.d as f64;
        let level = match self.payoff {
            PayoffKind::ArithmeticBasketCall => x.iter().sum::<f64>() / d,
            PayoffKind::GeometricBasketCall => {
                (x.iter().map(|v| v.max(1e-300).ln()).sum::<f64>() / d).exp()
            }
        };
        (level - self.strike).max(0.0)
    }

    fn mu(&self, xi: f64) -> f64 {
        match self.dynamics {
            Dynamics::Bachelier => self.r - self.dividend,
            Dynamics::BlackScholes => (self.r - self.dividend) * xi,
        }
    }

    fn vol(&self, xi: f64) -> f64 {
        match self.dynamics {
            Dynamics::Bachelier => self.sigma,
            Dynamics::BlackScholes => self.sigma * xi,
        }
    }
}

/// Value surface Q(t, x; θ): scalar tanh net over the (1+d)-dimensional
/// input (t, x), twice differentiable in x by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct QSurface {
    pub net: ShallowNet,
}

impl QSurface {
    pub fn new(net: ShallowNet) -> Result<Self> {
        if net.activation != Activation::Tanh {
            return Err(SgdctError::UnsupportedDerivative(
                "Q surface requires tanh activation".into(),
            ));
        }
        if net.n_out != 1 {
            return Err(SgdctError::DimensionMismatch(
                "Q surface must be scalar valued".into(),
            ));
        }
        Ok(Self { net })
    }

    pub fn state_dim(&self) -> usize {
        self.net.n_in - 1
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        let mut input = Vec::with_capacity(1 + x.len());
        input.push(t);
        input.extend_from_slice(x);
        self.net.eval(&input).expect("dimension checked")[0]
    }
}

/// Exercise rule induced by a trained surface: stop as soon as the
/// continuation value drops below the immediate payoff.
pub struct StoppingRule<'a> {
    pub q: &'a QSurface,
    pub spec: &'a OptionSpec,
}

impl StoppingRule<'_> {
    pub fn should_stop(&self, t: f64, x: &[f64]) -> bool {
        self.q.eval(t, x) < self.spec.payoff_value(x)
    }
}

/// Generator residual `∂_t Q + Σ μ_i ∂_i Q + ½ Σ C_ij ∂²_ij Q − rQ` and its
/// parameter gradient, assembled per hidden unit. The covariance is
/// `C_ij = σ(x_i) σ(x_j) ρ_ij`.
pub fn generator_residual(
    q: &QSurface,
    t: f64,
    x: &[f64],
    spec: &OptionSpec,
) -> Result<(f64, Vec<f64>)> {
    let d = spec.d;
    if x.len() != d || q.state_dim() != d {
        return Err(SgdctError::DimensionMismatch(format!(
            "state dim {} vs spec d {d} / surface dim {}",
            x.len(),
            q.state_dim()
        )));
    }
    let net = &q.net;
    let n = net.n_in; // 1 + d
    let h = net.hidden;
    let p = net.param_count();
    let w1_len = h * n;
    let w2_off = w1_len + h;
    let b2_off = w2_off + h;

    // input u = (t, x); direction β = (1, μ); covariance block C̃ on x-slots
    let mut u = Vec::with_capacity(n);
    u.push(t);
    u.extend_from_slice(x);
    let mut beta = Vec::with_capacity(n);
    beta.push(1.0);
    for &xi in x {
        beta.push(spec.mu(xi));
    }
    let vols: Vec<f64> = x.iter().map(|&xi| spec.vol(xi)).collect();

    let mut residual = -spec.r * net.b2[0];
    let mut grad = vec![0.0; p];
    grad[b2_off] = -spec.r;

    for j in 0..h {
        let row = &net.w1[j * n..(j + 1) * n];
        let mut z = net.b1[j];
        for (wi, ui) in row.iter().zip(u.iter()) {
            z += wi * ui;
        }
        let a = z.tanh();
        let g1 = 1.0 - a * a;
        let g2 = -2.0 * a * g1;
        let g3 = -2.0 * g1 * (1.0 - 3.0 * a * a);
        let w = net.w2[j];

        let s: f64 = row.iter().zip(beta.iter()).map(|(wi, bi)| wi * bi).sum();
        // qf = wᵀ C̃ w and cw = C̃ w over the x block (ρ off-diagonal)
        let mut qf = 0.0;
        let mut cw = vec![0.0; n];
        for i in 0..d {
            let wi = row[1 + i];
            let mut acc = 0.0;
            for k in 0..d {
                let rho = if i == k { 1.0 } else { spec.rho };
                acc += vols[i] * vols[k] * rho * row[1 + k];
            }
            cw[1 + i] = acc;
            qf += wi * acc;
        }

        let unit = g1 * s + 0.5 * g2 * qf - spec.r * a;
        residual += w * unit;
        grad[w2_off + j] = unit;
        let dunit_dz = g2 * s + 0.5 * g3 * qf - spec.r * g1;
        grad[w1_len + j] = w * dunit_dz;
        for l in 0..n {
            grad[j * n + l] = w * (dunit_dz * u[l] + g1 * beta[l] + g2 * cw[l]);
        }
    }
    Ok((residual, grad))
}

/// One step of the continuous-time value-function learner for the 1-d
/// Brownian dynamics `X_t = x + W_t`:
///
/// ```text
/// θ' = θ − α (½ ∇_θ Q_xx − γ ∇_θ Q)(r(x) + ½ Q_xx − γ Q) dt
/// ```
pub fn value_learn_step(
    q: &mut ShallowNet,
    x: f64,
    reward: f64,
    gamma: f64,
    dt: f64,
    alpha: f64,
) -> Result<()> {
    if q.n_in != 1 {
        return Err(SgdctError::DimensionMismatch(
            "value learner expects a scalar-input net".into(),
        ));
    }
    let md = q.mixed_derivs(&[x])?;
    let residual = reward + 0.5 * md.dxx[0] - gamma * md.value;
    let p = md.param_count;
    let scale = -alpha * residual * dt;
    let mut g = vec![0.0; p];
    for k in 0..p {
        g[k] = 0.5 * md.grad_dxx[k] - gamma * md.grad_value[k];
    }
    q.add_scaled(&g, scale);
    if !q.params_finite() {
        return Err(SgdctError::Divergence { step: 0, t: 0.0 });
    }
    Ok(())
}

/// The discrete biased Q-learning comparison arm with the 1/Δ-scaled rate:
///
/// ```text
/// θ' = θ − (α/Δ)(e^{−γΔ} Q_θ(x') − Q_θ(x))(r(x)Δ + e^{−γΔ} Q(x') − Q(x))
/// ```
///
/// Blow-up as Δ → 0 is the expected observable, so no divergence guard.
pub fn biased_q_step(
    q: &mut ShallowNet,
    x: f64,
    x_next: f64,
    reward: f64,
    gamma: f64,
    dt: f64,
    alpha: f64,
) -> Result<()> {
    if q.n_in != 1 {
        return Err(SgdctError::DimensionMismatch(
            "value learner expects a scalar-input net".into(),
        ));
    }
    let disc = (-gamma * dt).exp();
    let q_now = q.eval(&[x])?[0];
    let q_next = q.eval(&[x_next])?[0];
    let g_now = q.param_grad(&[x])?;
    let g_next = q.param_grad(&[x_next])?;
    let residual = reward * dt + disc * q_next - q_now;
    let scale = -(alpha / dt) * residual;
    let mut g = vec![0.0; q.param_count()];
    for k in 0..g.len() {
        g[k] = disc * g_next[k] - g_now[k];
    }
    q.add_scaled(&g, scale);
    Ok(())
}

/// Result of [`american_train`]: the trained surface and its price estimate
/// `Q(0, x0·1)`.
#[derive(Debug, Clone)]
pub struct AmericanTraining {
    pub q: QSurface,
    pub price: f64,
    pub iterations: u64,
}

/// Number of path steps per training iteration (dt = T / steps).
pub const PATH_STEPS: usize = 100;

fn sample_initial<R: Rng + ?Sized>(spec: &OptionSpec, rng: &mut R) -> Vec<f64> {
    // 20% relative spread around x0; lognormal (mean-centered) for
    // Black-Scholes so prices stay positive, normal for Bachelier.
    let rel = 0.2;
    (0..spec.d)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            match spec.dynamics {
                Dynamics::BlackScholes => spec.x0 * (rel * z - 0.5 * rel * rel).exp(),
                Dynamics::Bachelier => spec.x0 * (1.0 + rel * z),
            }
        })
        .collect()
}

fn advance_path<R: Rng + ?Sized>(
    spec: &OptionSpec,
    brownian: &BrownianSpec,
    x: &mut [f64],
    dt: f64,
    rng: &mut R,
) {
    let dw = correlated_increments(brownian, dt, rng);
    match spec.dynamics {
        Dynamics::Bachelier => {
            let drift = spec.r - spec.dividend;
            for (xi, dwi) in x.iter_mut().zip(dw.iter()) {
                *xi += drift * dt + spec.sigma * dwi;
            }
        }
        Dynamics::BlackScholes => {
            // exact lognormal step (Euler on ln X), bias-free for GBM
            let drift = (spec.r - spec.dividend - 0.5 * spec.sigma * spec.sigma) * dt;
            for (xi, dwi) in x.iter_mut().zip(dw.iter()) {
                *xi *= (drift + spec.sigma * dwi).exp();
            }
        }
    }
}

/// Train a Q surface on the option by iterating the free-boundary update:
/// residual descent along each simulated path on `[0, τ∧T]` and a terminal
/// payoff-matching step `θ += α Q_θ (g − Q)` at `τ∧T`. The schedule is
/// evaluated in iteration count.
pub fn american_train<R: Rng + ?Sized>(
    spec: &OptionSpec,
    q0: QSurface,
    n_iters: u64,
    schedule: &LearningRateSchedule,
    rng: &mut R,
) -> Result<AmericanTraining> {
    spec.validate()?;
    if q0.state_dim() != spec.d {
        return Err(SgdctError::DimensionMismatch(format!(
            "surface dim {} vs option d {}",
            q0.state_dim(),
            spec.d
        )));
    }
    let brownian = if spec.d == 1 {
        BrownianSpec::identity(1)
    } else {
        BrownianSpec::equicorrelated(spec.d, spec.rho)?
    };
    let dt = spec.maturity / PATH_STEPS as f64;
    let mut q = q0;
    let mut input = vec![0.0; 1 + spec.d];

    for n in 0..n_iters {
        let alpha = schedule.rate(n as f64);
        let mut x = sample_initial(spec, rng);
        let mut t = 0.0;
        for _ in 0..PATH_STEPS {
            if q.eval(t, &x) < spec.payoff_value(&x) {
                break; // τ reached
            }
            let (residual, grad) = generator_residual(&q, t, &x, spec)?;
            q.net.add_scaled(&grad, -alpha * residual * dt);
            advance_path(spec, &brownian, &mut x, dt, rng);
            t += dt;
        }
        // terminal payoff matching at τ∧T
        input[0] = t;
        input[1..].copy_from_slice(&x);
        let q_val = q.net.eval(&input)?[0];
        let g_val = spec.payoff_value(&x);
        let grad = q.net.param_grad(&input)?;
        q.net.add_scaled(&grad, alpha * (g_val - q_val));
        if !q.net.params_finite() {
            return Err(SgdctError::Divergence {
                step: n + 1,
                t,
            });
        }
    }
    let x0 = vec![spec.x0; spec.d];
    let price = q.eval(0.0, &x0);
    Ok(AmericanTraining {
        iterations: n_iters,
        price,
        q,
    })
}

/// Monte Carlo estimate of the discounted payoff under the trained stopping
/// rule (τ∧T) and under hold-to-maturity, from the fixed initial state
/// `x0·1`. Returns `(american_mean, american_se, european_mean, european_se)`.
pub fn evaluate_stopping<R: Rng + ?Sized>(
    q: &QSurface,
    spec: &OptionSpec,
    n_paths: usize,
    rng: &mut R,
) -> Result<(f64, f64, f64, f64)> {
    spec.validate()?;
    let brownian = if spec.d == 1 {
        BrownianSpec::identity(1)
    } else {
        BrownianSpec::equicorrelated(spec.d, spec.rho)?
    };
    let dt = spec.maturity / PATH_STEPS as f64;
    let rule = StoppingRule { q, spec };
    let mut am = Vec::with_capacity(n_paths);
    let mut eu = Vec::with_capacity(n_paths);
    for _ in 0..n_paths {
        let mut x = vec![spec.x0; spec.d];
        let mut t = 0.0;
        let mut stopped: Option<f64> = None;
        if rule.should_stop(t, &x) {
            stopped = Some((-spec.r * t).exp() * spec.payoff_value(&x));
        }
        for _ in 0..PATH_STEPS {
            advance_path(spec, &brownian, &mut x, dt, rng);
            t += dt;
            if stopped.is_none() && (rule.should_stop(t, &x) || t >= spec.maturity) {
                stopped = Some((-spec.r * t).exp() * spec.payoff_value(&x));
            }
        }
        let terminal = (-spec.r * spec.maturity).exp() * spec.payoff_value(&x);
        am.push(stopped.unwrap_or(terminal));
        eu.push(terminal);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let se = |v: &[f64], m: f64| {
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)
            / v.len() as f64)
            .sqrt()
    };
    let (ma, me) = (mean(&am), mean(&eu));
    Ok((ma, se(&am, ma), me, se(&eu, me)))
}

/// Cox-Ross-Rubinstein binomial price of an American option with continuous
/// dividend yield. σ = 0 collapses to the deterministic forward path.
pub fn binomial_american(
    s0: f64,
    strike: f64,
    r: f64,
    dividend: f64,
    sigma: f64,
    maturity: f64,
    n_steps: usize,
    kind: OptionKind,
) -> f64 {
    assert!(n_steps >= 1, "need at least one step");
    assert!(sigma >= 0.0, "sigma must be nonnegative");
    let dt = maturity / n_steps as f64;
    let payoff = |s: f64| match kind {
        OptionKind::Call => (s - strike).max(0.0),
        OptionKind::Put => (strike - s).max(0.0),
    };
    if sigma == 0.0 {
        // deterministic path: best exercise along the forward curve
        let mut best: f64 = 0.0;
        for k in 0..=n_steps {
            let t = k as f64 * dt;
            let s = s0 * ((r - dividend) * t).exp();
            best = best.max((-r * t).exp() * payoff(s));
        }
        return best;
    }
    let up = (sigma * dt.sqrt()).exp();
    let down = 1.0 / up;
    let growth = ((r - dividend) * dt).exp();
    let p = (growth - down) / (up - down);
    let disc = (-r * dt).exp();
    let mut values: Vec<f64> = (0..=n_steps)
        .map(|j| payoff(s0 * up.powi(j as i32) * down.powi((n_steps - j) as i32)))
        .collect();
    for k in (0..n_steps).rev() {
        for j in 0..=k {
            let cont = disc * (p * values[j + 1] + (1.0 - p) * values[j]);
            let s = s0 * up.powi(j as i32) * down.powi((k - j) as i32);
            values[j] = cont.max(payoff(s));
        }
        values.truncate(k + 1);
    }
    values[0]
}

/// European Black-Scholes price with continuous dividend yield (closed form).
pub fn black_scholes_european(
    s0: f64,
    strike: f64,
    r: f64,
    dividend: f64,
    sigma: f64,
    maturity: f64,
    kind: OptionKind,
) -> f64 {
    if sigma <= 0.0 {
        let fwd = s0 * ((r - dividend) * maturity).exp();
        let disc = (-r * maturity).exp();
        return match kind {
            OptionKind::Call => disc * (fwd - strike).max(0.0),
            OptionKind::Put => disc * (strike - fwd).max(0.0),
        };
    }
    let st = sigma * maturity.sqrt();
    let d1 = ((s0 / strike).ln() + (r - dividend + 0.5 * sigma * sigma) * maturity) / st;
    let d2 = d1 - st;
    let df_r = (-r * maturity).exp();
    let df_c = (-dividend * maturity).exp();
    match kind {
        OptionKind::Call => s0 * df_c * norm_cdf(d1) - strike * df_r * norm_cdf(d2),
        OptionKind::Put => strike * df_r * norm_cdf(-d2) - s0 * df_c * norm_cdf(-d1),
    }
}

/// Abramowitz-Stegun 7.1.26 rational approximation (|ε| < 1.5e-7).
pub fn norm_cdf(x: f64) -> f64 {
    let z = x / std::f64::consts::SQRT_2;
    0.5 * (1.0 + erf(z))
}

fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let y = 1.0
        - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
            + 0.254829592)
            * t
            * (-x * x).exp();
    sign * y
}

/// Reduce a geometric-basket call on identical Black-Scholes stocks to a 1-d
/// option on the geometric mean: effective volatility
/// `σ_g = σ √((1 + (d−1)ρ)/d)` and effective dividend
/// `c_g = c + σ²/2 − σ_g²/2`, leaving the payoff `max(G − K, 0)` intact.
pub fn geometric_reduce(spec: &OptionSpec) -> Result<OptionSpec> {
    spec.validate()?;
    if spec.dynamics != Dynamics::BlackScholes {
        return Err(SgdctError::InvalidParameter(
            "geometric reduction requires Black-Scholes dynamics".into(),
        ));
    }
    if spec.payoff != PayoffKind::GeometricBasketCall {
        return Err(SgdctError::InvalidParameter(
            "geometric reduction requires a geometric basket payoff".into(),
        ));
    }
    let d = spec.d as f64;
    let sigma_g = spec.sigma * ((1.0 + (d - 1.0) * spec.rho) / d).sqrt();
    let dividend_g = spec.dividend + 0.5 * spec.sigma * spec.sigma - 0.5 * sigma_g * sigma_g;
    Ok(OptionSpec {
        d: 1,
        dynamics: Dynamics::BlackScholes,
        r: spec.r,
        dividend: dividend_g,
        sigma: sigma_g,
        rho: 1.0,
        strike: spec.strike,
        maturity: spec.maturity,
        payoff: PayoffKind::GeometricBasketCall,
        x0: spec.x0,
    })
}

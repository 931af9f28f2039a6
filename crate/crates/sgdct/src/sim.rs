//! Path simulation: Euler-Maruyama with correlated Brownian increments, a
//! positivity-preserving (full truncation) CIR scheme, Burgers lattice noise
//! scaling, and conversion of sampled paths into observation streams.

use crate::core::ObservationIncrement;
use crate::models::{BurgersParams, CirParams};
use crate::{Result, SgdctError};
use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// Seed + per-case substream. Identical specs reproduce identical increments
/// bit-exactly; independent cases use distinct `stream_id`s on one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngSpec {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngSpec {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Correlated d-dimensional Brownian description: unit-variance components
/// with correlation matrix ρ.
#[derive(Debug, Clone)]
pub struct BrownianSpec {
    d: usize,
    /// Lower-triangular factor L with LLᵀ = ρ.
    factor: Vec<f64>,
}

impl BrownianSpec {
    /// Validates symmetry, unit diagonal and positive semidefiniteness, and
    /// precomputes a factor. Semidefinite matrices (e.g. ρ ≡ 1) are factored
    /// through an eigendecomposition with negative eigenvalues clamped at
    /// zero within tolerance.
    pub fn new(d: usize, correlation: &[f64]) -> Result<Self> {
        if correlation.len() != d * d {
            return Err(SgdctError::DimensionMismatch(format!(
                "correlation has {} entries, expected {}",
                correlation.len(),
                d * d
            )));
        }
        for i in 0..d {
            if (correlation[i * d + i] - 1.0).abs() > 1e-12 {
                return Err(SgdctError::InvalidParameter(
                    "correlation diagonal must be 1".into(),
                ));
            }
            for j in 0..d {
                if (correlation[i * d + j] - correlation[j * d + i]).abs() > 1e-12 {
                    return Err(SgdctError::InvalidParameter(
                        "correlation must be symmetric".into(),
                    ));
                }
            }
        }
        let mat = DMatrix::from_row_slice(d, d, correlation);
        let factor = match mat.clone().cholesky() {
            Some(ch) => {
                let l = ch.l();
                let mut f = vec![0.0; d * d];
                for i in 0..d {
                    for j in 0..=i {
                        f[i * d + j] = l[(i, j)];
                    }
                }
                f
            }
            None => {
                let eig = mat.symmetric_eigen();
                if eig.eigenvalues.iter().any(|&l| l < -1e-8) {
                    return Err(SgdctError::NotPositiveSemidefinite);
                }
                // L = Q √Λ (not triangular, but LLᵀ = ρ holds)
                let mut f = vec![0.0; d * d];
                for i in 0..d {
                    for j in 0..d {
                        f[i * d + j] = eig.eigenvectors[(i, j)] * eig.eigenvalues[j].max(0.0).sqrt();
                    }
                }
                f
            }
        };
        Ok(Self { d, factor })
    }

    pub fn identity(d: usize) -> Self {
        let mut factor = vec![0.0; d * d];
        for i in 0..d {
            factor[i * d + i] = 1.0;
        }
        Self { d, factor }
    }

    /// All off-diagonal pairs share the same correlation ρ.
    pub fn equicorrelated(d: usize, rho: f64) -> Result<Self> {
        let mut c = vec![rho; d * d];
        for i in 0..d {
            c[i * d + i] = 1.0;
        }
        Self::new(d, &c)
    }

    pub fn dim(&self) -> usize {
        self.d
    }
}

/// Draw ΔW = √dt · L z with z standard normal.
pub fn correlated_increments<R: Rng + ?Sized>(
    spec: &BrownianSpec,
    dt: f64,
    rng: &mut R,
) -> Vec<f64> {
    let d = spec.d;
    let sq = dt.max(0.0).sqrt();
    let z: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let mut dw = vec![0.0; d];
    for i in 0..d {
        let mut acc = 0.0;
        for j in 0..d {
            acc += spec.factor[i * d + j] * z[j];
        }
        dw[i] = sq * acc;
    }
    dw
}

/// One explicit step `x' = x + f(x) dt + σ(x)·dW`, with the diffusion given
/// as a matrix-vector action on the Brownian increment.
pub fn euler_step<F>(x: &[f64], drift: &[f64], diffusion_apply: F, dt: f64, dw: &[f64]) -> Result<Vec<f64>>
where
    F: FnOnce(&[f64]) -> Vec<f64>,
{
    if !(dt > 0.0) {
        return Err(SgdctError::InvalidParameter(format!(
            "dt must be positive, got {dt}"
        )));
    }
    let noise = diffusion_apply(dw);
    if drift.len() != x.len() || noise.len() != x.len() {
        return Err(SgdctError::DimensionMismatch(format!(
            "state {}, drift {}, diffusion {}",
            x.len(),
            drift.len(),
            noise.len()
        )));
    }
    let mut out = vec![0.0; x.len()];
    for i in 0..x.len() {
        out[i] = x[i] + drift[i] * dt + noise[i];
        if !out[i].is_finite() {
            return Err(SgdctError::SimulationDivergence(format!(
                "component {i} became non-finite"
            )));
        }
    }
    Ok(out)
}

/// Full-truncation explicit CIR step: drift and diffusion are evaluated at
/// x⁺ = max(x, 0) and the result is clipped at zero componentwise, so the
/// state never leaves the nonnegative orthant.
pub fn cir_step(x: &[f64], p: &CirParams, dt: f64, dw: &[f64]) -> Result<Vec<f64>> {
    let d = p.dim();
    if x.len() != d || dw.len() != d {
        return Err(SgdctError::DimensionMismatch(format!(
            "state {} / dW {} vs model dim {d}",
            x.len(),
            dw.len()
        )));
    }
    let mut out = vec![0.0; d];
    for i in 0..d {
        let mut drift = 0.0;
        for k in 0..d {
            drift += p.c[i * d + k] * (p.m[k] - x[k].max(0.0));
        }
        let sx = x[i].max(0.0).sqrt();
        let mut noise = 0.0;
        for k in 0..d {
            noise += p.nu[i * d + k] * dw[k];
        }
        let v = x[i] + drift * dt + sx * noise;
        if !v.is_finite() {
            return Err(SgdctError::SimulationDivergence(format!(
                "CIR component {i} became non-finite"
            )));
        }
        out[i] = v.max(0.0);
    }
    Ok(out)
}

/// One explicit step of the Burgers lattice SDE with noise `σ/√Δx · dW_i`
/// per node. Explicit stability (θ dt/Δx² < 1/2) is the caller's duty.
pub fn burgers_step(u: &[f64], p: &BurgersParams, dt: f64, dw: &[f64]) -> Result<Vec<f64>> {
    let n = p.n_interior;
    if u.len() != n || dw.len() != n {
        return Err(SgdctError::DimensionMismatch(format!(
            "field {} / dW {} vs {n} interior nodes",
            u.len(),
            dw.len()
        )));
    }
    let (f, _) = crate::models::burgers_drift(u, p)?;
    let scale = p.sigma_noise / p.dx_grid.sqrt();
    let mut out = vec![0.0; n];
    for i in 0..n {
        out[i] = u[i] + f[i] * dt + scale * dw[i];
        if !out[i].is_finite() {
            return Err(SgdctError::SimulationDivergence(format!(
                "Burgers node {i} became non-finite"
            )));
        }
    }
    Ok(out)
}

/// What an observation stream carries besides state increments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamMode {
    DriftOnly,
    /// Realized quadratic variation `dqv = dx dxᵀ` attached per increment.
    DriftAndQv,
}

/// Time-ordered observation increments feeding the online updates.
pub type ObservationStream = Vec<ObservationIncrement>;

/// Turn a sampled path into increments with `dx = x_{k+1} − x_k` and, in
/// [`StreamMode::DriftAndQv`], the realized outer-product QV increment.
pub fn path_to_stream(path: &[(f64, Vec<f64>)], mode: StreamMode) -> Result<ObservationStream> {
    let mut out = Vec::with_capacity(path.len().saturating_sub(1));
    for w in path.windows(2) {
        let (t0, x0) = (&w[0].0, &w[0].1);
        let (t1, x1) = (&w[1].0, &w[1].1);
        let dt = t1 - t0;
        if dt <= 0.0 {
            return Err(SgdctError::NonMonotoneTime(format!(
                "path times {t0} -> {t1}"
            )));
        }
        if x1.len() != x0.len() {
            return Err(SgdctError::DimensionMismatch(
                "path state dimension changed".into(),
            ));
        }
        let dx: Vec<f64> = x1.iter().zip(x0.iter()).map(|(a, b)| a - b).collect();
        let inc = match mode {
            StreamMode::DriftOnly => {
                ObservationIncrement::new(*t0, x0.clone(), dx, None, dt)?
            }
            StreamMode::DriftAndQv => {
                ObservationIncrement::with_realized_qv(*t0, x0.clone(), dx, dt)?
            }
        };
        out.push(inc);
    }
    Ok(out)
}

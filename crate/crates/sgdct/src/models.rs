//! Concrete drift/volatility families: scalar and multivariate
//! Ornstein-Uhlenbeck, multivariate CIR, and the semidiscrete Burgers drift,
//! plus closed-form diagnostics for the scalar OU objective.

use crate::core::{DriftModel, VolatilityModel};
use crate::{Result, SgdctError};
use rand::Rng;

/// Scalar OU parameters for `dX = c (m − X) dt + dW`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ou1dParams {
    /// Mean-reversion rate (1/time).
    pub c: f64,
    /// Long-run mean (state units).
    pub m: f64,
}

/// `f(x, θ) = c (m − x)` with gradient `(∂f/∂c, ∂f/∂m) = (m − x, c)`.
pub fn ou1d_drift(x: f64, p: &Ou1dParams) -> (f64, [f64; 2]) {
    (p.c * (p.m - x), [p.m - x, p.c])
}

/// Population objective of the scalar OU estimation under the stationary
/// law N(m*, 1/(2c*)) of the data-generating process (unit σ):
///
/// ```text
/// ḡ(θ) = (c*m* − cm)² + (c* − c)² (1/(2c*) + m*²) + 2 (c*m* − cm)(c − c*) m*
/// ```
pub fn ou1d_gbar(theta: &Ou1dParams, theta_star: &Ou1dParams) -> Result<f64> {
    if theta_star.c <= 0.0 {
        return Err(SgdctError::InvalidStationaryMeasure(format!(
            "c* must be positive, got {}",
            theta_star.c
        )));
    }
    let u = theta_star.c * theta_star.m - theta.c * theta.m;
    let v = theta.c - theta_star.c;
    Ok(u * u
        + v * v * (0.5 / theta_star.c + theta_star.m * theta_star.m)
        + 2.0 * u * v * theta_star.m)
}

/// Analytic gradient of [`ou1d_gbar`] in (c, m).
pub fn ou1d_grad_gbar(theta: &Ou1dParams, theta_star: &Ou1dParams) -> Result<[f64; 2]> {
    if theta_star.c <= 0.0 {
        return Err(SgdctError::InvalidStationaryMeasure(format!(
            "c* must be positive, got {}",
            theta_star.c
        )));
    }
    let u = theta_star.c * theta_star.m - theta.c * theta.m;
    let v = theta.c - theta_star.c;
    let spread = 0.5 / theta_star.c + theta_star.m * theta_star.m;
    // ∂u/∂c = −m, ∂u/∂m = −c, ∂v/∂c = 1
    let dc = 2.0 * u * (-theta.m) + 2.0 * v * spread + 2.0 * theta_star.m * (u - theta.m * v);
    let dm = -2.0 * theta.c * (u + theta_star.m * v);
    Ok([dc, dm])
}

/// Scalar OU drift family as a [`DriftModel`] with θ = (c, m).
#[derive(Debug, Clone, Copy, Default)]
pub struct Ou1dDrift;

impl DriftModel for Ou1dDrift {
    fn state_dim(&self) -> usize {
        1
    }
    fn param_dim(&self) -> usize {
        2
    }
    fn eval(&self, x: &[f64], theta: &[f64], f: &mut [f64], jac: &mut [f64]) -> Result<()> {
        let p = Ou1dParams {
            c: theta[0],
            m: theta[1],
        };
        let (fv, g) = ou1d_drift(x[0], &p);
        f[0] = fv;
        jac[0] = g[0];
        jac[1] = g[1];
        Ok(())
    }
}

/// Multivariate OU parameters for `dX = (M − A X) dt + dW`.
#[derive(Debug, Clone, PartialEq)]
pub struct OuMultiParams {
    pub m: Vec<f64>,
    /// d×d row-major.
    pub a: Vec<f64>,
}

impl OuMultiParams {
    pub fn dim(&self) -> usize {
        self.m.len()
    }

    /// Flat parameter packing `[M..., A row-major...]` used by the estimator.
    pub fn to_theta(&self) -> Vec<f64> {
        let mut th = self.m.clone();
        th.extend_from_slice(&self.a);
        th
    }

    pub fn from_theta(theta: &[f64], d: usize) -> Self {
        Self {
            m: theta[..d].to_vec(),
            a: theta[d..d + d * d].to_vec(),
        }
    }

    /// Stable equilibrium x̄ = A⁻¹ M.
    pub fn stationary_mean(&self) -> Result<Vec<f64>> {
        let d = self.dim();
        let a = nalgebra::DMatrix::from_row_slice(d, d, &self.a);
        let m = nalgebra::DVector::from_column_slice(&self.m);
        a.lu()
            .solve(&m)
            .map(|v| v.as_slice().to_vec())
            .ok_or_else(|| SgdctError::InvalidParameter("A is singular".into()))
    }
}

/// `f(x, θ) = M − A x`; `∂f_i/∂M_j = δ_ij`, `∂f_i/∂A_jk = −δ_ij x_k`.
pub fn ou_multi_drift(x: &[f64], p: &OuMultiParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = p.dim();
    if x.len() != d || p.a.len() != d * d {
        return Err(SgdctError::DimensionMismatch(format!(
            "x dim {}, M dim {d}, A entries {}",
            x.len(),
            p.a.len()
        )));
    }
    let mut f = vec![0.0; d];
    for i in 0..d {
        let mut acc = p.m[i];
        for k in 0..d {
            acc -= p.a[i * d + k] * x[k];
        }
        f[i] = acc;
    }
    let np = d + d * d;
    let mut jac = vec![0.0; np * d];
    for j in 0..d {
        jac[j * d + j] = 1.0;
    }
    for i in 0..d {
        for k in 0..d {
            let pidx = d + i * d + k;
            jac[pidx * d + i] = -x[k];
        }
    }
    Ok((f, jac))
}

/// Multivariate OU drift family; θ = `[M..., A row-major...]`.
#[derive(Debug, Clone, Copy)]
pub struct OuMultiDrift {
    pub d: usize,
}

impl DriftModel for OuMultiDrift {
    fn state_dim(&self) -> usize {
        self.d
    }
    fn param_dim(&self) -> usize {
        self.d + self.d * self.d
    }
    fn eval(&self, x: &[f64], theta: &[f64], f: &mut [f64], jac: &mut [f64]) -> Result<()> {
        let d = self.d;
        let p = OuMultiParams::from_theta(theta, d);
        let (fv, j) = ou_multi_drift(x, &p)?;
        f.copy_from_slice(&fv);
        jac.copy_from_slice(&j);
        Ok(())
    }
}

/// Random strictly diagonally dominant system: off-diagonals `A_ij ~ U[1,2]`,
/// `A_ii = Σ_{j≠i} A_ij + U[1,2]`, `M_i ~ U[1,2]`. Gershgorin then puts every
/// eigenvalue of A in the right half plane, so the process is ergodic.
pub fn generate_diag_dominant<R: Rng + ?Sized>(d: usize, rng: &mut R) -> OuMultiParams {
    assert!(d >= 1, "dimension must be at least 1");
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            if i != j {
                a[i * d + j] = rng.random_range(1.0..2.0);
            }
        }
    }
    for i in 0..d {
        let off: f64 = (0..d).filter(|&j| j != i).map(|j| a[i * d + j]).sum();
        a[i * d + i] = off + rng.random_range(1.0..2.0);
    }
    let m = (0..d).map(|_| rng.random_range(1.0..2.0)).collect();
    OuMultiParams { m, a }
}

/// Multivariate CIR parameters for `dX = c (m − X) dt + √X ⊙ ν dW`.
///
/// The `⊙` is row scaling: `(√x ⊙ ν)_ij = √(x_i) ν_ij`, so the diffusion
/// coefficient is `(σσᵀ)_ij = √(x_i x_j) (ννᵀ)_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct CirParams {
    /// d×d row-major; positive definite for the data-generating truth.
    pub c: Vec<f64>,
    pub m: Vec<f64>,
    /// d×d row-major volatility loadings.
    pub nu: Vec<f64>,
}

impl CirParams {
    pub fn dim(&self) -> usize {
        self.m.len()
    }

    /// Drift packing `[c row-major..., m...]`.
    pub fn drift_theta(&self) -> Vec<f64> {
        let mut th = self.c.clone();
        th.extend_from_slice(&self.m);
        th
    }
}

/// Full model evaluation at a state: drift, drift Jacobian, σσᵀ and its
/// ν-gradient.
#[derive(Debug, Clone)]
pub struct CirEval {
    pub f: Vec<f64>,
    /// (d² + d) × d row-major, packing `[c..., m...]`.
    pub grad_f: Vec<f64>,
    /// d×d row-major.
    pub sst: Vec<f64>,
    /// d² × d² row-major over (ν index, matrix entry).
    pub grad_sst: Vec<f64>,
}

pub fn cir_drift_vol(x: &[f64], p: &CirParams) -> Result<CirEval> {
    let d = p.dim();
    if x.len() != d {
        return Err(SgdctError::DimensionMismatch(format!(
            "x dim {} vs model dim {d}",
            x.len()
        )));
    }
    if let Some(bad) = x.iter().find(|&&v| v < 0.0) {
        return Err(SgdctError::Domain(format!(
            "CIR state must be componentwise nonnegative, got {bad}"
        )));
    }
    let drift = CirDrift { d };
    let mut f = vec![0.0; d];
    let mut grad_f = vec![0.0; (d * d + d) * d];
    drift.eval(x, &p.drift_theta(), &mut f, &mut grad_f)?;
    let vol = CirVol { d };
    let mut sst = vec![0.0; d * d];
    vol.sigma_sigma_t(x, &p.nu, &mut sst)?;
    let mut grad_sst = vec![0.0; d * d * d * d];
    vol.grad_sigma_sigma_t(x, &p.nu, &mut grad_sst)?;
    Ok(CirEval {
        f,
        grad_f,
        sst,
        grad_sst,
    })
}

/// CIR drift family; θ = `[c row-major..., m...]`.
#[derive(Debug, Clone, Copy)]
pub struct CirDrift {
    pub d: usize,
}

impl DriftModel for CirDrift {
    fn state_dim(&self) -> usize {
        self.d
    }
    fn param_dim(&self) -> usize {
        self.d * self.d + self.d
    }
    fn eval(&self, x: &[f64], theta: &[f64], f: &mut [f64], jac: &mut [f64]) -> Result<()> {
        let d = self.d;
        let (c, m) = theta.split_at(d * d);
        for i in 0..d {
            let mut acc = 0.0;
            for k in 0..d {
                acc += c[i * d + k] * (m[k] - x[k]);
            }
            f[i] = acc;
        }
        jac.fill(0.0);
        // ∂f_i/∂c_jk = δ_ij (m_k − x_k)
        for j in 0..d {
            for k in 0..d {
                jac[(j * d + k) * d + j] = m[k] - x[k];
            }
        }
        // ∂f_i/∂m_k = c_ik
        for k in 0..d {
            for i in 0..d {
                jac[(d * d + k) * d + i] = c[i * d + k];
            }
        }
        Ok(())
    }
}

/// CIR volatility family; ν is the flat d×d loading matrix.
#[derive(Debug, Clone, Copy)]
pub struct CirVol {
    pub d: usize,
}

impl VolatilityModel for CirVol {
    fn state_dim(&self) -> usize {
        self.d
    }
    fn param_dim(&self) -> usize {
        self.d * self.d
    }
    fn sigma_sigma_t(&self, x: &[f64], nu: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.d;
        if let Some(bad) = x.iter().find(|&&v| v < 0.0) {
            return Err(SgdctError::Domain(format!(
                "CIR state must be componentwise nonnegative, got {bad}"
            )));
        }
        let sx: Vec<f64> = x.iter().map(|v| v.sqrt()).collect();
        for i in 0..d {
            for j in 0..d {
                let mut nnt = 0.0;
                for k in 0..d {
                    nnt += nu[i * d + k] * nu[j * d + k];
                }
                out[i * d + j] = sx[i] * sx[j] * nnt;
            }
        }
        Ok(())
    }
    fn grad_sigma_sigma_t(&self, x: &[f64], nu: &[f64], grad: &mut [f64]) -> Result<()> {
        let d = self.d;
        if let Some(bad) = x.iter().find(|&&v| v < 0.0) {
            return Err(SgdctError::Domain(format!(
                "CIR state must be componentwise nonnegative, got {bad}"
            )));
        }
        let sx: Vec<f64> = x.iter().map(|v| v.sqrt()).collect();
        grad.fill(0.0);
        let mm = d * d;
        // ∂(σσᵀ)_ij/∂ν_kl = √(x_i x_j) (δ_ik ν_jl + δ_jk ν_il)
        for k in 0..d {
            for l in 0..d {
                let row = &mut grad[(k * d + l) * mm..(k * d + l + 1) * mm];
                for j in 0..d {
                    row[k * d + j] += sx[k] * sx[j] * nu[j * d + l];
                }
                for i in 0..d {
                    row[i * d + k] += sx[i] * sx[k] * nu[i * d + l];
                }
            }
        }
        Ok(())
    }
}

/// Semidiscrete Burgers configuration: interior nodes on a unit interval with
/// Dirichlet boundaries and scalar diffusion parameter θ.
#[derive(Debug, Clone, PartialEq)]
pub struct BurgersParams {
    /// Diffusion coefficient (the estimation target).
    pub theta: f64,
    pub dx_grid: f64,
    pub n_interior: usize,
    /// (u_left, u_right) Dirichlet values.
    pub boundary: (f64, f64),
    pub sigma_noise: f64,
}

/// Finite-difference drift
/// `f_i = θ (u_{i+1} − 2u_i + u_{i−1})/Δx² − u_i (u_{i+1} − u_{i−1})/(2Δx)`
/// with boundary values from the configuration; returns `(f, ∂f/∂θ)`.
pub fn burgers_drift(u: &[f64], p: &BurgersParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = p.n_interior;
    if u.len() != n {
        return Err(SgdctError::DimensionMismatch(format!(
            "u has {} nodes, expected {n}",
            u.len()
        )));
    }
    let dx2 = p.dx_grid * p.dx_grid;
    let mut f = vec![0.0; n];
    let mut grad = vec![0.0; n];
    for i in 0..n {
        let left = if i == 0 { p.boundary.0 } else { u[i - 1] };
        let right = if i + 1 == n { p.boundary.1 } else { u[i + 1] };
        let second = (right - 2.0 * u[i] + left) / dx2;
        let advect = u[i] * (right - left) / (2.0 * p.dx_grid);
        f[i] = p.theta * second - advect;
        grad[i] = second;
    }
    Ok((f, grad))
}

/// Burgers drift family as a [`DriftModel`] with the scalar θ.
#[derive(Debug, Clone)]
pub struct BurgersDrift {
    pub params: BurgersParams,
}

impl DriftModel for BurgersDrift {
    fn state_dim(&self) -> usize {
        self.params.n_interior
    }
    fn param_dim(&self) -> usize {
        1
    }
    fn eval(&self, x: &[f64], theta: &[f64], f: &mut [f64], jac: &mut [f64]) -> Result<()> {
        let mut p = self.params.clone();
        p.theta = theta[0];
        let (fv, g) = burgers_drift(x, &p)?;
        f.copy_from_slice(&fv);
        jac.copy_from_slice(&g);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn ou1d_drift_examples() {
        let (f, g) = ou1d_drift(1.0, &Ou1dParams { c: 1.0, m: 2.0 });
        assert_eq!(f, 1.0);
        assert_eq!(g, [1.0, 1.0]);

        let (f, g) = ou1d_drift(1.5, &Ou1dParams { c: 0.7, m: 1.5 });
        assert_eq!(f, 0.0);
        assert_eq!(g, [0.0, 0.7]);

        let (f, g) = ou1d_drift(0.4, &Ou1dParams { c: 0.0, m: 1.1 });
        assert_eq!(f, 0.0);
        assert_relative_eq!(g[0], 0.7, max_relative = 1e-15);
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn gbar_examples() {
        let star = Ou1dParams { c: 1.0, m: 1.0 };
        assert_eq!(ou1d_gbar(&star, &star).unwrap(), 0.0);
        assert_relative_eq!(
            ou1d_gbar(&Ou1dParams { c: 2.0, m: 1.0 }, &star).unwrap(),
            0.5,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            ou1d_gbar(&Ou1dParams { c: 1.0, m: 2.0 }, &star).unwrap(),
            1.0,
            max_relative = 1e-12
        );
        assert!(ou1d_gbar(&star, &Ou1dParams { c: 0.0, m: 1.0 }).is_err());
    }

    /// Monte Carlo oracle: ḡ equals the stationary average of the squared
    /// drift misfit under N(m*, 1/(2c*)).
    #[test]
    fn gbar_matches_stationary_monte_carlo() {
        use rand_distr::{Distribution, Normal};
        let star = Ou1dParams { c: 1.0, m: 1.0 };
        let cases = [
            Ou1dParams { c: 2.0, m: 1.0 },
            Ou1dParams { c: 1.0, m: 2.0 },
            Ou1dParams { c: 1.4, m: 0.6 },
        ];
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let dist = Normal::new(star.m, (0.5 / star.c).sqrt()).unwrap();
        for theta in cases {
            let mut acc = 0.0;
            let n = 4_000_000;
            for _ in 0..n {
                let x = dist.sample(&mut rng);
                let diff = star.c * (star.m - x) - theta.c * (theta.m - x);
                acc += diff * diff;
            }
            let mc = acc / n as f64;
            let exact = ou1d_gbar(&theta, &star).unwrap();
            assert!(
                (mc - exact).abs() < 1e-3,
                "MC {mc} vs exact {exact} for θ = {theta:?}"
            );
        }
    }

    fn fd_grad_gbar(theta: &Ou1dParams, star: &Ou1dParams) -> [f64; 2] {
        let h = 1e-6;
        let gc = (ou1d_gbar(&Ou1dParams { c: theta.c + h, ..*theta }, star).unwrap()
            - ou1d_gbar(&Ou1dParams { c: theta.c - h, ..*theta }, star).unwrap())
            / (2.0 * h);
        let gm = (ou1d_gbar(&Ou1dParams { m: theta.m + h, ..*theta }, star).unwrap()
            - ou1d_gbar(&Ou1dParams { m: theta.m - h, ..*theta }, star).unwrap())
            / (2.0 * h);
        [gc, gm]
    }

    #[test]
    fn grad_gbar_examples_and_finite_differences() {
        let star = Ou1dParams { c: 1.0, m: 1.0 };
        assert_eq!(ou1d_grad_gbar(&star, &star).unwrap(), [0.0, 0.0]);

        let t1 = Ou1dParams { c: 2.0, m: 1.0 };
        let g = ou1d_grad_gbar(&t1, &star).unwrap();
        let fd = fd_grad_gbar(&t1, &star);
        assert_relative_eq!(g[0], fd[0], max_relative = 1e-6);
        assert_relative_eq!(g[1], fd[1], max_relative = 1e-6);

        let t2 = Ou1dParams { c: 1.0, m: 2.0 };
        let g = ou1d_grad_gbar(&t2, &star).unwrap();
        assert_relative_eq!(g[1], 2.0, max_relative = 1e-12);
        let fd = fd_grad_gbar(&t2, &star);
        assert_relative_eq!(g[0], fd[0], max_relative = 1e-6);
    }

    #[test]
    fn gbar_nonnegative_with_unique_zero_on_grid() {
        let star = Ou1dParams { c: 1.3, m: 1.8 };
        for ci in 0..21 {
            for mi in 0..21 {
                let theta = Ou1dParams {
                    c: 0.5 + 0.1 * ci as f64,
                    m: 0.5 + 0.1 * mi as f64,
                };
                let g = ou1d_gbar(&theta, &star).unwrap();
                if (theta.c - star.c).abs() < 1e-12 && (theta.m - star.m).abs() < 1e-12 {
                    assert!(g.abs() < 1e-14);
                } else {
                    assert!(g > 0.0, "ḡ = {g} at {theta:?}");
                }
            }
        }
    }

    #[test]
    fn ou_multi_examples() {
        let p = OuMultiParams {
            m: vec![1.0, 1.0],
            a: vec![1.0, 0.0, 0.0, 1.0],
        };
        let (f, _) = ou_multi_drift(&[1.0, 1.0], &p).unwrap();
        assert_eq!(f, vec![0.0, 0.0]);

        // d = 1 reduction to the scalar model with c = A11, m = M1/A11
        let p1 = OuMultiParams {
            m: vec![2.0],
            a: vec![1.0],
        };
        let (f1, _) = ou_multi_drift(&[0.3], &p1).unwrap();
        let (fs, _) = ou1d_drift(0.3, &Ou1dParams { c: 1.0, m: 2.0 });
        assert_relative_eq!(f1[0], fs, max_relative = 1e-15);

        assert!(ou_multi_drift(&[1.0], &p).is_err());
    }

    #[test]
    fn ou_multi_jacobian_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let d = 3;
        for _ in 0..20 {
            let p = generate_diag_dominant(d, &mut rng);
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..2.0)).collect();
            let (_, jac) = ou_multi_drift(&x, &p).unwrap();
            let theta = p.to_theta();
            let h = 1e-6;
            for q in 0..theta.len() {
                for i in 0..d {
                    let mut tp = theta.clone();
                    tp[q] += h;
                    let (fp, _) =
                        ou_multi_drift(&x, &OuMultiParams::from_theta(&tp, d)).unwrap();
                    let mut tm = theta.clone();
                    tm[q] -= h;
                    let (fm, _) =
                        ou_multi_drift(&x, &OuMultiParams::from_theta(&tm, d)).unwrap();
                    let fd = (fp[i] - fm[i]) / (2.0 * h);
                    assert!(
                        (jac[q * d + i] - fd).abs() <= 1e-6 * (1.0 + fd.abs()),
                        "param {q}, output {i}: analytic {} vs fd {fd}",
                        jac[q * d + i]
                    );
                }
            }
        }
    }

    #[test]
    fn diag_dominant_generation() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let p1 = generate_diag_dominant(1, &mut rng);
        assert!(p1.a[0] >= 1.0 && p1.a[0] <= 2.0);
        assert!(p1.m[0] >= 1.0 && p1.m[0] <= 2.0);

        for d in [2usize, 3, 5] {
            for _ in 0..50 {
                let p = generate_diag_dominant(d, &mut rng);
                for i in 0..d {
                    let off: f64 = (0..d)
                        .filter(|&j| j != i)
                        .map(|j| p.a[i * d + j].abs())
                        .sum();
                    assert!(p.a[i * d + i] > off, "row {i} not strictly dominant");
                }
                let a = nalgebra::DMatrix::from_row_slice(d, d, &p.a);
                for eig in a.complex_eigenvalues().iter() {
                    assert!(eig.re > 0.0, "eigenvalue {eig} not in right half plane");
                }
            }
        }
    }

    #[test]
    fn cir_examples() {
        let p = CirParams {
            c: vec![1.0],
            m: vec![1.0],
            nu: vec![0.3],
        };
        let e = cir_drift_vol(&[1.0], &p).unwrap();
        assert_relative_eq!(e.sst[0], 0.09, max_relative = 1e-12);

        let p2 = CirParams {
            c: vec![1.0],
            m: vec![1.0],
            nu: vec![0.5],
        };
        let e2 = cir_drift_vol(&[4.0], &p2).unwrap();
        assert_relative_eq!(e2.sst[0], 1.0, max_relative = 1e-12);

        let e3 = cir_drift_vol(&[0.0], &p).unwrap();
        assert_eq!(e3.sst[0], 0.0);

        assert!(cir_drift_vol(&[-0.1], &p).is_err());
    }

    #[test]
    fn cir_gradients_match_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let d = 3;
        let drift = CirDrift { d };
        let vol = CirVol { d };
        let h = 1e-6;
        for _ in 0..20 {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..3.0)).collect();
            let theta: Vec<f64> = (0..d * d + d).map(|_| rng.random_range(0.2..2.0)).collect();
            let nu: Vec<f64> = (0..d * d).map(|_| rng.random_range(-0.5..0.5)).collect();

            let mut f = vec![0.0; d];
            let mut jac = vec![0.0; (d * d + d) * d];
            drift.eval(&x, &theta, &mut f, &mut jac).unwrap();
            for q in 0..theta.len() {
                let mut tp = theta.clone();
                tp[q] += h;
                let mut fp = vec![0.0; d];
                let mut scratch = vec![0.0; (d * d + d) * d];
                drift.eval(&x, &tp, &mut fp, &mut scratch).unwrap();
                let mut tm = theta.clone();
                tm[q] -= h;
                let mut fm = vec![0.0; d];
                drift.eval(&x, &tm, &mut fm, &mut scratch).unwrap();
                for i in 0..d {
                    let fd = (fp[i] - fm[i]) / (2.0 * h);
                    assert!(
                        (jac[q * d + i] - fd).abs() <= 1e-6 * (1.0 + fd.abs()),
                        "drift param {q} output {i}"
                    );
                }
            }

            let mut grad = vec![0.0; d * d * d * d];
            vol.grad_sigma_sigma_t(&x, &nu, &mut grad).unwrap();
            for q in 0..d * d {
                let mut np = nu.clone();
                np[q] += h;
                let mut cp = vec![0.0; d * d];
                vol.sigma_sigma_t(&x, &np, &mut cp).unwrap();
                let mut nm = nu.clone();
                nm[q] -= h;
                let mut cm = vec![0.0; d * d];
                vol.sigma_sigma_t(&x, &nm, &mut cm).unwrap();
                for ij in 0..d * d {
                    let fd = (cp[ij] - cm[ij]) / (2.0 * h);
                    assert!(
                        (grad[q * d * d + ij] - fd).abs() <= 1e-6 * (1.0 + fd.abs()),
                        "vol param {q} entry {ij}"
                    );
                }
            }
        }
    }

    fn burgers_fixture(theta: f64) -> BurgersParams {
        BurgersParams {
            theta,
            dx_grid: 0.1,
            n_interior: 3,
            boundary: (0.0, 1.0),
            sigma_noise: 0.0,
        }
    }

    #[test]
    fn burgers_hand_example() {
        // middle node with u = (0, 0.5, 1), Δx = 0.1, θ = 1 → f = −2.5
        let p = BurgersParams {
            theta: 1.0,
            dx_grid: 0.1,
            n_interior: 1,
            boundary: (0.0, 1.0),
            sigma_noise: 0.0,
        };
        let (f, g) = burgers_drift(&[0.5], &p).unwrap();
        assert_relative_eq!(f[0], -2.5, max_relative = 1e-12);
        assert_relative_eq!(g[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn burgers_constant_field_is_stationary() {
        let p = BurgersParams {
            theta: 2.3,
            dx_grid: 0.1,
            n_interior: 5,
            boundary: (0.7, 0.7),
            sigma_noise: 0.0,
        };
        let (f, _) = burgers_drift(&[0.7; 5], &p).unwrap();
        assert!(f.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn burgers_pure_advection_of_linear_field() {
        // θ = 0, u_i = i Δx with boundaries 0, 1: f_i = −u_i (unit slope)
        let n = 9;
        let p = BurgersParams {
            theta: 0.0,
            dx_grid: 0.1,
            n_interior: n,
            boundary: (0.0, 1.0),
            sigma_noise: 0.0,
        };
        let u: Vec<f64> = (1..=n).map(|i| i as f64 * 0.1).collect();
        let (f, _) = burgers_drift(&u, &p).unwrap();
        for i in 0..n {
            assert_relative_eq!(f[i], -u[i], max_relative = 1e-12);
        }
    }

    #[test]
    fn burgers_translation_consistency() {
        let base = burgers_fixture(1.7);
        let u = [0.2, 0.9, 0.4];
        let (f0, g0) = burgers_drift(&u, &base).unwrap();
        let k = 0.35;
        let shifted = BurgersParams {
            boundary: (base.boundary.0 + k, base.boundary.1 + k),
            ..base.clone()
        };
        let us: Vec<f64> = u.iter().map(|v| v + k).collect();
        let (f1, g1) = burgers_drift(&us, &shifted).unwrap();
        // the second difference (and hence ∂f/∂θ) is unchanged; advection
        // changes by k times the unchanged first difference
        for i in 0..3 {
            assert_relative_eq!(g1[i], g0[i], epsilon = 1e-9);
            let left = if i == 0 { base.boundary.0 } else { u[i - 1] };
            let right = if i == 2 { base.boundary.1 } else { u[i + 1] };
            let first = (right - left) / (2.0 * base.dx_grid);
            assert_relative_eq!(f1[i], f0[i] - k * first, max_relative = 1e-9);
        }
    }

    #[test]
    fn burgers_dimension_mismatch() {
        let p = burgers_fixture(1.0);
        assert!(burgers_drift(&[0.1, 0.2], &p).is_err());
    }
}

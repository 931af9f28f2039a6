//! Single-hidden-layer approximators with analytic derivatives.
//!
//! `y = W2 · act(W1 x + b1) + b2` with relu or tanh hidden units. Besides the
//! forward pass, the module supplies exact parameter Jacobians, first/second
//! input derivatives (tanh only), and the parameter gradients of those input
//! derivatives — the pieces a generator residual `∂_t Q + L_x Q − rQ` and its
//! θ-gradient are assembled from.
//!
//! Parameter packing is flat `[w1, b1, w2, b2]` row-major throughout.

use crate::{Result, SgdctError};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(SgdctError::InvalidParameter(format!(
                "unknown activation '{other}'"
            ))),
        }
    }
}

/// `hidden × n_in` first layer, `n_out × hidden` second layer, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ShallowNet {
    pub n_in: usize,
    pub hidden: usize,
    pub n_out: usize,
    pub activation: Activation,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Default hidden width when a caller has no reason to choose otherwise.
pub const DEFAULT_HIDDEN: usize = 50;

impl ShallowNet {
    pub fn zeros(n_in: usize, hidden: usize, n_out: usize, activation: Activation) -> Self {
        Self {
            n_in,
            hidden,
            n_out,
            activation,
            w1: vec![0.0; hidden * n_in],
            b1: vec![0.0; hidden],
            w2: vec![0.0; n_out * hidden],
            b2: vec![0.0; n_out],
        }
    }

    /// Weights uniform in ±1/√fan_in per layer, biases zero.
    pub fn init_uniform<R: Rng + ?Sized>(
        n_in: usize,
        hidden: usize,
        n_out: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let mut net = Self::zeros(n_in, hidden, n_out, activation);
        let s1 = 1.0 / (n_in as f64).sqrt();
        for w in net.w1.iter_mut() {
            *w = rng.random_range(-s1..s1);
        }
        let s2 = 1.0 / (hidden as f64).sqrt();
        for w in net.w2.iter_mut() {
            *w = rng.random_range(-s2..s2);
        }
        net
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn to_params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        p.extend_from_slice(&self.w1);
        p.extend_from_slice(&self.b1);
        p.extend_from_slice(&self.w2);
        p.extend_from_slice(&self.b2);
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(SgdctError::DimensionMismatch(format!(
                "got {} params, net has {}",
                params.len(),
                self.param_count()
            )));
        }
        let (a, rest) = params.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.b1.len());
        let (c, d) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2.copy_from_slice(d);
        Ok(())
    }

    /// θ += scale · g over the flat packing.
    pub fn add_scaled(&mut self, g: &[f64], scale: f64) {
        debug_assert_eq!(g.len(), self.param_count());
        let mut k = 0;
        for w in self.w1.iter_mut() {
            *w += scale * g[k];
            k += 1;
        }
        for b in self.b1.iter_mut() {
            *b += scale * g[k];
            k += 1;
        }
        for w in self.w2.iter_mut() {
            *w += scale * g[k];
            k += 1;
        }
        for b in self.b2.iter_mut() {
            *b += scale * g[k];
            k += 1;
        }
    }

    pub fn params_finite(&self) -> bool {
        self.w1.iter().all(|v| v.is_finite())
            && self.b1.iter().all(|v| v.is_finite())
            && self.w2.iter().all(|v| v.is_finite())
            && self.b2.iter().all(|v| v.is_finite())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_in {
            return Err(SgdctError::DimensionMismatch(format!(
                "input dim {} vs net n_in {}",
                x.len(),
                self.n_in
            )));
        }
        Ok(())
    }

    /// Hidden pre/post activations and activation derivatives.
    /// g1 = act', g2 = act'' and g3 = act''' (tanh; zero/unused for relu).
    fn hidden_pass(&self, x: &[f64]) -> HiddenPass {
        let h = self.hidden;
        let mut a = vec![0.0; h];
        let mut g1 = vec![0.0; h];
        let mut g2 = vec![0.0; h];
        let mut g3 = vec![0.0; h];
        for j in 0..h {
            let mut z = self.b1[j];
            let row = &self.w1[j * self.n_in..(j + 1) * self.n_in];
            for (wi, xi) in row.iter().zip(x.iter()) {
                z += wi * xi;
            }
            match self.activation {
                Activation::Relu => {
                    // sgn(0) = 0 convention: units at exactly zero are dead
                    a[j] = z.max(0.0);
                    g1[j] = if z > 0.0 { 1.0 } else { 0.0 };
                }
                Activation::Tanh => {
                    let t = z.tanh();
                    let s = 1.0 - t * t;
                    a[j] = t;
                    g1[j] = s;
                    g2[j] = -2.0 * t * s;
                    g3[j] = -2.0 * s * (1.0 - 3.0 * t * t);
                }
            }
        }
        HiddenPass { a, g1, g2, g3 }
    }

    /// Forward pass `W2 act(W1 x + b1) + b2`.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let hp = self.hidden_pass(x);
        let mut y = vec![0.0; self.n_out];
        for o in 0..self.n_out {
            let row = &self.w2[o * self.hidden..(o + 1) * self.hidden];
            let mut acc = self.b2[o];
            for (w, aj) in row.iter().zip(hp.a.iter()) {
                acc += w * aj;
            }
            y[o] = acc;
        }
        Ok(y)
    }

    /// Exact Jacobian of every output w.r.t. the flat parameters, row-major
    /// `n_out × param_count`.
    pub fn param_grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let hp = self.hidden_pass(x);
        let (n, h, p) = (self.n_in, self.hidden, self.param_count());
        let w1_len = h * n;
        let w2_off = w1_len + h;
        let b2_off = w2_off + self.n_out * h;
        let mut jac = vec![0.0; self.n_out * p];
        for o in 0..self.n_out {
            let row = &mut jac[o * p..(o + 1) * p];
            for j in 0..h {
                let coeff = self.w2[o * h + j] * hp.g1[j];
                if coeff != 0.0 {
                    for i in 0..n {
                        row[j * n + i] = coeff * x[i];
                    }
                    row[w1_len + j] = coeff;
                }
                row[w2_off + o * h + j] = hp.a[j];
            }
            row[b2_off + o] = 1.0;
        }
        Ok(jac)
    }

    fn require_scalar_tanh(&self) -> Result<()> {
        if self.activation != Activation::Tanh {
            return Err(SgdctError::UnsupportedDerivative(
                "second input derivatives require a tanh activation".into(),
            ));
        }
        if self.n_out != 1 {
            return Err(SgdctError::UnsupportedDerivative(format!(
                "input derivatives are defined for scalar outputs, net has {}",
                self.n_out
            )));
        }
        Ok(())
    }

    /// Value, input gradient and input Hessian of a scalar tanh net.
    pub fn input_derivs(&self, x: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        self.check_input(x)?;
        self.require_scalar_tanh()?;
        let hp = self.hidden_pass(x);
        let (n, h) = (self.n_in, self.hidden);
        let mut value = self.b2[0];
        let mut dx = vec![0.0; n];
        let mut dxx = vec![0.0; n * n];
        for j in 0..h {
            let w = self.w2[j];
            value += w * hp.a[j];
            let c1 = w * hp.g1[j];
            let c2 = w * hp.g2[j];
            let row = &self.w1[j * n..(j + 1) * n];
            for i in 0..n {
                dx[i] += c1 * row[i];
                let ci = c2 * row[i];
                for k in 0..n {
                    dxx[i * n + k] += ci * row[k];
                }
            }
        }
        Ok((value, dx, dxx))
    }

    /// Parameter gradients of the value, the input gradient and the input
    /// Hessian of a scalar tanh net.
    pub fn mixed_derivs(&self, x: &[f64]) -> Result<MixedDerivs> {
        self.check_input(x)?;
        self.require_scalar_tanh()?;
        let hp = self.hidden_pass(x);
        let (n, h, p) = (self.n_in, self.hidden, self.param_count());
        let w1_len = h * n;
        let w2_off = w1_len + h;
        let b2_off = w2_off + h;

        let mut value = self.b2[0];
        let mut dx = vec![0.0; n];
        let mut dxx = vec![0.0; n * n];
        let mut grad_value = vec![0.0; p];
        let mut grad_dx = vec![0.0; n * p];
        let mut grad_dxx = vec![0.0; n * n * p];
        grad_value[b2_off] = 1.0;

        for j in 0..h {
            let w = self.w2[j];
            let (a, g1, g2, g3) = (hp.a[j], hp.g1[j], hp.g2[j], hp.g3[j]);
            let row = &self.w1[j * n..(j + 1) * n];

            value += w * a;
            grad_value[w2_off + j] = a;
            grad_value[w1_len + j] = w * g1;
            for i in 0..n {
                grad_value[j * n + i] = w * g1 * x[i];
            }

            for i in 0..n {
                dx[i] += w * g1 * row[i];
                let gdx = &mut grad_dx[i * p..(i + 1) * p];
                gdx[w2_off + j] += g1 * row[i];
                gdx[w1_len + j] += w * g2 * row[i];
                for k in 0..n {
                    gdx[j * n + k] += w * (g2 * row[i] * x[k] + if i == k { g1 } else { 0.0 });
                }
            }

            for i in 0..n {
                for k in 0..n {
                    let wik = row[i] * row[k];
                    dxx[i * n + k] += w * g2 * wik;
                    let gd = &mut grad_dxx[(i * n + k) * p..(i * n + k + 1) * p];
                    gd[w2_off + j] += g2 * wik;
                    gd[w1_len + j] += w * g3 * wik;
                    for l in 0..n {
                        let mut v = g3 * wik * x[l];
                        if i == l {
                            v += g2 * row[k];
                        }
                        if k == l {
                            v += g2 * row[i];
                        }
                        gd[j * n + l] += w * v;
                    }
                }
            }
        }

        Ok(MixedDerivs {
            n_in: n,
            param_count: p,
            value,
            dx,
            dxx,
            grad_value,
            grad_dx,
            grad_dxx,
        })
    }

    /// Serialize to the flat parameter CSV with a 4-line header.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str("# shallow-net v1\n");
        s.push_str(&format!(
            "# n_in={},hidden={},n_out={}\n",
            self.n_in, self.hidden, self.n_out
        ));
        s.push_str(&format!("# activation={}\n", self.activation.name()));
        s.push_str("# layout=w1,b1,w2,b2\n");
        for v in self.to_params() {
            s.push_str(&format!("{v}\n"));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let magic = lines.next().unwrap_or_default();
        if magic.trim() != "# shallow-net v1" {
            return Err(SgdctError::Serialization("bad magic line".into()));
        }
        let dims = lines.next().unwrap_or_default();
        let dims = dims.trim_start_matches('#').trim();
        let mut n_in = None;
        let mut hidden = None;
        let mut n_out = None;
        for part in dims.split(',') {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| SgdctError::Serialization(format!("bad dims entry '{part}'")))?;
            let v: usize = v
                .parse()
                .map_err(|e| SgdctError::Serialization(format!("bad dim value: {e}")))?;
            match k.trim() {
                "n_in" => n_in = Some(v),
                "hidden" => hidden = Some(v),
                "n_out" => n_out = Some(v),
                other => {
                    return Err(SgdctError::Serialization(format!("unknown dim '{other}'")))
                }
            }
        }
        let (n_in, hidden, n_out) = match (n_in, hidden, n_out) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => return Err(SgdctError::Serialization("incomplete dims line".into())),
        };
        let act_line = lines.next().unwrap_or_default();
        let act = act_line
            .trim_start_matches('#')
            .trim()
            .strip_prefix("activation=")
            .ok_or_else(|| SgdctError::Serialization("missing activation line".into()))?;
        let activation = Activation::parse(act)?;
        let layout = lines.next().unwrap_or_default();
        if layout.trim_start_matches('#').trim() != "layout=w1,b1,w2,b2" {
            return Err(SgdctError::Serialization("unexpected layout line".into()));
        }
        let mut params = Vec::new();
        for line in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            params.push(
                line.parse::<f64>()
                    .map_err(|e| SgdctError::Serialization(format!("bad parameter: {e}")))?,
            );
        }
        let mut net = Self::zeros(n_in, hidden, n_out, activation);
        net.set_params(&params)?;
        Ok(net)
    }

    pub fn save_csv(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_csv())
            .map_err(|e| SgdctError::Serialization(format!("{}: {e}", path.display())))
    }

    pub fn load_csv(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SgdctError::Serialization(format!("{}: {e}", path.display())))?;
        Self::from_csv(&text)
    }
}

struct HiddenPass {
    a: Vec<f64>,
    g1: Vec<f64>,
    g2: Vec<f64>,
    g3: Vec<f64>,
}

/// Value, input derivatives, and their parameter gradients at one input.
///
/// `grad_dx` is `n_in × param_count` row-major; `grad_dxx` is
/// `n_in² × param_count` with the Hessian entry (i,k) at row `i·n_in + k`.
#[derive(Debug, Clone)]
pub struct MixedDerivs {
    pub n_in: usize,
    pub param_count: usize,
    pub value: f64,
    pub dx: Vec<f64>,
    pub dxx: Vec<f64>,
    pub grad_value: Vec<f64>,
    pub grad_dx: Vec<f64>,
    pub grad_dxx: Vec<f64>,
}

pub fn net_eval(net: &ShallowNet, x: &[f64]) -> Result<Vec<f64>> {
    net.eval(x)
}

pub fn net_param_grad(net: &ShallowNet, x: &[f64]) -> Result<Vec<f64>> {
    net.param_grad(x)
}

pub fn net_input_derivs(net: &ShallowNet, x: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    net.input_derivs(x)
}

pub fn net_mixed_derivs(net: &ShallowNet, x: &[f64]) -> Result<MixedDerivs> {
    net.mixed_derivs(x)
}

//! The implicit network model: a state vector defined as the fixed point
//! `x = Phi(Ax + Bu)` with output `y = Cx + Du` (or `y = Cx + b` in the
//! bias-output variant), together with well-posedness certification,
//! accelerated forward inference, input-output Lipschitz bounds, certified
//! robustness radii, and (de)serialization.
//!
//! Mixed induced norms used throughout (weights `eta` on the state space,
//! plain `l_inf` on inputs/outputs):
//!
//! * `|B|` maps `l_inf -> l_inf_[eta]^{-1}`: `max_i (1/eta_i) sum_j |b_ij|`;
//! * `|C|` maps `l_inf_[eta]^{-1} -> l_inf`: `max_k sum_i eta_i |c_ki|`;
//! * `|D|` maps `l_inf -> l_inf`: the plain max row abs-sum.
//!
//! Both closed forms are exercised against random-vector maximization in the
//! tests (the sign-pattern vertices of the respective unit balls attain them).

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{NemonError, Result};
use crate::fixedpoint::{average_iteration, ContractionConstants, IterationConfig, IterationTrace};
use crate::linalg::Matrix;
use crate::measures::{matrix_measure, matrix_norm, perron_frobenius_abs, vector_norm, NormSpec};

/// Scalar activation applied elementwise inside the fixed-point map. Every
/// variant is weakly increasing with slopes in [0, 1] (non-expansive), which
/// is what the contraction theory requires.
#[derive(Debug, Clone, PartialEq)]
pub enum Activation {
    ReLU,
    LeakyReLU { slope: f64 },
    Tanh,
    /// `phi(x) = (x + sqrt(x^2 + delta^2)) / 2`: a smooth ReLU surrogate with
    /// slopes in (0, 1), used by gradient tests to avoid kinks.
    SmoothReLU { delta: f64 },
}

impl Activation {
    pub fn validate(&self) -> Result<()> {
        match self {
            Activation::LeakyReLU { slope } => {
                if !(*slope >= 0.0 && *slope <= 1.0) {
                    return Err(NemonError::InvalidArgument(format!(
                        "LeakyReLU slope must lie in [0, 1], got {slope}"
                    )));
                }
            }
            Activation::SmoothReLU { delta } => {
                if !(*delta > 0.0) || !delta.is_finite() {
                    return Err(NemonError::InvalidArgument(format!(
                        "SmoothReLU delta must be positive, got {delta}"
                    )));
                }
            }
            Activation::ReLU | Activation::Tanh => {}
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::ReLU => z.max(0.0),
            Activation::LeakyReLU { slope } => {
                if z >= 0.0 {
                    z
                } else {
                    slope * z
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::SmoothReLU { delta } => 0.5 * (z + (z * z + delta * delta).sqrt()),
        }
    }

    /// Derivative (ReLU subgradient at the kink taken as 0; LeakyReLU takes
    /// its negative-side slope at 0). Always within [0, 1].
    #[inline]
    pub fn slope_at(&self, z: f64) -> f64 {
        match self {
            Activation::ReLU => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyReLU { slope } => {
                if z > 0.0 {
                    1.0
                } else {
                    *slope
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::SmoothReLU { delta } => {
                0.5 * (1.0 + z / (z * z + delta * delta).sqrt())
            }
        }
    }

    fn tag(&self) -> u8 {
        match self {
            Activation::ReLU => 0,
            Activation::LeakyReLU { .. } => 1,
            Activation::Tanh => 2,
            Activation::SmoothReLU { .. } => 3,
        }
    }

    fn param(&self) -> f64 {
        match self {
            Activation::LeakyReLU { slope } => *slope,
            Activation::SmoothReLU { delta } => *delta,
            _ => 0.0,
        }
    }

    fn from_tag(tag: u8, param: f64) -> Result<Self> {
        let act = match tag {
            0 => Activation::ReLU,
            1 => Activation::LeakyReLU { slope: param },
            2 => Activation::Tanh,
            3 => Activation::SmoothReLU { delta: param },
            other => {
                return Err(NemonError::Parse(format!(
                    "model: unknown activation tag {other}"
                )))
            }
        };
        act.validate()?;
        Ok(act)
    }

    fn name(&self) -> &'static str {
        match self {
            Activation::ReLU => "relu",
            Activation::LeakyReLU { .. } => "leakyrelu",
            Activation::Tanh => "tanh",
            Activation::SmoothReLU { .. } => "smoothrelu",
        }
    }
}

/// Which affine output head the network uses. `AffineDU` is `y = Cx + Du`
/// (the bias vector is identically zero); `BiasOnly` is `y = Cx + b` (the
/// `D` matrix is identically zero). Internally the output is always
/// evaluated as `y = Cx + Du + b`, which covers both.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputMode {
    AffineDU,
    BiasOnly,
}

/// The implicit network `x = Phi(Ax + Bu)`, `y = Cx + Du + b`.
#[derive(Debug, Clone)]
pub struct ImplicitNetwork {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub d: Matrix,
    /// Output bias (all zero in `AffineDU` mode).
    pub bias: Vec<f64>,
    /// Positive weights of the state-space norm.
    pub eta: Vec<f64>,
    pub activation: Activation,
    pub output_mode: OutputMode,
}

/// Result of one forward solve.
#[derive(Debug, Clone)]
pub struct ForwardResult {
    /// Equilibrium state `x*`.
    pub state: Vec<f64>,
    /// Network output `y`.
    pub output: Vec<f64>,
    /// Iteration record of the averaged solve.
    pub trace: IterationTrace,
}

/// Contraction constants of the network map plus the input Lipschitz
/// constant `lip_u = |B|` in the mixed induced norm.
#[derive(Debug, Clone, Copy)]
pub struct NetworkConstants {
    pub contraction: ContractionConstants,
    pub lip_u: f64,
}

/// Well-posedness certificate and the baseline diagnostics it is compared
/// against (`|A|_inf` and the Perron-Frobenius eigenvalue of `|A|`).
#[derive(Debug, Clone, Copy)]
pub struct WellposednessReport {
    pub mu_inf: f64,
    pub inf_norm: f64,
    pub pf_eig: f64,
    pub ok: bool,
}

/// Input-output Lipschitz bounds of a well-posed network.
#[derive(Debug, Clone, Copy)]
pub struct LipschitzBounds {
    /// Bound on `u -> x*` (input `l_inf`, state weighted `l_inf`).
    pub lip_u_to_x: f64,
    /// Bound on `u -> y` (both `l_inf`).
    pub lip_u_to_y: f64,
    /// The convex (AM-GM) upper bound `(|B|^2 + |C|^2) / (2 (1 - mu_+)) + |D|`.
    pub convex_upper: f64,
}

impl ImplicitNetwork {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: Matrix,
        b: Matrix,
        c: Matrix,
        d: Matrix,
        bias: Vec<f64>,
        eta: Vec<f64>,
        activation: Activation,
        output_mode: OutputMode,
    ) -> Result<Self> {
        let n = a.rows();
        if !a.is_square() {
            return Err(NemonError::DimensionMismatch("A must be square".into()));
        }
        if b.rows() != n {
            return Err(NemonError::DimensionMismatch(format!(
                "B has {} rows, expected n = {n}",
                b.rows()
            )));
        }
        if c.cols() != n {
            return Err(NemonError::DimensionMismatch(format!(
                "C has {} columns, expected n = {n}",
                c.cols()
            )));
        }
        let q = c.rows();
        let r = b.cols();
        if d.rows() != q || d.cols() != r {
            return Err(NemonError::DimensionMismatch(format!(
                "D is {}x{}, expected {q}x{r}",
                d.rows(),
                d.cols()
            )));
        }
        if bias.len() != q {
            return Err(NemonError::DimensionMismatch(format!(
                "bias length {} does not match q = {q}",
                bias.len()
            )));
        }
        if eta.len() != n {
            return Err(NemonError::DimensionMismatch(format!(
                "eta length {} does not match n = {n}",
                eta.len()
            )));
        }
        if eta.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
            return Err(NemonError::InvalidArgument(
                "eta must be strictly positive and finite".into(),
            ));
        }
        activation.validate()?;
        for (name, m) in [("A", &a), ("B", &b), ("C", &c), ("D", &d)] {
            if !m.all_finite() {
                return Err(NemonError::InvalidArgument(format!(
                    "{name} contains non-finite entries"
                )));
            }
        }
        if !crate::linalg::all_finite(&bias) {
            return Err(NemonError::InvalidArgument(
                "bias contains non-finite entries".into(),
            ));
        }
        match output_mode {
            OutputMode::AffineDU => {
                if bias.iter().any(|&v| v != 0.0) {
                    return Err(NemonError::InvalidArgument(
                        "AffineDU mode requires a zero bias vector".into(),
                    ));
                }
            }
            OutputMode::BiasOnly => {
                if d.as_slice().iter().any(|&v| v != 0.0) {
                    return Err(NemonError::InvalidArgument(
                        "BiasOnly mode requires a zero D matrix".into(),
                    ));
                }
            }
        }
        Ok(Self {
            a,
            b,
            c,
            d,
            bias,
            eta,
            activation,
            output_mode,
        })
    }

    /// Convenience constructor for `y = Cx + Du` networks.
    pub fn affine_output(
        a: Matrix,
        b: Matrix,
        c: Matrix,
        d: Matrix,
        eta: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        let q = c.rows();
        Self::new(a, b, c, d, vec![0.0; q], eta, activation, OutputMode::AffineDU)
    }

    /// Convenience constructor for `y = Cx + b` networks.
    pub fn bias_output(
        a: Matrix,
        b: Matrix,
        c: Matrix,
        bias: Vec<f64>,
        eta: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        let q = c.rows();
        let r = b.cols();
        Self::new(
            a,
            b,
            c,
            Matrix::zeros(q, r),
            bias,
            eta,
            activation,
            OutputMode::BiasOnly,
        )
    }

    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.rows()
    }

    /// The state-space norm `l_inf` weighted by `[eta]^{-1}`.
    pub fn state_norm(&self) -> NormSpec {
        NormSpec::linf_weighted(self.eta.clone())
    }

    /// Output map `y = Cx + Du + b`.
    pub fn apply_output(&self, state: &[f64], u: &[f64]) -> Vec<f64> {
        let mut y = self.c.matvec(state);
        let du = self.d.matvec(u);
        for k in 0..y.len() {
            y[k] += du[k] + self.bias[k];
        }
        y
    }

    /// The optimal averaged step `alpha* = 1 / (1 - min_i (a_ii)_-)`. The
    /// diagonal clamp is eta-free by design.
    pub fn optimal_alpha(&self) -> f64 {
        let diagl = self.diag_lower();
        1.0 / (1.0 - diagl)
    }

    fn diag_lower(&self) -> f64 {
        let mut m = 0.0_f64;
        for i in 0..self.a.rows() {
            m = m.min(self.a.get(i, i));
        }
        m
    }
}

/// Mixed induced norm of `B` (`l_inf` inputs to weighted-`l_inf` states).
pub fn input_matrix_norm(b: &Matrix, eta: &[f64]) -> f64 {
    let mut best = 0.0_f64;
    for i in 0..b.rows() {
        let s: f64 = b.row(i).iter().map(|v| v.abs()).sum();
        best = best.max(s / eta[i]);
    }
    best
}

/// Mixed induced norm of `C` (weighted-`l_inf` states to `l_inf` outputs).
pub fn output_matrix_norm(c: &Matrix, eta: &[f64]) -> f64 {
    let mut best = 0.0_f64;
    for k in 0..c.rows() {
        let row = c.row(k);
        let mut s = 0.0;
        for i in 0..row.len() {
            s += eta[i] * row[i].abs();
        }
        best = best.max(s);
    }
    best
}

/// Plain `l_inf` induced norm (max row abs-sum) of `D`.
pub fn passthrough_norm(d: &Matrix) -> f64 {
    let mut best = 0.0_f64;
    for i in 0..d.rows() {
        let s: f64 = d.row(i).iter().map(|v| v.abs()).sum();
        best = best.max(s);
    }
    best
}

/// Contraction constants of the network map `F(x) = Phi(Ax + Bu)`:
/// `osl = (mu_inf_[eta]^{-1}(A))_+`, `lip = |A|_inf_[eta]^{-1}`,
/// `diagl = min_i (a_ii)_-`, plus `lip_u = |B|` in the mixed norm.
pub fn network_constants(net: &ImplicitNetwork) -> Result<NetworkConstants> {
    let ns = net.state_norm();
    let mu = matrix_measure(&net.a, &ns)?;
    let lip = matrix_norm(&net.a, &ns)?;
    let osl = mu.max(0.0);
    let diagl = net.diag_lower();
    Ok(NetworkConstants {
        contraction: ContractionConstants::new(osl, lip, diagl),
        lip_u: input_matrix_norm(&net.b, &net.eta),
    })
}

/// Certifies well-posedness (`mu_inf(A) <= gamma`) and reports the two
/// baseline conditions it relaxes: the `l_inf` operator norm and the
/// Perron-Frobenius eigenvalue of `|A|` (power iteration, tolerance 1e-10).
pub fn wellposedness(net: &ImplicitNetwork, gamma: f64) -> Result<WellposednessReport> {
    let ns = net.state_norm();
    let mu_inf = matrix_measure(&net.a, &ns)?;
    let inf_norm = matrix_norm(&net.a, &ns)?;
    let pf_eig = perron_frobenius_abs(&net.a, 1e-10)?;
    Ok(WellposednessReport {
        mu_inf,
        inf_norm,
        pf_eig,
        ok: mu_inf <= gamma,
    })
}

/// Default forward solver configuration for a given network: the optimal
/// step `alpha*`, fixed-point tolerance 1e-6, budget 500.
pub fn default_forward_config(net: &ImplicitNetwork) -> IterationConfig {
    IterationConfig {
        alpha: net.optimal_alpha(),
        tol: 1e-6,
        max_iter: 500,
    }
}

/// Solves the fixed point `x = Phi(Ax + Bu)` by the averaged iteration from
/// `x0 = 0` and returns state, output and the iteration trace.
///
/// `cfg.tol` bounds the *fixed-point residual* `|x - Phi(Ax + Bu)|` of the
/// returned state: internally the step-residual threshold is `alpha * tol`,
/// which certifies the fixed-point residual through the contraction factor.
/// Errors: a non-certified network (`mu_inf(A) >= 1`) or an exhausted
/// iteration budget.
pub fn forward(
    net: &ImplicitNetwork,
    u: &[f64],
    cfg: Option<&IterationConfig>,
) -> Result<ForwardResult> {
    if u.len() != net.input_dim() {
        return Err(NemonError::DimensionMismatch(format!(
            "input length {} does not match r = {}",
            u.len(),
            net.input_dim()
        )));
    }
    let ns = net.state_norm();
    let mu = matrix_measure(&net.a, &ns)?;
    if mu >= 1.0 {
        return Err(NemonError::NotWellPosed {
            mu_inf: mu,
            gamma: 1.0,
        });
    }
    let user_cfg = match cfg {
        Some(c) => c.clone(),
        None => default_forward_config(net),
    };
    user_cfg.validate()?;
    let inner = IterationConfig {
        alpha: user_cfg.alpha,
        tol: user_cfg.alpha * user_cfg.tol,
        max_iter: user_cfg.max_iter,
    };
    let bu = net.b.matvec(u);
    let n = net.state_dim();
    let act = net.activation.clone();
    let trace = average_iteration(
        |x| {
            let mut z = net.a.matvec(x);
            for i in 0..n {
                z[i] = act.apply(z[i] + bu[i]);
            }
            z
        },
        &vec![0.0; n],
        &inner,
        &ns,
    )?;
    if !trace.converged {
        return Err(NemonError::SolveFailed {
            context: "forward solve".into(),
            iterations: trace.iterations,
            residual: trace.last_residual(),
        });
    }
    let output = net.apply_output(&trace.iterate, u);
    Ok(ForwardResult {
        state: trace.iterate.clone(),
        output,
        trace,
    })
}

/// Input-output Lipschitz bounds of a well-posed network, all with respect
/// to `l_inf` on inputs and outputs:
///
/// * `lip_u_to_x = |B| / (1 - mu_+)`,
/// * `lip_u_to_y = |B| |C| / (1 - mu_+) + |D|`,
/// * `convex_upper = (|B|^2 + |C|^2) / (2 (1 - mu_+)) + |D|`,
///
/// where `mu_+ = (mu_inf_[eta]^{-1}(A))_+`. In `BiasOnly` mode the `|D|`
/// term vanishes identically (D is the zero matrix).
pub fn lipschitz_bounds(net: &ImplicitNetwork) -> Result<LipschitzBounds> {
    let ns = net.state_norm();
    let mu = matrix_measure(&net.a, &ns)?;
    if mu >= 1.0 {
        return Err(NemonError::NotWellPosed {
            mu_inf: mu,
            gamma: 1.0,
        });
    }
    let mu_plus = mu.max(0.0);
    let denom = 1.0 - mu_plus;
    let bn = input_matrix_norm(&net.b, &net.eta);
    let cn = output_matrix_norm(&net.c, &net.eta);
    let dn = passthrough_norm(&net.d);
    Ok(LipschitzBounds {
        lip_u_to_x: bn / denom,
        lip_u_to_y: bn * cn / denom + dn,
        convex_upper: 0.5 * (bn * bn + cn * cn) / denom + dn,
    })
}

/// Default solver configuration used when certifying robustness radii:
/// much tighter than inference tolerance so that margins are trustworthy.
pub fn certification_config(net: &ImplicitNetwork) -> IterationConfig {
    IterationConfig {
        alpha: net.optimal_alpha(),
        tol: 1e-10,
        max_iter: 5000,
    }
}

/// Certified `l_inf` robustness radius of input `u` with respect to the
/// given true label: `margin / (2 * lip_u_to_y)` when the clean prediction
/// is correct with positive margin, else 0. A zero Lipschitz bound with a
/// positive margin yields `f64::INFINITY` (the "unbounded" sentinel: the
/// output cannot move at all).
pub fn certified_radius(
    net: &ImplicitNetwork,
    u: &[f64],
    true_label: usize,
    cfg: Option<&IterationConfig>,
) -> Result<f64> {
    let q = net.output_dim();
    if true_label >= q {
        return Err(NemonError::InvalidArgument(format!(
            "label {true_label} out of range for {q} outputs"
        )));
    }
    if q < 2 {
        return Err(NemonError::InvalidArgument(
            "certified_radius needs at least two output classes".into(),
        ));
    }
    let tight = certification_config(net);
    let fwd = forward(net, u, Some(cfg.unwrap_or(&tight)))?;
    let margin = prediction_margin(&fwd.output, true_label);
    radius_from_margin(margin, lipschitz_bounds(net)?.lip_u_to_y)
}

/// Margin of the true class over the best other class.
pub fn prediction_margin(output: &[f64], true_label: usize) -> f64 {
    let mut best_other = f64::NEG_INFINITY;
    for (j, &v) in output.iter().enumerate() {
        if j != true_label {
            best_other = best_other.max(v);
        }
    }
    output[true_label] - best_other
}

/// Radius formula shared by [`certified_radius`] and the robustness curves.
pub fn radius_from_margin(margin: f64, lip_u_to_y: f64) -> Result<f64> {
    if !margin.is_finite() {
        return Err(NemonError::Numerical("non-finite margin".into()));
    }
    if margin <= 0.0 {
        return Ok(0.0);
    }
    if lip_u_to_y <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(margin / (2.0 * lip_u_to_y))
}

/// Argmax class of an output vector (first index on ties).
pub fn predict(output: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in output.iter().enumerate() {
        if v > output[best] {
            best = j;
        }
    }
    let _ = best;
    output
        .iter()
        .enumerate()
        .fold((0usize, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 7] = b"NEMON1\0";

/// Binary layout: magic `"NEMON1\0"`, little-endian `u32` dims `n, r, q`,
/// one activation tag byte, the activation parameter as a little-endian
/// `f64` (0.0 for parameterless activations), then the row-major `f64`
/// arrays `A, B, C, D, eta, b`. The output mode is inferred on load: a
/// nonzero `D` selects `AffineDU`, otherwise a nonzero `b` selects
/// `BiasOnly`; with both zero the two modes are behaviorally identical and
/// `AffineDU` is chosen.
pub fn save_network(net: &ImplicitNetwork, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    let n = net.state_dim() as u32;
    let r = net.input_dim() as u32;
    let q = net.output_dim() as u32;
    for dim in [n, r, q] {
        buf.extend_from_slice(&dim.to_le_bytes());
    }
    buf.push(net.activation.tag());
    buf.extend_from_slice(&net.activation.param().to_le_bytes());
    for m in [&net.a, &net.b, &net.c, &net.d] {
        for &v in m.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    for &v in &net.eta {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for &v in &net.bias {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Loads a network saved by [`save_network`].
pub fn load_network(path: &Path) -> Result<ImplicitNetwork> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, len: usize| -> Result<&[u8]> {
        if *pos + len > bytes.len() {
            return Err(NemonError::Parse(format!(
                "model: truncated file (needed {} bytes at offset {pos:?})",
                len
            )));
        }
        let s = &bytes[*pos..*pos + len];
        *pos += len;
        Ok(s)
    };
    let magic = take(&mut pos, MAGIC.len())?;
    if magic != MAGIC {
        return Err(NemonError::Parse("model: bad magic string".into()));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        let raw = take(&mut pos, 4)?;
        *d = u32::from_le_bytes([raw[0], raw[1], raw[2], raw[3]]) as usize;
    }
    let (n, r, q) = (dims[0], dims[1], dims[2]);
    if n == 0 || r == 0 || q == 0 {
        return Err(NemonError::Parse("model: zero dimension".into()));
    }
    let tag = take(&mut pos, 1)?[0];
    let praw = take(&mut pos, 8)?;
    let param = f64::from_le_bytes(praw.try_into().expect("8 bytes"));
    let activation = Activation::from_tag(tag, param)?;
    let mut read_f64s = |pos: &mut usize, count: usize| -> Result<Vec<f64>> {
        let raw = take(pos, count * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    };
    let a = Matrix::new(n, n, read_f64s(&mut pos, n * n)?)?;
    let b = Matrix::new(n, r, read_f64s(&mut pos, n * r)?)?;
    let c = Matrix::new(q, n, read_f64s(&mut pos, q * n)?)?;
    let d = Matrix::new(q, r, read_f64s(&mut pos, q * r)?)?;
    let eta = read_f64s(&mut pos, n)?;
    let bias = read_f64s(&mut pos, q)?;
    if pos != bytes.len() {
        return Err(NemonError::Parse(format!(
            "model: {} trailing bytes",
            bytes.len() - pos
        )));
    }
    let mode = if d.as_slice().iter().any(|&v| v != 0.0) {
        OutputMode::AffineDU
    } else if bias.iter().any(|&v| v != 0.0) {
        OutputMode::BiasOnly
    } else {
        OutputMode::AffineDU
    };
    ImplicitNetwork::new(a, b, c, d, bias, eta, activation, mode)
}

/// Human-readable export equivalent to the binary container. Floats are
/// written in shortest round-trip form, so `parse_network_text` recovers
/// the exact same network.
pub fn export_network_text(net: &ImplicitNetwork) -> String {
    let mut s = String::new();
    s.push_str("nemon-model v1\n");
    s.push_str(&format!(
        "dims n={} r={} q={}\n",
        net.state_dim(),
        net.input_dim(),
        net.output_dim()
    ));
    s.push_str(&format!(
        "activation {} {}\n",
        net.activation.name(),
        net.activation.param()
    ));
    s.push_str(&format!(
        "output {}\n",
        match net.output_mode {
            OutputMode::AffineDU => "affine",
            OutputMode::BiasOnly => "bias",
        }
    ));
    let write_matrix = |s: &mut String, name: &str, m: &Matrix| {
        s.push_str(&format!("matrix {name} {}x{}\n", m.rows(), m.cols()));
        for i in 0..m.rows() {
            let row: Vec<String> = m.row(i).iter().map(|v| format!("{v}")).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
    };
    write_matrix(&mut s, "A", &net.a);
    write_matrix(&mut s, "B", &net.b);
    write_matrix(&mut s, "C", &net.c);
    write_matrix(&mut s, "D", &net.d);
    let eta: Vec<String> = net.eta.iter().map(|v| format!("{v}")).collect();
    s.push_str(&format!("vector eta {}\n{}\n", net.eta.len(), eta.join(" ")));
    let bias: Vec<String> = net.bias.iter().map(|v| format!("{v}")).collect();
    s.push_str(&format!("vector bias {}\n{}\n", net.bias.len(), bias.join(" ")));
    s
}

/// Parses the text produced by [`export_network_text`].
pub fn parse_network_text(text: &str) -> Result<ImplicitNetwork> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| NemonError::Parse("model text: empty input".into()))?;
    if header.trim() != "nemon-model v1" {
        return Err(NemonError::Parse("model text: bad header".into()));
    }
    let dims_line = lines
        .next()
        .ok_or_else(|| NemonError::Parse("model text: missing dims".into()))?;
    let mut n = 0usize;
    let mut r = 0usize;
    let mut q = 0usize;
    for tok in dims_line.trim().trim_start_matches("dims").split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| NemonError::Parse(format!("model text: bad dim token {tok}")))?;
        let val: usize = v
            .parse()
            .map_err(|_| NemonError::Parse(format!("model text: bad dim value {v}")))?;
        match k {
            "n" => n = val,
            "r" => r = val,
            "q" => q = val,
            _ => return Err(NemonError::Parse(format!("model text: unknown dim {k}"))),
        }
    }
    let act_line = lines
        .next()
        .ok_or_else(|| NemonError::Parse("model text: missing activation".into()))?;
    let parts: Vec<&str> = act_line.split_whitespace().collect();
    if parts.len() != 3 || parts[0] != "activation" {
        return Err(NemonError::Parse("model text: bad activation line".into()));
    }
    let param: f64 = parts[2]
        .parse()
        .map_err(|_| NemonError::Parse("model text: bad activation parameter".into()))?;
    let activation = match parts[1] {
        "relu" => Activation::ReLU,
        "leakyrelu" => Activation::LeakyReLU { slope: param },
        "tanh" => Activation::Tanh,
        "smoothrelu" => Activation::SmoothReLU { delta: param },
        other => {
            return Err(NemonError::Parse(format!(
                "model text: unknown activation {other}"
            )))
        }
    };
    let mode_line = lines
        .next()
        .ok_or_else(|| NemonError::Parse("model text: missing output mode".into()))?;
    let output_mode = match mode_line.trim() {
        "output affine" => OutputMode::AffineDU,
        "output bias" => OutputMode::BiasOnly,
        other => {
            return Err(NemonError::Parse(format!(
                "model text: bad output mode line {other:?}"
            )))
        }
    };
    let mut read_matrix = |name: &str, rows: usize, cols: usize| -> Result<Matrix> {
        let head = lines
            .next()
            .ok_or_else(|| NemonError::Parse(format!("model text: missing matrix {name}")))?;
        let expect = format!("matrix {name} {rows}x{cols}");
        if head.trim() != expect {
            return Err(NemonError::Parse(format!(
                "model text: expected {expect:?}, got {head:?}"
            )));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let line = lines
                .next()
                .ok_or_else(|| NemonError::Parse(format!("model text: {name} row missing")))?;
            for tok in line.split_whitespace() {
                let v: f64 = tok.parse().map_err(|_| {
                    NemonError::Parse(format!("model text: bad float {tok} in {name}"))
                })?;
                data.push(v);
            }
        }
        Matrix::new(rows, cols, data)
    };
    let a = read_matrix("A", n, n)?;
    let b = read_matrix("B", n, r)?;
    let c = read_matrix("C", q, n)?;
    let d = read_matrix("D", q, r)?;
    let mut read_vector = |name: &str, len: usize| -> Result<Vec<f64>> {
        let head = lines
            .next()
            .ok_or_else(|| NemonError::Parse(format!("model text: missing vector {name}")))?;
        if head.trim() != format!("vector {name} {len}") {
            return Err(NemonError::Parse(format!(
                "model text: bad vector header {head:?}"
            )));
        }
        let line = lines
            .next()
            .ok_or_else(|| NemonError::Parse(format!("model text: vector {name} missing")))?;
        let vals: Result<Vec<f64>> = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| NemonError::Parse(format!("model text: bad float {tok}")))
            })
            .collect();
        let vals = vals?;
        if vals.len() != len {
            return Err(NemonError::Parse(format!(
                "model text: vector {name} has {} entries, expected {len}",
                vals.len()
            )));
        }
        Ok(vals)
    };
    let eta = read_vector("eta", n)?;
    let bias = read_vector("bias", q)?;
    ImplicitNetwork::new(a, b, c, d, bias, eta, activation, output_mode)
}

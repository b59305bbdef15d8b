//! Online safety filter: at each control step, linearize the predicted
//! boundary output around a rate-free continuation of the applied control
//! history, assemble the affine barrier constraint a^T Udot + b <= 0, solve
//! the one-constraint QP in closed form, and apply the projected rate only
//! when it stays within the mismatch gate beta.

use crate::bcbf::BarrierModel;
use crate::error::{Error, Result};
use crate::linalg::{dot, nrm2};
use crate::neural_operator::{FnoModel, FnoWorkspace};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrefixMode {
    /// Growing prefix {u_hat_0..u_hat_{i-1}, u_{i-1}} of length i+1.
    Online,
    /// Fixed-length input: the same prefix zero-padded to m, queried at row i.
    /// Pairs with an operator trained at a single horizon.
    ZeroPadded { m: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig<S> {
    /// Class-K gain; falls back to the barrier's trained alpha when None.
    pub alpha: Option<S>,
    /// Finite-time gain; falls back to the barrier's trained C when None.
    pub c_gain: Option<S>,
    /// Mismatch gate: projected rates farther than beta from nominal are
    /// rejected in favor of the nominal control.
    pub beta: S,
    /// Steps of verbatim pass-through before filtering starts; must be at
    /// least the operator's shortest admitted length.
    pub warmup: usize,
    /// Clamp the cached phi0 to <= 0 so the finite-time term can never relax
    /// the constraint. Off by default (literal form).
    pub clip_phi0: bool,
    pub mode: PrefixMode,
}

impl<S: Real> Default for FilterConfig<S> {
    fn default() -> Self {
        FilterConfig {
            alpha: None,
            c_gain: None,
            beta: S::of(50.0),
            warmup: 40,
            clip_phi0: false,
            mode: PrefixMode::Online,
        }
    }
}

impl<S: Real> FilterConfig<S> {
    pub fn validate(&self, fno_cfg: &crate::neural_operator::FnoConfig) -> Result<()> {
        if self.beta <= S::zero() {
            return Err(Error::Config("filter beta must be > 0".into()));
        }
        match self.mode {
            // Online prefixes have length i+1, so the first active step must
            // already be admitted by the operator.
            PrefixMode::Online => {
                if self.warmup < fno_cfg.m_min {
                    return Err(Error::Config(format!(
                        "warmup {} is shorter than the operator's minimum length {}",
                        self.warmup, fno_cfg.m_min
                    )));
                }
            }
            // Zero-padded queries always run at length m; any warmup works.
            PrefixMode::ZeroPadded { m } => fno_cfg.admit(m)?,
        }
        Ok(())
    }
}

/// Per-rollout mutable state.
#[derive(Debug, Clone)]
pub struct FilterState<S> {
    /// Applied controls u_hat_0..u_hat_{i-1}, flattened d_u per step.
    pub history: Vec<S>,
    pub prev_control: Vec<S>,
    pub prev_output: Vec<S>,
    /// phi(0, Y_0), cached at the first step.
    pub phi0: S,
    pub i: usize,
    pub dt: S,
    d_u: usize,
    prefix_buf: Vec<S>,
}

impl<S: Real> FilterState<S> {
    pub fn new(dt: S, d_u: usize, d_y: usize) -> Result<Self> {
        if dt <= S::zero() {
            return Err(Error::Config("filter dt must be > 0".into()));
        }
        Ok(FilterState {
            history: Vec::new(),
            prev_control: vec![S::zero(); d_u],
            prev_output: vec![S::zero(); d_y],
            phi0: S::zero(),
            i: 0,
            dt,
            d_u,
            prefix_buf: Vec::new(),
        })
    }
}

/// (u_i - u_{i-1}) / dt.
pub fn nominal_rate<S: Real>(u_i: &[S], u_prev: &[S], dt: S) -> Vec<S> {
    u_i.iter()
        .zip(u_prev)
        .map(|(a, b)| (*a - *b) / dt)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum QpSolution<S> {
    /// Nominal rate already satisfies the constraint; nothing to change.
    AlreadyFeasible,
    /// Minimum-norm projection of the nominal rate onto the half-space.
    Projected(Vec<S>),
    /// a ~ 0 with b > 0: no rate can satisfy the constraint.
    Infeasible,
}

const EPS_A: f64 = 1e-10;

/// Exact solution of min ||Udot - Udot_nom||^2 s.t. a^T Udot + b <= 0.
pub fn qp_project<S: Real>(udot_nom: &[S], a: &[S], b: S) -> QpSolution<S> {
    let residual = dot(a, udot_nom) + b;
    if residual <= S::zero() {
        return QpSolution::AlreadyFeasible;
    }
    let norm_sq = dot(a, a);
    if norm_sq.sqrt() <= S::of(EPS_A) {
        return QpSolution::Infeasible;
    }
    let scale = residual / norm_sq;
    QpSolution::Projected(
        udot_nom
            .iter()
            .zip(a)
            .map(|(u, ai)| *u - scale * *ai)
            .collect(),
    )
}

/// Mismatch gate: accept the safe rate iff ||Udot_safe - Udot_nom|| <= beta
/// (boundary inclusive).
pub fn beta_gate<S: Real>(udot_safe: &[S], udot_nom: &[S], beta: S) -> bool {
    let mut sq = S::zero();
    for (s, n) in udot_safe.iter().zip(udot_nom) {
        let d = *s - *n;
        sq += d * d;
    }
    sq.sqrt() <= beta
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateDecision {
    /// Pass-through before the prefix reaches the admitted range.
    Warmup,
    /// Prefix length not admitted by the operator (overlong rollout).
    OutOfRange,
    /// Nominal rate already satisfied the constraint.
    NominalFeasible,
    /// Projected rate applied.
    SafeApplied,
    /// Projection exceeded beta; nominal kept.
    NominalByGate,
    /// Constraint infeasible; nominal kept.
    NominalInfeasible,
}

impl GateDecision {
    pub fn as_str(&self) -> &'static str {
        match self {
            GateDecision::Warmup => "warmup",
            GateDecision::OutOfRange => "out_of_range",
            GateDecision::NominalFeasible => "nominal_feasible",
            GateDecision::SafeApplied => "safe",
            GateDecision::NominalByGate => "nominal_gate",
            GateDecision::NominalInfeasible => "nominal_infeasible",
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepDiagnostics<S> {
    pub step: usize,
    pub t: S,
    pub phi: S,
    pub a: Vec<S>,
    pub b: S,
    pub gate: GateDecision,
    /// ||Udot_safe - Udot_nom|| when a projection was computed, else 0.
    pub diff_norm: S,
    pub infeasible: bool,
}

/// The affine constraint at the current step: a = G^T dphi_dy via one
/// vector-Jacobian product over the operator, b collects drift, time and
/// class-K terms. Returns (a, b, phi). The workspace tape holds the forward
/// prediction afterwards.
#[allow(clippy::too_many_arguments)]
pub fn assemble_constraint<S: Real>(
    fno: &FnoModel<S>,
    bcbf: &BarrierModel<S>,
    state: &mut FilterState<S>,
    y_i: &[S],
    t_i: S,
    alpha: S,
    c_gain: S,
    phi0: S,
    mode: PrefixMode,
    ws: &mut FnoWorkspace<S>,
) -> Result<(Vec<S>, S, S)> {
    let d_u = state.d_u;
    let i = state.i;
    let (m, row) = match mode {
        PrefixMode::Online => (i + 1, i),
        PrefixMode::ZeroPadded { m } => {
            if i + 1 > m {
                return Err(Error::Config(format!(
                    "step {i} beyond the padded horizon {m}"
                )));
            }
            (m, i)
        }
    };
    fno.cfg.admit(m)?;
    // Prefix {u_hat_0..u_hat_{i-1}, u_{i-1}} (+ zero padding in fixed mode).
    state.prefix_buf.clear();
    state.prefix_buf.extend_from_slice(&state.history);
    state.prefix_buf.extend_from_slice(&state.prev_control);
    state.prefix_buf.resize(m * d_u, S::zero());

    fno.forward(&state.prefix_buf, m, ws)?;
    let d_y = fno.cfg.d_y;
    let (phi, dphi_t, dphi_y) = bcbf.eval_grad(t_i, y_i);
    // Drift of the predicted output against the last real observation.
    let mut drift_dot = S::zero();
    for dy in 0..d_y {
        let c = (ws.tape.out[row * d_y + dy] - state.prev_output[dy]) / state.dt;
        drift_dot += dphi_y[dy] * c;
    }
    let a = fno.output_vjp_from_tape(row, &dphi_y, ws)?;
    let b = drift_dot + dphi_t + alpha * phi + c_gain * phi0;
    Ok((a, b, phi))
}

/// One step of the online filter. Returns the control to apply and the step
/// diagnostics; updates the state (history, previous control/output, index).
#[allow(clippy::too_many_arguments)]
pub fn filter_step<S: Real>(
    fno: &FnoModel<S>,
    bcbf: &BarrierModel<S>,
    cfg: &FilterConfig<S>,
    state: &mut FilterState<S>,
    y_i: &[S],
    u_nominal: &[S],
    t_i: S,
    ws: &mut FnoWorkspace<S>,
) -> Result<(Vec<S>, StepDiagnostics<S>)> {
    let d_u = state.d_u;
    if u_nominal.len() != d_u || y_i.len() != state.prev_output.len() {
        return Err(Error::Config("filter step dimension mismatch".into()));
    }
    let i = state.i;
    if i == 0 {
        state.phi0 = bcbf.eval(t_i, y_i);
    }
    let phi0 = if cfg.clip_phi0 && state.phi0 > S::zero() {
        S::zero()
    } else {
        state.phi0
    };
    let alpha = cfg.alpha.unwrap_or(bcbf.alpha);
    let c_gain = cfg.c_gain.unwrap_or(bcbf.c_gain);

    let mut diag = StepDiagnostics {
        step: i,
        t: t_i,
        phi: S::zero(),
        a: vec![S::zero(); d_u],
        b: S::zero(),
        gate: GateDecision::Warmup,
        diff_norm: S::zero(),
        infeasible: false,
    };

    let prefix_len = match cfg.mode {
        PrefixMode::Online => i + 1,
        PrefixMode::ZeroPadded { m } => m,
    };
    let active = i >= cfg.warmup
        && i + 1 <= prefix_len
        && fno.cfg.admit(prefix_len).is_ok();
    if i >= cfg.warmup && !active {
        diag.gate = GateDecision::OutOfRange;
    }

    let u_hat = if !active {
        // Warmup / out-of-range: nominal applied verbatim.
        u_nominal.to_vec()
    } else {
        let (a, b, phi) = assemble_constraint(
            fno, bcbf, state, y_i, t_i, alpha, c_gain, phi0, cfg.mode, ws,
        )?;
        diag.phi = phi;
        diag.a.copy_from_slice(&a);
        diag.b = b;
        let udot_nom = nominal_rate(u_nominal, &state.prev_control, state.dt);
        match qp_project(&udot_nom, &a, b) {
            QpSolution::AlreadyFeasible => {
                diag.gate = GateDecision::NominalFeasible;
                u_nominal.to_vec()
            }
            QpSolution::Projected(udot_safe) => {
                let mut d = S::zero();
                for (s, n) in udot_safe.iter().zip(&udot_nom) {
                    let e = *s - *n;
                    d += e * e;
                }
                diag.diff_norm = d.sqrt();
                if beta_gate(&udot_safe, &udot_nom, cfg.beta) {
                    diag.gate = GateDecision::SafeApplied;
                    state
                        .prev_control
                        .iter()
                        .zip(&udot_safe)
                        .map(|(u, ud)| *u + state.dt * *ud)
                        .collect()
                } else {
                    diag.gate = GateDecision::NominalByGate;
                    u_nominal.to_vec()
                }
            }
            QpSolution::Infeasible => {
                diag.infeasible = true;
                diag.gate = GateDecision::NominalInfeasible;
                u_nominal.to_vec()
            }
        }
    };

    state.history.extend_from_slice(&u_hat);
    state.prev_control.copy_from_slice(&u_hat);
    state.prev_output.copy_from_slice(y_i);
    state.i += 1;
    Ok((u_hat, diag))
}

/// Per-step diagnostics CSV: step,t,phi,a0..,b,gate,diff_norm,infeasible.
pub fn write_diagnostics<S: Real>(
    path: &std::path::Path,
    diags: &[StepDiagnostics<S>],
) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let d_u = diags.first().map_or(2, |d| d.a.len());
    let acols: Vec<String> = (0..d_u).map(|i| format!("a{i}")).collect();
    writeln!(f, "step,t,phi,{},b,gate,diff_norm,infeasible", acols.join(","))?;
    for d in diags {
        let avals: Vec<String> = d.a.iter().map(|v| format!("{v}")).collect();
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            d.step,
            d.t,
            d.phi,
            avals.join(","),
            d.b,
            d.gate.as_str(),
            d.diff_norm,
            u8::from(d.infeasible)
        )?;
    }
    Ok(())
}

/// Projection distance the filter should report: max(0, a^T u + b)/||a||.
pub fn analytic_projection_distance<S: Real>(udot_nom: &[S], a: &[S], b: S) -> S {
    let r = dot(a, udot_nom) + b;
    if r <= S::zero() {
        S::zero()
    } else {
        r / nrm2(a)
    }
}

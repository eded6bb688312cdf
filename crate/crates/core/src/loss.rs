//! Residual/boundary loss assembly for the trainer.
//!
//! The loss over a time domain [t0, t1] has one residual term per equation,
//!
//! ```text
//! L_f_i = sum_points q_k * (rhs_i(t_k, u(t_k)) - du_i/dt(t_k))^2
//! ```
//!
//! with quadrature scale `q_k` (grid spacing or Monte-Carlo constant), plus
//! one boundary term per state variable, `L_b_j = (NN_j(t0) - u_j(t0))^2`,
//! combined as `L = sum w_i L_f_i + sum w_j L_b_j`.
//!
//! Two evaluation paths exist. [`LossEngine`] is the trainer's: it walks the
//! sample points once, reusing per-network [`DualTrace`] scratch, and
//! backpropagates the exact gradient by hand — cotangents flow from each
//! squared residual into the network outputs and their time derivatives.
//! The free functions ([`residual_loss`], [`boundary_loss`], [`total_loss`])
//! are the convenient one-shot forms. Tests pin the engine's gradient
//! against the independent tape differentiator ([`crate::net::param_gradient`])
//! and against finite differences.
//!
//! Adaptive re-weighting ([`adaptive_update`]) rescales boundary weights so
//! their gradient magnitudes keep pace with the residual gradient:
//! `w_hat_j = max_k |grad sum_i L_f_i|_k / mean_k |grad L_b_j|_k`, blended by
//! `w_j <- (1-gamma) w_j + gamma w_hat_j`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::expr::{CompiledSystem, OdeSystem};
use crate::net::{DualTrace, NetError, NetworkEnsemble};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("sampling plan has no interior points")]
    EmptyPlan,
    #[error("system has {system} state variables but the ensemble covers {ensemble}")]
    StateMismatch { system: usize, ensemble: usize },
    #[error(transparent)]
    Net(#[from] NetError),
}

/// How the interior sample points were produced.
#[derive(Debug, Clone, PartialEq)]
pub enum PlanKind {
    /// Uniform grid t0+dt, t0+2dt, ... up to and including t1 when it lands
    /// on the grid. The boundary point t0 is never an interior point.
    Grid { dt: f64 },
    /// `n` points drawn uniformly from (t0, t1], reproducible from the seed;
    /// the quadrature constant is alpha = (t1-t0)/n.
    MonteCarlo { n: usize, seed: u64, alpha: f64 },
}

/// Materialized interior sample points plus the boundary point t0.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    kind: PlanKind,
    t0: f64,
    t1: f64,
    points: Vec<f64>,
}

impl SamplingPlan {
    /// Uniform grid over [t0, t1] with spacing `dt`.
    pub fn grid(t0: f64, t1: f64, dt: f64) -> Result<Self, LossError> {
        if !(dt > 0.0) || !(t1 > t0) {
            return Err(LossError::EmptyPlan);
        }
        let mut points = Vec::new();
        let mut k = 1usize;
        loop {
            let t = t0 + k as f64 * dt;
            // Half-step slack keeps t1 included when (t1-t0)/dt is integral
            // up to roundoff, without ever producing a point past t1+dt/2.
            if t > t1 + dt * 0.5 {
                break;
            }
            points.push(t.min(t1));
            k += 1;
        }
        if points.is_empty() {
            return Err(LossError::EmptyPlan);
        }
        Ok(SamplingPlan { kind: PlanKind::Grid { dt }, t0, t1, points })
    }

    /// `n` uniform draws from (t0, t1], deterministic in the seed.
    pub fn monte_carlo(t0: f64, t1: f64, n: usize, seed: u64) -> Result<Self, LossError> {
        if n == 0 || !(t1 > t0) {
            return Err(LossError::EmptyPlan);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let span = t1 - t0;
        // u in [0,1) maps to t1 - u*span in (t0, t1].
        let points: Vec<f64> = (0..n).map(|_| t1 - rng.random::<f64>() * span).collect();
        let alpha = span / n as f64;
        Ok(SamplingPlan { kind: PlanKind::MonteCarlo { n, seed, alpha }, t0, t1, points })
    }

    pub fn kind(&self) -> &PlanKind {
        &self.kind
    }

    /// Interior sample points (excludes the boundary point t0).
    pub fn interior(&self) -> &[f64] {
        &self.points
    }

    /// The boundary point of the IVP domain.
    pub fn boundary(&self) -> f64 {
        self.t0
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.t0, self.t1)
    }

    /// Per-point quadrature coefficients and the point set itself under a
    /// rule. The as-printed rule scales every interior point by dt (or by
    /// alpha for Monte-Carlo); the trapezoid rule additionally includes t0
    /// and halves the two end coefficients.
    fn quadrature(&self, rule: Quadrature) -> (Vec<f64>, Vec<f64>) {
        match (&self.kind, rule) {
            (PlanKind::Grid { dt }, Quadrature::AsPrinted) => {
                (self.points.clone(), vec![*dt; self.points.len()])
            }
            (PlanKind::Grid { dt }, Quadrature::Trapezoid) => {
                let mut pts = Vec::with_capacity(self.points.len() + 1);
                pts.push(self.t0);
                pts.extend_from_slice(&self.points);
                let mut qs = vec![*dt; pts.len()];
                qs[0] = dt / 2.0;
                *qs.last_mut().expect("nonempty") = dt / 2.0;
                (pts, qs)
            }
            // Monte-Carlo estimates the integral the same way under either
            // rule: alpha per draw.
            (PlanKind::MonteCarlo { alpha, .. }, _) => {
                (self.points.clone(), vec![*alpha; self.points.len()])
            }
        }
    }
}

/// Quadrature rule for the residual integral on a grid plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Quadrature {
    /// Interior points only, each scaled by dt — the sum the method's
    /// training formula actually prescribes.
    #[default]
    AsPrinted,
    /// A true trapezoidal rule (adds t0; end points get dt/2).
    Trapezoid,
}

impl std::fmt::Display for Quadrature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Quadrature::AsPrinted => "as-printed",
            Quadrature::Trapezoid => "trapezoid",
        })
    }
}

impl std::str::FromStr for Quadrature {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "as-printed" => Ok(Quadrature::AsPrinted),
            "trapezoid" => Ok(Quadrature::Trapezoid),
            other => Err(format!(
                "unknown quadrature rule `{other}` (expected as-printed or trapezoid)"
            )),
        }
    }
}

/// Per-term weights of the total loss; all strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub residual: Vec<f64>,
    pub boundary: Vec<f64>,
}

impl Weights {
    /// Unit weights for `n` equations and `n` boundary conditions.
    pub fn ones(n: usize) -> Self {
        Weights { residual: vec![1.0; n], boundary: vec![1.0; n] }
    }
}

/// Adaptive re-weighting settings.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveConfig {
    pub enabled: bool,
    /// Recompute every `period` iterations.
    pub period: usize,
    /// EMA blending factor for the new estimate.
    pub gamma: f64,
    /// Also adapt residual weights (off by default: boundary-only).
    pub adapt_residual: bool,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig { enabled: false, period: 10, gamma: 0.9, adapt_residual: false }
    }
}

/// Weights plus adaptation policy — everything the trainer needs to combine
/// raw terms into the scalar objective.
#[derive(Debug, Clone, PartialEq)]
pub struct LossAssembly {
    pub weights: Weights,
    pub adaptive: AdaptiveConfig,
}

impl LossAssembly {
    pub fn unit(n: usize) -> Self {
        LossAssembly { weights: Weights::ones(n), adaptive: AdaptiveConfig::default() }
    }
}

/// Raw per-term values from one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerms {
    pub residual: Vec<f64>,
    pub boundary: Vec<f64>,
}

/// Weighted combination of term values: `sum w_i L_f_i + sum w_j L_b_j`,
/// summed in term order.
pub fn combine(weights: &Weights, terms: &LossTerms) -> f64 {
    let mut total = 0.0;
    for (w, l) in weights.residual.iter().zip(&terms.residual) {
        total += w * l;
    }
    for (w, l) in weights.boundary.iter().zip(&terms.boundary) {
        total += w * l;
    }
    total
}

/// Unweighted gradients of the term groups, for [`adaptive_update`].
#[derive(Debug, Clone)]
pub struct PerTermGradients {
    /// Gradient of `sum_i L_f_i` (all residual terms, unweighted).
    pub residual_sum: Vec<f64>,
    /// Gradient of each boundary term separately.
    pub boundary: Vec<Vec<f64>>,
    /// Gradient of each residual term separately; filled only when residual
    /// adaptation is on.
    pub residual: Vec<Vec<f64>>,
}

/// What one adaptive update did, for logging.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdaptiveReport {
    pub changed: bool,
    /// Indices of boundary terms whose update was skipped because the mean
    /// gradient magnitude was zero (IC already met to machine precision).
    pub skipped_boundary: Vec<usize>,
    pub skipped_residual: Vec<usize>,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn mean_abs(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64
}

/// One adaptive re-weighting step: for each boundary term j,
/// `w_hat = max_k |g_residual_sum|_k / mean_k |g_boundary_j|_k` and
/// `w_j <- (1-gamma) w_j + gamma w_hat`. Terms whose mean gradient magnitude
/// is zero are skipped (division by zero would follow; happens once an IC is
/// met exactly). Residual weights stay fixed unless `adapt_residual` is on,
/// in which case they follow the same rule with their own denominators.
pub fn adaptive_update(
    weights: &mut Weights,
    grads: &PerTermGradients,
    gamma: f64,
    adapt_residual: bool,
) -> AdaptiveReport {
    let mut report = AdaptiveReport::default();
    let numerator = max_abs(&grads.residual_sum);
    for (j, gb) in grads.boundary.iter().enumerate() {
        let denom = mean_abs(gb);
        if denom == 0.0 {
            report.skipped_boundary.push(j);
            continue;
        }
        let what = numerator / denom;
        let old = weights.boundary[j];
        let new = (1.0 - gamma) * old + gamma * what;
        if new != old {
            weights.boundary[j] = new;
            report.changed = true;
        }
    }
    if adapt_residual {
        for (i, gr) in grads.residual.iter().enumerate() {
            let denom = mean_abs(gr);
            if denom == 0.0 {
                report.skipped_residual.push(i);
                continue;
            }
            let what = numerator / denom;
            let old = weights.residual[i];
            let new = (1.0 - gamma) * old + gamma * what;
            if new != old {
                weights.residual[i] = new;
                report.changed = true;
            }
        }
    }
    report
}

/// The trainer's evaluation core: compiled dynamics + network layout +
/// materialized quadrature, with all scratch pre-allocated so repeated
/// evaluations are allocation-light. Weights are passed per call — the
/// adaptive scheme mutates them between calls.
#[derive(Debug)]
pub struct LossEngine {
    compiled: CompiledSystem,
    ens: NetworkEnsemble,
    t0: f64,
    u0: Vec<f64>,
    points: Vec<f64>,
    qweights: Vec<f64>,
    traces: Vec<DualTrace>,
    // Per-point state scratch.
    u: Vec<f64>,
    du: Vec<f64>,
    rhs: Vec<f64>,
    lam_u: Vec<f64>,
    lam_du: Vec<f64>,
}

impl LossEngine {
    pub fn new(
        system: &OdeSystem,
        ens: NetworkEnsemble,
        plan: &SamplingPlan,
        rule: Quadrature,
    ) -> Result<Self, LossError> {
        let n = system.state_names().len();
        if n != ens.state_count() {
            return Err(LossError::StateMismatch { system: n, ensemble: ens.state_count() });
        }
        if plan.interior().is_empty() {
            return Err(LossError::EmptyPlan);
        }
        let compiled = system.compile();
        let (points, qweights) = plan.quadrature(rule);
        let traces = ens.nets().iter().map(DualTrace::for_subnet).collect();
        let u0 = system.init().to_vec();
        Ok(LossEngine {
            compiled,
            ens,
            t0: plan.boundary(),
            u0,
            points,
            qweights,
            traces,
            u: vec![0.0; n],
            du: vec![0.0; n],
            rhs: vec![0.0; n],
            lam_u: vec![0.0; n],
            lam_du: vec![0.0; n],
        })
    }

    pub fn ensemble(&self) -> &NetworkEnsemble {
        &self.ens
    }

    pub fn state_count(&self) -> usize {
        self.u.len()
    }

    /// Runs every forward pass at time `t`, filling `self.u` / `self.du`.
    fn forward_point(&mut self, theta: &[f64], t: f64) {
        let mut off = 0;
        for (net, trace) in self.ens.nets().iter().zip(&mut self.traces) {
            net.forward_dual(theta, t, trace);
            let outs = trace.outputs();
            let touts = trace.output_tangents();
            self.u[off..off + outs.len()].copy_from_slice(outs);
            self.du[off..off + touts.len()].copy_from_slice(touts);
            off += outs.len();
        }
    }

    /// Backpropagates the cotangents in `self.lam_u` / `self.lam_du` through
    /// the traces of the latest [`forward_point`], accumulating into `grad`.
    ///
    /// [`forward_point`]: LossEngine::forward_point
    fn backward_point(&mut self, theta: &[f64], grad: &mut [f64]) {
        let mut off = 0;
        for (net, trace) in self.ens.nets().iter().zip(&mut self.traces) {
            let n_out = *net.dims().last().expect("nets have layers");
            net.backward_dual(
                theta,
                trace,
                &self.lam_u[off..off + n_out],
                &self.lam_du[off..off + n_out],
                grad,
            );
            off += n_out;
        }
    }

    /// Raw term values only (no gradient).
    pub fn terms(&mut self, theta: &[f64]) -> Result<LossTerms, LossError> {
        self.eval_inner(theta, None, None)
    }

    /// Weighted total plus raw terms.
    pub fn total(&mut self, theta: &[f64], weights: &Weights) -> Result<(f64, LossTerms), LossError> {
        let terms = self.eval_inner(theta, None, None)?;
        Ok((combine(weights, &terms), terms))
    }

    /// Fused objective + gradient: returns the weighted total and raw terms,
    /// writing the exact gradient of the weighted total into `grad`.
    pub fn total_with_gradient(
        &mut self,
        theta: &[f64],
        weights: &Weights,
        grad: &mut [f64],
    ) -> Result<(f64, LossTerms), LossError> {
        grad.fill(0.0);
        let terms = self.eval_inner(theta, Some(weights), Some(grad))?;
        Ok((combine(weights, &terms), terms))
    }

    /// Shared walk over sample points. With `weights`+`grad` present the
    /// backward pass runs per point with weighted cotangents.
    fn eval_inner(
        &mut self,
        theta: &[f64],
        weights: Option<&Weights>,
        mut grad: Option<&mut [f64]>,
    ) -> Result<LossTerms, LossError> {
        if theta.len() != self.ens.param_count() {
            return Err(LossError::Net(NetError::ThetaLength {
                expected: self.ens.param_count(),
                got: theta.len(),
            }));
        }
        let n = self.state_count();
        let mut residual = vec![0.0; n];
        // Interior points: residual terms.
        for k in 0..self.points.len() {
            let (t, q) = (self.points[k], self.qweights[k]);
            self.forward_point(theta, t);
            for i in 0..n {
                self.rhs[i] = self.compiled.rhs_expr(i).eval(t, &self.u);
                let r = self.rhs[i] - self.du[i];
                residual[i] += q * r * r;
            }
            if let (Some(w), Some(grad)) = (weights, grad.as_deref_mut()) {
                // Cotangent of the weighted total w.r.t. residual r_i at this
                // point is c_i = w_i * q * 2 r_i; it reaches u through the
                // rhs Jacobian and du through the explicit -du_i term.
                self.lam_u.fill(0.0);
                for i in 0..n {
                    let r = self.rhs[i] - self.du[i];
                    let c = w.residual[i] * q * 2.0 * r;
                    for j in 0..n {
                        self.lam_u[j] += c * self.compiled.jac(i, j, t, &self.u);
                    }
                    self.lam_du[i] = -c;
                }
                self.backward_point(theta, grad);
            }
        }
        // Boundary point: IC mismatch terms.
        self.forward_point(theta, self.t0);
        let mut boundary = vec![0.0; n];
        for j in 0..n {
            let e = self.u[j] - self.u0[j];
            boundary[j] = e * e;
        }
        if let (Some(w), Some(grad)) = (weights, grad) {
            for j in 0..n {
                let e = self.u[j] - self.u0[j];
                self.lam_u[j] = w.boundary[j] * 2.0 * e;
                self.lam_du[j] = 0.0;
            }
            self.backward_point(theta, grad);
        }
        Ok(LossTerms { residual, boundary })
    }

    /// Unweighted per-term-group gradients for the adaptive update: the
    /// gradient of `sum_i L_f_i` and of each `L_b_j` alone (plus each
    /// `L_f_i` alone when requested).
    pub fn per_term_gradients(
        &mut self,
        theta: &[f64],
        per_residual_term: bool,
    ) -> Result<PerTermGradients, LossError> {
        if theta.len() != self.ens.param_count() {
            return Err(LossError::Net(NetError::ThetaLength {
                expected: self.ens.param_count(),
                got: theta.len(),
            }));
        }
        let n = self.state_count();
        let p = self.ens.param_count();
        let mut residual_sum = vec![0.0; p];
        let mut residual: Vec<Vec<f64>> =
            if per_residual_term { vec![vec![0.0; p]; n] } else { Vec::new() };
        for k in 0..self.points.len() {
            let (t, q) = (self.points[k], self.qweights[k]);
            self.forward_point(theta, t);
            for i in 0..n {
                self.rhs[i] = self.compiled.rhs_expr(i).eval(t, &self.u);
            }
            // grad of the unweighted residual sum.
            self.lam_u.fill(0.0);
            for i in 0..n {
                let c = q * 2.0 * (self.rhs[i] - self.du[i]);
                for j in 0..n {
                    self.lam_u[j] += c * self.compiled.jac(i, j, t, &self.u);
                }
                self.lam_du[i] = -c;
            }
            self.backward_point(theta, &mut residual_sum);
            if per_residual_term {
                for i in 0..n {
                    self.lam_u.fill(0.0);
                    self.lam_du.fill(0.0);
                    let c = q * 2.0 * (self.rhs[i] - self.du[i]);
                    for j in 0..n {
                        self.lam_u[j] = c * self.compiled.jac(i, j, t, &self.u);
                    }
                    self.lam_du[i] = -c;
                    self.backward_point(theta, &mut residual[i]);
                }
            }
        }
        let mut boundary: Vec<Vec<f64>> = vec![vec![0.0; p]; n];
        self.forward_point(theta, self.t0);
        for j in 0..n {
            self.lam_u.fill(0.0);
            self.lam_du.fill(0.0);
            self.lam_u[j] = 2.0 * (self.u[j] - self.u0[j]);
            self.backward_point(theta, &mut boundary[j]);
        }
        Ok(PerTermGradients { residual_sum, boundary, residual })
    }
}

/// Per-equation residual terms `L_f_i` for a system/ensemble/plan triple
/// under the default (as-printed) quadrature.
pub fn residual_loss(
    system: &OdeSystem,
    ens: &NetworkEnsemble,
    theta: &[f64],
    plan: &SamplingPlan,
) -> Result<Vec<f64>, LossError> {
    let mut engine = LossEngine::new(system, ens.clone(), plan, Quadrature::AsPrinted)?;
    Ok(engine.terms(theta)?.residual)
}

/// Per-variable boundary terms `L_b_j = (NN_j(t0) - u_j(t0))^2`.
pub fn boundary_loss(
    system: &OdeSystem,
    ens: &NetworkEnsemble,
    theta: &[f64],
) -> Result<Vec<f64>, LossError> {
    let n = system.state_names().len();
    if n != ens.state_count() {
        return Err(LossError::StateMismatch { system: n, ensemble: ens.state_count() });
    }
    let (t0, _) = system.domain();
    let u = ens.forward(t0, theta)?;
    Ok(system
        .init()
        .iter()
        .zip(&u)
        .map(|(u0, uj)| (uj - u0) * (uj - u0))
        .collect())
}

/// Weighted total with breakdown, one-shot form.
pub fn total_loss(
    assembly: &LossAssembly,
    system: &OdeSystem,
    ens: &NetworkEnsemble,
    theta: &[f64],
    plan: &SamplingPlan,
) -> Result<(f64, LossTerms), LossError> {
    let mut engine = LossEngine::new(system, ens.clone(), plan, Quadrature::AsPrinted)?;
    engine.total(theta, &assembly.weights)
}

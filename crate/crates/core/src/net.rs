//! Feed-forward networks over a scalar time input: tanh hidden layers,
//! identity output, a single flat parameter vector, and exact derivatives
//! with respect to both the input and the parameters.
//!
//! Two arrangements cover the solver's modes: one single-output network per
//! state variable ([`Mode::Symbolic`]) or one multi-output network
//! ([`Mode::Conventional`]). Either way, every parameter lives in one flat
//! vector `theta` with a fixed layout — per network, per layer, weights
//! row-major then biases — so the optimizer sees a plain `&[f64]`.
//!
//! Derivatives come in two flavors. The fast path used by training threads a
//! dual number (value, d/dt) through the forward pass and backpropagates
//! cotangents for both components through the stored trace
//! ([`SubNetwork::forward_dual`] / [`SubNetwork::backward_dual`]); this
//! yields the mixed second-order term d/dtheta [du/dt] exactly. The general
//! path ([`param_gradient`]) records the same arithmetic on a reverse-mode
//! tape and differentiates arbitrary scalar closures; the two are
//! cross-checked against finite differences in the test suites.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tape::{Tape, Var};

/// Network arrangement over the state variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// One single-output network per state variable.
    Symbolic,
    /// One network whose output dimension is the number of state variables.
    Conventional,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Symbolic => write!(f, "symbolic"),
            Mode::Conventional => write!(f, "conventional"),
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "symbolic" => Ok(Mode::Symbolic),
            "conventional" => Ok(Mode::Conventional),
            other => Err(format!("unknown mode `{other}` (expected `symbolic` or `conventional`)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NetError {
    #[error("hidden layer list is empty")]
    EmptyHidden,
    #[error("layer widths must be positive")]
    ZeroWidth,
    #[error("ensemble needs at least one state variable")]
    NoStates,
    #[error("theta length mismatch: layout holds {expected} parameters, got {got}")]
    ThetaLength { expected: usize, got: usize },
}

/// Weights and biases of one layer in structured form, used by
/// [`NetworkEnsemble::flatten`] / [`NetworkEnsemble::unflatten`] and by tests
/// that build networks by hand.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// Row-major `out x in`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// One feed-forward network: layer dimensions plus its slice of the flat
/// parameter vector. `dims[0]` is always 1 (scalar time input).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubNetwork {
    dims: Vec<usize>,
    offset: usize,
    param_count: usize,
}

impl SubNetwork {
    fn new(dims: Vec<usize>, offset: usize) -> Self {
        let param_count = param_count_for(&dims);
        SubNetwork { dims, offset, param_count }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Start of this network's parameters in the flat vector.
    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    /// Offset of layer `l`'s weights within the network's own slice.
    fn layer_offset(&self, l: usize) -> usize {
        let mut off = 0;
        for k in 0..l {
            off += self.dims[k] * self.dims[k + 1] + self.dims[k + 1];
        }
        off
    }

    /// Runs the dual-number forward pass at time `t`, recording per-layer
    /// activations, their time tangents, and pre-activation tangents into
    /// `trace`. Outputs live in the trace's last layer.
    pub fn forward_dual(&self, theta: &[f64], t: f64, trace: &mut DualTrace) {
        debug_assert_eq!(trace.a[0].len(), 1);
        trace.a[0][0] = t;
        trace.da[0][0] = 1.0;
        let params = &theta[self.offset..self.offset + self.param_count];
        let mut poff = 0;
        let last = self.n_layers();
        for l in 1..=last {
            let (n_in, n_out) = (self.dims[l - 1], self.dims[l]);
            let (w, rest) = params[poff..].split_at(n_in * n_out);
            let b = &rest[..n_out];
            poff += n_in * n_out + n_out;
            // Rows l-1 and l of the trace are disjoint; make the split
            // explicit for the borrow checker.
            let (a_head, a_tail) = trace.a.split_at_mut(l);
            let (da_head, da_tail) = trace.da.split_at_mut(l);
            let prev_a = &a_head[l - 1];
            let prev_da = &da_head[l - 1];
            let a_l = &mut a_tail[0];
            let da_l = &mut da_tail[0];
            let dz_l = &mut trace.dz[l];
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut z = b[o];
                let mut dz = 0.0;
                for i in 0..n_in {
                    z += row[i] * prev_a[i];
                    dz += row[i] * prev_da[i];
                }
                if l < last {
                    let act = z.tanh();
                    a_l[o] = act;
                    dz_l[o] = dz;
                    da_l[o] = (1.0 - act * act) * dz;
                } else {
                    a_l[o] = z;
                    dz_l[o] = dz;
                    da_l[o] = dz;
                }
            }
        }
    }

    /// Backpropagates cotangents of the outputs (`lam_out`) and of the
    /// output time-derivatives (`lam_dout`) through the trace recorded by
    /// [`forward_dual`], accumulating into `grad` (full flat layout).
    ///
    /// [`forward_dual`]: SubNetwork::forward_dual
    pub fn backward_dual(
        &self,
        theta: &[f64],
        trace: &mut DualTrace,
        lam_out: &[f64],
        lam_dout: &[f64],
        grad: &mut [f64],
    ) {
        let params = &theta[self.offset..self.offset + self.param_count];
        let gnet = &mut grad[self.offset..self.offset + self.param_count];
        let last = self.n_layers();
        trace.lam_a[..lam_out.len()].copy_from_slice(lam_out);
        trace.lam_da[..lam_dout.len()].copy_from_slice(lam_dout);
        for l in (1..=last).rev() {
            let (n_in, n_out) = (self.dims[l - 1], self.dims[l]);
            let poff = self.layer_offset(l - 1);
            let (w, _rest) = params[poff..].split_at(n_in * n_out);
            // lam_z / lam_dz for this layer.
            for o in 0..n_out {
                if l < last {
                    let a = trace.a[l][o];
                    let s = 1.0 - a * a;
                    let dz = trace.dz[l][o];
                    trace.lam_z[o] =
                        trace.lam_a[o] * s + trace.lam_da[o] * (-2.0 * a * s) * dz;
                    trace.lam_dz[o] = trace.lam_da[o] * s;
                } else {
                    trace.lam_z[o] = trace.lam_a[o];
                    trace.lam_dz[o] = trace.lam_da[o];
                }
            }
            // Parameter gradients for this layer.
            let gw = &mut gnet[poff..poff + n_in * n_out + n_out];
            for o in 0..n_out {
                let lz = trace.lam_z[o];
                let ldz = trace.lam_dz[o];
                let grow = &mut gw[o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    grow[i] += lz * trace.a[l - 1][i] + ldz * trace.da[l - 1][i];
                }
            }
            let gb = &mut gw[n_in * n_out..];
            for o in 0..n_out {
                gb[o] += trace.lam_z[o];
            }
            // Cotangents for the previous layer.
            if l > 1 {
                for i in 0..n_in {
                    let mut la = 0.0;
                    let mut lda = 0.0;
                    for o in 0..n_out {
                        la += w[o * n_in + i] * trace.lam_z[o];
                        lda += w[o * n_in + i] * trace.lam_dz[o];
                    }
                    trace.scratch_a[i] = la;
                    trace.scratch_da[i] = lda;
                }
                trace.lam_a[..n_in].copy_from_slice(&trace.scratch_a[..n_in]);
                trace.lam_da[..n_in].copy_from_slice(&trace.scratch_da[..n_in]);
            }
        }
    }

    /// Tape-recorded forward pass; `t` is a constant, `theta_vars` are tape
    /// inputs. Returns (outputs, output time-derivatives) as tape variables,
    /// so reverse sweeps differentiate through both — including the mixed
    /// d/dtheta [du/dt] dependency.
    fn forward_dual_on_tape(
        &self,
        tape: &mut Tape,
        t: f64,
        theta_vars: &[Var],
    ) -> (Vec<Var>, Vec<Var>) {
        let params = &theta_vars[self.offset..self.offset + self.param_count];
        let mut a: Vec<Var> = vec![tape.constant(t)];
        let mut da: Vec<Var> = vec![tape.constant(1.0)];
        let mut poff = 0;
        let last = self.n_layers();
        for l in 1..=last {
            let (n_in, n_out) = (self.dims[l - 1], self.dims[l]);
            let w = &params[poff..poff + n_in * n_out];
            let b = &params[poff + n_in * n_out..poff + n_in * n_out + n_out];
            poff += n_in * n_out + n_out;
            let mut next_a = Vec::with_capacity(n_out);
            let mut next_da = Vec::with_capacity(n_out);
            for o in 0..n_out {
                let mut z = b[o];
                let mut dz_acc: Option<Var> = None;
                for i in 0..n_in {
                    let prod = tape.mul(w[o * n_in + i], a[i]);
                    z = tape.add(z, prod);
                    let dprod = tape.mul(w[o * n_in + i], da[i]);
                    dz_acc = Some(match dz_acc {
                        Some(acc) => tape.add(acc, dprod),
                        None => dprod,
                    });
                }
                let dz = dz_acc.expect("layers have at least one input");
                if l < last {
                    let act = tape.tanh(z);
                    let sq = tape.mul(act, act);
                    let one = tape.constant(1.0);
                    let sech2 = tape.sub(one, sq);
                    next_a.push(act);
                    next_da.push(tape.mul(sech2, dz));
                } else {
                    next_a.push(z);
                    next_da.push(dz);
                }
            }
            a = next_a;
            da = next_da;
        }
        (a, da)
    }
}

/// Cumulative parameter count for a dimension list.
fn param_count_for(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Reusable per-network forward/backward scratch. One trace serves one
/// subnetwork shape; the loss engine keeps one per member network and reuses
/// them across all sample points.
#[derive(Debug, Clone)]
pub struct DualTrace {
    /// Activations per layer; `a[0]` is the input `[t]`.
    pub a: Vec<Vec<f64>>,
    /// Time tangents of the activations.
    pub da: Vec<Vec<f64>>,
    /// Pre-activation time tangents (`dz[0]` unused).
    pub dz: Vec<Vec<f64>>,
    lam_a: Vec<f64>,
    lam_da: Vec<f64>,
    lam_z: Vec<f64>,
    lam_dz: Vec<f64>,
    scratch_a: Vec<f64>,
    scratch_da: Vec<f64>,
}

impl DualTrace {
    pub fn for_subnet(net: &SubNetwork) -> Self {
        let max_w = net.dims.iter().copied().max().unwrap_or(1);
        DualTrace {
            a: net.dims.iter().map(|&d| vec![0.0; d]).collect(),
            da: net.dims.iter().map(|&d| vec![0.0; d]).collect(),
            dz: net.dims.iter().map(|&d| vec![0.0; d]).collect(),
            lam_a: vec![0.0; max_w],
            lam_da: vec![0.0; max_w],
            lam_z: vec![0.0; max_w],
            lam_dz: vec![0.0; max_w],
            scratch_a: vec![0.0; max_w],
            scratch_da: vec![0.0; max_w],
        }
    }

    /// Output values after a forward pass.
    pub fn outputs(&self) -> &[f64] {
        self.a.last().expect("trace has layers")
    }

    /// Output time-derivatives after a forward pass.
    pub fn output_tangents(&self) -> &[f64] {
        self.da.last().expect("trace has layers")
    }
}

/// The solver-facing collection of networks with one flat parameter layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkEnsemble {
    mode: Mode,
    state_count: usize,
    nets: Vec<SubNetwork>,
    param_count: usize,
}

impl NetworkEnsemble {
    /// Builds the layout. Hidden may be empty here (a single affine layer),
    /// which tests use; the seeded constructor [`init_ensemble`] enforces the
    /// non-empty hidden widths of the training configuration.
    pub fn new(mode: Mode, state_count: usize, hidden: &[usize]) -> Result<Self, NetError> {
        if state_count == 0 {
            return Err(NetError::NoStates);
        }
        if hidden.contains(&0) {
            return Err(NetError::ZeroWidth);
        }
        let mut nets = Vec::new();
        let mut offset = 0;
        match mode {
            Mode::Symbolic => {
                for _ in 0..state_count {
                    let mut dims = vec![1];
                    dims.extend_from_slice(hidden);
                    dims.push(1);
                    let net = SubNetwork::new(dims, offset);
                    offset += net.param_count;
                    nets.push(net);
                }
            }
            Mode::Conventional => {
                let mut dims = vec![1];
                dims.extend_from_slice(hidden);
                dims.push(state_count);
                let net = SubNetwork::new(dims, offset);
                offset += net.param_count;
                nets.push(net);
            }
        }
        Ok(NetworkEnsemble { mode, state_count, nets, param_count: offset })
    }

    /// Rebuilds an ensemble from explicit per-network dims (checkpoint load).
    pub fn from_dims(mode: Mode, dims: &[Vec<usize>]) -> Result<Self, NetError> {
        if dims.is_empty() {
            return Err(NetError::NoStates);
        }
        if dims.iter().any(|d| d.len() < 2 || d.contains(&0)) {
            return Err(NetError::ZeroWidth);
        }
        let state_count = match mode {
            Mode::Symbolic => dims.len(),
            Mode::Conventional => *dims[0].last().expect("dims checked non-empty"),
        };
        let mut nets = Vec::new();
        let mut offset = 0;
        for d in dims {
            let net = SubNetwork::new(d.clone(), offset);
            offset += net.param_count;
            nets.push(net);
        }
        Ok(NetworkEnsemble { mode, state_count, nets, param_count: offset })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn state_count(&self) -> usize {
        self.state_count
    }

    pub fn nets(&self) -> &[SubNetwork] {
        &self.nets
    }

    /// Total length of the flat parameter vector.
    pub fn param_count(&self) -> usize {
        self.param_count
    }

    fn check_theta(&self, theta: &[f64]) -> Result<(), NetError> {
        if theta.len() != self.param_count {
            return Err(NetError::ThetaLength { expected: self.param_count, got: theta.len() });
        }
        Ok(())
    }

    /// Draws Glorot-uniform weights (U on +-sqrt(6/(fan_in+fan_out))) and
    /// zero biases, deterministically from the seed. Draw order is fixed:
    /// network by network, layer by layer, weight entries row-major.
    pub fn init_theta(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = vec![0.0; self.param_count];
        for net in &self.nets {
            let mut poff = net.offset;
            for l in 0..net.n_layers() {
                let (n_in, n_out) = (net.dims[l], net.dims[l + 1]);
                let bound = (6.0 / (n_in + n_out) as f64).sqrt();
                for w in &mut theta[poff..poff + n_in * n_out] {
                    *w = (2.0 * rng.random::<f64>() - 1.0) * bound;
                }
                // Biases stay zero.
                poff += n_in * n_out + n_out;
            }
        }
        theta
    }

    /// Evaluates the state vector u(t).
    pub fn forward(&self, t: f64, theta: &[f64]) -> Result<Vec<f64>, NetError> {
        Ok(self.forward_with_time_derivative(t, theta)?.0)
    }

    /// Evaluates u(t) together with its exact time derivative du/dt.
    pub fn forward_with_time_derivative(
        &self,
        t: f64,
        theta: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>), NetError> {
        self.check_theta(theta)?;
        let mut u = Vec::with_capacity(self.state_count);
        let mut du = Vec::with_capacity(self.state_count);
        for net in &self.nets {
            let mut trace = DualTrace::for_subnet(net);
            net.forward_dual(theta, t, &mut trace);
            u.extend_from_slice(trace.outputs());
            du.extend_from_slice(trace.output_tangents());
        }
        Ok((u, du))
    }

    /// Tape-recorded u(t); see [`param_gradient`].
    pub fn forward_on_tape(&self, tape: &mut Tape, t: f64, theta_vars: &[Var]) -> Vec<Var> {
        self.forward_dual_on_tape(tape, t, theta_vars).0
    }

    /// Tape-recorded (u(t), du/dt) pair; see [`param_gradient`].
    pub fn forward_dual_on_tape(
        &self,
        tape: &mut Tape,
        t: f64,
        theta_vars: &[Var],
    ) -> (Vec<Var>, Vec<Var>) {
        let mut u = Vec::with_capacity(self.state_count);
        let mut du = Vec::with_capacity(self.state_count);
        for net in &self.nets {
            let (a, da) = net.forward_dual_on_tape(tape, t, theta_vars);
            u.extend(a);
            du.extend(da);
        }
        (u, du)
    }

    /// Flat theta -> per-network, per-layer structured parameters.
    pub fn unflatten(&self, theta: &[f64]) -> Result<Vec<Vec<LayerParams>>, NetError> {
        self.check_theta(theta)?;
        let mut out = Vec::with_capacity(self.nets.len());
        for net in &self.nets {
            let mut layers = Vec::with_capacity(net.n_layers());
            let mut poff = net.offset;
            for l in 0..net.n_layers() {
                let (n_in, n_out) = (net.dims[l], net.dims[l + 1]);
                let weights = theta[poff..poff + n_in * n_out].to_vec();
                let biases = theta[poff + n_in * n_out..poff + n_in * n_out + n_out].to_vec();
                layers.push(LayerParams { weights, biases });
                poff += n_in * n_out + n_out;
            }
            out.push(layers);
        }
        Ok(out)
    }

    /// Structured parameters -> flat theta (inverse of [`unflatten`]).
    ///
    /// [`unflatten`]: NetworkEnsemble::unflatten
    pub fn flatten(&self, nested: &[Vec<LayerParams>]) -> Result<Vec<f64>, NetError> {
        let mut theta = Vec::with_capacity(self.param_count);
        for layers in nested {
            for lp in layers {
                theta.extend_from_slice(&lp.weights);
                theta.extend_from_slice(&lp.biases);
            }
        }
        if theta.len() != self.param_count {
            return Err(NetError::ThetaLength { expected: self.param_count, got: theta.len() });
        }
        Ok(theta)
    }
}

/// Builds an ensemble and its seeded initial parameters in one step.
pub fn init_ensemble(
    mode: Mode,
    state_count: usize,
    hidden: &[usize],
    seed: u64,
) -> Result<(NetworkEnsemble, Vec<f64>), NetError> {
    if hidden.is_empty() {
        return Err(NetError::EmptyHidden);
    }
    let ens = NetworkEnsemble::new(mode, state_count, hidden)?;
    let theta = ens.init_theta(seed);
    Ok((ens, theta))
}

/// Reverse-mode gradient of an arbitrary scalar closure over theta.
///
/// The closure receives a fresh tape plus one tape variable per parameter
/// and returns the scalar output variable; typical bodies combine
/// [`NetworkEnsemble::forward_on_tape`] /
/// [`NetworkEnsemble::forward_dual_on_tape`] with
/// [`crate::expr::CompiledExpr::eval_on_tape`]. Returns the value and the
/// exact gradient. This is the general facility; the training loop uses the
/// specialized backprop in [`crate::loss`], which tests verify against this.
pub fn param_gradient<F>(theta: &[f64], build: F) -> (f64, Vec<f64>)
where
    F: FnOnce(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = theta.iter().map(|&v| tape.input(v)).collect();
    let out = build(&mut tape, &vars);
    let value = tape.value(out);
    let grad = tape.gradient_of(out, &vars);
    (value, grad)
}

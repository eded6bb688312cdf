//! Built-in single-machine-infinite-bus (SMIB) systems.
//!
//! The swing dynamics used throughout the crate are the two-state reduction
//!
//! ```text
//! d(delta)/dt = omega
//! d(omega)/dt = K1 - K2*sin(delta) - K3*omega
//! ```
//!
//! with rotor angle `delta` (rad) and transient speed `omega` (rad/s). The
//! presets are defined directly in K-space; [`k_from_physical`] maps machine
//! data (inertia, damping, torque, voltages, reactance) onto the three
//! coefficients for users who start from physical parameters.

use thiserror::Error;

use crate::expr::{parse_system, OdeSystem};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ModelError {
    #[error("{field} must be positive, got {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error(
        "unknown preset `{0}` (expected normal, case1, case2, pole-slipping, or undamped)"
    )]
    UnknownPreset(String),
}

/// Physical machine constants behind the K-space coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmibPhysical {
    /// Inertia constant, seconds.
    pub h: f64,
    /// Damping coefficient, per-unit.
    pub d: f64,
    /// Mechanical torque, per-unit.
    pub t_m: f64,
    /// Reference angular speed, rad/s.
    pub omega_s: f64,
    /// Internal generator voltage, per-unit.
    pub e_c: f64,
    /// Infinite-bus voltage, per-unit.
    pub v_inf: f64,
    /// Total reactance between generator and bus, per-unit.
    pub x: f64,
}

/// One named training/validation scenario: coefficients, initial state, and
/// time horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct SmibScenario {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    /// Initial rotor angle, rad.
    pub delta0: f64,
    /// Initial transient speed, rad/s.
    pub omega0: f64,
    /// Domain length, seconds.
    pub horizon: f64,
    pub label: &'static str,
}

/// Maps physical machine data to (K1, K2, K3):
/// K1 = (omega_s / 2H) T_m, K2 = (omega_s / 2H)(E_c V_inf / X),
/// K3 = (omega_s / 2H) D.
pub fn k_from_physical(p: &SmibPhysical) -> Result<(f64, f64, f64), ModelError> {
    for (field, value) in [("H", p.h), ("X", p.x), ("omega_s", p.omega_s)] {
        if !(value > 0.0) {
            return Err(ModelError::NonPositive { field, value });
        }
    }
    let scale = p.omega_s / (2.0 * p.h);
    Ok((scale * p.t_m, scale * p.e_c * p.v_inf / p.x, scale * p.d))
}

/// The stable equilibrium (arcsin(K1/K2), 0) of the damped swing equation,
/// or None when no equilibrium exists (|K1| > |K2|).
pub fn equilibrium(k1: f64, k2: f64) -> Option<(f64, f64)> {
    let ratio = k1 / k2;
    ratio.is_finite().then_some(())?;
    (ratio.abs() <= 1.0).then(|| (ratio.asin(), 0.0))
}

pub const PRESET_NAMES: [&str; 5] = ["normal", "case1", "case2", "pole-slipping", "undamped"];

/// Builds one of the named scenarios along with its parsed ODE system.
///
/// All presets share K1 = 5, K2 = 10 and a 10-second horizon:
/// - `normal`: K3 = 1.7, start (-1, 7) — converges to the equilibrium.
/// - `case1`: K3 = 1.7, start (1, -5) — transfer-learning variant.
/// - `case2`: K3 = 1.7, start (0, 2) — transfer-learning variant.
/// - `pole-slipping`: K3 = 1.6, start (-1, 7) — the rotor slips one full
///   revolution before settling.
/// - `undamped`: K3 = 0, start (-1, 7) — energy-conserving; exists for
///   integrator validation only.
pub fn preset(name: &str) -> Result<(OdeSystem, SmibScenario), ModelError> {
    let scenario = match name {
        "normal" => SmibScenario {
            k1: 5.0,
            k2: 10.0,
            k3: 1.7,
            delta0: -1.0,
            omega0: 7.0,
            horizon: 10.0,
            label: "normal",
        },
        "case1" => SmibScenario {
            k1: 5.0,
            k2: 10.0,
            k3: 1.7,
            delta0: 1.0,
            omega0: -5.0,
            horizon: 10.0,
            label: "case1",
        },
        "case2" => SmibScenario {
            k1: 5.0,
            k2: 10.0,
            k3: 1.7,
            delta0: 0.0,
            omega0: 2.0,
            horizon: 10.0,
            label: "case2",
        },
        "pole-slipping" => SmibScenario {
            k1: 5.0,
            k2: 10.0,
            k3: 1.6,
            delta0: -1.0,
            omega0: 7.0,
            horizon: 10.0,
            label: "pole-slipping",
        },
        "undamped" => SmibScenario {
            k1: 5.0,
            k2: 10.0,
            k3: 0.0,
            delta0: -1.0,
            omega0: 7.0,
            horizon: 10.0,
            label: "undamped",
        },
        other => return Err(ModelError::UnknownPreset(other.to_string())),
    };
    Ok((system_for(&scenario), scenario))
}

/// Renders a scenario as DSL source and parses it. f64 Display is shortest
/// round-trip, so the parsed parameter values are bit-identical to the
/// scenario fields.
pub fn system_for(s: &SmibScenario) -> OdeSystem {
    let src = format!(
        "param K1={} K2={} K3={};\n\
         d(delta)/dt = omega;\n\
         d(omega)/dt = K1 - K2*sin(delta) - K3*omega;\n\
         init delta={} omega={};\n\
         domain 0 {}",
        s.k1, s.k2, s.k3, s.delta0, s.omega0, s.horizon
    );
    parse_system(&src).expect("generated SMIB source is always grammatical")
}

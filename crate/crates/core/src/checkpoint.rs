//! Line-oriented text checkpoints for trained parameter vectors.
//!
//! Checkpoints are diffable, greppable experiment artifacts, so the format
//! is structured text rather than binary: an INI-style `[meta]` section with
//! key/value pairs, a `[dims]` section listing each sub-network's layer
//! sizes, and a `[theta]` section holding one parameter per line in flat
//! layout order. Floats are written with 17 significant digits
//! (`{:.16e}`), which round-trips every f64 bit-exactly through decimal.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::net::{Mode, NetworkEnsemble};

/// Current file format version; bump on layout changes.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("failed to access checkpoint file: {0}")]
    Io(#[from] std::io::Error),
    #[error("unrecognized checkpoint format version {0} (this build reads version {FORMAT_VERSION})")]
    UnrecognizedVersion(u32),
    #[error("checkpoint line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("theta holds {got} values but the declared dims require {expected}")]
    ThetaLength { expected: usize, got: usize },
    #[error("checkpoint network layout is invalid: {0}")]
    Net(#[from] crate::net::NetError),
}

/// A trained model snapshot plus enough provenance to trace where it came
/// from.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub mode: Mode,
    /// State variable names in declaration order (column order of every
    /// trajectory the model produces).
    pub state_names: Vec<String>,
    /// Layer sizes per sub-network, e.g. `[[1,10,10,10,1], [1,10,10,10,1]]`.
    pub dims: Vec<Vec<usize>>,
    /// Flat parameter vector in layout order.
    pub theta: Vec<f64>,
    /// Digest of the RunConfig that produced this model.
    pub config_digest: String,
    pub final_loss: f64,
    pub iterations: usize,
}

impl Checkpoint {
    /// Checks the structural invariant that theta's length matches the
    /// declared layer dims.
    pub fn validate(&self) -> Result<(), CheckpointError> {
        let expected: usize = self
            .dims
            .iter()
            .map(|d| d.windows(2).map(|w| w[0] * w[1] + w[1]).sum::<usize>())
            .sum();
        if expected != self.theta.len() {
            return Err(CheckpointError::ThetaLength { expected, got: self.theta.len() });
        }
        Ok(())
    }

    /// Reconstructs the network ensemble this checkpoint parameterizes.
    pub fn ensemble(&self) -> Result<NetworkEnsemble, CheckpointError> {
        self.validate()?;
        Ok(NetworkEnsemble::from_dims(self.mode, &self.dims)?)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("[meta]\n");
        let _ = writeln!(out, "version = {}", self.version);
        let _ = writeln!(out, "mode = {}", self.mode);
        let _ = writeln!(out, "states = {}", self.state_names.join(","));
        let _ = writeln!(out, "config_digest = {}", self.config_digest);
        let _ = writeln!(out, "final_loss = {:.16e}", self.final_loss);
        let _ = writeln!(out, "iterations = {}", self.iterations);
        out.push_str("\n[dims]\n");
        for net in &self.dims {
            let joined: Vec<String> = net.iter().map(|d| d.to_string()).collect();
            let _ = writeln!(out, "net = {}", joined.join(","));
        }
        out.push_str("\n[theta]\n");
        for v in &self.theta {
            let _ = writeln!(out, "{v:.16e}");
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        self.validate()?;
        std::fs::write(path, self.render())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = std::fs::read_to_string(path)?;
        let ck = Self::parse(&text)?;
        ck.validate()?;
        Ok(ck)
    }

    /// Parses the checkpoint text format. Strict: unknown sections, unknown
    /// meta keys, and stray lines are errors, so silent corruption cannot
    /// masquerade as an older format.
    pub fn parse(text: &str) -> Result<Self, CheckpointError> {
        #[derive(PartialEq)]
        enum Section {
            None,
            Meta,
            Dims,
            Theta,
        }
        let fail = |line: usize, msg: &str| CheckpointError::Parse { line, msg: msg.into() };

        let mut section = Section::None;
        let mut version: Option<u32> = None;
        let mut mode: Option<Mode> = None;
        let mut state_names: Option<Vec<String>> = None;
        let mut config_digest: Option<String> = None;
        let mut final_loss: Option<f64> = None;
        let mut iterations: Option<usize> = None;
        let mut dims: Vec<Vec<usize>> = Vec::new();
        let mut theta: Vec<f64> = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            match line {
                "[meta]" => {
                    section = Section::Meta;
                    continue;
                }
                "[dims]" => {
                    section = Section::Dims;
                    continue;
                }
                "[theta]" => {
                    section = Section::Theta;
                    continue;
                }
                s if s.starts_with('[') => {
                    return Err(fail(line_no, &format!("unknown section {s}")));
                }
                _ => {}
            }
            match section {
                Section::None => return Err(fail(line_no, "content before any section header")),
                Section::Meta => {
                    let (key, value) = line
                        .split_once('=')
                        .map(|(k, v)| (k.trim(), v.trim()))
                        .ok_or_else(|| fail(line_no, "expected `key = value`"))?;
                    match key {
                        "version" => {
                            version = Some(value.parse().map_err(|_| {
                                fail(line_no, &format!("bad version `{value}`"))
                            })?)
                        }
                        "mode" => {
                            mode = Some(Mode::from_str(value).map_err(|_| {
                                fail(line_no, &format!("bad mode `{value}`"))
                            })?)
                        }
                        "states" => {
                            state_names =
                                Some(value.split(',').map(|s| s.trim().to_string()).collect())
                        }
                        "config_digest" => config_digest = Some(value.to_string()),
                        "final_loss" => {
                            final_loss = Some(value.parse().map_err(|_| {
                                fail(line_no, &format!("bad final_loss `{value}`"))
                            })?)
                        }
                        "iterations" => {
                            iterations = Some(value.parse().map_err(|_| {
                                fail(line_no, &format!("bad iterations `{value}`"))
                            })?)
                        }
                        other => {
                            return Err(fail(line_no, &format!("unknown meta key `{other}`")))
                        }
                    }
                }
                Section::Dims => {
                    let value = line
                        .strip_prefix("net")
                        .and_then(|r| r.trim_start().strip_prefix('='))
                        .map(str::trim)
                        .ok_or_else(|| fail(line_no, "expected `net = d0,d1,...`"))?;
                    let parsed: Result<Vec<usize>, _> =
                        value.split(',').map(|d| d.trim().parse::<usize>()).collect();
                    dims.push(parsed.map_err(|_| {
                        fail(line_no, &format!("bad layer dims `{value}`"))
                    })?);
                }
                Section::Theta => {
                    theta.push(line.parse::<f64>().map_err(|_| {
                        fail(line_no, &format!("bad parameter value `{line}`"))
                    })?);
                }
            }
        }

        let version = version.ok_or_else(|| fail(0, "missing meta key `version`"))?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnrecognizedVersion(version));
        }
        Ok(Checkpoint {
            version,
            mode: mode.ok_or_else(|| fail(0, "missing meta key `mode`"))?,
            state_names: state_names.ok_or_else(|| fail(0, "missing meta key `states`"))?,
            dims: if dims.is_empty() {
                return Err(fail(0, "missing [dims] section"));
            } else {
                dims
            },
            theta: if theta.is_empty() {
                return Err(fail(0, "missing [theta] section"));
            } else {
                theta
            },
            config_digest: config_digest
                .ok_or_else(|| fail(0, "missing meta key `config_digest`"))?,
            final_loss: final_loss.ok_or_else(|| fail(0, "missing meta key `final_loss`"))?,
            iterations: iterations.ok_or_else(|| fail(0, "missing meta key `iterations`"))?,
        })
    }
}

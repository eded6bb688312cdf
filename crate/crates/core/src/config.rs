//! Run configuration: an INI-style text format describing one training run.
//!
//! The format is hand-parsed rather than pulled from a TOML dependency
//! because configs participate in reproducibility guarantees: the canonical
//! rendering defines a digest that is stored in checkpoints, and a strict,
//! self-contained parser keeps the accepted language (and therefore the
//! digest semantics) fully pinned by this crate's own tests. Unknown
//! sections and keys are errors — a typo like `gamm = 0.9` must not
//! silently train with defaults.
//!
//! Every key has a default except the system source, so the minimal valid
//! config is two lines:
//!
//! ```ini
//! [system]
//! preset = normal
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::expr::{parse_system, OdeSystem};
use crate::loss::{AdaptiveConfig, Quadrature};
use crate::models::{self, SmibScenario};
use crate::net::Mode;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("config field {field}: {msg}")]
    Range { field: &'static str, msg: String },
    #[error("config names no system: [system] needs `preset` or `dsl`")]
    MissingSystem,
    #[error("referenced path does not exist: {0}")]
    MissingPath(PathBuf),
    #[error("failed to parse ODE source {path}: {msg}")]
    Dsl { path: PathBuf, msg: String },
    #[error("unknown preset: {0}")]
    Preset(#[from] crate::models::ModelError),
}

/// Where the ODE system comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum SystemSource {
    Preset(String),
    DslPath(PathBuf),
}

/// Collocation sampling strategy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplerCfg {
    Grid { dt: f64 },
    MonteCarlo { n: usize, seed: Option<u64> },
}

/// Everything one training run needs, resolved to concrete values.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub system: SystemSource,
    pub mode: Mode,
    /// Hidden layer widths. Defaults depend on mode: [10, 10, 10] per
    /// sub-network in symbolic mode, [20, 20, 20, 20] in conventional mode.
    pub hidden: Vec<usize>,
    pub sampler: SamplerCfg,
    pub quadrature: Quadrature,
    pub max_iterations: usize,
    pub grad_tol: f64,
    pub loss_delta_tol: f64,
    pub adaptive: AdaptiveConfig,
    pub seed: u64,
    pub warm_start: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Parses config text. Purely syntactic: referenced paths are resolved
    /// and checked by [`RunConfig::load`].
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let fail = |line: usize, msg: String| ConfigError::Parse { line, msg };

        let mut section = String::new();
        let mut preset: Option<String> = None;
        let mut dsl: Option<PathBuf> = None;
        let mut mode = Mode::Symbolic;
        let mut mode_set = false;
        let mut hidden: Option<Vec<usize>> = None;
        let mut sampler_kind: Option<String> = None;
        let mut dt: Option<f64> = None;
        let mut mc_n: Option<usize> = None;
        let mut mc_seed: Option<u64> = None;
        let mut quadrature = Quadrature::AsPrinted;
        let mut max_iterations = 50_000usize;
        let mut grad_tol = 1e-8f64;
        let mut loss_delta_tol = 0.0f64;
        let mut adaptive = AdaptiveConfig::default();
        let mut seed = 0u64;
        let mut warm_start: Option<PathBuf> = None;
        let mut out_dir: Option<PathBuf> = None;

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => raw[..pos].trim(),
                None => raw.trim(),
            };
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
                match name {
                    "system" | "network" | "sampler" | "quadrature" | "optimizer"
                    | "adaptive" | "run" => section = name.to_string(),
                    other => return Err(fail(line_no, format!("unknown section [{other}]"))),
                }
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| fail(line_no, format!("expected `key = value`, got `{line}`")))?;
            if value.is_empty() {
                return Err(fail(line_no, format!("key `{key}` has no value")));
            }
            macro_rules! parse_as {
                ($ty:ty) => {
                    value.parse::<$ty>().map_err(|e| {
                        fail(line_no, format!("bad value `{value}` for `{key}`: {e}"))
                    })?
                };
            }
            match (section.as_str(), key) {
                ("system", "preset") => preset = Some(value.to_string()),
                ("system", "dsl") => dsl = Some(PathBuf::from(value)),
                ("network", "mode") => {
                    mode = Mode::from_str(value)
                        .map_err(|e| fail(line_no, format!("bad mode `{value}`: {e}")))?;
                    mode_set = true;
                }
                ("network", "hidden") => {
                    let widths: Result<Vec<usize>, _> =
                        value.split(',').map(|w| w.trim().parse::<usize>()).collect();
                    hidden = Some(widths.map_err(|_| {
                        fail(line_no, format!("bad hidden widths `{value}`"))
                    })?);
                }
                ("sampler", "kind") => sampler_kind = Some(value.to_string()),
                ("sampler", "dt") => dt = Some(parse_as!(f64)),
                ("sampler", "n") => mc_n = Some(parse_as!(usize)),
                ("sampler", "mc_seed") => mc_seed = Some(parse_as!(u64)),
                ("quadrature", "rule") => {
                    quadrature = Quadrature::from_str(value)
                        .map_err(|e| fail(line_no, e))?;
                }
                ("optimizer", "max_iterations") => max_iterations = parse_as!(usize),
                ("optimizer", "grad_tol") => grad_tol = parse_as!(f64),
                ("optimizer", "loss_delta_tol") => loss_delta_tol = parse_as!(f64),
                ("adaptive", "enabled") => adaptive.enabled = parse_as!(bool),
                ("adaptive", "period") => adaptive.period = parse_as!(usize),
                ("adaptive", "gamma") => adaptive.gamma = parse_as!(f64),
                ("adaptive", "adapt_residual") => adaptive.adapt_residual = parse_as!(bool),
                ("run", "seed") => seed = parse_as!(u64),
                ("run", "warm_start") => warm_start = Some(PathBuf::from(value)),
                ("run", "out") => out_dir = Some(PathBuf::from(value)),
                ("", _) => return Err(fail(line_no, "key before any [section]".into())),
                (s, k) => {
                    return Err(fail(line_no, format!("unknown key `{k}` in section [{s}]")))
                }
            }
        }

        let system = match (preset, dsl) {
            (Some(p), None) => SystemSource::Preset(p),
            (None, Some(d)) => SystemSource::DslPath(d),
            (Some(_), Some(_)) => {
                return Err(ConfigError::Parse {
                    line: 0,
                    msg: "[system] must set `preset` or `dsl`, not both".into(),
                })
            }
            (None, None) => return Err(ConfigError::MissingSystem),
        };
        let _ = mode_set;
        let hidden = hidden.unwrap_or_else(|| match mode {
            Mode::Symbolic => vec![10, 10, 10],
            Mode::Conventional => vec![20, 20, 20, 20],
        });
        let sampler = match sampler_kind.as_deref() {
            None | Some("grid") => {
                if mc_n.is_some() || mc_seed.is_some() {
                    return Err(ConfigError::Parse {
                        line: 0,
                        msg: "grid sampler takes `dt`, not `n`/`mc_seed`".into(),
                    });
                }
                SamplerCfg::Grid { dt: dt.unwrap_or(0.01) }
            }
            Some("monte-carlo") => {
                if dt.is_some() {
                    return Err(ConfigError::Parse {
                        line: 0,
                        msg: "monte-carlo sampler takes `n`/`mc_seed`, not `dt`".into(),
                    });
                }
                SamplerCfg::MonteCarlo { n: mc_n.unwrap_or(1000), seed: mc_seed }
            }
            Some(other) => {
                return Err(ConfigError::Parse {
                    line: 0,
                    msg: format!("unknown sampler kind `{other}` (expected grid or monte-carlo)"),
                })
            }
        };

        let cfg = RunConfig {
            system,
            mode,
            hidden,
            sampler,
            quadrature,
            max_iterations,
            grad_tol,
            loss_delta_tol,
            adaptive,
            seed,
            warm_start,
            out_dir,
        };
        cfg.check_ranges()?;
        Ok(cfg)
    }

    /// Reads, parses, resolves relative paths against the config file's
    /// directory, and verifies that referenced files exist.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let resolve = |p: &PathBuf| -> PathBuf {
            if p.is_absolute() {
                p.clone()
            } else {
                base.join(p)
            }
        };
        if let SystemSource::DslPath(p) = &cfg.system {
            let full = resolve(p);
            if !full.exists() {
                return Err(ConfigError::MissingPath(full));
            }
            cfg.system = SystemSource::DslPath(full);
        }
        if let Some(p) = &cfg.warm_start {
            let full = resolve(p);
            if !full.exists() {
                return Err(ConfigError::MissingPath(full));
            }
            cfg.warm_start = Some(full);
        }
        if let Some(p) = &cfg.out_dir {
            cfg.out_dir = Some(resolve(p));
        }
        Ok(cfg)
    }

    fn check_ranges(&self) -> Result<(), ConfigError> {
        let range = |field: &'static str, msg: String| Err(ConfigError::Range { field, msg });
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return range("network.hidden", "widths must be non-empty and positive".into());
        }
        match self.sampler {
            SamplerCfg::Grid { dt } => {
                if !(dt > 0.0) || !dt.is_finite() {
                    return range("sampler.dt", format!("must be positive and finite, got {dt}"));
                }
            }
            SamplerCfg::MonteCarlo { n, .. } => {
                if n == 0 {
                    return range("sampler.n", "must be at least 1".into());
                }
            }
        }
        if self.max_iterations == 0 {
            return range("optimizer.max_iterations", "must be at least 1".into());
        }
        if !(self.grad_tol >= 0.0) {
            return range("optimizer.grad_tol", format!("must be >= 0, got {}", self.grad_tol));
        }
        if !(self.loss_delta_tol >= 0.0) {
            return range(
                "optimizer.loss_delta_tol",
                format!("must be >= 0, got {}", self.loss_delta_tol),
            );
        }
        if self.adaptive.period == 0 {
            return range("adaptive.period", "must be at least 1".into());
        }
        if !(self.adaptive.gamma >= 0.0 && self.adaptive.gamma <= 1.0) {
            return range(
                "adaptive.gamma",
                format!("must lie in [0, 1], got {}", self.adaptive.gamma),
            );
        }
        Ok(())
    }

    /// Builds the ODE system this config names. For presets the scenario
    /// metadata (K coefficients, label) is returned too.
    pub fn build_system(&self) -> Result<(OdeSystem, Option<SmibScenario>), ConfigError> {
        match &self.system {
            SystemSource::Preset(name) => {
                let (sys, sc) = models::preset(name)?;
                Ok((sys, Some(sc)))
            }
            SystemSource::DslPath(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                    path: path.clone(),
                    source,
                })?;
                let sys = parse_system(&text).map_err(|e| ConfigError::Dsl {
                    path: path.clone(),
                    msg: e.to_string(),
                })?;
                Ok((sys, None))
            }
        }
    }

    /// Canonical rendering: fixed key order, normalized values. Two configs
    /// with the same semantics render identically, so the digest ignores
    /// comments, whitespace, and key order in the source file.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        match &self.system {
            SystemSource::Preset(p) => {
                let _ = writeln!(s, "system.preset={p}");
            }
            SystemSource::DslPath(p) => {
                let _ = writeln!(s, "system.dsl={}", p.display());
            }
        }
        let _ = writeln!(s, "network.mode={}", self.mode);
        let widths: Vec<String> = self.hidden.iter().map(|w| w.to_string()).collect();
        let _ = writeln!(s, "network.hidden={}", widths.join(","));
        match self.sampler {
            SamplerCfg::Grid { dt } => {
                let _ = writeln!(s, "sampler=grid dt={dt:e}");
            }
            SamplerCfg::MonteCarlo { n, seed } => {
                let _ = writeln!(s, "sampler=monte-carlo n={n} mc_seed={seed:?}");
            }
        }
        let _ = writeln!(s, "quadrature={}", self.quadrature);
        let _ = writeln!(s, "optimizer.max_iterations={}", self.max_iterations);
        let _ = writeln!(s, "optimizer.grad_tol={:e}", self.grad_tol);
        let _ = writeln!(s, "optimizer.loss_delta_tol={:e}", self.loss_delta_tol);
        let _ = writeln!(
            s,
            "adaptive={} period={} gamma={:e} adapt_residual={}",
            self.adaptive.enabled, self.adaptive.period, self.adaptive.gamma,
            self.adaptive.adapt_residual
        );
        let _ = writeln!(s, "run.seed={}", self.seed);
        s
    }

    /// FNV-1a hash of the canonical rendering, as 16 hex digits. Stored in
    /// checkpoints so a model can be traced back to the exact settings that
    /// produced it.
    pub fn digest(&self) -> String {
        format!("{:016x}", fnv1a64(self.canonical().as_bytes()))
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::init_ensemble;
    use std::io::Write as _;

    const FULL: &str = "\
[system]
preset = normal

[network]
mode = symbolic
hidden = 10,10,10

[sampler]
kind = grid
dt = 0.01

[quadrature]
rule = as-printed

[optimizer]
max_iterations = 50000
grad_tol = 1e-8
loss_delta_tol = 0.0

[adaptive]
enabled = false
period = 10
gamma = 0.9
adapt_residual = false

[run]
seed = 0
";

    #[test]
    fn full_config_parses() {
        let cfg = RunConfig::parse(FULL).unwrap();
        assert_eq!(cfg.system, SystemSource::Preset("normal".into()));
        assert_eq!(cfg.mode, Mode::Symbolic);
        assert_eq!(cfg.hidden, vec![10, 10, 10]);
        assert_eq!(cfg.sampler, SamplerCfg::Grid { dt: 0.01 });
        assert_eq!(cfg.quadrature, Quadrature::AsPrinted);
        assert_eq!(cfg.max_iterations, 50_000);
        assert!(!cfg.adaptive.enabled);
        assert_eq!(cfg.adaptive.period, 10);
        assert_eq!(cfg.adaptive.gamma, 0.9);
        assert_eq!(cfg.seed, 0);
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = RunConfig::parse("[system]\npreset = normal\n").unwrap();
        // Defaults must exactly reproduce the full form above.
        assert_eq!(cfg, RunConfig::parse(FULL).unwrap());
    }

    #[test]
    fn hidden_defaults_follow_mode() {
        let sym = RunConfig::parse("[system]\npreset = normal\n").unwrap();
        let conv =
            RunConfig::parse("[system]\npreset = normal\n[network]\nmode = conventional\n")
                .unwrap();
        let (e1, _) = init_ensemble(sym.mode, 2, &sym.hidden, 0).unwrap();
        let (e2, _) = init_ensemble(conv.mode, 2, &conv.hidden, 0).unwrap();
        assert_eq!(e1.param_count(), 502);
        assert_eq!(e2.param_count(), 1342);
    }

    #[test]
    fn monte_carlo_sampler_parses() {
        let cfg = RunConfig::parse(
            "[system]\npreset = normal\n[sampler]\nkind = monte-carlo\nn = 500\nmc_seed = 7\n",
        )
        .unwrap();
        assert_eq!(cfg.sampler, SamplerCfg::MonteCarlo { n: 500, seed: Some(7) });
        let no_seed =
            RunConfig::parse("[system]\npreset = normal\n[sampler]\nkind = monte-carlo\n")
                .unwrap();
        assert_eq!(no_seed.sampler, SamplerCfg::MonteCarlo { n: 1000, seed: None });
        // Mixing grid keys into monte-carlo is rejected.
        assert!(RunConfig::parse(
            "[system]\npreset = normal\n[sampler]\nkind = monte-carlo\ndt = 0.01\n"
        )
        .is_err());
    }

    #[test]
    fn range_violations_are_rejected() {
        let bad = [
            ("[system]\npreset = x\n[sampler]\ndt = 0\n", "sampler.dt"),
            ("[system]\npreset = x\n[sampler]\ndt = -1\n", "sampler.dt"),
            ("[system]\npreset = x\n[adaptive]\ngamma = 1.5\n", "adaptive.gamma"),
            ("[system]\npreset = x\n[adaptive]\nperiod = 0\n", "adaptive.period"),
            ("[system]\npreset = x\n[network]\nhidden = 10,0,10\n", "network.hidden"),
            ("[system]\npreset = x\n[optimizer]\nmax_iterations = 0\n", "optimizer.max_iterations"),
        ];
        for (text, field) in bad {
            match RunConfig::parse(text) {
                Err(ConfigError::Range { field: f, .. }) => assert_eq!(f, field),
                other => panic!("expected Range({field}) for {text:?}, got {other:?}"),
            }
        }
    }

    #[test]
    fn unknown_keys_and_sections_fail_with_line() {
        match RunConfig::parse("[system]\npreset = normal\n[adaptive]\ngamm = 0.9\n") {
            Err(ConfigError::Parse { line, msg }) => {
                assert_eq!(line, 4);
                assert!(msg.contains("gamm"), "{msg}");
            }
            other => panic!("expected Parse error, got {other:?}"),
        }
        assert!(RunConfig::parse("[systm]\npreset = normal\n").is_err());
        assert!(RunConfig::parse("preset = normal\n").is_err());
        assert!(RunConfig::parse("[system]\n").is_err());
    }

    #[test]
    fn comments_and_layout_do_not_change_the_digest() {
        let tidy = RunConfig::parse(FULL).unwrap();
        let messy = RunConfig::parse(
            "# training run\n[system]\n  preset = normal  # the stable case\n\n[run]\nseed = 0\n",
        )
        .unwrap();
        assert_eq!(tidy.digest(), messy.digest());
        let other_seed =
            RunConfig::parse("[system]\npreset = normal\n[run]\nseed = 1\n").unwrap();
        assert_ne!(tidy.digest(), other_seed.digest());
        assert_eq!(tidy.digest().len(), 16);
    }

    #[test]
    fn load_checks_referenced_paths() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("run.ini");
        std::fs::write(&cfg_path, "[system]\ndsl = missing.ode\n").unwrap();
        assert!(matches!(
            RunConfig::load(&cfg_path),
            Err(ConfigError::MissingPath(_))
        ));

        let ode_path = dir.path().join("sys.ode");
        let mut f = std::fs::File::create(&ode_path).unwrap();
        writeln!(f, "d(y)/dt = -y;\ninit y=1;\ndomain 0 1").unwrap();
        std::fs::write(&cfg_path, "[system]\ndsl = sys.ode\n").unwrap();
        let cfg = RunConfig::load(&cfg_path).unwrap();
        let (sys, scenario) = cfg.build_system().unwrap();
        assert_eq!(sys.state_names(), &["y".to_string()]);
        assert!(scenario.is_none());
    }

    #[test]
    fn build_system_resolves_presets() {
        let cfg = RunConfig::parse("[system]\npreset = pole-slipping\n").unwrap();
        let (sys, scenario) = cfg.build_system().unwrap();
        assert_eq!(scenario.unwrap().k3, 1.6);
        assert_eq!(sys.n_states(), 2);
        let missing = RunConfig::parse("[system]\npreset = bogus\n").unwrap();
        assert!(matches!(missing.build_system(), Err(ConfigError::Preset(_))));
    }
}

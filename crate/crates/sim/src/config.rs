//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! Unknown keys are rejected so that typos do not silently fall back to
//! defaults. Every key can be overridden from the command line.
//!
//! | key | values | default |
//! |-----|--------|---------|
//! | `surface` | `sphere`, `cell` | `sphere` |
//! | `box` | `xmin,ymin,zmin,xmax,ymax,zmax` | surface dependent |
//! | `level` | integer ≥ 1 | `3` |
//! | `scheme` | `sav_bdf1`, `sav_bdf2` | `sav_bdf2` |
//! | `dt` | initial / fixed step | `0.005` |
//! | `t_end` | final time | `1` |
//! | `adaptive` | `true`, `false` | `false` |
//! | `adaptive_tol`, `adaptive_zeta` | controller tolerance and safety factor | `1e-3`, `0.9` |
//! | `dt_min`, `dt_max`, `ratio_max`, `max_retries` | controller clamps | `1e-7`, `10`, `3.5`, `10` |
//! | `epsilon`, `rho`, `c_shift` | model parameters | `0.05`, `1`, `0` |
//! | `mobility` | `degenerate` or a constant value | `degenerate` |
//! | `ic` | `manufactured`, `bernoulli`, `constant` | `bernoulli` |
//! | `ic_fraction`, `ic_seed`, `ic_value` | IC parameters | `0.5`, `1`, `0.5` |
//! | `forcing` | `none`, `manufactured` | `none` |
//! | `output_dir` | run directory (env `SURFCH_OUTPUT_DIR` wins) | `output` |
//! | `csv` | energy history file name inside `output_dir` | `energy.csv` |
//! | `vtk_every` | snapshot period in steps, 0 disables | `0` |
//! | `vtk_dir` | snapshot directory inside `output_dir` | `snapshots` |
//! | `solver` | `direct`, `gmres` | `direct` |
//! | `solver_tol`, `solver_max_iter`, `preconditioner` | solver settings | `1e-10`, `5000`, `diagonal` |
//! | `levels` | comma list for `converge` | `3,4,5` |
//! | `dt_coarse` | step at the first convergence level | `0.02` |

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use surfch_core::geometry::LevelSet;
use surfch_core::mesh::Aabb;
use surfch_core::physics::{Mobility, PhysicsParams};
use surfch_core::sav::{Scheme, TimeController};
use surfch_core::solver::{Preconditioner, SolverConfig, SolverMethod};
use thiserror::Error;

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "SURFCH_OUTPUT_DIR";

const KEYS: &[&str] = &[
    "surface", "box", "level", "scheme", "dt", "t_end", "adaptive", "adaptive_tol", "adaptive_zeta", "dt_min",
    "dt_max", "ratio_max", "max_retries", "epsilon", "rho", "c_shift", "mobility", "ic", "ic_fraction", "ic_seed",
    "ic_value", "forcing", "output_dir", "csv", "vtk_every", "vtk_dir", "solver", "solver_tol", "solver_max_iter",
    "preconditioner", "levels", "dt_coarse",
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    Value { key: String, value: String, reason: String },
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Surface {
    Sphere,
    Cell,
}

impl Surface {
    pub fn levelset(self) -> LevelSet {
        match self {
            Surface::Sphere => LevelSet::unit_sphere(),
            Surface::Cell => LevelSet::IdealizedCell,
        }
    }

    pub fn default_box(self) -> Aabb {
        match self {
            Surface::Sphere => Aabb::sphere_box(),
            Surface::Cell => Aabb::cell_box(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitialCondition {
    Manufactured,
    Bernoulli { fraction: f64, seed: u64 },
    Constant(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForcingKind {
    None,
    Manufactured,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub csv: String,
    pub vtk_every: usize,
    pub vtk_dir: String,
}

impl OutputConfig {
    pub fn csv_path(&self) -> PathBuf {
        self.dir.join(&self.csv)
    }

    pub fn vtk_path(&self) -> PathBuf {
        self.dir.join(&self.vtk_dir)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub surface: Surface,
    pub domain: Aabb,
    pub level: u32,
    pub scheme: Scheme,
    pub dt: f64,
    pub t_end: f64,
    /// `Some` for adaptive runs; its `dt` is the initial step.
    pub adaptive: Option<TimeController>,
    pub physics: PhysicsParams,
    pub ic: InitialCondition,
    pub forcing: ForcingKind,
    pub output: OutputConfig,
    pub solver: SolverConfig,
    pub levels: Vec<u32>,
    pub dt_coarse: f64,
}

/// Raw key/value pairs in file order, later entries winning.
#[derive(Clone, Debug, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut raw = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line: i + 1, text: line.to_string() })?;
            raw.set(k.trim(), v.trim())?;
        }
        Ok(raw)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), ConfigError> {
        let (k, v) = spec
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax { line: 0, text: spec.to_string() })?;
        self.set(k.trim(), v.trim())
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e: T::Err| bad(key, v, e.to_string())),
        }
    }

    /// Resolves defaults and validates. `SURFCH_OUTPUT_DIR` overrides `output_dir`.
    pub fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let surface = match self.get("surface").unwrap_or("sphere") {
            "sphere" => Surface::Sphere,
            "cell" => Surface::Cell,
            v => return Err(bad("surface", v, "expected sphere or cell")),
        };
        let domain = match self.get("box") {
            None => surface.default_box(),
            Some(v) => {
                let b: Vec<f64> = v
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| bad("box", v, e.to_string()))?;
                if b.len() != 6 || (0..3).any(|i| !(b[i] < b[i + 3])) {
                    return Err(bad("box", v, "expected xmin,ymin,zmin,xmax,ymax,zmax with min < max"));
                }
                Aabb::new([b[0], b[1], b[2]], [b[3], b[4], b[5]])
            }
        };
        let level: u32 = self.parsed("level", 3)?;
        if level < 1 {
            return Err(bad("level", &level.to_string(), "must be at least 1"));
        }
        let scheme = match self.get("scheme").unwrap_or("sav_bdf2") {
            "sav_bdf1" => Scheme::Bdf1,
            "sav_bdf2" => Scheme::Bdf2,
            v => return Err(bad("scheme", v, "expected sav_bdf1 or sav_bdf2")),
        };
        let dt: f64 = self.parsed("dt", 0.005)?;
        let t_end: f64 = self.parsed("t_end", 1.0)?;
        positive("dt", dt)?;
        positive("t_end", t_end)?;

        let adaptive = if self.parsed("adaptive", false)? {
            let ctrl = TimeController {
                dt,
                tol: self.parsed("adaptive_tol", 1e-3)?,
                zeta: self.parsed("adaptive_zeta", 0.9)?,
                dt_min: self.parsed("dt_min", 1e-7)?,
                dt_max: self.parsed("dt_max", 10.0)?,
                ratio_max: self.parsed("ratio_max", 3.5)?,
                max_retries: self.parsed("max_retries", 10)?,
            };
            ctrl.validate().map_err(|e| bad("adaptive", "true", e.to_string()))?;
            Some(ctrl)
        } else {
            None
        };

        let mobility = match self.get("mobility").unwrap_or("degenerate") {
            "degenerate" => Mobility::Degenerate,
            v => Mobility::Constant(v.parse().map_err(|_| bad("mobility", v, "expected degenerate or a number"))?),
        };
        let physics = PhysicsParams::new(
            self.parsed("epsilon", 0.05)?,
            self.parsed("rho", 1.0)?,
            self.parsed("c_shift", 0.0)?,
            mobility,
        )
        .map_err(|e| bad("physics", "", e.to_string()))?;

        let ic = match self.get("ic").unwrap_or("bernoulli") {
            "manufactured" => InitialCondition::Manufactured,
            "bernoulli" => {
                let fraction: f64 = self.parsed("ic_fraction", 0.5)?;
                if !(fraction > 0.0 && fraction < 1.0) {
                    return Err(bad("ic_fraction", &fraction.to_string(), "must lie in (0, 1)"));
                }
                InitialCondition::Bernoulli { fraction, seed: self.parsed("ic_seed", 1)? }
            }
            "constant" => InitialCondition::Constant(self.parsed("ic_value", 0.5)?),
            v => return Err(bad("ic", v, "expected manufactured, bernoulli or constant")),
        };
        let forcing = match self.get("forcing").unwrap_or("none") {
            "none" => ForcingKind::None,
            "manufactured" => ForcingKind::Manufactured,
            v => return Err(bad("forcing", v, "expected none or manufactured")),
        };
        if forcing == ForcingKind::Manufactured && surface != Surface::Sphere {
            return Err(bad("forcing", "manufactured", "only defined on the unit sphere"));
        }

        let dir = match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(d) if !d.is_empty() => PathBuf::from(d),
            _ => PathBuf::from(self.get("output_dir").unwrap_or("output")),
        };
        let output = OutputConfig {
            dir,
            csv: self.get("csv").unwrap_or("energy.csv").to_string(),
            vtk_every: self.parsed("vtk_every", 0)?,
            vtk_dir: self.get("vtk_dir").unwrap_or("snapshots").to_string(),
        };

        let solver = SolverConfig {
            method: match self.get("solver").unwrap_or("direct") {
                "direct" => SolverMethod::SparseDirect,
                "gmres" => SolverMethod::IterativeKrylov,
                v => return Err(bad("solver", v, "expected direct or gmres")),
            },
            rel_tolerance: self.parsed("solver_tol", 1e-10)?,
            max_iterations: self.parsed("solver_max_iter", 5000)?,
            preconditioner: match self.get("preconditioner").unwrap_or("diagonal") {
                "none" => Preconditioner::None,
                "diagonal" => Preconditioner::DiagonalBlock,
                v => return Err(bad("preconditioner", v, "expected none or diagonal")),
            },
            ..SolverConfig::default()
        };
        solver.validate().map_err(|e| bad("solver_tol", "", e.to_string()))?;

        let levels = match self.get("levels") {
            None => vec![3, 4, 5],
            Some(v) => v
                .split(',')
                .map(|s| s.trim().parse::<u32>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| bad("levels", v, e.to_string()))?,
        };
        if levels.is_empty() || levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("levels", &format!("{levels:?}"), "must be strictly ascending"));
        }
        let dt_coarse: f64 = self.parsed("dt_coarse", 0.02)?;
        positive("dt_coarse", dt_coarse)?;

        Ok(RunConfig {
            surface,
            domain,
            level,
            scheme,
            dt,
            t_end,
            adaptive,
            physics,
            ic,
            forcing,
            output,
            solver,
            levels,
            dt_coarse,
        })
    }
}

fn bad(key: &str, value: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Value { key: key.to_string(), value: value.to_string(), reason: reason.into() }
}

fn positive(key: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(key, &v.to_string(), "must be positive"))
    }
}

impl RunConfig {
    /// Loads `path` and applies `overrides` (each `key=value`) in order.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::load(path)?;
        for o in overrides {
            raw.apply_override(o)?;
        }
        raw.resolve()
    }
}

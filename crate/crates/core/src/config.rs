//! Run configuration in a flat INI dialect.
//!
//! ```text
//! seed = 7
//! [grid]
//! Nx = 12
//! [params]
//! Re1 = 1.0
//! [forcing]
//! Q1 = mode
//! Q1.amplitude = 5
//! Q1.m = 1
//! [stepping]
//! dt = 0.01
//! t_end = 4
//! ```
//!
//! Keys are case sensitive, `#` and `;` start comments, unknown keys are an
//! error. Only `grid.Nx` and the stepping keys `dt`, `t_end` are required.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::grid::{Grid, GridError};
use crate::params::{ForcingPreset, ForcingSpec, PhysParams};
use crate::stepper::StepConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { key: String, line: usize },
    #[error("missing required key `{key}`")]
    MissingKey { key: String },
    #[error("line {line}: `{key}` = {value} out of range ({reason})")]
    OutOfRange {
        key: String,
        value: String,
        reason: String,
        line: usize,
    },
    #[error("line {line}: cannot parse `{value}` for `{key}`")]
    BadValue { key: String, value: String, line: usize },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
}

impl ConfigError {
    /// The offending key, when there is one.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::UnknownKey { key, .. }
            | ConfigError::MissingKey { key }
            | ConfigError::OutOfRange { key, .. }
            | ConfigError::BadValue { key, .. } => Some(key),
            ConfigError::Syntax { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridBlock {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub lx: f64,
    pub ly: f64,
}

impl GridBlock {
    pub fn build(&self) -> Grid {
        Grid::new(self.nx, self.ny, self.nz, self.lx, self.ly).expect("validated grid")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputBlock {
    pub directory: PathBuf,
    pub energy: bool,
    pub snapshots: bool,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            energy: true,
            snapshots: false,
        }
    }
}

/// Initial data: a seeded random smooth state of the given `H` norm, or a
/// snapshot file.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialBlock {
    pub amplitude: f64,
    pub snapshot: Option<PathBuf>,
}

impl Default for InitialBlock {
    fn default() -> Self {
        Self {
            amplitude: 1.0,
            snapshot: None,
        }
    }
}

/// Settings read by the experiments and the covering analysis. Each
/// experiment uses the subset it needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentBlock {
    pub name: Option<String>,
    /// `V` norms of the ensemble members of the absorbing-ball run.
    pub radii: Vec<f64>,
    pub tail: f64,
    pub tolerance: Option<f64>,
    /// Time to run before smoothing and regularity measurements.
    pub pre_evolve: f64,
    pub t_bar: f64,
    pub magnitudes: Vec<f64>,
    pub theta: f64,
    pub k_max: usize,
    /// Time step of the reduced map used by the covering analysis.
    pub map_time: f64,
    /// Number of trajectories sampled for the covering analysis.
    pub trajectories: usize,
    /// `V` norm of the initial states of those trajectories.
    pub v_norm: f64,
}

impl Default for ExperimentBlock {
    fn default() -> Self {
        Self {
            name: None,
            radii: vec![1.0, 2.0, 4.0],
            tail: 2.0,
            tolerance: None,
            pre_evolve: 4.0,
            t_bar: 1.0,
            magnitudes: vec![1e-3, 1e-4, 1e-5],
            theta: 0.5,
            k_max: 6,
            map_time: 0.05,
            trajectories: 3,
            v_norm: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: GridBlock,
    pub params: PhysParams,
    pub stepping: StepConfig,
    pub output: OutputBlock,
    pub initial: InitialBlock,
    pub experiment: ExperimentBlock,
    pub seed: u64,
}

struct Entry {
    value: String,
    line: usize,
    used: bool,
}

struct Table(BTreeMap<String, Entry>);

impl Table {
    fn take(&mut self, key: &str) -> Option<(String, usize)> {
        self.0.get_mut(key).map(|e| {
            e.used = true;
            (e.value.clone(), e.line)
        })
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<(T, usize)>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse::<T>()
                .map(|x| Some((x, line)))
                .map_err(|_| ConfigError::BadValue {
                    key: key.to_string(),
                    value: v,
                    line,
                }),
        }
    }

    fn num(&mut self, key: &str, default: f64) -> Result<(f64, usize), ConfigError> {
        Ok(self.parse::<f64>(key)?.unwrap_or((default, 0)))
    }

    fn list(&mut self, key: &str, default: &[f64]) -> Result<Vec<f64>, ConfigError> {
        match self.take(key) {
            None => Ok(default.to_vec()),
            Some((v, line)) => v
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| ConfigError::BadValue {
                    key: key.to_string(),
                    value: v,
                    line,
                }),
        }
    }

    fn flag(&mut self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.take(key) {
            None => Ok(default),
            Some((v, line)) => match v.as_str() {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(ConfigError::BadValue {
                    key: key.to_string(),
                    value: v,
                    line,
                }),
            },
        }
    }
}

fn out_of_range(key: &str, value: impl ToString, reason: &str, line: usize) -> ConfigError {
    ConfigError::OutOfRange {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.to_string(),
        line,
    }
}

fn lex(text: &str) -> Result<Table, ConfigError> {
    let mut section = String::new();
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let s = raw.split(['#', ';']).next().unwrap_or("").trim();
        if s.is_empty() {
            continue;
        }
        if let Some(rest) = s.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                line,
                message: "unterminated section header".into(),
            })?;
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = s.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line,
            message: format!("expected `key = value`, found `{s}`"),
        })?;
        let key = if section.is_empty() {
            k.trim().to_string()
        } else {
            format!("{section}.{}", k.trim())
        };
        if map.contains_key(&key) {
            return Err(ConfigError::Syntax {
                line,
                message: format!("duplicate key `{key}`"),
            });
        }
        map.insert(
            key,
            Entry {
                value: v.trim().to_string(),
                line,
                used: false,
            },
        );
    }
    Ok(Table(map))
}

fn forcing(t: &mut Table, name: &str) -> Result<ForcingSpec, ConfigError> {
    let key = format!("forcing.{name}");
    let (preset, line) = t.take(&key).unwrap_or(("zero".into(), 0));
    let default_amp = if preset == "zero" { 0.0 } else { 1.0 };
    let (amplitude, _) = t.num(&format!("{key}.amplitude"), default_amp)?;
    let mut int = |k: &str, d: u32| -> Result<u32, ConfigError> {
        Ok(t.parse::<u32>(&format!("{key}.{k}"))?.map(|x| x.0).unwrap_or(d))
    };
    let preset = match preset.as_str() {
        "zero" => ForcingPreset::Zero,
        "mode" => ForcingPreset::Mode {
            m: int("m", 1)?,
            n: int("n", 1)?,
            l: int("l", 0)?,
        },
        "bump" => {
            let cx = t.num(&format!("{key}.cx"), 0.5)?.0;
            let cy = t.num(&format!("{key}.cy"), 0.5)?.0;
            let cz = t.num(&format!("{key}.cz"), 0.5)?.0;
            let (width, wl) = t.num(&format!("{key}.width"), 0.2)?;
            if width.is_nan() || width <= 0.0 {
                return Err(out_of_range(&format!("{key}.width"), width, "must be positive", wl));
            }
            ForcingPreset::Bump { cx, cy, cz, width }
        }
        other => return Err(out_of_range(&key, other, "preset must be zero, mode or bump", line)),
    };
    if !amplitude.is_finite() {
        return Err(out_of_range(
            &format!("{key}.amplitude"),
            amplitude,
            "must be finite",
            line,
        ));
    }
    Ok(ForcingSpec { preset, amplitude })
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut t = lex(text)?;
    let line_of = |t: &Table, k: &str| t.0.get(k).map(|e| e.line).unwrap_or(0);

    let seed = t.parse::<u64>("seed")?.map(|x| x.0).unwrap_or(0);

    let (nx, lnx) = t
        .parse::<usize>("grid.Nx")?
        .ok_or(ConfigError::MissingKey { key: "grid.Nx".into() })?;
    let ny = t.parse::<usize>("grid.Ny")?.map(|x| x.0).unwrap_or(nx);
    let nz = t.parse::<usize>("grid.Nz")?.map(|x| x.0).unwrap_or(nx);
    let (lx, llx) = t.num("grid.Lx", 1.0)?;
    let (ly, lly) = t.num("grid.Ly", 1.0)?;
    if let Err(e) = Grid::new(nx, ny, nz, lx, ly) {
        let (key, value) = match e {
            GridError::TooFewCells { name, value } => (name, value.to_string()),
            GridError::BadExtent { name, value } => (name, value.to_string()),
        };
        let line = match key {
            "Nx" => lnx,
            "Lx" => llx,
            "Ly" => lly,
            k => line_of(&t, &format!("grid.{k}")),
        };
        return Err(out_of_range(&format!("grid.{key}"), value, &e.to_string(), line));
    }

    let mut params = PhysParams::default();
    for (key, _) in PhysParams::default().scalars() {
        if let Some((v, _)) = t.parse::<f64>(&format!("params.{key}"))? {
            *params.scalar_mut(key).expect("known scalar") = v;
        }
    }
    params.Q1 = forcing(&mut t, "Q1")?;
    params.Q2 = forcing(&mut t, "Q2")?;
    if let Err(crate::params::ParamError::OutOfRange { key, value, reason }) = params.validate() {
        let line = line_of(&t, &key);
        return Err(out_of_range(&key, value, reason, line));
    }

    let d = StepConfig::default();
    let (dt, _) = t.parse::<f64>("stepping.dt")?.ok_or(ConfigError::MissingKey {
        key: "stepping.dt".into(),
    })?;
    let (t_end, _) = t.parse::<f64>("stepping.t_end")?.ok_or(ConfigError::MissingKey {
        key: "stepping.t_end".into(),
    })?;
    let stepping = StepConfig {
        dt,
        t_end,
        cfl_max: t.num("stepping.cfl_max", d.cfl_max)?.0,
        theta: t.num("stepping.theta_scheme", d.theta)?.0,
        snapshot_every: t
            .parse::<usize>("stepping.snapshot_every")?
            .map(|x| x.0)
            .unwrap_or(d.snapshot_every),
        diffusion_tol: t.num("stepping.diffusion_tol", d.diffusion_tol)?.0,
        projection_tol: t.num("stepping.projection_tol", d.projection_tol)?.0,
    };
    if let Err(crate::stepper::ConfigError::OutOfRange { key, value, reason }) = stepping.validate() {
        let k = format!("stepping.{key}");
        let line = line_of(&t, &k);
        return Err(out_of_range(&k, value, reason, line));
    }
    for k in ["diffusion_tol", "projection_tol"] {
        let key = format!("stepping.{k}");
        let v = if k == "diffusion_tol" {
            stepping.diffusion_tol
        } else {
            stepping.projection_tol
        };
        if !(v > 0.0 && v < 1.0) {
            return Err(out_of_range(&key, v, "must lie in (0, 1)", line_of(&t, &key)));
        }
    }

    let od = OutputBlock::default();
    let output = OutputBlock {
        directory: t
            .take("output.directory")
            .map(|x| PathBuf::from(x.0))
            .unwrap_or(od.directory),
        energy: t.flag("output.energy", od.energy)?,
        snapshots: t.flag("output.snapshots", od.snapshots)?,
    };

    let (amplitude, la) = t.num("initial.amplitude", 1.0)?;
    if !(amplitude >= 0.0 && amplitude.is_finite()) {
        return Err(out_of_range("initial.amplitude", amplitude, "must be nonnegative", la));
    }
    let initial = InitialBlock {
        amplitude,
        snapshot: t.take("initial.snapshot").map(|x| PathBuf::from(x.0)),
    };

    let ed = ExperimentBlock::default();
    let (theta, lt) = t.num("experiment.theta", ed.theta)?;
    if !(theta > 0.0 && theta < 1.0) {
        return Err(out_of_range("experiment.theta", theta, "must lie in (0, 1)", lt));
    }
    let experiment = ExperimentBlock {
        name: t.take("experiment.name").map(|x| x.0),
        radii: t.list("experiment.radii", &ed.radii)?,
        tail: t.num("experiment.tail", ed.tail)?.0,
        tolerance: t.parse::<f64>("experiment.tolerance")?.map(|x| x.0),
        pre_evolve: t.num("experiment.pre_evolve", ed.pre_evolve)?.0,
        t_bar: t.num("experiment.t_bar", ed.t_bar)?.0,
        magnitudes: t.list("experiment.magnitudes", &ed.magnitudes)?,
        theta,
        k_max: t.parse::<usize>("experiment.k_max")?.map(|x| x.0).unwrap_or(ed.k_max),
        map_time: t.num("experiment.map_time", ed.map_time)?.0,
        trajectories: t
            .parse::<usize>("experiment.trajectories")?
            .map(|x| x.0)
            .unwrap_or(ed.trajectories),
        v_norm: t.num("experiment.v_norm", ed.v_norm)?.0,
    };
    for (k, v) in [
        ("experiment.tail", experiment.tail),
        ("experiment.t_bar", experiment.t_bar),
        ("experiment.map_time", experiment.map_time),
        ("experiment.v_norm", experiment.v_norm),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(out_of_range(k, v, "must be positive", line_of(&t, k)));
        }
    }

    if let Some((k, e)) = t.0.iter().find(|(_, e)| !e.used) {
        return Err(ConfigError::UnknownKey {
            key: k.clone(),
            line: e.line,
        });
    }

    Ok(RunConfig {
        grid: GridBlock { nx, ny, nz, lx, ly },
        params,
        stepping,
        output,
        initial,
        experiment,
        seed,
    })
}

fn forcing_text(out: &mut String, name: &str, f: &ForcingSpec) {
    match f.preset {
        ForcingPreset::Zero => {
            let _ = writeln!(out, "{name} = zero");
        }
        ForcingPreset::Mode { m, n, l } => {
            let _ = writeln!(
                out,
                "{name} = mode\n{name}.amplitude = {:?}\n{name}.m = {m}\n{name}.n = {n}\n{name}.l = {l}",
                f.amplitude
            );
        }
        ForcingPreset::Bump { cx, cy, cz, width } => {
            let _ = writeln!(
                out,
                "{name} = bump\n{name}.amplitude = {:?}\n{name}.cx = {cx:?}\n{name}.cy = {cy:?}\n{name}.cz = {cz:?}\n{name}.width = {width:?}",
                f.amplitude
            );
        }
    }
}

fn list_text(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ")
}

impl RunConfig {
    /// Canonical text with every key spelled out; parses back to an equal
    /// config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "seed = {}", self.seed);
        let g = &self.grid;
        let _ = writeln!(
            out,
            "\n[grid]\nNx = {}\nNy = {}\nNz = {}\nLx = {:?}\nLy = {:?}",
            g.nx, g.ny, g.nz, g.lx, g.ly
        );
        let _ = writeln!(out, "\n[params]");
        for (k, v) in self.params.scalars() {
            let _ = writeln!(out, "{k} = {v:?}");
        }
        let _ = writeln!(out, "\n[forcing]");
        forcing_text(&mut out, "Q1", &self.params.Q1);
        forcing_text(&mut out, "Q2", &self.params.Q2);
        let s = &self.stepping;
        let _ = writeln!(
            out,
            "\n[stepping]\ndt = {:?}\nt_end = {:?}\ntheta_scheme = {:?}\ncfl_max = {:?}\nsnapshot_every = {}\ndiffusion_tol = {:?}\nprojection_tol = {:?}",
            s.dt, s.t_end, s.theta, s.cfl_max, s.snapshot_every, s.diffusion_tol, s.projection_tol
        );
        let o = &self.output;
        let _ = writeln!(
            out,
            "\n[output]\ndirectory = {}\nenergy = {}\nsnapshots = {}",
            o.directory.display(),
            o.energy,
            o.snapshots
        );
        let _ = writeln!(out, "\n[initial]\namplitude = {:?}", self.initial.amplitude);
        if let Some(p) = &self.initial.snapshot {
            let _ = writeln!(out, "snapshot = {}", p.display());
        }
        let e = &self.experiment;
        let _ = writeln!(out, "\n[experiment]");
        if let Some(n) = &e.name {
            let _ = writeln!(out, "name = {n}");
        }
        let _ = writeln!(out, "radii = {}\ntail = {:?}", list_text(&e.radii), e.tail);
        if let Some(t) = e.tolerance {
            let _ = writeln!(out, "tolerance = {t:?}");
        }
        let _ = writeln!(
            out,
            "pre_evolve = {:?}\nt_bar = {:?}\nmagnitudes = {}\ntheta = {:?}\nk_max = {}\nmap_time = {:?}\ntrajectories = {}\nv_norm = {:?}",
            e.pre_evolve,
            e.t_bar,
            list_text(&e.magnitudes),
            e.theta,
            e.k_max,
            e.map_time,
            e.trajectories,
            e.v_norm
        );
        out
    }

    /// SHA-256 of the canonical text without the output block, so the same
    /// run written elsewhere keeps its fingerprint.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.output = OutputBlock::default();
        hex::encode(Sha256::digest(c.to_text().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[grid]\nNx = 8\n[stepping]\ndt = 0.01\nt_end = 1\n";

    #[test]
    fn minimal_config_fills_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!((c.grid.nx, c.grid.ny, c.grid.nz), (8, 8, 8));
        assert_eq!(c.params, PhysParams::default());
        assert_eq!(c.stepping.snapshot_every, StepConfig::default().snapshot_every);
        assert_eq!(c.seed, 0);
        assert_eq!(c.fingerprint().len(), 64);
    }

    #[test]
    fn negative_reynolds_number_is_out_of_range() {
        let e = parse_config(&format!("{MINIMAL}[params]\nRe1 = -1\n")).unwrap_err();
        assert!(
            matches!(e, ConfigError::OutOfRange { ref key, line: 7, .. } if key == "params.Re1"),
            "{e:?}"
        );
    }

    #[test]
    fn misspelled_key_is_unknown() {
        let e = parse_config(&format!("{MINIMAL}[params]\nRt5 = 1\n")).unwrap_err();
        assert_eq!(
            e,
            ConfigError::UnknownKey {
                key: "params.Rt5".into(),
                line: 7
            }
        );
        assert_eq!(e.key(), Some("params.Rt5"));
    }

    #[test]
    fn missing_required_keys() {
        assert_eq!(
            parse_config("[stepping]\ndt = 0.1\nt_end = 1\n").unwrap_err(),
            ConfigError::MissingKey { key: "grid.Nx".into() }
        );
        assert_eq!(
            parse_config("[grid]\nNx = 4\n[stepping]\nt_end = 1\n").unwrap_err(),
            ConfigError::MissingKey {
                key: "stepping.dt".into()
            }
        );
    }

    #[test]
    fn syntax_errors_name_the_line() {
        assert!(matches!(
            parse_config("[grid\nNx = 4\n"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            parse_config("[grid]\nNx 4\n"),
            Err(ConfigError::Syntax { line: 2, .. })
        ));
        assert!(matches!(
            parse_config("[grid]\nNx = four\n"),
            Err(ConfigError::BadValue { line: 2, .. })
        ));
        assert!(matches!(
            parse_config(&format!("{MINIMAL}[grid]\nNx = 4\n")),
            Err(ConfigError::Syntax { .. })
        ));
    }

    #[test]
    fn stepping_and_forcing_ranges() {
        let e = parse_config("[grid]\nNx = 8\n[stepping]\ndt = 0.01\nt_end = 1\ntheta_scheme = 0.7\n").unwrap_err();
        assert_eq!(e.key(), Some("stepping.theta_scheme"));
        let e = parse_config(&format!("{MINIMAL}[forcing]\nQ1 = wave\n")).unwrap_err();
        assert_eq!(e.key(), Some("forcing.Q1"));
        let e = parse_config("[grid]\nNx = 1\n[stepping]\ndt = 0.01\nt_end = 1\n").unwrap_err();
        assert_eq!(e.key(), Some("grid.Nx"));
    }

    #[test]
    fn full_config_round_trips() {
        let text = "seed = 9\n[grid]\nNx = 12\nNy = 10\nNz = 6\nLx = 2.0\nLy = 0.5\n[params]\nRt4 = 0.3\nf = -1.5\n\
                    [forcing]\nQ1 = mode\nQ1.amplitude = 5\nQ1.m = 2\nQ2 = bump\nQ2.amplitude = 0.1\nQ2.width = 0.3\n\
                    [stepping]\ndt = 0.005\nt_end = 3\ntheta_scheme = 0.5\nsnapshot_every = 4\n\
                    [output]\ndirectory = results\nsnapshots = yes\n[initial]\namplitude = 0.25\nsnapshot = s.mpe\n\
                    [experiment]\nname = smoothing\nradii = 0.5, 1, 2\ntolerance = 0.1\n";
        let c = parse_config(text).unwrap();
        assert_eq!(c.params.Q1, ForcingSpec::mode(5.0, 2, 1, 0));
        assert!(matches!(c.params.Q2.preset, ForcingPreset::Bump { width, .. } if width == 0.3));
        let again = parse_config(&c.to_text()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.to_text(), c.to_text());
        assert_eq!(again.fingerprint(), c.fingerprint());
    }

    #[test]
    fn fingerprint_ignores_output_but_not_seed() {
        let a = parse_config(MINIMAL).unwrap();
        let mut b = a.clone();
        b.output.directory = PathBuf::from("elsewhere");
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.seed = 1;
        assert_ne!(a.fingerprint(), b.fingerprint());
        let mut c = a.clone();
        c.stepping.dt = 0.02;
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let c = parse_config("# run\nseed = 3 ; lucky\n\n[grid]\nNx = 6 # small\n[stepping]\ndt = 0.1\nt_end = 1\n")
            .unwrap();
        assert_eq!((c.seed, c.grid.nx), (3, 6));
    }
}

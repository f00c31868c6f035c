//! Run configuration: `[section]` headers, `key = value` lines, `#` comments.
//!
//! Default table (every key may also appear outside a section):
//!
//! | section       | key           | default            |
//! |---------------|---------------|--------------------|
//! | `potential`   | `kind`        | `square_well`      |
//! |               | `depth`       | `1.0`              |
//! |               | `radius`      | `1.0`              |
//! |               | `width`       | `1.0`              |
//! |               | `range`       | `1.0`              |
//! |               | `table`       | none               |
//! | `grid`        | `n`           | `400`              |
//! |               | `order`       | `16`               |
//! |               | `r_max`       | `auto`             |
//! |               | `p_max`       | `auto`             |
//! |               | `p_order`     | `16`               |
//! |               | `window`      | `0.5`              |
//! | `tolerances`  | `eig_tol`     | `1e-6`             |
//! |               | `log_width_tol` | `1e-4`           |
//! |               | `floor_ratio` | `1e-250`           |
//! |               | `gap_tol`     | `1e-8`             |
//! |               | `gap_max_iter`| `100000`           |
//! | `run`         | `mu`          | `0.1`              |
//! |               | `temperature` | `0.01`             |
//! |               | `t_ratio`     | `0.1`              |
//! |               | `mu_list`     | `1e-2, 1e-3, 1e-4` |
//! |               | `t_list`      | empty              |
//! |               | `delta0`      | `auto` (0.1 μ)     |
//! |               | `out`         | none               |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::critical_temp::TcOptions;
use crate::error::{Error, Result};
use crate::gap_equation::GapOptions;
use crate::potentials::{Potential, PotentialKind};
use crate::radial_ops::{MomentumGridSpec, RadialGridSpec};

const KEYS: &[(&str, &str)] = &[
    ("potential", "kind"),
    ("potential", "depth"),
    ("potential", "radius"),
    ("potential", "width"),
    ("potential", "range"),
    ("potential", "table"),
    ("grid", "n"),
    ("grid", "order"),
    ("grid", "r_max"),
    ("grid", "p_max"),
    ("grid", "p_order"),
    ("grid", "window"),
    ("tolerances", "eig_tol"),
    ("tolerances", "log_width_tol"),
    ("tolerances", "floor_ratio"),
    ("tolerances", "gap_tol"),
    ("tolerances", "gap_max_iter"),
    ("run", "mu"),
    ("run", "temperature"),
    ("run", "t_ratio"),
    ("run", "mu_list"),
    ("run", "t_list"),
    ("run", "delta0"),
    ("run", "out"),
];

#[derive(Debug, Clone, PartialEq)]
pub enum PotentialConfig {
    SquareWell { depth: f64, radius: f64 },
    Gaussian { depth: f64, width: f64 },
    Exponential { depth: f64, range: f64 },
    Table(PathBuf),
}

impl PotentialConfig {
    pub fn build(&self) -> Result<Potential> {
        match self {
            PotentialConfig::SquareWell { depth, radius } => {
                Potential::new(PotentialKind::SquareWell { depth: *depth, radius: *radius })
            }
            PotentialConfig::Gaussian { depth, width } => {
                Potential::new(PotentialKind::Gaussian { depth: *depth, width: *width })
            }
            PotentialConfig::Exponential { depth, range } => {
                Potential::new(PotentialKind::Exponential { depth: *depth, range: *range })
            }
            PotentialConfig::Table(path) => Potential::from_table_file(path),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub potential: PotentialConfig,
    pub radial: RadialGridSpec,
    pub momentum: MomentumGridSpec,
    pub tc: TcOptions,
    pub gap: GapOptions,
    pub mu: f64,
    pub temperature: f64,
    /// T/μ used by `diagnose`.
    pub t_ratio: f64,
    pub mu_list: Vec<f64>,
    pub t_list: Vec<f64>,
    pub delta0: Option<f64>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            potential: PotentialConfig::SquareWell { depth: 1.0, radius: 1.0 },
            radial: RadialGridSpec::default(),
            momentum: MomentumGridSpec::default(),
            tc: TcOptions::default(),
            gap: GapOptions::default(),
            mu: 0.1,
            temperature: 0.01,
            t_ratio: 0.1,
            mu_list: vec![1e-2, 1e-3, 1e-4],
            t_list: Vec::new(),
            delta0: None,
            out: None,
        }
    }
}

fn key_err(key: &str, msg: impl Into<String>) -> Error {
    Error::ConfigKey {
        key: key.to_string(),
        msg: msg.into(),
    }
}

fn real(key: &str, v: &str) -> Result<f64> {
    let x: f64 = v.parse().map_err(|_| key_err(key, format!("`{v}` is not a number")))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(key_err(key, "must be finite"))
    }
}

fn positive(key: &str, v: &str) -> Result<f64> {
    let x = real(key, v)?;
    if x > 0.0 {
        Ok(x)
    } else {
        Err(key_err(key, format!("must be positive, got {v}")))
    }
}

fn count(key: &str, v: &str, min: usize) -> Result<usize> {
    let n: i64 = v
        .parse()
        .map_err(|_| key_err(key, format!("`{v}` is not an integer")))?;
    if n < min as i64 {
        return Err(key_err(key, format!("must be at least {min}, got {n}")));
    }
    Ok(n as usize)
}

fn optional_positive(key: &str, v: &str) -> Result<Option<f64>> {
    if v == "auto" {
        Ok(None)
    } else {
        positive(key, v).map(Some)
    }
}

fn list(key: &str, v: &str) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| positive(key, s.trim())).collect()
}

/// Key-value pairs in file order, with the line each came from.
fn tokenize(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut section: Option<String> = None;
    let mut seen = BTreeMap::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::ConfigSyntax {
                    line: line_no,
                    msg: format!("unterminated section header `{line}`"),
                })?
                .trim();
            if !KEYS.iter().any(|(s, _)| *s == name) {
                return Err(Error::ConfigSyntax {
                    line: line_no,
                    msg: format!("unknown section `[{name}]`"),
                });
            }
            section = Some(name.to_string());
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::ConfigSyntax {
            line: line_no,
            msg: format!("expected `key = value`, found `{line}`"),
        })?;
        let key = k.trim();
        if key.is_empty() {
            return Err(Error::ConfigSyntax {
                line: line_no,
                msg: "missing key before `=`".into(),
            });
        }
        let home = KEYS
            .iter()
            .find(|(_, k)| *k == key)
            .map(|(s, _)| *s)
            .ok_or_else(|| key_err(key, format!("unknown key (line {line_no})")))?;
        if let Some(s) = &section {
            if s != home {
                return Err(key_err(key, format!("belongs in [{home}], found in [{s}] (line {line_no})")));
            }
        }
        if let Some(prev) = seen.insert(key.to_string(), line_no) {
            return Err(key_err(key, format!("set twice (lines {prev} and {line_no})")));
        }
        out.push((line_no, key.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Parses and validates a configuration, filling defaults for absent keys.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let pairs = tokenize(text)?;
    let mut cfg = RunConfig::default();
    let mut kind = "square_well".to_string();
    let (mut depth, mut radius, mut width, mut range) = (1.0, 1.0, 1.0, 1.0);
    let mut table = None;
    for (_, key, v) in &pairs {
        let key = key.as_str();
        let v = v.as_str();
        match key {
            "kind" => kind = v.to_string(),
            "depth" => depth = real(key, v)?,
            "radius" => radius = positive(key, v)?,
            "width" => width = positive(key, v)?,
            "range" => range = positive(key, v)?,
            "table" => table = Some(PathBuf::from(v)),
            "n" => cfg.radial.nodes = count(key, v, 1)?,
            "order" => cfg.radial.order = count(key, v, 2)?,
            "r_max" => cfg.radial.r_max = optional_positive(key, v)?,
            "p_max" => cfg.momentum.p_max = optional_positive(key, v)?,
            "p_order" => cfg.momentum.order = count(key, v, 2)?,
            "window" => {
                let w = positive(key, v)?;
                if w >= 1.0 {
                    return Err(key_err(key, "must lie in (0, 1)"));
                }
                cfg.momentum.window_fraction = w;
            }
            "eig_tol" => cfg.tc.eig_tol = positive(key, v)?,
            "log_width_tol" => cfg.tc.log_width_tol = positive(key, v)?,
            "floor_ratio" => {
                let f = positive(key, v)?;
                if f >= 1.0 {
                    return Err(key_err(key, "must lie in (0, 1)"));
                }
                cfg.tc.floor_ratio = f;
            }
            "gap_tol" => cfg.gap.tol = positive(key, v)?,
            "gap_max_iter" => cfg.gap.max_iter = count(key, v, 1)?,
            "mu" => cfg.mu = positive(key, v)?,
            "temperature" => cfg.temperature = positive(key, v)?,
            "t_ratio" => cfg.t_ratio = positive(key, v)?,
            "mu_list" => {
                let l = list(key, v)?;
                if l.is_empty() {
                    return Err(key_err(key, "must not be empty"));
                }
                if l.windows(2).any(|w| w[1] >= w[0]) {
                    return Err(key_err(key, "must be strictly decreasing"));
                }
                cfg.mu_list = l;
            }
            "t_list" => cfg.t_list = list(key, v)?,
            "delta0" => {
                cfg.delta0 = if v == "auto" { None } else { Some(real(key, v)?) };
            }
            "out" => cfg.out = Some(PathBuf::from(v)),
            _ => unreachable!("key table and match arms disagree on `{key}`"),
        }
    }
    cfg.potential = match kind.as_str() {
        "square_well" => PotentialConfig::SquareWell { depth, radius },
        "gaussian" => PotentialConfig::Gaussian { depth, width },
        "exponential" => PotentialConfig::Exponential { depth, range },
        "table" => PotentialConfig::Table(table.ok_or_else(|| key_err("table", "required when kind = table"))?),
        other => {
            return Err(key_err(
                "kind",
                format!("`{other}` is not one of square_well, gaussian, exponential, table"),
            ))
        }
    };
    Ok(cfg)
}

fn opt(x: Option<f64>) -> String {
    x.map_or("auto".into(), |v| format!("{v:e}"))
}

fn join(l: &[f64]) -> String {
    l.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(", ")
}

impl RunConfig {
    /// Every resolved setting, one `key = value` per line, in table order.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        match &self.potential {
            PotentialConfig::SquareWell { depth, radius } => {
                let _ = writeln!(s, "kind = square_well\ndepth = {depth:e}\nradius = {radius:e}");
            }
            PotentialConfig::Gaussian { depth, width } => {
                let _ = writeln!(s, "kind = gaussian\ndepth = {depth:e}\nwidth = {width:e}");
            }
            PotentialConfig::Exponential { depth, range } => {
                let _ = writeln!(s, "kind = exponential\ndepth = {depth:e}\nrange = {range:e}");
            }
            PotentialConfig::Table(p) => {
                let _ = writeln!(s, "kind = table\ntable = {}", p.display());
            }
        }
        let _ = writeln!(s, "n = {}", self.radial.nodes);
        let _ = writeln!(s, "order = {}", self.radial.order);
        let _ = writeln!(s, "r_max = {}", opt(self.radial.r_max));
        let _ = writeln!(s, "p_max = {}", opt(self.momentum.p_max));
        let _ = writeln!(s, "p_order = {}", self.momentum.order);
        let _ = writeln!(s, "window = {:e}", self.momentum.window_fraction);
        let _ = writeln!(s, "eig_tol = {:e}", self.tc.eig_tol);
        let _ = writeln!(s, "log_width_tol = {:e}", self.tc.log_width_tol);
        let _ = writeln!(s, "floor_ratio = {:e}", self.tc.floor_ratio);
        let _ = writeln!(s, "gap_tol = {:e}", self.gap.tol);
        let _ = writeln!(s, "gap_max_iter = {}", self.gap.max_iter);
        let _ = writeln!(s, "mu = {:e}", self.mu);
        let _ = writeln!(s, "temperature = {:e}", self.temperature);
        let _ = writeln!(s, "t_ratio = {:e}", self.t_ratio);
        let _ = writeln!(s, "mu_list = {}", join(&self.mu_list));
        let _ = writeln!(s, "t_list = {}", join(&self.t_list));
        let _ = writeln!(s, "delta0 = {}", self.delta0.map_or("auto".into(), |v| format!("{v:e}")));
        s
    }
}

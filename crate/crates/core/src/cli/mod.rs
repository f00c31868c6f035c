//! The `bcs-tc` command line: config parsing, subcommand dispatch and CSV
//! output with a provenance preamble.

mod config;

pub use config::{parse_config, PotentialConfig, RunConfig};

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::critical_temp::{
    decomposition_residual, hs_norm_a, lemma2_diagnostic, m_mu, m_mu_asymptotic, sweep, tc_asymptotic, tc_solve,
};
use crate::error::{Error, Result};
use crate::gap_equation::{empirical_transition, transition_scan};
use crate::potentials::{validate_assumptions, Potential};
use crate::radial_ops::{Discretization, RemainderProfile};
use crate::scattering::{default_ode_radius, lambda_coupling, scattering_length_bs, scattering_length_ode};

#[derive(Parser, Debug)]
#[command(name = "bcs-tc", version, about = "BCS critical temperatures and scattering lengths for radial pair potentials")]
pub struct Cli {
    /// Configuration file; all keys default when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// CSV destination; stdout when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Worker threads for parallel rows and assembly.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Seed for the Monte-Carlo angular-average cross-check in `diagnose`.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Scattering length by the resolvent formula and by the zero-energy ODE.
    Scatter,
    /// Critical temperature at `mu`.
    Tc,
    /// m_μ(T) at `mu` for each T in `t_list` (or `temperature`).
    Mmu,
    /// T_c and its low-density asymptotics over `mu_list`.
    Sweep,
    /// Gap-equation order parameter over `t_list` at `mu`.
    Gap,
    /// Remainder diagnostics over `mu_list` at T = t_ratio·μ.
    Diagnose,
    /// Standing assumptions on the potential.
    Validate,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Scatter => "scatter",
            Command::Tc => "tc",
            Command::Mmu => "mmu",
            Command::Sweep => "sweep",
            Command::Gap => "gap",
            Command::Diagnose => "diagnose",
            Command::Validate => "validate",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Real(f64),
    Int(usize),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Real(x) => format!("{x:.16e}"),
            Cell::Int(n) => n.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Real(x)
    }
}

impl From<usize> for Cell {
    fn from(n: usize) -> Self {
        Cell::Int(n)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

/// Subcommand output: header, rows, extra preamble lines, and whether any
/// row failed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
    pub notes: Vec<String>,
    pub failed_rows: usize,
}

impl Report {
    fn new(header: Vec<&'static str>) -> Self {
        Self {
            header,
            ..Self::default()
        }
    }
}

fn discretization(cfg: &RunConfig, potential: &Potential) -> Result<Discretization> {
    Discretization::new(potential, &cfg.radial, cfg.momentum)
}

fn scatter(cfg: &RunConfig) -> Result<Report> {
    let v = cfg.potential.build()?;
    let disc = discretization(cfg, &v)?;
    let bs = scattering_length_bs(&v, &disc.radial)?;
    let ode = scattering_length_ode(&v, default_ode_radius(&v)?)?;
    let lambda = lambda_coupling(&v, &disc.radial)?;
    let mut r = Report::new(vec!["a_bs", "a_bs_error", "a_ode", "a_ode_error", "gap", "lambda"]);
    r.rows.push(vec![
        bs.a.into(),
        bs.error_estimate.into(),
        ode.a.into(),
        ode.error_estimate.into(),
        (bs.a - ode.a).abs().into(),
        lambda.into(),
    ]);
    Ok(r)
}

fn tc(cfg: &RunConfig) -> Result<Report> {
    let v = cfg.potential.build()?;
    let disc = discretization(cfg, &v)?;
    let res = tc_solve(&v, cfg.mu, &disc, &cfg.tc)?;
    let a = scattering_length_bs(&v, &disc.radial)?.a;
    let mut r = Report::new(vec![
        "mu",
        "tc",
        "t_lo",
        "t_hi",
        "eig_residual",
        "iterations",
        "upper_bound",
        "lambda",
        "a",
        "asymptotic_tc",
    ]);
    r.rows.push(vec![
        cfg.mu.into(),
        res.tc.into(),
        res.bracket.0.into(),
        res.bracket.1.into(),
        res.eig_residual.into(),
        res.iterations.into(),
        res.upper_bound_used.into(),
        res.lambda.into(),
        a.into(),
        tc_asymptotic(cfg.mu, a).unwrap_or(f64::NAN).into(),
    ]);
    Ok(r)
}

fn mmu(cfg: &RunConfig) -> Result<Report> {
    let v = cfg.potential.build()?;
    let disc = discretization(cfg, &v)?;
    let temps = if cfg.t_list.is_empty() {
        vec![cfg.temperature]
    } else {
        cfg.t_list.clone()
    };
    let mut r = Report::new(vec!["mu", "temperature", "m_mu", "quadrature_error", "m_asymptotic", "error"]);
    for t in temps {
        match disc.momentum_grid(cfg.mu, t).and_then(|g| m_mu(&g)) {
            Ok(m) => r.rows.push(vec![
                cfg.mu.into(),
                t.into(),
                m.value.into(),
                m.quadrature_error.into(),
                m_mu_asymptotic(t, cfg.mu).into(),
                "".into(),
            ]),
            Err(e) => {
                r.failed_rows += 1;
                r.rows.push(vec![
                    cfg.mu.into(),
                    t.into(),
                    f64::NAN.into(),
                    f64::NAN.into(),
                    m_mu_asymptotic(t, cfg.mu).into(),
                    e.to_string().into(),
                ]);
            }
        }
    }
    Ok(r)
}

fn sweep_cmd(cfg: &RunConfig) -> Result<Report> {
    let v = cfg.potential.build()?;
    let disc = discretization(cfg, &v)?;
    let rows = sweep(&v, &cfg.mu_list, &disc, &cfg.tc)?;
    let mut r = Report::new(vec![
        "mu",
        "tc",
        "a",
        "m_at_tc",
        "m_limit",
        "asymptotic_tc",
        "deviation",
        "eig_residual",
        "error",
    ]);
    for row in rows {
        if row.error.is_some() {
            r.failed_rows += 1;
        }
        r.rows.push(vec![
            row.mu.into(),
            row.tc.into(),
            row.a.into(),
            row.m_at_tc.into(),
            row.m_limit.into(),
            row.asymptotic_tc.into(),
            row.deviation.into(),
            row.eig_residual.into(),
            row.error.unwrap_or_default().into(),
        ]);
    }
    Ok(r)
}

fn gap(cfg: &RunConfig) -> Result<Report> {
    let v = cfg.potential.build()?;
    let disc = discretization(cfg, &v)?;
    let mut r = Report::new(vec!["T", "max_delta", "residual", "iterations", "classification", "error"]);
    let temps = if cfg.t_list.is_empty() {
        let tc = tc_solve(&v, cfg.mu, &disc, &cfg.tc)?.tc;
        if tc == 0.0 {
            return Err(Error::Domain(
                "no critical temperature to scan around; give t_list explicitly".into(),
            ));
        }
        r.notes.push(format!("tc_solve = {tc:.16e}"));
        (0..10).map(|k| tc * (0.55 + 0.1 * k as f64)).collect()
    } else {
        cfg.t_list.clone()
    };
    let delta0 = cfg.delta0.unwrap_or(0.1 * cfg.mu);
    r.notes.push(format!("delta0 = {delta0:.16e}"));
    let rows = transition_scan(&v, cfg.mu, &temps, &disc, delta0, &cfg.gap);
    if let Some((lo, hi)) = empirical_transition(&rows) {
        r.notes.push(format!("transition between T = {lo:.16e} and {hi:.16e}"));
    }
    for row in rows {
        if row.error.is_some() {
            r.failed_rows += 1;
        }
        r.rows.push(vec![
            row.temperature.into(),
            row.max_delta.into(),
            row.residual.into(),
            row.iterations.into(),
            row.classification.map_or("", |c| c.as_str()).into(),
            row.error.unwrap_or_default().into(),
        ]);
    }
    Ok(r)
}

fn diagnose(cfg: &RunConfig, seed: u64) -> Result<Report> {
    let v = cfg.potential.build()?;
    let disc = discretization(cfg, &v)?;
    let mut r = Report::new(vec![
        "mu",
        "temperature",
        "m_mu",
        "hs_norm",
        "lemma1_ratio",
        "lemma2_form",
        "lemma2_ratio",
        "decomposition_residual",
        "angular_average",
        "angular_average_mc",
        "angular_average_mc_stderr",
        "error",
    ]);
    let (r1, r2) = (0.5 * v.length_scale(), 0.25 * v.length_scale());
    for &mu in &cfg.mu_list {
        let t = cfg.t_ratio * mu;
        let row = (|| -> Result<Vec<Cell>> {
            let l1 = hs_norm_a(&v, t, mu, &disc)?;
            let l2 = lemma2_diagnostic(&v, t, mu, &disc)?;
            let dec = decomposition_residual(&v, t, mu, &disc)?;
            let profile = RemainderProfile::new(&disc.momentum_grid(mu, t)?);
            let (mc, se) = profile.angular_average_monte_carlo(r1, r2, 100_000, seed);
            Ok(vec![
                mu.into(),
                t.into(),
                l1.m_mu.into(),
                l1.value.into(),
                l1.ratio.into(),
                l2.value.into(),
                l2.ratio.into(),
                dec.into(),
                profile.angular_average(r1, r2).into(),
                mc.into(),
                se.into(),
                "".into(),
            ])
        })();
        match row {
            Ok(cells) => r.rows.push(cells),
            Err(e) => {
                r.failed_rows += 1;
                let mut cells: Vec<Cell> = vec![mu.into(), t.into()];
                cells.extend(std::iter::repeat(Cell::Real(f64::NAN)).take(9));
                cells.push(e.to_string().into());
                r.rows.push(cells);
            }
        }
    }
    Ok(r)
}

fn validate(cfg: &RunConfig) -> Result<Report> {
    let v = cfg.potential.build()?;
    let disc = discretization(cfg, &v)?;
    let rep = validate_assumptions(&v, &disc.radial)?;
    let mut r = Report::new(vec![
        "lambda",
        "spectrum_ok",
        "a_bs",
        "norm_l1",
        "weighted_l1",
        "norm_l32",
        "d_constant",
    ]);
    if !rep.spectrum_ok {
        r.failed_rows += 1;
        r.notes.push(format!("coupling margin λ = {} ≤ 1", rep.lambda));
    }
    r.rows.push(vec![
        rep.lambda.into(),
        (if rep.spectrum_ok { "true" } else { "false" }).into(),
        rep.scattering_length.unwrap_or(f64::NAN).into(),
        rep.moments.norm_l1.into(),
        rep.moments.weighted_l1.into(),
        rep.moments.norm_l32.into(),
        rep.d_constant.unwrap_or(f64::NAN).into(),
    ]);
    Ok(r)
}

/// Runs one subcommand against a validated configuration.
pub fn execute(command: Command, cfg: &RunConfig, seed: u64) -> Result<Report> {
    match command {
        Command::Scatter => scatter(cfg),
        Command::Tc => tc(cfg),
        Command::Mmu => mmu(cfg),
        Command::Sweep => sweep_cmd(cfg),
        Command::Gap => gap(cfg),
        Command::Diagnose => diagnose(cfg, seed),
        Command::Validate => validate(cfg),
    }
}

/// SHA-256 of the canonical configuration text.
pub fn config_hash(cfg: &RunConfig) -> String {
    format!("{:x}", Sha256::digest(cfg.canonical().as_bytes()))
}

/// The '#' preamble, header and rows. Identical inputs give identical bytes.
pub fn render_csv(command: Command, cfg: &RunConfig, seed: u64, report: &Report) -> Result<String> {
    let mut out = String::new();
    out.push_str(&format!("# bcs-tc {} {}\n", env!("CARGO_PKG_VERSION"), command.name()));
    out.push_str(&format!("# config_sha256 = {}\n", config_hash(cfg)));
    out.push_str(&format!(
        "# tolerances: eig_tol = {:e}, log_width_tol = {:e}, floor_ratio = {:e}, gap_tol = {:e}\n",
        cfg.tc.eig_tol, cfg.tc.log_width_tol, cfg.tc.floor_ratio, cfg.gap.tol
    ));
    let v = cfg.potential.build()?;
    let disc = discretization(cfg, &v)?;
    out.push_str(&format!(
        "# grid: radial_nodes = {}, radial_order = {}, r_max = {:e}, momentum_order = {}, window = {:e}, p_max = {}\n",
        disc.radial.len(),
        disc.radial.order(),
        disc.radial.r_max(),
        cfg.momentum.order,
        cfg.momentum.window_fraction,
        cfg.momentum.p_max.map_or("auto".into(), |p| format!("{p:e}")),
    ));
    out.push_str(&format!("# seed = {seed}\n"));
    for line in cfg.canonical().lines() {
        out.push_str(&format!("# config: {line}\n"));
    }
    for note in &report.notes {
        out.push_str(&format!("# {note}\n"));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Domain(format!("csv: {e}"));
    w.write_record(&report.header).map_err(io)?;
    for row in &report.rows {
        w.write_record(row.iter().map(Cell::render)).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Domain(format!("csv: {e}")))?;
    out.push_str(&String::from_utf8_lossy(&bytes));
    Ok(out)
}

/// Path of the run manifest written next to `out`.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            parse_config(&text)
        }
        None => Ok(RunConfig::default()),
    }
}

fn run_parsed(cli: &Cli, cfg: &RunConfig) -> Result<i32> {
    let started = Instant::now();
    let report = execute(cli.command, cfg, cli.seed)?;
    let csv = render_csv(cli.command, cfg, cli.seed, &report)?;
    let wall = started.elapsed().as_secs_f64();
    let status = if report.failed_rows == 0 { 0 } else { 1 };
    match cli.out.as_ref().or(cfg.out.as_ref()) {
        Some(path) => {
            fs::write(path, &csv).map_err(|e| Error::io(path, e))?;
            let manifest = format!(
                "command = {}\nconfig_sha256 = {}\nseed = {}\nthreads = {}\nrows = {}\nfailed_rows = {}\nwall_time_s = {wall:.3}\n",
                cli.command.name(),
                config_hash(cfg),
                cli.seed,
                rayon::current_num_threads(),
                report.rows.len(),
                report.failed_rows,
            );
            let mp = manifest_path(path);
            fs::write(&mp, manifest).map_err(|e| Error::io(mp, e))?;
        }
        None => {
            print!("{csv}");
            let _ = std::io::stdout().flush();
            eprintln!("wall time {wall:.3} s");
        }
    }
    if report.failed_rows > 0 {
        eprintln!("{} row(s) failed; see the error column", report.failed_rows);
    }
    Ok(status)
}

/// Parses arguments, runs, and returns the process exit code: 0 on
/// success, 1 on computation or row failure, 2 on usage or config errors.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let cfg = match load_config(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let run = || match run_parsed(&cli, &cfg) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    };
    match cli.threads {
        Some(0) => {
            eprintln!("error: --threads must be at least 1");
            2
        }
        Some(k) => match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
            Ok(pool) => pool.install(run),
            Err(e) => {
                eprintln!("error: thread pool: {e}");
                1
            }
        },
        None => run(),
    }
}

//! Quadrature grids and dense s-wave discretisations of the integral
//! operators: the zero-energy Green's operator p⁻², the thermal operator
//! 1/K_{T,μ}, the Birman-Schwinger matrices built from them and the
//! remainder kernel A_{T,μ}.
//!
//! Radial functions are handled through u(r) = r ψ(r). In these variables
//! p⁻² acts with kernel min(r, r′) and a general radial multiplier f(p²)
//! acts with kernel (2/π)∫ sin(pr) sin(pr′) f(p²) dp. Matrices are
//! symmetrised with √(w_i w_j), so the Nyström matrix of an operator X is
//! `√w_i · X(r_i, r_j) · √w_j`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Complex, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::potentials::Potential;
use crate::quadrature::{composite, compensated_sum, GaussLegendre};

/// Relative asymmetry below which a matrix is flagged symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Largest admissible bound on the dropped momentum tail of B_T, relative
/// to sup|V|·(1 + ‖B‖).
pub const TAIL_TOL: f64 = 1e-6;

/// Below this ratio |p²−μ|/2T the series branch of K is used.
const SERIES_CUTOFF: f64 = 1e-4;

/// K_{T,μ}(p) = |p²−μ| / tanh(|p²−μ|/2T).
pub fn kfun(p: f64, temperature: f64, mu: f64) -> f64 {
    kfun_detuning(p * p - mu, temperature)
}

/// K as a function of the detuning ε = p² − μ.
pub fn kfun_detuning(eps: f64, temperature: f64) -> f64 {
    let x = eps.abs() / (2.0 * temperature);
    if x < SERIES_CUTOFF {
        let x2 = x * x;
        2.0 * temperature * (1.0 + x2 / 3.0 - x2 * x2 / 45.0)
    } else {
        eps.abs() / x.tanh()
    }
}

/// 1/K as a function of the detuning. At zero temperature this is 1/|ε|.
pub fn inverse_kfun_detuning(eps: f64, temperature: f64) -> f64 {
    if temperature == 0.0 {
        return 1.0 / eps.abs();
    }
    let x = eps.abs() / (2.0 * temperature);
    if x < SERIES_CUTOFF {
        let x2 = x * x;
        (1.0 - x2 / 3.0 + 2.0 * x2 * x2 / 15.0) / (2.0 * temperature)
    } else {
        x.tanh() / eps.abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialGridSpec {
    /// Target number of nodes; rounded up to whole panels.
    pub nodes: usize,
    /// Gauss-Legendre points per panel.
    pub order: usize,
    /// Truncation radius; `None` picks the potential's 10⁻¹⁰ tail radius.
    pub r_max: Option<f64>,
}

impl Default for RadialGridSpec {
    fn default() -> Self {
        Self {
            nodes: 400,
            order: 16,
            r_max: None,
        }
    }
}

/// Composite Gauss-Legendre rule on [0, r_max].
#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    breaks: Vec<f64>,
    order: usize,
}

impl RadialGrid {
    /// Panels `[breaks[k], breaks[k+1]]`, `order` points each.
    pub fn from_breaks(breaks: Vec<f64>, order: usize) -> Result<Self> {
        if breaks.len() < 2 || breaks[0] != 0.0 {
            return Err(Error::Domain("radial grid must start at r = 0 and have a panel".into()));
        }
        if breaks.windows(2).any(|w| !(w[1] > w[0])) || !breaks.iter().all(|b| b.is_finite()) {
            return Err(Error::Domain("radial panel breaks must increase strictly".into()));
        }
        if order == 0 {
            return Err(Error::Domain("quadrature order must be positive".into()));
        }
        let (nodes, weights) = composite(&breaks, &GaussLegendre::new(order));
        Ok(Self {
            nodes,
            weights,
            breaks,
            order,
        })
    }

    pub fn uniform(r_max: f64, panels: usize, order: usize) -> Result<Self> {
        if !(r_max > 0.0) || panels == 0 {
            return Err(Error::Domain(format!("uniform grid with r_max = {r_max}, {panels} panels")));
        }
        let breaks = (0..=panels).map(|k| r_max * k as f64 / panels as f64).collect();
        Self::from_breaks(breaks, order)
    }

    /// Panels aligned with the potential's breakpoints, spread over
    /// [0, r_max] in proportion to segment length.
    pub fn for_potential(potential: &Potential, spec: &RadialGridSpec) -> Result<Self> {
        if spec.nodes == 0 || spec.order == 0 {
            return Err(Error::Domain("radial grid needs nodes and order > 0".into()));
        }
        let r_max = match spec.r_max {
            Some(r) if r > 0.0 && r.is_finite() => r,
            Some(r) => return Err(Error::Domain(format!("r_max = {r}"))),
            None => potential.tail_radius(1e-10)?,
        };
        let mut edges = vec![0.0];
        edges.extend(
            potential
                .breakpoints()
                .into_iter()
                .filter(|&b| b > 0.0 && b < r_max * (1.0 - 1e-12)),
        );
        edges.push(r_max);
        let panels = spec.nodes.div_ceil(spec.order).max(edges.len() - 1);
        let mut breaks = vec![0.0];
        for w in edges.windows(2) {
            let share = ((w[1] - w[0]) / r_max * panels as f64).round().max(1.0) as usize;
            for k in 1..=share {
                breaks.push(w[0] + (w[1] - w[0]) * k as f64 / share as f64);
            }
        }
        *breaks.last_mut().unwrap() = r_max;
        Self::from_breaks(breaks, spec.order)
    }

    /// Same panels with every panel split in two.
    pub fn refined(&self) -> Self {
        let mut breaks = Vec::with_capacity(2 * self.breaks.len());
        for w in self.breaks.windows(2) {
            breaks.push(w[0]);
            breaks.push(0.5 * (w[0] + w[1]));
        }
        breaks.push(self.r_max());
        Self::from_breaks(breaks, self.order).expect("refining a valid grid")
    }

    /// Same panels with roughly half the points per panel.
    pub fn coarsened(&self) -> Self {
        Self::from_breaks(self.breaks.clone(), (self.order / 2).max(4)).expect("coarsening a valid grid")
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn r_max(&self) -> f64 {
        *self.breaks.last().unwrap()
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        compensated_sum(self.nodes.iter().zip(&self.weights).map(|(&r, &w)| w * f(r)))
    }

    /// Nodes per characteristic length of V, the resolution heuristic.
    pub fn nodes_per_length(&self, potential: &Potential) -> f64 {
        let widest = self
            .breaks
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max);
        self.order as f64 * potential.length_scale() / widest
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentumGridSpec {
    /// Momentum cutoff; `None` picks max(40, 10√μ, 1.1√(μ+40T)).
    pub p_max: Option<f64>,
    /// Gauss-Legendre points per panel.
    pub order: usize,
    /// The refinement window is |p²−μ| ≤ window_fraction·μ.
    pub window_fraction: f64,
    /// Base panel width in the window variable t = ln(|p²−μ|/2T).
    pub t_panel: f64,
    /// Largest phase p·r_extent swept by one momentum panel.
    pub phase_per_panel: f64,
}

impl Default for MomentumGridSpec {
    fn default() -> Self {
        Self {
            p_max: None,
            order: 16,
            window_fraction: 0.5,
            t_panel: 2.0,
            phase_per_panel: 2.5,
        }
    }
}

impl MomentumGridSpec {
    /// Halved panel sizes at the same order.
    pub fn refined(&self) -> Self {
        Self {
            t_panel: 0.5 * self.t_panel,
            phase_per_panel: 0.5 * self.phase_per_panel,
            ..*self
        }
    }
}

/// Quadrature on [0, p_max] adapted to the peak of 1/K at p = √μ.
///
/// Inside the window |p²−μ| ≤ ε_w the rule runs in t with |p²−μ| = 2T e^t
/// on each side of the Fermi momentum, which resolves the width-T peak for
/// any T/μ. Each node stores its detuning p²−μ so 1/K is evaluated without
/// cancellation.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    detuning: Vec<f64>,
    mu: f64,
    temperature: f64,
    p_max: f64,
    r_extent: f64,
    spec: MomentumGridSpec,
}

fn graded_down(from: f64, to: f64, base: f64, out: &mut Vec<f64>) {
    let mut x = from;
    let mut w = base;
    while x > to + 1e-12 * base {
        x = (x - w).max(to);
        out.push(x);
        w *= 2.0;
    }
}

impl MomentumGrid {
    /// Grid for 1/K_{T,μ} with oscillation scale set by `r_extent`.
    pub fn new(mu: f64, temperature: f64, r_extent: f64, spec: &MomentumGridSpec) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::Domain(format!("mu = {mu}")));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Domain(format!("T = {temperature}")));
        }
        if !(r_extent > 0.0) || spec.order == 0 {
            return Err(Error::Domain("momentum grid needs r_extent > 0 and order > 0".into()));
        }
        if !(spec.window_fraction > 0.0 && spec.window_fraction < 1.0) {
            return Err(Error::Domain(format!("window fraction {}", spec.window_fraction)));
        }
        let kf = mu.sqrt();
        let eps_w = spec.window_fraction * mu;
        let p_inner = (mu - eps_w).sqrt();
        let p_outer = (mu + eps_w).sqrt();
        let p_max = spec
            .p_max
            .unwrap_or_else(|| 40.0f64.max(10.0 * kf).max(1.1 * (mu + 40.0 * temperature).sqrt()));
        if p_max <= 1.01 * p_outer || p_max * p_max - mu < 40.0 * temperature {
            let x = (p_max * p_max - mu) / (2.0 * temperature);
            return Err(Error::PMaxTooSmall {
                p_max,
                tail: 1.0 - x.tanh(),
                limit: 1e-17,
            });
        }
        let rule = GaussLegendre::new(spec.order);
        let cap = spec.phase_per_panel / r_extent;
        let mut pts: Vec<(f64, f64, f64)> = Vec::new();

        // Below the window: panels graded towards the Fermi momentum.
        let mut b = vec![p_inner];
        let mut x = p_inner;
        while x > 0.0 {
            let w = (kf - x).min(cap);
            x = if x - w < 0.25 * w { 0.0 } else { x - w };
            b.push(x);
        }
        b.reverse();
        let (p, w) = composite(&b, &rule);
        pts.extend(p.into_iter().zip(w).map(|(p, w)| (p, w, (p - kf) * (p + kf))));

        // Window, in the logarithmic detuning variable.
        let t_hi = (eps_w / (2.0 * temperature)).ln();
        let t_lo = if t_hi >= 0.0 { -40.0 } else { t_hi - 40.0 };
        let mut tb = vec![t_hi];
        let mid_hi = t_hi.min(4.0);
        graded_down(t_hi, mid_hi, spec.t_panel, &mut tb);
        let mid_lo = t_lo.max(-4.0);
        if mid_hi > mid_lo {
            let n = ((mid_hi - mid_lo) / spec.t_panel).ceil().max(1.0) as usize;
            for k in 1..=n {
                tb.push(mid_hi - (mid_hi - mid_lo) * k as f64 / n as f64);
            }
        }
        let start = *tb.last().unwrap();
        graded_down(start, t_lo, spec.t_panel, &mut tb);
        tb.dedup();
        tb.reverse();
        let (t, wt) = composite(&tb, &rule);
        for (&t, &wt) in t.iter().zip(&wt) {
            let e = 2.0 * temperature * t.exp();
            for sign in [-1.0, 1.0] {
                let eps = sign * e;
                let p = (mu + eps).sqrt();
                pts.push((p, wt * e / (2.0 * p), eps));
            }
        }

        // Above the window: graded away from the Fermi momentum, capped by phase.
        let mut b = vec![p_outer];
        let mut x = p_outer;
        while x < p_max {
            let w = (x - kf).min(cap);
            x = if p_max - (x + w) < 0.25 * w { p_max } else { x + w };
            b.push(x);
        }
        let (p, w) = composite(&b, &rule);
        pts.extend(p.into_iter().zip(w).map(|(p, w)| (p, w, (p - kf) * (p + kf))));

        pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        Ok(Self {
            nodes: pts.iter().map(|t| t.0).collect(),
            weights: pts.iter().map(|t| t.1).collect(),
            detuning: pts.iter().map(|t| t.2).collect(),
            mu,
            temperature,
            p_max,
            r_extent,
            spec: *spec,
        })
    }

    /// Plain composite rule on [0, p_max] for the zero-energy symbol 1/p²
    /// (μ = T = 0).
    pub fn zero_energy(r_extent: f64, spec: &MomentumGridSpec) -> Result<Self> {
        if !(r_extent > 0.0) || spec.order == 0 {
            return Err(Error::Domain("momentum grid needs r_extent > 0 and order > 0".into()));
        }
        let p_max = spec.p_max.unwrap_or(100.0);
        let cap = spec.phase_per_panel / r_extent;
        let panels = (p_max / cap).ceil().max(1.0) as usize;
        let breaks: Vec<f64> = (0..=panels).map(|k| p_max * k as f64 / panels as f64).collect();
        let (nodes, weights) = composite(&breaks, &GaussLegendre::new(spec.order));
        let detuning = nodes.iter().map(|p| p * p).collect();
        Ok(Self {
            nodes,
            weights,
            detuning,
            mu: 0.0,
            temperature: 0.0,
            p_max,
            r_extent,
            spec: *spec,
        })
    }

    fn rebuild(&self, spec: &MomentumGridSpec) -> Result<Self> {
        if self.temperature == 0.0 {
            Self::zero_energy(self.r_extent, spec)
        } else {
            Self::new(self.mu, self.temperature, self.r_extent, spec)
        }
    }

    pub fn refined(&self) -> Result<Self> {
        self.rebuild(&self.spec.refined())
    }

    pub fn coarsened(&self) -> Result<Self> {
        let spec = MomentumGridSpec {
            order: (self.spec.order / 2).max(4),
            ..self.spec
        };
        self.rebuild(&spec)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// p_j² − μ at each node.
    pub fn detuning(&self) -> &[f64] {
        &self.detuning
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn p_max(&self) -> f64 {
        self.p_max
    }

    pub fn spec(&self) -> &MomentumGridSpec {
        &self.spec
    }

    /// 1/K at each node.
    pub fn inverse_k(&self) -> Vec<f64> {
        self.detuning
            .iter()
            .map(|&e| inverse_kfun_detuning(e, self.temperature))
            .collect()
    }

    /// h = 1/K − 1/p² at each node.
    pub fn pair_function(&self) -> Vec<f64> {
        self.detuning
            .iter()
            .zip(&self.nodes)
            .map(|(&e, &p)| inverse_kfun_detuning(e, self.temperature) - 1.0 / (p * p))
            .collect()
    }

    /// ∫_{p_max}^∞ p² h dp, exact because tanh = 1 there to double precision.
    pub fn tail_p2(&self) -> f64 {
        let kf = self.mu.sqrt();
        kf * (kf / self.p_max).atanh()
    }

    /// ∫_{p_max}^∞ h dp.
    pub fn tail_p0(&self) -> f64 {
        let x = self.mu.sqrt() / self.p_max;
        // atanh(x)/x − 1 = Σ_{k≥1} x^{2k}/(2k+1)
        let series = if x < 0.1 {
            let x2 = x * x;
            let mut term = 1.0;
            let mut sum = 0.0;
            for k in 1..12 {
                term *= x2;
                sum += term / (2 * k + 1) as f64;
            }
            sum
        } else {
            x.atanh() / x - 1.0
        };
        series / self.p_max
    }

    /// sup_{p ≥ p_max} |h|, bounding the operator norm of the dropped tail.
    pub fn tail_sup(&self) -> f64 {
        let p2 = self.p_max * self.p_max;
        self.mu / (p2 * (p2 - self.mu))
    }
}

/// Which operator a [`KernelMatrix`] discretises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorLabel {
    /// V^{1/2} p⁻² |V|^{1/2} on the radial grid.
    BirmanSchwingerZero,
    /// B_T = V^{1/2} K⁻¹ |V|^{1/2} on the radial grid.
    BirmanSchwingerThermal,
    /// The remainder A_{T,μ}.
    Remainder,
    /// m_μ(T)·|V^{1/2}⟩⟨|V|^{1/2}|.
    RankOne,
    /// K^{-1/2} V K^{-1/2} on the momentum grid.
    MomentumPartner,
    /// |p|⁻¹ V |p|⁻¹ on the momentum grid.
    ZeroEnergyMomentumPartner,
    /// s-wave average of V̂(p − q).
    VhatSwave,
    /// Higher partial wave of the zero-energy or thermal operator.
    PartialWave { l: u8, thermal: bool },
}

impl OperatorLabel {
    pub fn name(&self) -> String {
        match self {
            OperatorLabel::BirmanSchwingerZero => "bs_zero".into(),
            OperatorLabel::BirmanSchwingerThermal => "bs_thermal".into(),
            OperatorLabel::Remainder => "remainder".into(),
            OperatorLabel::RankOne => "rank_one".into(),
            OperatorLabel::MomentumPartner => "momentum_partner".into(),
            OperatorLabel::ZeroEnergyMomentumPartner => "zero_energy_momentum_partner".into(),
            OperatorLabel::VhatSwave => "vhat_swave".into(),
            OperatorLabel::PartialWave { l, thermal } => {
                format!("partial_wave_l{l}_{}", if *thermal { "thermal" } else { "zero" })
            }
        }
    }
}

/// Dense discretisation of an integral operator.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub entries: DMatrix<f64>,
    pub label: OperatorLabel,
    pub symmetric: bool,
}

impl KernelMatrix {
    pub fn new(entries: DMatrix<f64>, label: OperatorLabel) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::Domain(format!(
                "{} matrix is {}x{}",
                label.name(),
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain(format!("{} matrix has non-finite entries", label.name())));
        }
        let scale = entries.amax();
        let n = entries.nrows();
        let mut asym = 0.0f64;
        for j in 0..n {
            for i in 0..j {
                asym = asym.max((entries[(i, j)] - entries[(j, i)]).abs());
            }
        }
        let symmetric = asym <= SYMMETRY_TOL * scale;
        Ok(Self {
            entries,
            label,
            symmetric,
        })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// Comma-separated dump, one matrix row per line.
    pub fn to_csv(&self) -> String {
        let mut s = format!("# {} {}x{}\n", self.label.name(), self.dim(), self.dim());
        for row in self.entries.row_iter() {
            let line: Vec<String> = row.iter().map(|x| format!("{x:.16e}")).collect();
            let _ = writeln!(s, "{}", line.join(","));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// `(V^{1/2}(r_i)√w_i, |V(r_i)|^{1/2}√w_i)` at each radial node.
pub fn weighted_roots(potential: &Potential, grid: &RadialGrid) -> (Vec<f64>, Vec<f64>) {
    grid.nodes()
        .iter()
        .zip(grid.weights())
        .map(|(&r, &w)| {
            let sw = w.sqrt();
            (potential.signed_sqrt(r) * sw, potential.abs_sqrt(r) * sw)
        })
        .unzip()
}

/// Riccati-Bessel function ĵ_l(x) = x j_l(x) for l ∈ {0, 1}.
pub fn riccati_bessel(l: u8, x: f64) -> f64 {
    match l {
        0 => x.sin(),
        1 => {
            if x.abs() < 0.1 {
                let x2 = x * x;
                x2 * (1.0 / 3.0 - x2 * (1.0 / 30.0 - x2 * (1.0 / 840.0 - x2 / 45360.0)))
            } else {
                x.sin() / x - x.cos()
            }
        }
        _ => panic!("partial wave l = {l} not supported"),
    }
}

/// Reduced kernel of p⁻² in partial wave l: min(r,r′) for l = 0 and
/// r_<²/(3 r_>) for l = 1.
pub fn green_zero(l: u8, r: f64, rp: f64) -> f64 {
    let (lo, hi) = if r < rp { (r, rp) } else { (rp, r) };
    match l {
        0 => lo,
        1 => lo * lo / (3.0 * hi),
        _ => panic!("partial wave l = {l} not supported"),
    }
}

/// ∫_0^L green_zero(l, r, r′) dr′.
fn green_zero_row_integral(l: u8, r: f64, len: f64) -> f64 {
    match l {
        0 => r * len - 0.5 * r * r,
        1 => r * r / 9.0 + r * r / 3.0 * (len / r).ln(),
        _ => panic!("partial wave l = {l} not supported"),
    }
}

/// Nyström matrix of V^{1/2} G_l |V|^{1/2} with the kink of G_l on the
/// diagonal removed by singularity subtraction.
fn zero_energy_matrix(potential: &Potential, grid: &RadialGrid, l: u8) -> DMatrix<f64> {
    let (sv, av) = weighted_roots(potential, grid);
    let r = grid.nodes();
    let w = grid.weights();
    let len = grid.r_max();
    let n = grid.len();
    let mut m = DMatrix::from_fn(n, n, |i, j| sv[i] * green_zero(l, r[i], r[j]) * av[j]);
    for i in 0..n {
        let discrete = compensated_sum((0..n).map(|j| w[j] * green_zero(l, r[i], r[j])));
        let c = green_zero_row_integral(l, r[i], len) - discrete;
        m[(i, i)] += potential.value(r[i]) * c;
    }
    m
}

/// V^{1/2} p⁻² |V|^{1/2} in the s-wave.
///
/// Symmetric whenever V has one sign. The diagonal carries the correction
/// `V(r_i)·(∫_0^{r_max} min(r_i,r′)dr′ − Σ_j w_j min(r_i,r_j))`, which
/// restores high-order convergence across the kink of min(r,r′).
pub fn assemble_bs_zero(potential: &Potential, grid: &RadialGrid) -> Result<KernelMatrix> {
    KernelMatrix::new(zero_energy_matrix(potential, grid, 0), OperatorLabel::BirmanSchwingerZero)
}

/// (2/π) Σ_k w_k h_k ĵ_l(p_k r_i) ĵ_l(p_k r_j), symmetrised.
fn thermal_correction(grid: &RadialGrid, pgrid: &MomentumGrid, l: u8) -> DMatrix<f64> {
    let r = grid.nodes();
    let p = pgrid.nodes();
    let h = pgrid.pair_function();
    let s = DMatrix::from_fn(r.len(), p.len(), |i, k| riccati_bessel(l, p[k] * r[i]));
    let mut sd = s.clone();
    for (k, mut col) in sd.column_iter_mut().enumerate() {
        col *= (2.0 / PI) * pgrid.weights()[k] * h[k];
    }
    let g = sd * s.transpose();
    (&g + g.transpose()) * 0.5
}

fn thermal_matrix(potential: &Potential, grid: &RadialGrid, pgrid: &MomentumGrid, l: u8) -> Result<DMatrix<f64>> {
    if pgrid.temperature() == 0.0 {
        return Err(Error::Domain("thermal operator needs a T > 0 momentum grid".into()));
    }
    let mut m = zero_energy_matrix(potential, grid, l);
    let mut g = thermal_correction(grid, pgrid, l);
    let (sv, av) = weighted_roots(potential, grid);
    let n = grid.len();
    if l == 0 {
        // Leading oscillating tail (1/π)∫_{p_max}^∞ (μ/p⁴)[cos p(r−r′) − cos p(r+r′)] dp.
        let r = grid.nodes();
        let (p_max, t0) = (pgrid.p_max(), pgrid.tail_p0());
        for j in 0..n {
            for i in 0..n {
                let (_, c_minus) = tail_shapes(p_max * (r[i] - r[j]).abs());
                let (_, c_plus) = tail_shapes(p_max * (r[i] + r[j]));
                g[(i, j)] += t0 * (c_minus - c_plus) / PI;
            }
        }
    }
    for j in 0..n {
        for i in 0..n {
            m[(i, j)] += sv[i] * g[(i, j)] * av[j];
        }
    }
    let tail = pgrid.tail_sup() * potential.max_abs();
    let limit = TAIL_TOL * (1.0 + m.amax());
    if tail > limit {
        return Err(Error::PMaxTooSmall {
            p_max: pgrid.p_max(),
            tail,
            limit,
        });
    }
    Ok(m)
}

/// B_T = V^{1/2} K_{T,μ}⁻¹ |V|^{1/2} in the s-wave, with T and μ taken from
/// the momentum grid.
///
/// The kernel is min(r,r′) + (2/π)∫ sin(pr) sin(pr′)(1/K − 1/p²) dp; the
/// momentum integral is cut at p_max, where the dropped operator has norm
/// at most sup|V|·μ/(p_max²(p_max²−μ)).
pub fn assemble_bt(potential: &Potential, grid: &RadialGrid, pgrid: &MomentumGrid) -> Result<KernelMatrix> {
    KernelMatrix::new(
        thermal_matrix(potential, grid, pgrid, 0)?,
        OperatorLabel::BirmanSchwingerThermal,
    )
}

/// Zero-energy or thermal Birman-Schwinger matrix in partial wave l = 1.
pub fn assemble_partial_wave(
    potential: &Potential,
    grid: &RadialGrid,
    pgrid: Option<&MomentumGrid>,
    l: u8,
) -> Result<KernelMatrix> {
    if l > 1 {
        return Err(Error::Domain(format!("partial wave l = {l} not supported")));
    }
    let m = match pgrid {
        Some(pg) => thermal_matrix(potential, grid, pg, l)?,
        None => zero_energy_matrix(potential, grid, l),
    };
    KernelMatrix::new(
        m,
        OperatorLabel::PartialWave {
            l,
            thermal: pgrid.is_some(),
        },
    )
}

/// Sine integral Si(x) = ∫_0^x sin(t)/t dt.
pub fn sine_integral(x: f64) -> f64 {
    let t = x.abs();
    let si = if t <= 2.0 {
        let t2 = t * t;
        let mut term = t;
        let mut sum = 0.0;
        let mut k = 0;
        while k < 40 {
            let add = term / (2 * k + 1) as f64;
            sum += add;
            if add.abs() < 1e-17 * sum.abs() {
                break;
            }
            term *= -t2 / ((2 * k + 2) * (2 * k + 3)) as f64;
            k += 1;
        }
        sum
    } else {
        // Continued fraction for E1(it), modified Lentz.
        let one = Complex::new(1.0, 0.0);
        let mut b = Complex::new(1.0, t);
        let mut c = Complex::new(1e300, 0.0);
        let mut d = one / b;
        let mut h = d;
        for i in 2..200 {
            let a = -((i - 1) * (i - 1)) as f64;
            b += Complex::new(2.0, 0.0);
            d = one / (d * a + b);
            c = b + one * a / c;
            let del = c * d;
            h *= del;
            if (del - one).norm() < 1e-16 {
                break;
            }
        }
        h *= Complex::new(t.cos(), -t.sin());
        PI / 2.0 + h.im
    };
    si.copysign(x)
}

/// Shapes of the oscillating momentum tail at x = p_max·s:
/// `T(x) = x∫_x^∞ sin(u)/u³ du` and `C(x) = 3x³∫_x^∞ cos(u)/u⁴ du`,
/// both normalised to 1 at x = 0.
fn tail_shapes(x: f64) -> (f64, f64) {
    if x == 0.0 {
        return (1.0, 1.0);
    }
    let sinc = x.sin() / x;
    let t = 0.5 * sinc + 0.5 * x.cos() - 0.5 * x * (PI / 2.0 - sine_integral(x));
    let c = x.cos() - x * x * t;
    (t, c)
}

/// cos x − 1 + x²/2 without cancellation.
fn cos_remainder(x: f64) -> f64 {
    if x.abs() < 1.0 {
        // Σ_{k≥2} (−1)^k x^{2k}/(2k)!
        let x2 = x * x;
        let mut term = x2 * x2 / 24.0;
        let mut sum = 0.0;
        let mut k = 2;
        while term != 0.0 && k < 20 {
            sum += term;
            term *= -x2 / ((2 * k + 1) * (2 * k + 2)) as f64;
            k += 1;
        }
        sum
    } else {
        x.cos() - 1.0 + 0.5 * x * x
    }
}

/// sin(x)/x − 1 without cancellation.
fn sinc_remainder(x: f64) -> f64 {
    if x.abs() < 0.5 {
        let x2 = x * x;
        let mut term = -x2 / 6.0;
        let mut sum = 0.0;
        let mut k = 1;
        while term != 0.0 && k < 20 {
            sum += term;
            term *= -x2 / ((2 * k + 2) * (2 * k + 3)) as f64;
            k += 1;
        }
        sum
    } else {
        x.sin() / x - 1.0
    }
}

/// The translation-invariant part of 1/K − 1/p² in three dimensions once
/// its value m_μ(T) at coincidence is removed:
///
/// F(s) = (1/2π²) ∫_0^∞ (sin(ps)/(ps) − 1)(1/K − 1/p²) p² dp.
///
/// Also carries Φ with Φ′(s) = −2π s F(s), Φ(0) = −∫h/π, in which the
/// s-wave reduction of F reads `Φ(|r−r′|) − Φ(r+r′)`.
#[derive(Debug, Clone)]
pub struct RemainderProfile {
    p: Vec<f64>,
    wh: Vec<f64>,
    p_max: f64,
    tail0: f64,
    tail2: f64,
}

impl RemainderProfile {
    pub fn new(pgrid: &MomentumGrid) -> Self {
        let h = pgrid.pair_function();
        Self {
            p: pgrid.nodes().to_vec(),
            wh: pgrid.weights().iter().zip(&h).map(|(w, h)| w * h).collect(),
            p_max: pgrid.p_max(),
            tail0: pgrid.tail_p0(),
            tail2: pgrid.tail_p2(),
        }
    }

    /// F(s); F(0) = 0.
    ///
    /// Beyond p_max, h = μ/p⁴ + O(μ²/p⁶) and the oscillating part of the
    /// tail is integrated in closed form at that order.
    pub fn f(&self, s: f64) -> f64 {
        let body = compensated_sum(
            self.p
                .iter()
                .zip(&self.wh)
                .map(|(&p, &wh)| wh * p * p * sinc_remainder(p * s)),
        );
        let (t, _) = tail_shapes(self.p_max * s);
        (body - self.tail2 * (1.0 - t)) / (2.0 * PI * PI)
    }

    /// Φ(s) = (1/π)∫_0^∞ h(p)(cos ps − 1 + p²s²/2) dp − ∫_0^∞ h dp / π, with
    /// the tail beyond p_max treated as in [`RemainderProfile::f`].
    pub fn phi(&self, s: f64) -> f64 {
        let body = compensated_sum(self.p.iter().zip(&self.wh).map(|(&p, &wh)| wh * cos_remainder(p * s)));
        let (_, c) = tail_shapes(self.p_max * s);
        (body - self.tail0 * (1.0 - c) + 0.5 * s * s * self.tail2) / PI
    }

    /// 4π r r′ times the angular average of F(|x − y|) over |x| = r, |y| = r′.
    pub fn reduced_kernel(&self, r: f64, rp: f64) -> f64 {
        self.phi((r - rp).abs()) - self.phi(r + rp)
    }

    /// Angular average of F(|x − y|) for |x| = r, |y| = r′.
    pub fn angular_average(&self, r: f64, rp: f64) -> f64 {
        self.reduced_kernel(r, rp) / (4.0 * PI * r * rp)
    }

    /// Monte-Carlo estimate of the angular average: F at |x − y| with the
    /// relative orientation drawn uniformly on the sphere. Returns the
    /// estimate and its standard error.
    pub fn angular_average_monte_carlo(&self, r: f64, rp: f64, samples: usize, seed: u64) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..samples {
            let c: f64 = rng.gen_range(-1.0..1.0);
            let d = (r * r + rp * rp - 2.0 * r * rp * c).max(0.0).sqrt();
            let f = self.f(d);
            sum += f;
            sq += f * f;
        }
        let n = samples as f64;
        let mean = sum / n;
        let var = (sq / n - mean * mean).max(0.0);
        (mean, (var / n).sqrt())
    }
}

/// The remainder A_{T,μ} = V^{1/2} F(x − y) |V|^{1/2} in the s-wave.
pub fn assemble_a_kernel(potential: &Potential, grid: &RadialGrid, pgrid: &MomentumGrid) -> Result<KernelMatrix> {
    let profile = RemainderProfile::new(pgrid);
    let (sv, av) = weighted_roots(potential, grid);
    let r = grid.nodes();
    let n = grid.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if sv[i] == 0.0 || av[j] == 0.0 {
                        0.0
                    } else {
                        sv[i] * profile.reduced_kernel(r[i], r[j]) * av[j]
                    }
                })
                .collect()
        })
        .collect();
    let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    KernelMatrix::new(m, OperatorLabel::Remainder)
}

/// c·|V^{1/2}⟩⟨|V|^{1/2}| in the s-wave: entries 4π c r_i r_j V^{1/2}_i |V_j|^{1/2}.
pub fn assemble_rank_one(potential: &Potential, grid: &RadialGrid, c: f64) -> Result<KernelMatrix> {
    let (sv, av) = weighted_roots(potential, grid);
    let r = grid.nodes();
    let n = grid.len();
    let m = DMatrix::from_fn(n, n, |i, j| 4.0 * PI * c * r[i] * sv[i] * r[j] * av[j]);
    KernelMatrix::new(m, OperatorLabel::RankOne)
}

/// Fine radial rule resolving sin(p r) up to p_max across the support of V.
fn transform_rule(potential: &Potential, r_max: f64, p_max: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut edges = vec![0.0];
    edges.extend(
        potential
            .breakpoints()
            .into_iter()
            .filter(|&b| b > 0.0 && b < r_max * (1.0 - 1e-12)),
    );
    edges.push(r_max);
    let width = 5.0 / p_max;
    let mut breaks = vec![0.0];
    for w in edges.windows(2) {
        let n = ((w[1] - w[0]) / width).ceil().max(1.0) as usize;
        for k in 1..=n {
            breaks.push(w[0] + (w[1] - w[0]) * k as f64 / n as f64);
        }
    }
    Ok(composite(&breaks, &GaussLegendre::new(16)))
}

/// Ũ_jm = sin(p_j ρ_m) c_j √(ω_m |V(ρ_m)|) over the nodes where V ≠ 0, and
/// sgn V at those nodes.
fn momentum_factor(potential: &Potential, r_max: f64, pgrid: &MomentumGrid, c: &[f64]) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let (rho, omega) = transform_rule(potential, r_max, pgrid.p_max())?;
    let v: Vec<f64> = rho.iter().map(|&r| potential.value(r)).collect();
    let keep: Vec<usize> = (0..rho.len()).filter(|&m| v[m] != 0.0).collect();
    let p = pgrid.nodes();
    let u = DMatrix::from_fn(p.len(), keep.len(), |j, m| {
        let k = keep[m];
        (p[j] * rho[k]).sin() * c[j] * (omega[k] * v[k].abs()).sqrt()
    });
    Ok((u, keep.iter().map(|&k| v[k].signum()).collect()))
}

/// (2/π) Ũ diag(sgn V) Ũᵀ.
fn momentum_sandwich(potential: &Potential, r_max: f64, pgrid: &MomentumGrid, c: &[f64]) -> Result<DMatrix<f64>> {
    let (u, sign) = momentum_factor(potential, r_max, pgrid, c)?;
    let mut us = u.clone();
    for (m, mut col) in us.column_iter_mut().enumerate() {
        col *= (2.0 / PI) * sign[m];
    }
    let out = us * u.transpose();
    Ok((&out + out.transpose()) * 0.5)
}

/// K^{-1/2} V K^{-1/2} on the momentum grid, isospectral to B_T away from
/// zero and symmetric for any sign of V.
///
/// Entries are (2/π) √(w_j/K_j) √(w_k/K_k) ∫ V(r) sin(p_j r) sin(p_k r) dr.
pub fn assemble_bt_momentum(potential: &Potential, r_max: f64, pgrid: &MomentumGrid) -> Result<KernelMatrix> {
    let c = thermal_scale(pgrid)?;
    KernelMatrix::new(momentum_sandwich(potential, r_max, pgrid, &c)?, OperatorLabel::MomentumPartner)
}

/// (2/π) G^{1/2} diag(sgn V) G^{1/2} with G = ŨᵀŨ, indexed by the fine radial
/// nodes. Its nonzero spectrum is that of the momentum sandwich (XY and YX
/// share nonzero eigenvalues), at the cost of a matrix the size of the radial
/// rule instead of the momentum grid.
fn compressed_sandwich(potential: &Potential, r_max: f64, pgrid: &MomentumGrid, c: &[f64]) -> Result<DMatrix<f64>> {
    let (u, sign) = momentum_factor(potential, r_max, pgrid, c)?;
    let g = u.transpose() * &u;
    let eig = ((&g + g.transpose()) * 0.5).symmetric_eigen();
    let mut q = eig.eigenvectors.clone();
    for (k, mut col) in q.column_iter_mut().enumerate() {
        col *= eig.eigenvalues[k].max(0.0).sqrt();
    }
    let root = &q * eig.eigenvectors.transpose();
    let mut signed = root.clone();
    for (m, mut row) in signed.row_iter_mut().enumerate() {
        row *= (2.0 / PI) * sign[m];
    }
    let out = &root * signed;
    Ok((&out + out.transpose()) * 0.5)
}

fn thermal_scale(pgrid: &MomentumGrid) -> Result<Vec<f64>> {
    if pgrid.temperature() == 0.0 {
        return Err(Error::Domain("thermal partner needs a T > 0 momentum grid".into()));
    }
    Ok(pgrid
        .weights()
        .iter()
        .zip(pgrid.inverse_k())
        .map(|(w, ik)| (w * ik).sqrt())
        .collect())
}

fn zero_energy_scale(pgrid: &MomentumGrid) -> Vec<f64> {
    pgrid
        .weights()
        .iter()
        .zip(pgrid.nodes())
        .map(|(w, p)| w.sqrt() / p)
        .collect()
}

/// [`assemble_bt_momentum`] with the same nonzero spectrum on the fine radial
/// rule.
pub fn assemble_bt_momentum_compressed(potential: &Potential, r_max: f64, pgrid: &MomentumGrid) -> Result<KernelMatrix> {
    let c = thermal_scale(pgrid)?;
    KernelMatrix::new(compressed_sandwich(potential, r_max, pgrid, &c)?, OperatorLabel::MomentumPartner)
}

/// [`assemble_bs_zero_momentum`] with the same nonzero spectrum on the fine
/// radial rule.
pub fn assemble_bs_zero_momentum_compressed(potential: &Potential, r_max: f64, pgrid: &MomentumGrid) -> Result<KernelMatrix> {
    let c = zero_energy_scale(pgrid);
    KernelMatrix::new(
        compressed_sandwich(potential, r_max, pgrid, &c)?,
        OperatorLabel::ZeroEnergyMomentumPartner,
    )
}

/// |p|⁻¹ V |p|⁻¹ on a zero-energy momentum grid, isospectral to
/// V^{1/2} p⁻² |V|^{1/2} for any sign of V.
pub fn assemble_bs_zero_momentum(potential: &Potential, r_max: f64, pgrid: &MomentumGrid) -> Result<KernelMatrix> {
    let c = zero_energy_scale(pgrid);
    KernelMatrix::new(
        momentum_sandwich(potential, r_max, pgrid, &c)?,
        OperatorLabel::ZeroEnergyMomentumPartner,
    )
}

/// W(p, q) = ∫ V(r) sin(pr) sin(qr) dr / (pq) on the momentum grid.
pub fn sine_transform_matrix(potential: &Potential, r_max: f64, pgrid: &MomentumGrid) -> Result<DMatrix<f64>> {
    let c: Vec<f64> = pgrid.nodes().iter().map(|p| 1.0 / p).collect();
    Ok(momentum_sandwich(potential, r_max, pgrid, &c)? * (PI / 2.0))
}

/// A radial grid together with the recipe for momentum grids at any (μ, T).
#[derive(Debug, Clone, PartialEq)]
pub struct Discretization {
    pub radial: RadialGrid,
    pub momentum: MomentumGridSpec,
}

impl Discretization {
    pub fn new(potential: &Potential, radial: &RadialGridSpec, momentum: MomentumGridSpec) -> Result<Self> {
        Ok(Self {
            radial: RadialGrid::for_potential(potential, radial)?,
            momentum,
        })
    }

    /// Kernels sin(pr)sin(pr′) oscillate in p with frequency up to 2 r_max.
    pub fn r_extent(&self) -> f64 {
        2.0 * self.radial.r_max()
    }

    pub fn momentum_grid(&self, mu: f64, temperature: f64) -> Result<MomentumGrid> {
        MomentumGrid::new(mu, temperature, self.r_extent(), &self.momentum)
    }

    /// Both grids at twice the resolution.
    pub fn refined(&self) -> Self {
        Self {
            radial: self.radial.refined(),
            momentum: self.momentum.refined(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sw() -> Potential {
        Potential::square_well(1.0, 1.0).unwrap()
    }

    #[test]
    fn kfun_limits() {
        assert_eq!(kfun(1.0, 0.3, 1.0), 0.6);
        let k = kfun(3.0, 0.01, 1.0);
        assert_relative_eq!(k, 8.0, max_relative = 1e-8);
        assert_relative_eq!(kfun(1.1, 0.05, 1.0), 0.21 / 2.1f64.tanh(), max_relative = 1e-12);
    }

    #[test]
    fn kfun_series_matches_direct_branch() {
        let t = 0.5;
        for eps in [1e-5f64, 9.99e-5, 1.001e-4] {
            let x = eps / (2.0 * t);
            let direct = eps / x.tanh();
            assert_relative_eq!(kfun_detuning(eps, t), direct, max_relative = 1e-13);
            assert_relative_eq!(inverse_kfun_detuning(eps, t), x.tanh() / eps, max_relative = 1e-13);
        }
    }

    #[test]
    fn radial_grid_is_exact_for_polynomials() {
        let g = RadialGrid::for_potential(&sw(), &RadialGridSpec { nodes: 64, ..Default::default() }).unwrap();
        assert_relative_eq!(g.integrate(|r| r.powi(20)), 1.0 / 21.0, max_relative = 1e-13);
        assert!(g.nodes().windows(2).all(|w| w[0] < w[1]));
        assert!(g.weights().iter().all(|&w| w > 0.0));
        assert!(g.nodes()[0] > 0.0 && *g.nodes().last().unwrap() < 1.0);
    }

    #[test]
    fn grid_breaks_at_the_well_edge() {
        let spec = RadialGridSpec {
            nodes: 64,
            order: 8,
            r_max: Some(3.0),
        };
        let g = RadialGrid::for_potential(&sw(), &spec).unwrap();
        assert!(g.breaks().contains(&1.0));
    }

    #[test]
    fn greens_kernel_inverts_the_dirichlet_laplacian() {
        // v(r) = ∫_0^L min(r, r′) u(r′) dr′ must satisfy −v″ = u.
        // Panels are split at r′ = r so the kink of min(r, r′) sits on an edge.
        let len = 40.0;
        let u = |r: f64| r * (-r).exp();
        let v = |r: f64| {
            let left = RadialGrid::uniform(r, 8, 16).unwrap().integrate(|rp| rp * u(rp));
            let right: f64 = (0..40)
                .map(|k| {
                    let a = r + (len - r) * k as f64 / 40.0;
                    let b = r + (len - r) * (k + 1) as f64 / 40.0;
                    GaussLegendre::new(16).integrate(a, b, |rp| r * u(rp))
                })
                .sum();
            left + right
        };
        let h = 1e-3;
        for r in [0.3, 1.0, 2.5] {
            let d2 = (v(r + h) - 2.0 * v(r) + v(r - h)) / (h * h);
            assert!((-d2 - u(r)).abs() < 1e-6, "r = {r}: {} vs {}", -d2, u(r));
        }
        assert!(v(1e-9).abs() < 1e-8);
    }

    #[test]
    fn sine_transform_of_inverse_square_is_min() {
        // (2/π)∫_0^∞ sin(pr) sin(pr′)/p² dp = min(r, r′)
        let spec = MomentumGridSpec {
            p_max: Some(4000.0),
            ..Default::default()
        };
        let pg = MomentumGrid::zero_energy(2.0, &spec).unwrap();
        for (r, rp) in [(0.3, 0.7), (1.0, 0.4)] {
            let s: f64 = pg
                .nodes()
                .iter()
                .zip(pg.weights())
                .map(|(&p, &w)| w * (p * r).sin() * (p * rp).sin() / (p * p))
                .sum();
            assert!((2.0 / PI * s - f64::min(r, rp)).abs() < 1e-4);
        }
    }

    #[test]
    fn bs_zero_of_square_well() {
        let g = RadialGrid::for_potential(&sw(), &RadialGridSpec::default()).unwrap();
        let m = assemble_bs_zero(&sw(), &g).unwrap();
        assert!(m.symmetric);
        let min = m.entries.clone().symmetric_eigenvalues().min();
        assert_relative_eq!(min, -4.0 / (PI * PI), max_relative = 1e-9);
        let z = assemble_bs_zero(&Potential::zero(), &g).unwrap();
        assert_eq!(z.entries.amax(), 0.0);
    }

    #[test]
    fn momentum_grid_integrates_the_peak() {
        // ∫_0^P (1/K − 1/p²) p² dp + tail matches the scaling law at T/μ = 0.1.
        let mu = 1e-2;
        let pg = MomentumGrid::new(mu, 0.1 * mu, 1.0, &MomentumGridSpec::default()).unwrap();
        let h = pg.pair_function();
        let m: f64 = pg.nodes().iter().zip(pg.weights()).zip(&h).map(|((p, w), h)| w * h * p * p).sum::<f64>() + pg.tail_p2();
        let pg2 = pg.refined().unwrap();
        let h2 = pg2.pair_function();
        let m2: f64 = pg2.nodes().iter().zip(pg2.weights()).zip(&h2).map(|((p, w), h)| w * h * p * p).sum::<f64>() + pg2.tail_p2();
        assert_relative_eq!(m, m2, max_relative = 1e-10);
        let window = pg.nodes().iter().filter(|&&p| (p * p - mu).abs() < 0.5 * mu).count();
        assert!(window > 0);
    }

    #[test]
    fn thermal_kernel_vanishes_at_high_temperature() {
        let g = RadialGrid::uniform(1.0, 2, 8).unwrap();
        let mu = 1.0;
        let mut prev = f64::INFINITY;
        for t in [10.0, 100.0, 1000.0] {
            let pg = MomentumGrid::new(mu, t * mu, 1.0, &MomentumGridSpec::default()).unwrap();
            let corr = thermal_correction(&g, &pg, 0);
            let r = g.nodes();
            let diag = r[3] + corr[(3, 3)];
            assert!(diag >= 0.0 && diag < prev, "T = {t}: {diag}");
            prev = diag;
        }
    }

    #[test]
    fn thermal_diagonal_is_positive() {
        let g = RadialGrid::uniform(1.0, 4, 8).unwrap();
        let pg = MomentumGrid::new(1.0, 0.01, 1.0, &MomentumGridSpec::default()).unwrap();
        let corr = thermal_correction(&g, &pg, 0);
        for (i, &r) in g.nodes().iter().enumerate() {
            let gt = r + corr[(i, i)];
            assert!(gt.is_finite() && gt > 0.0);
        }
    }

    #[test]
    fn remainder_profile_vanishes_at_origin() {
        let pg = MomentumGrid::new(0.1, 0.01, 1.0, &MomentumGridSpec::default()).unwrap();
        let prof = RemainderProfile::new(&pg);
        assert_eq!(prof.f(0.0), 0.0);
    }

    #[test]
    fn remainder_profile_derivative_relation() {
        let pg = MomentumGrid::new(0.1, 0.01, 1.0, &MomentumGridSpec::default()).unwrap();
        let prof = RemainderProfile::new(&pg);
        for s in [0.2, 0.9, 1.7] {
            let h = 1e-4;
            let d = (prof.phi(s + h) - prof.phi(s - h)) / (2.0 * h);
            assert_relative_eq!(d, -2.0 * PI * s * prof.f(s), max_relative = 1e-6);
        }
    }

    #[test]
    fn angular_average_matches_monte_carlo() {
        let pg = MomentumGrid::new(0.1, 0.01, 1.0, &MomentumGridSpec::default()).unwrap();
        let prof = RemainderProfile::new(&pg);
        let (r, rp) = (0.4, 0.8);
        let exact = prof.angular_average(r, rp);
        let (mc, se) = prof.angular_average_monte_carlo(r, rp, 20_000, 7);
        assert!((mc - exact).abs() < 5.0 * se + 1e-12, "{mc} ± {se} vs {exact}");
    }

    #[test]
    fn sine_integral_values() {
        assert_relative_eq!(sine_integral(1.0), 0.946_083_070_367_183, max_relative = 1e-14);
        assert_relative_eq!(sine_integral(2.0), 1.605_412_976_802_695, max_relative = 1e-14);
        assert_relative_eq!(sine_integral(5.0), 1.549_931_244_944_674, max_relative = 1e-14);
        assert_relative_eq!(sine_integral(-20.0), -1.548_241_701_043_44, max_relative = 1e-12);
        assert_eq!(sine_integral(0.0), 0.0);
    }

    #[test]
    fn tail_shapes_are_continuous() {
        let (t, c) = tail_shapes(1e-8);
        assert!((t - 1.0).abs() < 1e-8 && (c - 1.0).abs() < 1e-8);
        // T(x) = x∫_x^∞ sin u/u³ du by direct quadrature at x = 3
        let x = 3.0f64;
        let direct: f64 = (0..4000)
            .map(|k| {
                let a = x + k as f64 * 0.5;
                GaussLegendre::new(16).integrate(a, a + 0.5, |u| u.sin() / u.powi(3))
            })
            .sum();
        let (t, _) = tail_shapes(x);
        assert!((t - x * direct).abs() < 1e-7, "{t} vs {}", x * direct);
    }

    #[test]
    fn cancellation_free_remainders() {
        for x in [1e-6f64, 1e-3, 0.3, 0.99, 1.01, 3.0] {
            let direct = x.cos() - 1.0 + 0.5 * x * x;
            let ser = cos_remainder(x);
            if x > 0.5 {
                assert_relative_eq!(ser, direct, max_relative = 1e-9);
            }
            assert!((ser - x.powi(4) / 24.0).abs() <= x.powi(6) / 720.0 * 1.0001);
            let s = sinc_remainder(x);
            assert!((s + x * x / 6.0).abs() <= x.powi(4) / 120.0 * 1.0001);
        }
    }

    #[test]
    fn riccati_bessel_branches_agree() {
        for x in [0.099f64, 0.1001] {
            let direct = x.sin() / x - x.cos();
            assert_relative_eq!(riccati_bessel(1, x), direct, max_relative = 1e-10);
        }
    }

    #[test]
    fn csv_dump_round_trips_shape() {
        let m = KernelMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0]), OperatorLabel::Remainder).unwrap();
        let s = m.to_csv();
        assert_eq!(s.lines().count(), 3);
        assert!(s.lines().nth(1).unwrap().starts_with("1.0000000000000000e0,"));
    }

    #[test]
    fn compressed_partner_keeps_the_spectrum() {
        let r: Vec<f64> = (1..=40).map(|k| 0.1 * k as f64).collect();
        let v: Vec<f64> = r.iter().map(|&x: &f64| 1.5 * (-4.0 * x * x).exp() - (-x * x).exp()).collect();
        let v = Potential::tabulated(crate::potentials::Table::new(r, v).unwrap());
        let spec = MomentumGridSpec {
            p_max: Some(12.0),
            ..MomentumGridSpec::default()
        };
        let pg = MomentumGrid::new(0.1, 0.02, 8.0, &spec).unwrap();
        let full = assemble_bt_momentum(&v, 4.0, &pg).unwrap().entries.symmetric_eigenvalues();
        let small = assemble_bt_momentum_compressed(&v, 4.0, &pg).unwrap().entries.symmetric_eigenvalues();
        let lowest = |e: &nalgebra::DVector<f64>| e.min();
        let highest = |e: &nalgebra::DVector<f64>| e.max();
        assert!(lowest(&full) < 0.0 && highest(&full) > 0.0);
        assert_relative_eq!(lowest(&full), lowest(&small), max_relative = 1e-10);
        assert_relative_eq!(highest(&full), highest(&small), max_relative = 1e-10);
    }
}
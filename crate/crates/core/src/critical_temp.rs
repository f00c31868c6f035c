//! m_μ(T), the critical temperature from the Birman-Schwinger criterion,
//! the low-density asymptotics and the remainder diagnostics.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::potentials::Potential;
use crate::radial_ops::{
    assemble_a_kernel, assemble_bs_zero, assemble_bt, assemble_rank_one, weighted_roots, Discretization,
    MomentumGrid,
};
use crate::scattering::{lambda_coupling, scattering_length_bs};
use crate::spectral::{min_eigenvalue, solve_shifted, thermal_operator};

/// Euler's constant γ.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// 2 − γ − ln(8/π), the limit of ln(μ/T_c) + π/(2√μ a) as μ → 0.
pub fn limit_constant() -> f64 {
    2.0 - EULER_GAMMA - (8.0 / PI).ln()
}

/// (8/π) e^{γ−2}.
pub fn tc_prefactor() -> f64 {
    8.0 / PI * (EULER_GAMMA - 2.0).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmuValue {
    pub value: f64,
    pub mu: f64,
    pub temperature: f64,
    /// |value − value at half the quadrature order|.
    pub quadrature_error: f64,
}

fn m_mu_sum(pgrid: &MomentumGrid) -> f64 {
    let h = pgrid.pair_function();
    let body = crate::quadrature::compensated_sum(
        pgrid
            .nodes()
            .iter()
            .zip(pgrid.weights())
            .zip(&h)
            .map(|((p, w), h)| w * h * p * p),
    );
    (body + pgrid.tail_p2()) / (2.0 * PI * PI)
}

/// m_μ(T) = (1/2π²)∫_0^∞ (1/K_{T,μ} − 1/p²) p² dp on the grid's (μ, T).
pub fn m_mu(pgrid: &MomentumGrid) -> Result<MmuValue> {
    if pgrid.temperature() == 0.0 {
        return Err(Error::Domain("m_mu needs T > 0".into()));
    }
    let value = m_mu_sum(pgrid);
    let coarse = m_mu_sum(&pgrid.coarsened()?);
    if !value.is_finite() {
        return Err(Error::Quadrature {
            lo: 0.0,
            hi: pgrid.p_max(),
            estimate: value,
            error: f64::INFINITY,
        });
    }
    Ok(MmuValue {
        value,
        mu: pgrid.mu(),
        temperature: pgrid.temperature(),
        quadrature_error: (value - coarse).abs(),
    })
}

/// Leading behaviour (√μ/2π²)(ln(μ/T) + γ − 2 + ln(8/π)).
pub fn m_mu_asymptotic(temperature: f64, mu: f64) -> f64 {
    mu.sqrt() / (2.0 * PI * PI) * ((mu / temperature).ln() - limit_constant())
}

/// μ (8/π) e^{γ−2} e^{π/(2√μ a)}; underflows to 0 as a → 0⁻.
pub fn tc_asymptotic(mu: f64, a: f64) -> Result<f64> {
    if !(a < 0.0) {
        return Err(Error::Domain(format!("asymptotic T_c needs a < 0, got a = {a}")));
    }
    if !(mu > 0.0) {
        return Err(Error::Domain(format!("mu = {mu}")));
    }
    Ok(mu * tc_prefactor() * (PI / (2.0 * mu.sqrt() * a)).exp())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TcOptions {
    /// Stop once |min_eig(B_T) + 1| is below this.
    pub eig_tol: f64,
    /// Or once the bracket is this narrow in ln T.
    pub log_width_tol: f64,
    /// T_c = 0 is reported when positivity holds at T = μ·floor_ratio.
    pub floor_ratio: f64,
    pub max_iter: usize,
}

impl Default for TcOptions {
    fn default() -> Self {
        Self {
            eig_tol: 1e-6,
            log_width_tol: 1e-4,
            floor_ratio: 1e-250,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcResult {
    /// Critical temperature; 0 when none is found above the floor.
    pub tc: f64,
    /// Final bracket (T_lo, T_hi).
    pub bracket: (f64, f64),
    /// |min_eig(B_{T_c}) + 1|, or NaN when tc = 0.
    pub eig_residual: f64,
    pub iterations: usize,
    /// μ/(2(λ−1)).
    pub upper_bound_used: f64,
    pub lambda: f64,
    /// (ln T, min_eig + 1) at every evaluation, in order.
    pub history: Vec<(f64, f64)>,
}

fn zero_tc(upper: f64, lambda: f64, history: Vec<(f64, f64)>) -> TcResult {
    TcResult {
        tc: 0.0,
        bracket: (0.0, upper),
        eig_residual: f64::NAN,
        iterations: 0,
        upper_bound_used: upper,
        lambda,
        history,
    }
}

/// min_eig(B_T) + 1 at the given temperature.
pub fn criterion(potential: &Potential, mu: f64, temperature: f64, disc: &Discretization) -> Result<f64> {
    let pgrid = disc.momentum_grid(mu, temperature)?;
    Ok(min_eigenvalue(&thermal_operator(potential, &disc.radial, &pgrid)?)? + 1.0)
}

/// T_c = inf{T : min_eig(B_T) ≥ −1}, searched in ln T over
/// [μ·floor_ratio, μ/(2(λ−1))] by regula falsi with the Illinois
/// modification and a bisection safeguard.
pub fn tc_solve(potential: &Potential, mu: f64, disc: &Discretization, opts: &TcOptions) -> Result<TcResult> {
    let lambda = lambda_coupling(potential, &disc.radial)?;
    tc_solve_with_lambda(potential, mu, disc, opts, lambda)
}

pub fn tc_solve_with_lambda(
    potential: &Potential,
    mu: f64,
    disc: &Discretization,
    opts: &TcOptions,
    lambda: f64,
) -> Result<TcResult> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::Domain(format!("mu = {mu}")));
    }
    if lambda.is_infinite() {
        return Ok(zero_tc(0.0, lambda, Vec::new()));
    }
    if !(lambda > 1.0) {
        return Err(Error::Assumption(format!(
            "coupling margin λ = {lambda} ≤ 1: bound state or resonance at zero energy"
        )));
    }
    let upper = mu / (2.0 * (lambda - 1.0));
    let mut history = Vec::new();
    let mut eval = |x: f64| -> Result<f64> {
        let f = criterion(potential, mu, x.exp(), disc)?;
        history.push((x, f));
        Ok(f)
    };
    let mut hi = upper.ln();
    let mut f_hi = eval(hi)?;
    if f_hi < 0.0 {
        return Err(Error::BracketInversion {
            t_hi: upper,
            min_eig: f_hi - 1.0,
        });
    }
    let mut lo = (mu * opts.floor_ratio).ln();
    let mut f_lo = eval(lo)?;
    if f_lo >= 0.0 {
        return Ok(zero_tc(upper, lambda, history));
    }

    let mut side = 0i8;
    let mut widths = vec![hi - lo];
    let mut x = hi;
    let mut fx = f_hi;
    for it in 1..=opts.max_iter {
        let width = hi - lo;
        let stalled = widths.len() >= 3 && width > 0.5 * widths[widths.len() - 3];
        let mut cand = (lo * f_hi - hi * f_lo) / (f_hi - f_lo);
        if stalled || !(cand > lo && cand < hi) {
            cand = 0.5 * (lo + hi);
        }
        x = cand;
        fx = eval(x)?;
        if fx < 0.0 {
            lo = x;
            f_lo = fx;
            if side == -1 {
                f_hi *= 0.5;
            }
            side = -1;
        } else {
            hi = x;
            f_hi = fx;
            if side == 1 {
                f_lo *= 0.5;
            }
            side = 1;
        }
        widths.push(hi - lo);
        if fx.abs() < opts.eig_tol || hi - lo < opts.log_width_tol {
            return Ok(TcResult {
                tc: x.exp(),
                bracket: (lo.exp(), hi.exp()),
                eig_residual: fx.abs(),
                iterations: it,
                upper_bound_used: upper,
                lambda,
                history,
            });
        }
    }
    let _ = x;
    Err(Error::Convergence {
        iterations: opts.max_iter,
        residual: fx.abs(),
    })
}

/// A diagnostic value with the normalisation that makes it vanish as μ → 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RemainderRatio {
    pub value: f64,
    pub m_mu: f64,
    pub ratio: f64,
}

/// Hilbert-Schmidt norm of A_{T,μ} on the s-wave sector, and
/// ‖A‖₂ / (μ^{1/4} m_μ(T)).
pub fn hs_norm_a(potential: &Potential, temperature: f64, mu: f64, disc: &Discretization) -> Result<RemainderRatio> {
    let pgrid = disc.momentum_grid(mu, temperature)?;
    let a = assemble_a_kernel(potential, &disc.radial, &pgrid)?;
    let value = a.entries.norm();
    let m = m_mu(&pgrid)?.value;
    Ok(RemainderRatio {
        value,
        m_mu: m,
        ratio: value / (mu.powf(0.25) * m),
    })
}

/// ⟨f|(sgn V) A_{T,μ}|f⟩ with f = (1 + V^{1/2}p⁻²|V|^{1/2})⁻¹ V^{1/2}, and
/// its size relative to √μ m_μ(T).
pub fn lemma2_diagnostic(potential: &Potential, temperature: f64, mu: f64, disc: &Discretization) -> Result<RemainderRatio> {
    let grid = &disc.radial;
    let pgrid = disc.momentum_grid(mu, temperature)?;
    let m = m_mu(&pgrid)?.value;
    let bs0 = assemble_bs_zero(potential, grid)?;
    let (sv, _) = weighted_roots(potential, grid);
    let w_plus: Vec<f64> = grid.nodes().iter().zip(&sv).map(|(r, s)| r * s).collect();
    let f = solve_shifted(&bs0, &w_plus)?;
    let a = assemble_a_kernel(potential, grid, &pgrid)?;
    let n = grid.len();
    let mut form = 0.0;
    for i in 0..n {
        let sgn = potential.value(grid.nodes()[i]).signum();
        if sv[i] == 0.0 {
            continue;
        }
        let row: f64 = (0..n).map(|j| a.entries[(i, j)] * f[j]).sum();
        form += f[i] * sgn * row;
    }
    let value = 4.0 * PI * form;
    Ok(RemainderRatio {
        value,
        m_mu: m,
        ratio: value.abs() / (mu.sqrt() * m),
    })
}

/// ‖B_T − (BS₀ + m_μ(T)·|V^{1/2}⟩⟨|V|^{1/2}| + A_{T,μ})‖_F / ‖B_T‖_F, each
/// term assembled independently.
pub fn decomposition_residual(potential: &Potential, temperature: f64, mu: f64, disc: &Discretization) -> Result<f64> {
    let grid = &disc.radial;
    let pgrid = disc.momentum_grid(mu, temperature)?;
    let bt = assemble_bt(potential, grid, &pgrid)?;
    let scale = bt.entries.norm();
    if scale == 0.0 {
        return Ok(0.0);
    }
    let m = m_mu(&pgrid)?.value;
    let sum = assemble_bs_zero(potential, grid)?.entries
        + assemble_rank_one(potential, grid, m)?.entries
        + assemble_a_kernel(potential, grid, &pgrid)?.entries;
    Ok((bt.entries - sum).norm() / scale)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub mu: f64,
    pub tc: f64,
    pub a: f64,
    /// m_μ(T_c)
    pub m_at_tc: f64,
    /// −1/(4πa)
    pub m_limit: f64,
    pub asymptotic_tc: f64,
    /// ln(μ/T_c) + π/(2√μ a) − (2 − γ − ln(8/π))
    pub deviation: f64,
    pub eig_residual: f64,
    pub error: Option<String>,
}

impl SweepRow {
    fn failed(mu: f64, a: f64, msg: String) -> Self {
        Self {
            mu,
            tc: f64::NAN,
            a,
            m_at_tc: f64::NAN,
            m_limit: -1.0 / (4.0 * PI * a),
            asymptotic_tc: tc_asymptotic(mu, a).unwrap_or(f64::NAN),
            deviation: f64::NAN,
            eig_residual: f64::NAN,
            error: Some(msg),
        }
    }
}

fn sweep_row(potential: &Potential, mu: f64, a: f64, lambda: f64, disc: &Discretization, opts: &TcOptions) -> Result<SweepRow> {
    let tc = tc_solve_with_lambda(potential, mu, disc, opts, lambda)?;
    if tc.tc == 0.0 {
        return Err(Error::Assumption(format!(
            "no critical temperature above μ·{:e}",
            opts.floor_ratio
        )));
    }
    let m_at_tc = m_mu(&disc.momentum_grid(mu, tc.tc)?)?.value;
    Ok(SweepRow {
        mu,
        tc: tc.tc,
        a,
        m_at_tc,
        m_limit: -1.0 / (4.0 * PI * a),
        asymptotic_tc: tc_asymptotic(mu, a)?,
        deviation: (mu / tc.tc).ln() + PI / (2.0 * mu.sqrt() * a) - limit_constant(),
        eig_residual: tc.eig_residual,
        error: None,
    })
}

/// One row per μ; a failing row records its error and the rest continue.
/// Rows run in parallel and come back in input order.
pub fn sweep(potential: &Potential, mu_list: &[f64], disc: &Discretization, opts: &TcOptions) -> Result<Vec<SweepRow>> {
    if let Some(mu) = mu_list.iter().find(|&&m| !(m > 0.0)) {
        return Err(Error::Domain(format!("mu = {mu} in sweep")));
    }
    let a = scattering_length_bs(potential, &disc.radial)?.a;
    let lambda = lambda_coupling(potential, &disc.radial)?;
    Ok(mu_list
        .par_iter()
        .map(|&mu| {
            sweep_row(potential, mu, a, lambda, disc, opts).unwrap_or_else(|e| SweepRow::failed(mu, a, e.to_string()))
        })
        .collect())
}

//! The nonlinear gap equation on the radial momentum grid, restricted to
//! real s-wave order parameters.
//!
//! For radial V and Δ the angular integrals collapse and the equation reads
//!
//! ```text
//! Δ(p) = −(2/π) ∫ q² W(p,q) Δ(q) tanh(E(q)/2T)/E(q) dq,
//! W(p,q) = ∫ V(r) sin(pr) sin(qr) dr / (pq),
//! ```
//!
//! whose linearisation at Δ = 0 is the momentum form of B_T.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::potentials::Potential;
use crate::quadrature::adaptive;
use crate::radial_ops::{sine_transform_matrix, Discretization, KernelMatrix, MomentumGrid, OperatorLabel};

/// V̂(k) = (2π)^{-3/2} ∫ V(x) e^{-ikx} dx for radial V, k = |k|.
pub fn vhat_radial(potential: &Potential, k: f64) -> Result<f64> {
    if !(k >= 0.0 && k.is_finite()) {
        return Err(Error::Domain(format!("k = {k}")));
    }
    let r_end = potential.tail_radius(1e-14)?;
    let mut edges = vec![0.0];
    edges.extend(potential.breakpoints().into_iter().filter(|&b| b > 0.0 && b < r_end));
    edges.push(r_end);
    let kernel = |r: f64| {
        if k == 0.0 {
            r * r
        } else {
            r * (k * r).sin() / k
        }
    };
    let mut total = 0.0;
    for w in edges.windows(2) {
        total += adaptive(|r| potential.value(r) * kernel(r), w[0], w[1], 1e-12, 1e-16, 4000)?.value;
    }
    Ok((2.0 / PI).sqrt() * total)
}

/// Angular average of V̂(p − q) over the directions of p and q, on the
/// momentum grid: √(2/π) W(p,q).
pub fn vhat_swave(potential: &Potential, r_max: f64, pgrid: &MomentumGrid) -> Result<KernelMatrix> {
    let w = sine_transform_matrix(potential, r_max, pgrid)? * (2.0 / PI).sqrt();
    KernelMatrix::new(w, OperatorLabel::VhatSwave)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Trivial,
    Nontrivial,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Classification::Trivial => "trivial",
            Classification::Nontrivial => "nontrivial",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapOptions {
    /// Converged when sup|RHS(Δ) − Δ| ≤ tol · sup|Δ|.
    pub tol: f64,
    pub max_iter: usize,
    pub beta_floor: f64,
    /// Nontrivial iff sup|Δ| > threshold_ratio · μ.
    pub threshold_ratio: f64,
    /// Iterates with sup|Δ| below collapse_ratio · μ are replaced by Δ = 0.
    pub collapse_ratio: f64,
}

impl Default for GapOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100_000,
            beta_floor: 1.0 / 64.0,
            threshold_ratio: 1e-10,
            collapse_ratio: 1e-13,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapSolution {
    pub p: Vec<f64>,
    pub delta: Vec<f64>,
    /// E(p) = √((p² − μ)² + Δ(p)²)
    pub dispersion: Vec<f64>,
    /// sup-norm of RHS(Δ) − Δ at the returned Δ.
    pub residual: f64,
    pub classification: Classification,
    pub iterations: usize,
    pub temperature: f64,
    pub mu: f64,
}

impl GapSolution {
    pub fn max_delta(&self) -> f64 {
        self.delta.iter().fold(0.0, |m, d| m.max(d.abs()))
    }
}

/// The discretised right-hand side Δ ↦ −(2/π) W diag(w q² g(E)) Δ.
#[derive(Debug, Clone)]
pub struct GapProblem {
    w: DMatrix<f64>,
    p: Vec<f64>,
    q2w: Vec<f64>,
    eps: Vec<f64>,
    temperature: f64,
    mu: f64,
}

/// tanh(E/2T)/E, continuous at E = 0.
fn pair_weight(e: f64, t: f64) -> f64 {
    let x = e / (2.0 * t);
    if x < 1e-4 {
        (1.0 - x * x / 3.0) / (2.0 * t)
    } else {
        x.tanh() / e
    }
}

/// d/dE of tanh(E/2T)/E.
fn pair_weight_derivative(e: f64, t: f64) -> f64 {
    let x = e / (2.0 * t);
    if x < 1e-4 {
        -2.0 * x / (3.0 * 4.0 * t * t)
    } else {
        let sech2 = 1.0 / x.cosh().powi(2);
        (sech2 / (2.0 * t)) / e - x.tanh() / (e * e)
    }
}

impl GapProblem {
    pub fn new(potential: &Potential, r_max: f64, pgrid: &MomentumGrid) -> Result<Self> {
        if !(pgrid.temperature() > 0.0) {
            return Err(Error::Domain("gap equation needs T > 0".into()));
        }
        let w = sine_transform_matrix(potential, r_max, pgrid)?;
        let p = pgrid.nodes().to_vec();
        let q2w = p.iter().zip(pgrid.weights()).map(|(q, wq)| wq * q * q).collect();
        Ok(Self {
            w,
            p,
            q2w,
            eps: pgrid.detuning().to_vec(),
            temperature: pgrid.temperature(),
            mu: pgrid.mu(),
        })
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn momenta(&self) -> &[f64] {
        &self.p
    }

    pub fn dispersion(&self, delta: &[f64]) -> Vec<f64> {
        self.eps.iter().zip(delta).map(|(e, d)| e.hypot(*d)).collect()
    }

    pub fn rhs(&self, delta: &[f64]) -> Vec<f64> {
        let e = self.dispersion(delta);
        let x = DVector::from_fn(self.len(), |k, _| {
            self.q2w[k] * delta[k] * pair_weight(e[k], self.temperature)
        });
        (&self.w * x * (-2.0 / PI)).iter().copied().collect()
    }

    /// Largest eigenvalue of the Jacobian of Δ ↦ RHS(Δ), computed in its
    /// symmetrised form −(2/π) D^{1/2} W D^{1/2}.
    pub fn linearization_max_eigenvalue(&self, delta: &[f64]) -> f64 {
        let e = self.dispersion(delta);
        let t = self.temperature;
        let d: Vec<f64> = (0..self.len())
            .map(|k| {
                let g = pair_weight(e[k], t);
                let dg = if e[k] > 0.0 {
                    delta[k] * delta[k] * pair_weight_derivative(e[k], t) / e[k]
                } else {
                    0.0
                };
                (self.q2w[k] * (g + dg)).max(0.0).sqrt()
            })
            .collect();
        let m = DMatrix::from_fn(self.len(), self.len(), |i, j| -2.0 / PI * d[i] * self.w[(i, j)] * d[j]);
        let m = (&m + m.transpose()) * 0.5;
        m.symmetric_eigenvalues().max()
    }

    fn sup(v: &[f64]) -> f64 {
        v.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Damped fixed-point iteration Δ ← (1−β)Δ + β RHS(Δ). β starts at 1 and
    /// halves whenever the defect grows, down to the floor.
    pub fn iterate(&self, mut delta: Vec<f64>, opts: &GapOptions) -> Result<GapSolution> {
        if delta.len() != self.len() {
            return Err(Error::Domain(format!(
                "initial profile has {} samples, grid has {}",
                delta.len(),
                self.len()
            )));
        }
        if delta.iter().any(|d| !d.is_finite()) {
            return Err(Error::Domain("initial profile is not finite".into()));
        }
        let collapse = opts.collapse_ratio * self.mu;
        let mut beta = 1.0;
        let mut history = Vec::new();
        let mut rising_at_floor = 0usize;
        for it in 1..=opts.max_iter {
            if Self::sup(&delta) < collapse {
                delta.iter_mut().for_each(|d| *d = 0.0);
            }
            let r = self.rhs(&delta);
            let residual = Self::sup(&r.iter().zip(&delta).map(|(a, b)| a - b).collect::<Vec<_>>());
            let size = Self::sup(&delta);
            if residual <= opts.tol * size || residual == 0.0 {
                return Ok(self.finish(delta, residual, it, opts));
            }
            if let Some(&prev) = history.last() {
                if residual > prev {
                    if beta > opts.beta_floor {
                        beta = (beta * 0.5).max(opts.beta_floor);
                    } else {
                        rising_at_floor += 1;
                    }
                } else {
                    rising_at_floor = 0;
                }
            }
            history.push(residual);
            if rising_at_floor > 50 {
                return Err(Error::GapNotConverged {
                    iterations: it,
                    residual,
                    history,
                });
            }
            for (d, rk) in delta.iter_mut().zip(&r) {
                *d = (1.0 - beta) * *d + beta * rk;
            }
        }
        Err(Error::GapNotConverged {
            iterations: opts.max_iter,
            residual: history.last().copied().unwrap_or(f64::NAN),
            history,
        })
    }

    fn finish(&self, delta: Vec<f64>, residual: f64, iterations: usize, opts: &GapOptions) -> GapSolution {
        let classification = if Self::sup(&delta) > opts.threshold_ratio * self.mu {
            Classification::Nontrivial
        } else {
            Classification::Trivial
        };
        GapSolution {
            p: self.p.clone(),
            dispersion: self.dispersion(&delta),
            delta,
            residual,
            classification,
            iterations,
            temperature: self.temperature,
            mu: self.mu,
        }
    }
}

/// Solves the gap equation at (T, μ) starting from Δ₀(p) = `delta0(p)`.
pub fn gap_iterate<F: Fn(f64) -> f64>(
    potential: &Potential,
    temperature: f64,
    mu: f64,
    disc: &Discretization,
    delta0: F,
    opts: &GapOptions,
) -> Result<GapSolution> {
    let pgrid = disc.momentum_grid(mu, temperature)?;
    let problem = GapProblem::new(potential, disc.radial.r_max(), &pgrid)?;
    let start = problem.momenta().iter().map(|&p| delta0(p)).collect();
    problem.iterate(start, opts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanRow {
    pub temperature: f64,
    pub max_delta: f64,
    pub residual: f64,
    pub iterations: usize,
    pub classification: Option<Classification>,
    pub error: Option<String>,
}

/// Order parameter along `t_list`, each point started from the constant
/// profile `delta0`. Points run in parallel; failures are recorded in-row.
pub fn transition_scan(
    potential: &Potential,
    mu: f64,
    t_list: &[f64],
    disc: &Discretization,
    delta0: f64,
    opts: &GapOptions,
) -> Vec<ScanRow> {
    t_list
        .par_iter()
        .map(|&t| match gap_iterate(potential, t, mu, disc, |_| delta0, opts) {
            Ok(s) => ScanRow {
                temperature: t,
                max_delta: s.max_delta(),
                residual: s.residual,
                iterations: s.iterations,
                classification: Some(s.classification),
                error: None,
            },
            Err(e) => ScanRow {
                temperature: t,
                max_delta: f64::NAN,
                residual: f64::NAN,
                iterations: 0,
                classification: None,
                error: Some(e.to_string()),
            },
        })
        .collect()
}

/// Largest nontrivial temperature and the next scanned one above it.
pub fn empirical_transition(rows: &[ScanRow]) -> Option<(f64, f64)> {
    let mut sorted: Vec<&ScanRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.temperature.total_cmp(&b.temperature));
    let k = sorted
        .iter()
        .rposition(|r| r.classification == Some(Classification::Nontrivial))?;
    let above = sorted.get(k + 1).map_or(f64::INFINITY, |r| r.temperature);
    Some((sorted[k].temperature, above))
}

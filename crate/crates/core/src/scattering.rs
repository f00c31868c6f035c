//! Scattering length and coupling margin.
//!
//! Two independent routes to a: the resolvent formula
//! a = (1/4π)⟨|V|^{1/2}, (1 + V^{1/2}p⁻²|V|^{1/2})⁻¹ V^{1/2}⟩, and the
//! asymptote u(r) ≈ c(r − a) of the zero-energy solution of −u″ + Vu = 0.

use std::f64::consts::PI;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::potentials::{Potential, SignClass};
use crate::radial_ops::{
    assemble_bs_zero, assemble_bs_zero_momentum_compressed, weighted_roots, MomentumGrid, MomentumGridSpec, RadialGrid,
};
use crate::spectral::{min_eigenvalue, solve_shifted};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScatteringMethod {
    BsFormula,
    OdeAsymptote,
    BornSeries(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatteringResult {
    pub a: f64,
    pub method: ScatteringMethod,
    pub error_estimate: f64,
    /// Fitted `(c, a)` of u(r) ≈ c(r − a), for the ODE method.
    pub asymptote: Option<(f64, f64)>,
}

fn resolvent_length(potential: &Potential, grid: &RadialGrid) -> Result<f64> {
    let m = assemble_bs_zero(potential, grid)?;
    let (sv, av) = weighted_roots(potential, grid);
    let r = grid.nodes();
    let w_plus: Vec<f64> = r.iter().zip(&sv).map(|(r, s)| r * s).collect();
    let x = solve_shifted(&m, &w_plus)?;
    Ok(r.iter().zip(&av).zip(&x).map(|((r, a), x)| r * a * x).sum())
}

/// a from the resolvent formula on the radial grid. The error estimate is
/// the change against the same panels at half the order.
pub fn scattering_length_bs(potential: &Potential, grid: &RadialGrid) -> Result<ScatteringResult> {
    if potential.sign_class() == SignClass::Zero {
        return Ok(ScatteringResult {
            a: 0.0,
            method: ScatteringMethod::BsFormula,
            error_estimate: 0.0,
            asymptote: None,
        });
    }
    let a = resolvent_length(potential, grid)?;
    let coarse = resolvent_length(potential, &grid.coarsened())?;
    Ok(ScatteringResult {
        a,
        method: ScatteringMethod::BsFormula,
        error_estimate: (a - coarse).abs(),
        asymptote: None,
    })
}

/// Partial sums of the Neumann series Σ_n (−1)^n ⟨w₋, Mⁿ w₊⟩ for orders
/// 0..=max_order.
pub fn born_partial_sums(potential: &Potential, grid: &RadialGrid, max_order: usize) -> Result<Vec<f64>> {
    let m = assemble_bs_zero(potential, grid)?;
    let (sv, av) = weighted_roots(potential, grid);
    let r = grid.nodes();
    let w_minus = DVector::from_iterator(r.len(), r.iter().zip(&av).map(|(r, a)| r * a));
    let mut x = DVector::from_iterator(r.len(), r.iter().zip(&sv).map(|(r, s)| r * s));
    let mut sums = Vec::with_capacity(max_order + 1);
    let mut total = 0.0;
    for _ in 0..=max_order {
        total += w_minus.dot(&x);
        sums.push(total);
        x = -(&m.entries * x);
    }
    Ok(sums)
}

/// The Born approximation of the given order.
pub fn scattering_length_born(potential: &Potential, grid: &RadialGrid, order: usize) -> Result<ScatteringResult> {
    let sums = born_partial_sums(potential, grid, order + 1)?;
    Ok(ScatteringResult {
        a: sums[order],
        method: ScatteringMethod::BornSeries(order),
        error_estimate: (sums[order + 1] - sums[order]).abs(),
        asymptote: None,
    })
}

/// λ with −1/λ the smallest eigenvalue of V^{1/2}p⁻²|V|^{1/2}; +∞ when no
/// eigenvalue is negative. Sign-changing potentials use the symmetric
/// momentum-space partner.
pub fn lambda_coupling(potential: &Potential, grid: &RadialGrid) -> Result<f64> {
    let min = match potential.sign_class() {
        SignClass::Zero | SignClass::Repulsive => return Ok(f64::INFINITY),
        SignClass::Attractive => min_eigenvalue(&assemble_bs_zero(potential, grid)?)?,
        SignClass::Indefinite => {
            let pg = MomentumGrid::zero_energy(grid.r_max(), &MomentumGridSpec::default())?;
            min_eigenvalue(&assemble_bs_zero_momentum_compressed(potential, grid.r_max(), &pg)?)?
        }
    };
    Ok(if min < 0.0 { -1.0 / min } else { f64::INFINITY })
}

/// Integration endpoint for the ODE method: far enough out that V is
/// negligible over the whole fit window [0.6 r, r].
pub fn default_ode_radius(potential: &Potential) -> Result<f64> {
    Ok(2.5 * potential.tail_radius(1e-12)?)
}

/// Zero-energy solution data at the end of the integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroEnergySolution {
    /// Slope of the asymptote.
    pub c: f64,
    pub a: f64,
    /// ∫_0^{r_max} V(r) u(r) r dr for u with u′(0) = 1.
    pub moment: f64,
    pub fit_residual: f64,
    pub error_estimate: f64,
}

const FIT_POINTS: usize = 41;
const FIT_TOL: f64 = 1e-9;
const ODE_RTOL: f64 = 1e-12;
const ODE_ATOL: f64 = 1e-15;

/// Integrates −u″ + Vu = 0 with u(0) = 0, u′(0) = 1 and fits u = c(r − a)
/// on [0.6 r_max, r_max].
pub fn solve_zero_energy(potential: &Potential, r_max: f64) -> Result<ZeroEnergySolution> {
    if !(r_max > 0.0 && r_max.is_finite()) {
        return Err(Error::Domain(format!("r_max = {r_max}")));
    }
    if potential.sign_class() == SignClass::Zero {
        return Ok(ZeroEnergySolution {
            c: 1.0,
            a: 0.0,
            moment: 0.0,
            fit_residual: 0.0,
            error_estimate: 0.0,
        });
    }
    let window: Vec<f64> = (0..FIT_POINTS)
        .map(|k| r_max * (0.6 + 0.4 * k as f64 / (FIT_POINTS - 1) as f64))
        .collect();
    let mut stops: Vec<f64> = potential
        .breakpoints()
        .into_iter()
        .filter(|&b| b > 0.0 && b < window[0])
        .collect();
    stops.extend(&window);

    let rhs = |r: f64, y: &[f64; 3]| {
        let v = potential.value(r);
        [y[1], v * y[0], v * y[0] * r]
    };
    let mut y = [0.0, 1.0, 0.0];
    let mut r = 0.0;
    let mut h = 1e-3 * potential.length_scale().min(r_max);
    let mut samples = Vec::with_capacity(FIT_POINTS);
    for &stop in &stops {
        h = integrate(&rhs, &mut r, &mut y, stop, h)?;
        if window.contains(&stop) {
            samples.push((stop, y[0]));
        }
    }
    let moment = y[2];

    let fit = |pts: &[(f64, f64)]| {
        let n = pts.len() as f64;
        let mr = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let mu = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mr) * (p.1 - mu)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mr) * (p.0 - mr)).sum();
        let c = sxy / sxx;
        let alpha = mu - c * mr;
        (c, alpha)
    };
    let (c, alpha) = fit(&samples);
    let scale = samples.iter().fold(0.0f64, |m, p| m.max(p.1.abs()));
    let rms = (samples
        .iter()
        .map(|p| (p.1 - alpha - c * p.0).powi(2))
        .sum::<f64>()
        / samples.len() as f64)
        .sqrt();
    let fit_residual = rms / scale.max(f64::MIN_POSITIVE);
    if fit_residual > FIT_TOL {
        return Err(Error::RMaxTooSmall {
            residual: fit_residual,
            tol: FIT_TOL,
            r_max,
        });
    }
    if c <= 0.0 {
        return Err(Error::BoundState { r_node: -alpha / c });
    }
    let a = -alpha / c;
    let half = FIT_POINTS / 2;
    let (c1, a1) = fit(&samples[..=half]);
    let (c2, a2) = fit(&samples[half..]);
    let error_estimate = (a1 / c1 - a2 / c2).abs().max(f64::EPSILON * a.abs().max(1.0));
    Ok(ZeroEnergySolution {
        c,
        a,
        moment,
        fit_residual,
        error_estimate,
    })
}

pub fn scattering_length_ode(potential: &Potential, r_max: f64) -> Result<ScatteringResult> {
    let s = solve_zero_energy(potential, r_max)?;
    Ok(ScatteringResult {
        a: s.a,
        method: ScatteringMethod::OdeAsymptote,
        error_estimate: s.error_estimate,
        asymptote: Some((s.c, s.a)),
    })
}

/// |4π∫Vψ r²dr − 4πa| / max(|4πa|, ε) for ψ = u/(c r).
pub fn appendix_identity_check(potential: &Potential, r_max: f64) -> Result<f64> {
    let s = solve_zero_energy(potential, r_max)?;
    let lhs = 4.0 * PI * s.moment / s.c;
    let rhs = 4.0 * PI * s.a;
    Ok((lhs - rhs).abs() / rhs.abs().max(f64::EPSILON))
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Adaptive Dormand-Prince from `*r` to `end`; returns the next step size.
/// Fails with a bound-state error if u turns non-positive.
fn integrate<F>(f: &F, r: &mut f64, y: &mut [f64; 3], end: f64, mut h: f64) -> Result<f64>
where
    F: Fn(f64, &[f64; 3]) -> [f64; 3],
{
    let mut steps = 0usize;
    while *r < end {
        steps += 1;
        if steps > 10_000_000 {
            return Err(Error::Convergence {
                iterations: steps,
                residual: h,
            });
        }
        let last = *r + h >= end;
        let step = if last { end - *r } else { h };
        let mut k = [[0.0; 3]; 7];
        k[0] = f(*r, y);
        for s in 1..7 {
            let mut ys = *y;
            for (j, kj) in k.iter().enumerate().take(s) {
                for d in 0..3 {
                    ys[d] += step * A[s][j] * kj[d];
                }
            }
            k[s] = f(*r + C[s] * step, &ys);
        }
        let mut y_new = *y;
        for (j, kj) in k.iter().enumerate().take(6) {
            for d in 0..3 {
                y_new[d] += step * A[6][j] * kj[d];
            }
        }
        let mut err = 0.0f64;
        for d in 0..3 {
            let e: f64 = (0..7).map(|j| E[j] * k[j][d]).sum::<f64>() * step;
            let sc = ODE_ATOL + ODE_RTOL * y[d].abs().max(y_new[d].abs());
            err = err.max(e.abs() / sc);
        }
        if err <= 1.0 {
            if y_new[0] <= 0.0 {
                let t = y[0] / (y[0] - y_new[0]);
                return Err(Error::BoundState { r_node: *r + t * step });
            }
            *r = if last { end } else { *r + step };
            *y = y_new;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        if err <= 1.0 && last {
            return Ok(h);
        }
        h = step * factor;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::Table;
    use crate::radial_ops::RadialGridSpec;
    use approx::assert_relative_eq;

    fn grid(v: &Potential) -> RadialGrid {
        RadialGrid::for_potential(v, &RadialGridSpec::default()).unwrap()
    }

    #[test]
    fn zero_potential() {
        let v = Potential::zero();
        assert_eq!(scattering_length_bs(&v, &grid(&v)).unwrap().a, 0.0);
        let ode = scattering_length_ode(&v, 5.0).unwrap();
        assert_eq!(ode.a, 0.0);
        assert_eq!(ode.asymptote.unwrap().0, 1.0);
        assert_eq!(lambda_coupling(&v, &grid(&v)).unwrap(), f64::INFINITY);
        assert_eq!(appendix_identity_check(&v, 5.0).unwrap(), 0.0);
    }

    #[test]
    fn square_well_closed_form() {
        let v = Potential::square_well(1.0, 1.0).unwrap();
        let exact = 1.0 - 1.0f64.tan();
        let bs = scattering_length_bs(&v, &grid(&v)).unwrap();
        assert!((bs.a - exact).abs() < 1e-9, "{}", bs.a);
        assert!(bs.error_estimate < 1e-6);
        let ode = scattering_length_ode(&v, 2.5).unwrap();
        assert!((ode.a - exact).abs() < 1e-9, "{}", ode.a);
        assert!(appendix_identity_check(&v, 2.5).unwrap() < 1e-6);
    }

    #[test]
    fn four_pi_constant_by_born_term() {
        // First Born term (1/4π)∫V d³x for a weak Gaussian.
        let eps = 1e-3;
        let v = Potential::gaussian(eps, 1.0).unwrap();
        let born = scattering_length_born(&v, &grid(&v), 0).unwrap();
        assert_relative_eq!(born.a, -eps * PI.sqrt() / 4.0, max_relative = 1e-9);
        let bs = scattering_length_bs(&v, &grid(&v)).unwrap();
        assert_relative_eq!(bs.a, -eps * PI.sqrt() / 4.0, max_relative = 2e-3);
    }

    #[test]
    fn bound_state_is_detected() {
        let v = Potential::square_well(3.0, 1.0).unwrap();
        assert!(matches!(scattering_length_ode(&v, 2.5), Err(Error::BoundState { .. })));
        assert!(lambda_coupling(&v, &grid(&v)).unwrap() < 1.0);
    }

    #[test]
    fn short_endpoint_is_rejected() {
        let v = Potential::exponential(0.5, 1.0).unwrap();
        assert!(matches!(scattering_length_ode(&v, 3.0), Err(Error::RMaxTooSmall { .. })));
    }

    #[test]
    fn exponential_methods_agree() {
        let v = Potential::exponential(0.5, 1.0).unwrap();
        let bs = scattering_length_bs(&v, &grid(&v)).unwrap();
        let ode = scattering_length_ode(&v, default_ode_radius(&v).unwrap()).unwrap();
        assert!(bs.a < 0.0);
        assert!((bs.a - ode.a).abs() < 1e-6 * bs.a.abs().max(1.0), "{} vs {}", bs.a, ode.a);
    }

    #[test]
    fn lambda_of_square_well() {
        let v = Potential::square_well(1.0, 1.0).unwrap();
        assert_relative_eq!(lambda_coupling(&v, &grid(&v)).unwrap(), PI * PI / 4.0, max_relative = 1e-8);
    }

    #[test]
    fn sign_changing_lambda_uses_momentum_partner() {
        let r: Vec<f64> = (1..=40).map(|k| 0.05 * k as f64).collect();
        let vals: Vec<f64> = r.iter().map(|&x| if x < 1.0 { -2.0 } else { 0.5 * (2.0 - x) }).collect();
        let v = Potential::tabulated(Table::new(r, vals).unwrap());
        let lam = lambda_coupling(&v, &grid(&v)).unwrap();
        assert!(lam.is_finite() && lam > 0.0);
    }
}

//! Smallest eigenpairs, solves against 1 + M, and the Birman-Schwinger
//! positivity predicate.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::potentials::Potential;
use crate::radial_ops::{assemble_bt, assemble_bt_momentum_compressed, KernelMatrix, MomentumGrid, RadialGrid};

/// Margin below which 1 + M counts as singular.
pub const SINGULAR_MARGIN: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectralMethod {
    FullSymmetric,
    InverseIteration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralReport {
    pub min_eig: f64,
    /// Unit eigenvector for `min_eig`.
    pub eigvec: DVector<f64>,
    /// ‖Mv − λv‖ for the unit vector v.
    pub residual: f64,
    pub method: SpectralMethod,
}

fn require_symmetric(m: &KernelMatrix) -> Result<()> {
    if m.symmetric {
        Ok(())
    } else {
        Err(Error::NotSymmetric(m.label.name()))
    }
}

/// Algebraically smallest eigenvalue, without eigenvectors.
pub fn min_eigenvalue(m: &KernelMatrix) -> Result<f64> {
    require_symmetric(m)?;
    if m.dim() == 0 {
        return Err(Error::Domain("empty matrix".into()));
    }
    Ok(m.entries.clone().symmetric_eigenvalues().min())
}

/// Smallest eigenpair: eigenvalues by the symmetric QR algorithm, the
/// eigenvector by shifted inverse iteration, falling back to the full
/// decomposition if the refinement does not meet 10⁻¹⁰.
pub fn min_eig(m: &KernelMatrix) -> Result<SpectralReport> {
    let lambda = min_eigenvalue(m)?;
    match inverse_iteration(&m.entries, lambda) {
        Some(report) if report.residual < 1e-10 * (1.0 + m.entries.amax()) => Ok(report),
        _ => min_eig_with(m, SpectralMethod::FullSymmetric),
    }
}

pub fn min_eig_with(m: &KernelMatrix, method: SpectralMethod) -> Result<SpectralReport> {
    match method {
        SpectralMethod::InverseIteration => min_eig(m),
        SpectralMethod::FullSymmetric => {
            require_symmetric(m)?;
            let eig = m.entries.clone().symmetric_eigen();
            let k = eig.eigenvalues.imin();
            let lambda = eig.eigenvalues[k];
            let v = eig.eigenvectors.column(k).normalize();
            let residual = (&m.entries * &v - &v * lambda).norm();
            Ok(SpectralReport {
                min_eig: lambda,
                eigvec: v,
                residual,
                method: SpectralMethod::FullSymmetric,
            })
        }
    }
}

fn inverse_iteration(m: &DMatrix<f64>, lambda: f64) -> Option<SpectralReport> {
    let n = m.nrows();
    let shift = lambda - 1e-9 * lambda.abs().max(1.0);
    let lu = (m - DMatrix::identity(n, n) * shift).lu();
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * (i as f64).sin()).normalize();
    for _ in 0..4 {
        v = lu.solve(&v)?.normalize();
    }
    let mv = m * &v;
    let rq = v.dot(&mv);
    let residual = (mv - &v * rq).norm();
    Some(SpectralReport {
        min_eig: rq,
        eigvec: v,
        residual,
        method: SpectralMethod::InverseIteration,
    })
}

/// Solves (1 + M) x = rhs to a relative residual below 10⁻¹⁰.
///
/// For symmetric M a Cholesky factorisation of 1 + M − 10⁻⁸ certifies
/// min_eig(M) > −1 + 10⁻⁸ first.
pub fn solve_shifted(m: &KernelMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = m.dim();
    if rhs.len() != n {
        return Err(Error::Domain(format!("rhs has length {}, matrix is {n}x{n}", rhs.len())));
    }
    let a = &m.entries + DMatrix::identity(n, n);
    if m.symmetric && (&a - DMatrix::identity(n, n) * SINGULAR_MARGIN).cholesky().is_none() {
        let min_eig = min_eigenvalue(m)?;
        return Err(Error::NearSingular { min_eig });
    }
    let b = DVector::from_column_slice(rhs);
    let lu = a.clone().lu();
    let mut x = lu.solve(&b).ok_or(Error::NearSingular { min_eig: f64::NAN })?;
    let scale = b.norm();
    if scale == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut rel = f64::INFINITY;
    for _ in 0..3 {
        let r = &b - &a * &x;
        rel = r.norm() / scale;
        if rel < 1e-13 {
            break;
        }
        if let Some(dx) = lu.solve(&r) {
            x += dx;
        }
    }
    let rel = rel.min((&b - &a * &x).norm() / scale);
    if !(rel < 1e-10) {
        return Err(Error::Convergence {
            iterations: 3,
            residual: rel,
        });
    }
    Ok(x.iter().copied().collect())
}

/// A symmetric discretisation of B_T: the position-space matrix when V has
/// one sign, the compressed momentum-space partner K^{-1/2} V K^{-1/2}
/// otherwise.
pub fn thermal_operator(potential: &Potential, grid: &RadialGrid, pgrid: &MomentumGrid) -> Result<KernelMatrix> {
    if potential.sign_class().is_definite() {
        assemble_bt(potential, grid, pgrid)
    } else {
        assemble_bt_momentum_compressed(potential, grid.r_max(), pgrid)
    }
}

/// Whether K_{T,μ} + V ≥ 0, i.e. the smallest eigenvalue of B_T is ≥ −1.
pub fn positivity_check(potential: &Potential, grid: &RadialGrid, pgrid: &MomentumGrid) -> Result<bool> {
    Ok(min_eigenvalue(&thermal_operator(potential, grid, pgrid)?)? >= -1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radial_ops::{assemble_bs_zero, MomentumGridSpec, OperatorLabel, RadialGridSpec};
    use approx::assert_relative_eq;

    fn km(m: DMatrix<f64>) -> KernelMatrix {
        KernelMatrix::new(m, OperatorLabel::Remainder).unwrap()
    }

    #[test]
    fn zero_matrix() {
        let r = min_eig(&km(DMatrix::zeros(4, 4))).unwrap();
        assert_eq!(r.min_eig, 0.0);
        assert_relative_eq!(r.eigvec.norm(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn diagonal_matrix() {
        let r = min_eig(&km(DMatrix::from_diagonal(&DVector::from_vec(vec![-2.0, 1.0, 3.0])))).unwrap();
        assert_relative_eq!(r.min_eig, -2.0, epsilon = 1e-14);
        assert_relative_eq!(r.eigvec[0].abs(), 1.0, epsilon = 1e-12);
        let full = min_eig_with(&km(DMatrix::from_diagonal(&DVector::from_vec(vec![-2.0, 1.0, 3.0]))), SpectralMethod::FullSymmetric).unwrap();
        assert_eq!(full.min_eig, -2.0);
    }

    #[test]
    fn rejects_nonsymmetric_input() {
        let m = km(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));
        assert!(matches!(min_eig(&m), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn shifted_solve_of_zero_matrix_is_identity() {
        let x = solve_shifted(&km(DMatrix::zeros(3, 3)), &[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(x, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn sherman_morrison() {
        let v = DVector::from_vec(vec![0.6, 0.8, 0.0]);
        let c = 2.5;
        let m = km(&v * v.transpose() * c);
        let rhs = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let x = solve_shifted(&m, rhs.as_slice()).unwrap();
        let expect = &rhs - &v * (c / (1.0 + c) * v.dot(&rhs));
        for i in 0..3 {
            assert_relative_eq!(x[i], expect[i], epsilon = 1e-14);
        }
    }

    #[test]
    fn near_singular_shift_is_reported() {
        let m = km(DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 0.5])));
        assert!(matches!(solve_shifted(&m, &[1.0, 1.0]), Err(Error::NearSingular { .. })));
    }

    #[test]
    fn square_well_solve_residual() {
        let v = Potential::square_well(1.0, 1.0).unwrap();
        let g = RadialGrid::for_potential(&v, &RadialGridSpec::default()).unwrap();
        let m = assemble_bs_zero(&v, &g).unwrap();
        let rhs: Vec<f64> = g.nodes().iter().map(|r| r.sin()).collect();
        let x = solve_shifted(&m, &rhs).unwrap();
        let xv = DVector::from_vec(x.clone());
        let res = (&xv + &m.entries * &xv - DVector::from_vec(rhs.clone())).norm() / DVector::from_vec(rhs).norm();
        assert!(res < 1e-10);
        let report = min_eig(&m).unwrap();
        assert!(report.residual < 1e-8);
    }

    #[test]
    fn positivity_for_zero_potential() {
        let v = Potential::zero();
        let g = RadialGrid::uniform(1.0, 4, 8).unwrap();
        let pg = MomentumGrid::new(0.1, 1e-6, 1.0, &MomentumGridSpec::default()).unwrap();
        assert!(positivity_check(&v, &g, &pg).unwrap());
    }
}

mod common;

use bcs_tc::critical_temp::decomposition_residual;
use bcs_tc::potentials::{Potential, Table};
use bcs_tc::radial_ops::*;
use bcs_tc::spectral::{min_eigenvalue, solve_shifted};

fn sign_changing() -> Potential {
    let r: Vec<f64> = (1..=120).map(|k| 0.05 * k as f64).collect();
    let v = r
        .iter()
        .map(|&x: &f64| 2.0 * (-(x / 0.3).powi(2)).exp() - 1.5 * (-(x * x)).exp())
        .collect();
    Potential::tabulated(Table::new(r, v).unwrap())
}

fn min_real_eigenvalue(m: &KernelMatrix) -> f64 {
    m.entries
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn decomposition_holds_at_three_points() {
    for v in [common::square_well(), Potential::gaussian(1.0, 1.0).unwrap()] {
        let d = common::disc(&v);
        for (mu, t) in [(0.1, 0.01), (0.01, 1e-4), (1.0, 0.5)] {
            let res = decomposition_residual(&v, t, mu, &d).unwrap();
            assert!(res < 1e-6, "mu {mu}, T {t}: {res:e}");
        }
    }
}

#[test]
fn grid_doubling_moves_smallest_eigenvalues_little() {
    let v = Potential::gaussian(1.0, 1.0).unwrap();
    let coarse = common::disc(&v);
    let fine = Discretization::new(
        &v,
        &RadialGridSpec {
            nodes: 800,
            ..RadialGridSpec::default()
        },
        MomentumGridSpec::default(),
    )
    .unwrap();
    let (mu, t) = (0.1, 0.01);
    type Assemble = fn(&Potential, &Discretization, f64, f64) -> KernelMatrix;
    let ops: [(&str, Assemble); 2] = [
        ("bs_zero", |v, d, _, _| assemble_bs_zero(v, &d.radial).unwrap()),
        ("bt", |v, d, mu, t| {
            assemble_bt(v, &d.radial, &d.momentum_grid(mu, t).unwrap()).unwrap()
        }),
    ];
    for (name, f) in ops {
        let a = min_eigenvalue(&f(&v, &coarse, mu, t)).unwrap();
        let b = min_eigenvalue(&f(&v, &fine, mu, t)).unwrap();
        assert!((a - b).abs() < 1e-5 * b.abs(), "{name}: {a} vs {b}");
    }
}

#[test]
fn position_and_momentum_spectra_agree() {
    let (mu, t) = (0.1, 0.01);
    let v = common::square_well();
    let d = common::disc(&v);
    let pg = d.momentum_grid(mu, t).unwrap();
    let x = min_eigenvalue(&assemble_bt(&v, &d.radial, &pg).unwrap()).unwrap();
    let p = min_eigenvalue(&assemble_bt_momentum(&v, d.radial.r_max(), &pg).unwrap()).unwrap();
    assert!((x - p).abs() < 1e-4 * x.abs(), "{x} vs {p}");

    let v = sign_changing();
    let d = common::disc(&v);
    let pg = d.momentum_grid(mu, t).unwrap();
    let x = min_real_eigenvalue(&assemble_bt(&v, &d.radial, &pg).unwrap());
    let p = min_eigenvalue(&assemble_bt_momentum_compressed(&v, d.radial.r_max(), &pg).unwrap()).unwrap();
    assert!((x - p).abs() < 1e-4 * x.abs(), "{x} vs {p}");

    let x = min_real_eigenvalue(&assemble_bs_zero(&v, &d.radial).unwrap());
    let zero = MomentumGrid::zero_energy(d.r_extent(), &MomentumGridSpec::default()).unwrap();
    let p = min_eigenvalue(&assemble_bs_zero_momentum_compressed(&v, d.radial.r_max(), &zero).unwrap()).unwrap();
    assert!((x - p).abs() < 1e-4 * x.abs(), "{x} vs {p}");
}

#[test]
fn p_wave_lies_above_s_wave() {
    let (mu, t) = (0.1, 0.01);
    for v in [
        common::square_well(),
        Potential::gaussian(2.0, 0.7).unwrap(),
        Potential::exponential(0.6, 1.0).unwrap(),
    ] {
        let d = common::disc(&v);
        let pg = d.momentum_grid(mu, t).unwrap();
        let s = min_eigenvalue(&assemble_partial_wave(&v, &d.radial, Some(&pg), 0).unwrap()).unwrap();
        let p = min_eigenvalue(&assemble_partial_wave(&v, &d.radial, Some(&pg), 1).unwrap()).unwrap();
        assert!(p > s, "{p} <= {s}");
    }
}

#[test]
fn thermal_eigenvalue_rises_with_temperature() {
    let v = Potential::gaussian(1.0, 1.0).unwrap();
    let d = common::disc(&v);
    let mu = 0.1;
    let ladder: Vec<f64> = [1e-6, 1e-4, 1e-3, 1e-2, 0.1, 1.0]
        .iter()
        .map(|&t| min_eigenvalue(&assemble_bt(&v, &d.radial, &d.momentum_grid(mu, t).unwrap()).unwrap()).unwrap())
        .collect();
    assert!(ladder.windows(2).all(|w| w[0] <= w[1]), "{ladder:?}");
}

#[test]
fn shifted_solve_diverges_like_inverse_margin() {
    let v = common::square_well();
    let g = RadialGrid::for_potential(&v, &RadialGridSpec::default()).unwrap();
    let m = assemble_bs_zero(&v, &g).unwrap();
    let e0 = min_eigenvalue(&m).unwrap();
    let (sv, _) = weighted_roots(&v, &g);
    let rhs: Vec<f64> = g.nodes().iter().zip(&sv).map(|(r, s)| r * s).collect();
    let pts: Vec<(f64, f64)> = [1e-2, 1e-3, 1e-4]
        .iter()
        .map(|&margin| {
            let s = (1.0 - margin) / -e0;
            let scaled = KernelMatrix::new(&m.entries * s, OperatorLabel::BirmanSchwingerZero).unwrap();
            let x = solve_shifted(&scaled, &rhs).unwrap();
            let norm = x.iter().map(|y| y * y).sum::<f64>().sqrt();
            (margin.ln(), norm.ln())
        })
        .collect();
    for w in pts.windows(2) {
        let slope = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
        assert!((slope + 1.0).abs() < 0.1, "slope {slope}");
    }
}

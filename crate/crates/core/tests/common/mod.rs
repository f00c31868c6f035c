#![allow(dead_code)]

use bcs_tc::potentials::{Potential, Table};
use bcs_tc::radial_ops::{Discretization, MomentumGridSpec, RadialGridSpec};

pub fn square_well() -> Potential {
    Potential::square_well(1.0, 1.0).unwrap()
}

/// A screened well sampled on a graded mesh, to exercise the tabulated kind.
pub fn tabulated_well() -> Potential {
    let r: Vec<f64> = (1..=60).map(|k| 0.1 * k as f64).collect();
    let v = r.iter().map(|&x: &f64| -1.5 * (-x).exp() / (1.0 + x)).collect();
    Potential::tabulated(Table::new(r, v).unwrap())
}

/// Attractive potentials without bound states.
pub fn zoo() -> Vec<(&'static str, Potential)> {
    vec![
        ("square_well(1.5, 1.2)", Potential::square_well(1.5, 1.2).unwrap()),
        ("gaussian(1, 1)", Potential::gaussian(1.0, 1.0).unwrap()),
        ("gaussian(2, 0.7)", Potential::gaussian(2.0, 0.7).unwrap()),
        ("exponential(0.6, 1)", Potential::exponential(0.6, 1.0).unwrap()),
        ("tabulated screened well", tabulated_well()),
    ]
}

pub fn disc(v: &Potential) -> Discretization {
    Discretization::new(v, &RadialGridSpec::default(), MomentumGridSpec::default()).unwrap()
}

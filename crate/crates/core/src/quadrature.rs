//! Gauss-Legendre rules, composite panels and a globally adaptive
//! Gauss-Kronrod integrator.
//!
//! Every routine here evaluates and sums in a fixed order so results are
//! reproducible bit for bit.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Gauss-Legendre nodes and weights on [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "Gauss-Legendre order must be positive");
        let mut nodes = vec![0.0; order];
        let mut weights = vec![0.0; order];
        let n = order as f64;
        for i in 0..(order + 1) / 2 {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (PI * (i as f64 + 0.75) / (n + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(order, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(order, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[order - 1 - i] = x;
            weights[i] = w;
            weights[order - 1 - i] = w;
        }
        if order % 2 == 1 {
            nodes[order / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Nodes and weights affinely mapped to [a, b], in increasing order.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, a: f64, b: f64, f: F) -> f64 {
        compensated_sum(self.mapped(a, b).map(|(x, w)| w * f(x)))
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let n = n as f64;
    let d = n * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite Gauss-Legendre rule over consecutive panels `[breaks[k], breaks[k+1]]`.
pub fn composite(breaks: &[f64], rule: &GaussLegendre) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(rule.order() * breaks.len().saturating_sub(1));
    let mut weights = Vec::with_capacity(nodes.capacity());
    for pair in breaks.windows(2) {
        for (x, w) in rule.mapped(pair[0], pair[1]) {
            nodes.push(x);
            weights.push(w);
        }
    }
    (nodes, weights)
}

/// Neumaier-compensated summation in iteration order.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(terms: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut c = 0.0_f64;
    for t in terms {
        let s = sum + t;
        if sum.abs() >= t.abs() {
            c += (sum - s) + t;
        } else {
            c += (t - s) + sum;
        }
        sum = s;
    }
    sum + c
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    let value = kronrod * h;
    let err = ((kronrod - gauss) * h).abs();
    (value, err)
}

/// Globally adaptive Gauss-Kronrod (7/15) on a finite interval.
///
/// Stops when the summed error estimate is below `max(abs_tol, rel_tol*|I|)`.
pub fn adaptive<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
    max_intervals: usize,
) -> Result<Estimate> {
    if a == b {
        return Ok(Estimate {
            value: 0.0,
            error: 0.0,
            evaluations: 0,
        });
    }
    let (v, e) = gk15(&f, a, b);
    let mut intervals = vec![(a, b, v, e)];
    let mut evaluations = 15;
    loop {
        let value = compensated_sum(intervals.iter().map(|t| t.2));
        let error = compensated_sum(intervals.iter().map(|t| t.3));
        if !value.is_finite() || !error.is_finite() {
            return Err(Error::Quadrature {
                lo: a,
                hi: b,
                estimate: value,
                error,
            });
        }
        if error <= abs_tol.max(rel_tol * value.abs()) {
            return Ok(Estimate {
                value,
                error,
                evaluations,
            });
        }
        if intervals.len() >= max_intervals {
            return Err(Error::Quadrature {
                lo: a,
                hi: b,
                estimate: value,
                error,
            });
        }
        // Bisect the interval with the largest error; first index wins ties.
        let mut worst = 0;
        for (k, t) in intervals.iter().enumerate() {
            if t.3 > intervals[worst].3 {
                worst = k;
            }
        }
        let (lo, hi, _, _) = intervals[worst];
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Err(Error::Quadrature {
                lo,
                hi,
                estimate: value,
                error,
            });
        }
        let (v1, e1) = gk15(&f, lo, mid);
        let (v2, e2) = gk15(&f, mid, hi);
        evaluations += 30;
        intervals[worst] = (lo, mid, v1, e1);
        intervals.insert(worst + 1, (mid, hi, v2, e2));
    }
}

/// Adaptive integral over [a, ∞) through the map r = a + t/(1-t).
pub fn adaptive_to_infinity<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    rel_tol: f64,
    abs_tol: f64,
    max_intervals: usize,
) -> Result<Estimate> {
    let g = |t: f64| {
        if t >= 1.0 {
            return 0.0;
        }
        let u = 1.0 - t;
        let r = a + t / u;
        let v = f(r) / (u * u);
        if v.is_finite() {
            v
        } else {
            f64::NAN
        }
    };
    adaptive(g, 0.0, 1.0, rel_tol, abs_tol, max_intervals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_legendre_is_exact_for_high_degree_polynomials() {
        let rule = GaussLegendre::new(16);
        let wsum: f64 = rule.weights().iter().sum();
        assert_relative_eq!(wsum, 2.0, epsilon = 1e-14);
        // x^30 over [-1, 1] integrates to 2/31
        let v = rule.integrate(-1.0, 1.0, |x| x.powi(30));
        assert_relative_eq!(v, 2.0 / 31.0, epsilon = 1e-14);
        let nodes = rule.nodes();
        assert!(nodes.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn odd_order_has_a_center_node() {
        let rule = GaussLegendre::new(5);
        assert_eq!(rule.nodes()[2], 0.0);
        assert_relative_eq!(rule.weights()[2], 128.0 / 225.0, epsilon = 1e-14);
    }

    #[test]
    fn composite_rule_handles_kinks_at_breaks() {
        let rule = GaussLegendre::new(8);
        let (x, w) = composite(&[0.0, 0.3, 1.0], &rule);
        let v: f64 = x.iter().zip(&w).map(|(x, w)| w * (x - 0.3).abs()).sum();
        assert_relative_eq!(v, 0.5 * (0.09 + 0.49), epsilon = 1e-14);
    }

    #[test]
    fn adaptive_handles_endpoint_singularity() {
        let est = adaptive(|x: f64| x.sqrt().recip(), 0.0, 1.0, 1e-10, 0.0, 500).unwrap();
        assert_relative_eq!(est.value, 2.0, epsilon = 1e-8);
    }

    #[test]
    fn adaptive_to_infinity_gaussian() {
        let est = adaptive_to_infinity(|r| (-r * r).exp(), 0.0, 1e-12, 0.0, 500).unwrap();
        assert_relative_eq!(est.value, PI.sqrt() / 2.0, epsilon = 1e-11);
    }

    #[test]
    fn adaptive_rejects_nonintegrable_tail() {
        let r = adaptive_to_infinity(|r| 1.0 / (1.0 + r), 0.0, 1e-10, 0.0, 200);
        assert!(r.is_err());
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let s = compensated_sum([1.0, 1e-16, 1e-16, -1.0]);
        assert_relative_eq!(s, 2e-16, epsilon = 1e-12);
    }
}

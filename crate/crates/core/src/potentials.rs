//! Radial pair potentials V(r) in units where ħ = 2m = 1, so the kinetic
//! symbol is exactly p².
//!
//! Attractive wells are negative: `square_well(depth, radius)` is `-depth`
//! inside `radius`. Every operator in this crate uses V exactly as given; no
//! factor of two is ever applied.

use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};
use crate::quadrature::{adaptive, adaptive_to_infinity};
use crate::radial_ops::RadialGrid;
use crate::scattering;

/// Relative tolerance for moment integrals.
pub const MOMENT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum PotentialKind {
    SquareWell { depth: f64, radius: f64 },
    Gaussian { depth: f64, width: f64 },
    Exponential { depth: f64, range: f64 },
    Tabulated(Table),
}

/// Samples `(r, V(r))` interpolated by a monotone piecewise cubic (PCHIP).
///
/// Below the first sample the first value is held; beyond the last sample
/// V = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    r: Vec<f64>,
    v: Vec<f64>,
    slopes: Vec<f64>,
}

impl Table {
    pub fn new(r: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if r.len() != v.len() {
            return Err(Error::InvalidPotential(format!(
                "{} radii but {} values",
                r.len(),
                v.len()
            )));
        }
        if r.len() < 2 {
            return Err(Error::InvalidPotential(
                "tabulated potential needs at least two samples".into(),
            ));
        }
        if r.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(Error::InvalidPotential("non-finite sample".into()));
        }
        if r[0] < 0.0 {
            return Err(Error::InvalidPotential("negative radius in table".into()));
        }
        if let Some(k) = r.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidPotential(format!(
                "radii must be strictly increasing (sample {} at r = {})",
                k + 1,
                r[k + 1]
            )));
        }
        let slopes = pchip_slopes(&r, &v);
        Ok(Self { r, v, slopes })
    }

    /// Parses two whitespace-separated columns `r V`; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut r = Vec::new();
        let mut v = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 2 {
                return Err(Error::ConfigSyntax {
                    line: lineno + 1,
                    msg: format!("expected two columns `r V`, found {}", cols.len()),
                });
            }
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|e| Error::ConfigSyntax {
                    line: lineno + 1,
                    msg: format!("`{s}`: {e}"),
                })
            };
            r.push(parse(cols[0])?);
            v.push(parse(cols[1])?);
        }
        Self::new(r, v)
    }

    pub fn radii(&self) -> &[f64] {
        &self.r
    }

    pub fn values(&self) -> &[f64] {
        &self.v
    }

    fn eval(&self, x: f64) -> f64 {
        let n = self.r.len();
        if x <= self.r[0] {
            return self.v[0];
        }
        if x > self.r[n - 1] {
            return 0.0;
        }
        let k = match self.r.binary_search_by(|p| p.partial_cmp(&x).unwrap()) {
            Ok(k) => return self.v[k],
            Err(k) => k - 1,
        };
        let h = self.r[k + 1] - self.r[k];
        let t = (x - self.r[k]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.v[k] + h10 * h * self.slopes[k] + h01 * self.v[k + 1] + h11 * h * self.slopes[k + 1]
    }
}

fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
    if n == 2 {
        return vec![delta[0], delta[0]];
    }
    let mut d = vec![0.0; n];
    for k in 1..n - 1 {
        if delta[k - 1] * delta[k] > 0.0 {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
        }
    }
    let end = |h0: f64, h1: f64, m0: f64, m1: f64| {
        let d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
        if d.signum() != m0.signum() || m0 == 0.0 {
            0.0
        } else if m0.signum() != m1.signum() && d.abs() > 3.0 * m0.abs() {
            3.0 * m0
        } else {
            d
        }
    };
    d[0] = end(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = end(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignClass {
    Zero,
    Attractive,
    Repulsive,
    Indefinite,
}

impl SignClass {
    /// Whether V^{1/2} = ±|V|^{1/2} with one global sign, which makes the
    /// position-space Birman-Schwinger matrices symmetric.
    pub fn is_definite(self) -> bool {
        !matches!(self, SignClass::Indefinite)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    /// ∫|V| d³x
    pub norm_l1: f64,
    /// ∫|V|(1+|x|) d³x
    pub weighted_l1: f64,
    /// (∫|V|^{3/2} d³x)^{2/3}
    pub norm_l32: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    kind: PotentialKind,
}

impl Potential {
    pub fn new(kind: PotentialKind) -> Result<Self> {
        let check = |name: &str, x: f64, positive: bool| {
            if !x.is_finite() || (positive && x <= 0.0) {
                Err(Error::InvalidPotential(format!("{name} = {x}")))
            } else {
                Ok(())
            }
        };
        match &kind {
            PotentialKind::SquareWell { depth, radius } => {
                check("depth", *depth, false)?;
                check("radius", *radius, true)?;
            }
            PotentialKind::Gaussian { depth, width } => {
                check("depth", *depth, false)?;
                check("width", *width, true)?;
            }
            PotentialKind::Exponential { depth, range } => {
                check("depth", *depth, false)?;
                check("range", *range, true)?;
            }
            PotentialKind::Tabulated(_) => {}
        }
        Ok(Self { kind })
    }

    pub fn square_well(depth: f64, radius: f64) -> Result<Self> {
        Self::new(PotentialKind::SquareWell { depth, radius })
    }

    pub fn gaussian(depth: f64, width: f64) -> Result<Self> {
        Self::new(PotentialKind::Gaussian { depth, width })
    }

    pub fn exponential(depth: f64, range: f64) -> Result<Self> {
        Self::new(PotentialKind::Exponential { depth, range })
    }

    pub fn tabulated(table: Table) -> Self {
        Self {
            kind: PotentialKind::Tabulated(table),
        }
    }

    /// V ≡ 0, represented as a square well of zero depth.
    pub fn zero() -> Self {
        Self {
            kind: PotentialKind::SquareWell {
                depth: 0.0,
                radius: 1.0,
            },
        }
    }

    pub fn from_table_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::tabulated(Table::parse(&text)?))
    }

    pub fn kind(&self) -> &PotentialKind {
        &self.kind
    }

    /// V(r) for r > 0.
    pub fn eval(&self, r: f64) -> Result<f64> {
        if !(r > 0.0) {
            return Err(Error::Domain(format!("potential evaluated at r = {r}")));
        }
        Ok(self.value(r))
    }

    /// V(r) without the domain check; r = 0 returns the limit from the right.
    pub fn value(&self, r: f64) -> f64 {
        match &self.kind {
            PotentialKind::SquareWell { depth, radius } => {
                if r < *radius {
                    -depth
                } else {
                    0.0
                }
            }
            PotentialKind::Gaussian { depth, width } => {
                let x = r / width;
                -depth * (-x * x).exp()
            }
            PotentialKind::Exponential { depth, range } => -depth * (-r / range).exp(),
            PotentialKind::Tabulated(t) => t.eval(r),
        }
    }

    /// V^{1/2}(r) = sgn(V)|V|^{1/2}
    pub fn signed_sqrt(&self, r: f64) -> f64 {
        let v = self.value(r);
        v.signum() * v.abs().sqrt() * if v == 0.0 { 0.0 } else { 1.0 }
    }

    /// |V|^{1/2}(r)
    pub fn abs_sqrt(&self, r: f64) -> f64 {
        self.value(r).abs().sqrt()
    }

    pub fn sign_class(&self) -> SignClass {
        let from_sign = |d: f64| {
            if d > 0.0 {
                SignClass::Attractive
            } else if d < 0.0 {
                SignClass::Repulsive
            } else {
                SignClass::Zero
            }
        };
        match &self.kind {
            PotentialKind::SquareWell { depth, .. }
            | PotentialKind::Gaussian { depth, .. }
            | PotentialKind::Exponential { depth, .. } => from_sign(*depth),
            PotentialKind::Tabulated(t) => {
                let neg = t.v.iter().any(|&v| v < 0.0);
                let pos = t.v.iter().any(|&v| v > 0.0);
                match (neg, pos) {
                    (false, false) => SignClass::Zero,
                    (true, false) => SignClass::Attractive,
                    (false, true) => SignClass::Repulsive,
                    (true, true) => SignClass::Indefinite,
                }
            }
        }
    }

    /// sup |V|
    pub fn max_abs(&self) -> f64 {
        match &self.kind {
            PotentialKind::SquareWell { depth, .. }
            | PotentialKind::Gaussian { depth, .. }
            | PotentialKind::Exponential { depth, .. } => depth.abs(),
            PotentialKind::Tabulated(t) => t.v.iter().fold(0.0, |m, v| m.max(v.abs())),
        }
    }

    /// Radius beyond which V vanishes identically, if any.
    pub fn support(&self) -> Option<f64> {
        match &self.kind {
            PotentialKind::SquareWell { radius, .. } => Some(*radius),
            PotentialKind::Tabulated(t) => Some(*t.r.last().unwrap()),
            _ => None,
        }
    }

    /// Radii where V or its low derivatives jump. Quadrature panels break here.
    pub fn breakpoints(&self) -> Vec<f64> {
        match &self.kind {
            PotentialKind::SquareWell { radius, .. } => vec![*radius],
            PotentialKind::Tabulated(t) => {
                let mut b = Vec::new();
                if t.r[0] > 0.0 {
                    b.push(t.r[0]);
                }
                if t.r.len() <= 64 {
                    b.extend_from_slice(&t.r[1..]);
                } else {
                    b.push(*t.r.last().unwrap());
                }
                b
            }
            _ => Vec::new(),
        }
    }

    /// Characteristic length on which V changes.
    pub fn length_scale(&self) -> f64 {
        match &self.kind {
            PotentialKind::SquareWell { radius, .. } => *radius,
            PotentialKind::Gaussian { width, .. } => *width,
            PotentialKind::Exponential { range, .. } => *range,
            PotentialKind::Tabulated(t) => t
                .r
                .windows(2)
                .map(|w| w[1] - w[0])
                .fold(f64::INFINITY, f64::min)
                .max(f64::MIN_POSITIVE),
        }
    }

    /// The dilated potential s²V(s r). Coupling λ is invariant and the
    /// scattering length scales as a/s.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::Domain(format!("scale factor {s}")));
        }
        let s2 = s * s;
        let kind = match &self.kind {
            PotentialKind::SquareWell { depth, radius } => PotentialKind::SquareWell {
                depth: s2 * depth,
                radius: radius / s,
            },
            PotentialKind::Gaussian { depth, width } => PotentialKind::Gaussian {
                depth: s2 * depth,
                width: width / s,
            },
            PotentialKind::Exponential { depth, range } => PotentialKind::Exponential {
                depth: s2 * depth,
                range: range / s,
            },
            PotentialKind::Tabulated(t) => PotentialKind::Tabulated(Table::new(
                t.r.iter().map(|r| r / s).collect(),
                t.v.iter().map(|v| s2 * v).collect(),
            )?),
        };
        Self::new(kind)
    }

    /// 4π ∫_a^b f(r, |V(r)|) r² dr over [0, ∞), split at the breakpoints.
    fn radial_integral<F: Fn(f64, f64) -> f64>(&self, f: F) -> Result<f64> {
        let integrand = |r: f64| {
            let v = self.value(r).abs();
            if v == 0.0 {
                0.0
            } else {
                f(r, v) * r * r
            }
        };
        let mut edges = vec![0.0];
        edges.extend(self.breakpoints());
        let mut total = 0.0;
        for w in edges.windows(2) {
            total += adaptive(&integrand, w[0], w[1], MOMENT_TOL, 0.0, 2000)?.value;
        }
        if self.support().is_none() {
            let last = *edges.last().unwrap();
            total += adaptive_to_infinity(&integrand, last, MOMENT_TOL, 0.0, 2000)
                .map_err(|e| Error::Integrability(format!("tail of the potential: {e}")))?
                .value;
        }
        let value = 4.0 * PI * total;
        if !value.is_finite() {
            return Err(Error::Integrability("moment is not finite".into()));
        }
        Ok(value)
    }

    pub fn moments(&self) -> Result<Moments> {
        let norm_l1 = self.radial_integral(|_, v| v)?;
        let weighted_l1 = self.radial_integral(|r, v| v * (1.0 + r))?;
        let l32 = self.radial_integral(|_, v| v * v.sqrt())?;
        Ok(Moments {
            norm_l1,
            weighted_l1,
            norm_l32: l32.powf(2.0 / 3.0),
        })
    }

    /// Smallest R with ∫_R^∞ |V|(1+r)r² dr ≤ rel_tol · ∫_0^∞ |V|(1+r)r² dr.
    /// Compactly supported potentials return their support radius.
    pub fn tail_radius(&self, rel_tol: f64) -> Result<f64> {
        if let Some(s) = self.support() {
            return Ok(s);
        }
        let weight = |r: f64| {
            let v = self.value(r).abs();
            v * (1.0 + r) * r * r
        };
        let total = self.radial_integral(|r, v| v * (1.0 + r))? / (4.0 * PI);
        if total == 0.0 {
            return Ok(self.length_scale());
        }
        let tail = |x: f64| -> Result<f64> {
            Ok(adaptive_to_infinity(weight, x, 1e-8, 1e-300, 2000)?.value)
        };
        let target = rel_tol * total;
        let mut lo = 0.0;
        let mut hi = self.length_scale();
        while tail(hi)? > target {
            lo = hi;
            hi *= 1.5;
            if hi > 1e6 * self.length_scale() {
                return Err(Error::Integrability(
                    "potential tail decays too slowly to truncate".into(),
                ));
            }
        }
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if tail(mid)? > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(hi)
    }
}

/// Standing assumptions of the low-density theorem, evaluated numerically.
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    /// −1/λ is the smallest eigenvalue of V^{1/2} p^{-2} |V|^{1/2}; +∞ if none is negative.
    pub lambda: f64,
    /// Resolvent scattering length; `None` when 1 + V^{1/2}p^{-2}|V|^{1/2} is not invertible.
    pub scattering_length: Option<f64>,
    pub spectrum_ok: bool,
    pub moments: Moments,
    /// D = 1/(2(λ−1)); zero when λ = ∞, `None` when λ ≤ 1.
    pub d_constant: Option<f64>,
}

pub fn validate_assumptions(potential: &Potential, grid: &RadialGrid) -> Result<AssumptionReport> {
    let moments = potential.moments()?;
    let lambda = scattering::lambda_coupling(potential, grid)?;
    let spectrum_ok = lambda > 1.0;
    let scattering_length = if spectrum_ok {
        Some(scattering::scattering_length_bs(potential, grid)?.a)
    } else {
        None
    };
    let d_constant = if lambda.is_infinite() {
        Some(0.0)
    } else if spectrum_ok {
        Some(1.0 / (2.0 * (lambda - 1.0)))
    } else {
        None
    };
    Ok(AssumptionReport {
        lambda,
        scattering_length,
        spectrum_ok,
        moments,
        d_constant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn square_well_values() {
        let v = Potential::square_well(1.0, 1.0).unwrap();
        assert_eq!(v.eval(0.5).unwrap(), -1.0);
        assert_eq!(v.eval(2.0).unwrap(), 0.0);
    }

    #[test]
    fn gaussian_value() {
        let v = Potential::gaussian(1.0, 1.0).unwrap();
        assert_relative_eq!(v.eval(1.0).unwrap(), -(-1.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn nonpositive_radius_is_a_domain_error() {
        let v = Potential::gaussian(1.0, 1.0).unwrap();
        assert!(matches!(v.eval(0.0), Err(Error::Domain(_))));
        assert!(matches!(v.eval(-1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn sign_decomposition() {
        let v = Potential::square_well(4.0, 1.0).unwrap();
        assert_eq!(v.signed_sqrt(0.5), -2.0);
        assert_eq!(v.abs_sqrt(0.5), 2.0);
        assert_eq!(v.signed_sqrt(1.5), 0.0);
        assert_eq!(Potential::zero().signed_sqrt(0.2), 0.0);
    }

    #[test]
    fn moments_closed_forms() {
        let sw = Potential::square_well(1.0, 1.0).unwrap().moments().unwrap();
        assert_relative_eq!(sw.norm_l1, 4.0 * PI / 3.0, max_relative = 1e-8);
        assert_relative_eq!(sw.weighted_l1, 4.0 * PI / 3.0 + PI, max_relative = 1e-8);
        assert_relative_eq!(sw.norm_l32, (4.0 * PI / 3.0f64).powf(2.0 / 3.0), max_relative = 1e-8);

        let g = Potential::gaussian(1.0, 1.0).unwrap().moments().unwrap();
        assert_relative_eq!(g.norm_l1, PI.powf(1.5), max_relative = 1e-8);
        assert_relative_eq!(g.weighted_l1, PI.powf(1.5) + 2.0 * PI, max_relative = 1e-8);
        let l32 = 4.0 * PI * (PI.sqrt() / 4.0) * (1.0f64 / 1.5).powf(1.5);
        assert_relative_eq!(g.norm_l32, l32.powf(2.0 / 3.0), max_relative = 1e-8);

        let e = Potential::exponential(0.5, 2.0).unwrap().moments().unwrap();
        assert_relative_eq!(e.norm_l1, 8.0 * PI * 0.5 * 8.0, max_relative = 1e-8);
        assert_relative_eq!(e.weighted_l1, 8.0 * PI * 0.5 * 8.0 + 24.0 * PI * 0.5 * 16.0, max_relative = 1e-8);
        let l32 = 4.0 * PI * 0.5f64.powf(1.5) * 2.0 * (4.0f64 / 3.0).powi(3);
        assert_relative_eq!(e.norm_l32, l32.powf(2.0 / 3.0), max_relative = 1e-8);
    }

    #[test]
    fn tabulated_parse_and_interpolate() {
        let text = "# r V\n0.5 -1.0\n1.0 -0.5  # mid\n\n2.0 0.0\n";
        let v = Potential::tabulated(Table::parse(text).unwrap());
        assert_eq!(v.eval(1.0).unwrap(), -0.5);
        assert_eq!(v.eval(0.1).unwrap(), -1.0);
        assert_eq!(v.eval(3.0).unwrap(), 0.0);
        let mid = v.eval(0.75).unwrap();
        assert!(mid > -1.0 && mid < -0.5);
    }

    #[test]
    fn tabulated_rejects_unsorted_radii() {
        assert!(Table::new(vec![0.0, 1.0, 1.0], vec![1.0, 2.0, 3.0]).is_err());
        assert!(Table::parse("1 2\n0.5 1\n").is_err());
        assert!(matches!(Table::parse("1 2 3\n"), Err(Error::ConfigSyntax { line: 1, .. })));
    }

    #[test]
    fn pchip_does_not_overshoot_monotone_data() {
        let r: Vec<f64> = (0..12).map(|k| 0.25 * k as f64).collect();
        let v: Vec<f64> = r.iter().map(|&x| if x < 1.2 { -1.0 } else { -(-(x - 1.2) * 4.0f64).exp() }).collect();
        let t = Table::new(r, v).unwrap();
        for k in 0..=300 {
            let x = 2.75 * k as f64 / 300.0;
            let y = t.eval(x);
            assert!((-1.0..=0.0).contains(&y), "overshoot {y} at {x}");
        }
    }

    #[test]
    fn tail_radius_truncates_gaussian() {
        let v = Potential::gaussian(1.0, 1.0).unwrap();
        let r = v.tail_radius(1e-10).unwrap();
        assert!(r > 4.0 && r < 7.0, "r_max = {r}");
        assert_eq!(Potential::square_well(2.0, 1.5).unwrap().tail_radius(1e-10).unwrap(), 1.5);
    }

    #[test]
    fn dilation_rescales_parameters() {
        let v = Potential::gaussian(1.0, 2.0).unwrap().scaled(2.0).unwrap();
        assert_eq!(v.kind(), &PotentialKind::Gaussian { depth: 4.0, width: 1.0 });
        assert_relative_eq!(
            v.eval(0.3).unwrap(),
            4.0 * Potential::gaussian(1.0, 2.0).unwrap().eval(0.6).unwrap(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn sign_classes() {
        assert_eq!(Potential::zero().sign_class(), SignClass::Zero);
        assert_eq!(Potential::gaussian(1.0, 1.0).unwrap().sign_class(), SignClass::Attractive);
        assert_eq!(Potential::gaussian(-1.0, 1.0).unwrap().sign_class(), SignClass::Repulsive);
        let t = Table::new(vec![0.1, 1.0, 2.0], vec![-1.0, 0.5, 0.0]).unwrap();
        assert_eq!(Potential::tabulated(t).sign_class(), SignClass::Indefinite);
    }
}

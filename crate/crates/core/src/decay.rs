//! Lattice sums `Σ_{j≠0} δ/|j|^z` over `Z^D` with rigorous tail intervals.
//!
//! For an unbounded lattice the sum is split into a direct sum over
//! `|j| ≤ R` and a tail bounded by comparison with an integral: each site
//! `j` owns the unit cube around it, so
//!
//! ```text
//! Σ_{|j|>R} |j|^{-z} ≤ (1 + h/R)^z · c_D · (R - h)^{D-z} / (z - D)
//! ```
//!
//! with `h` the cube's half-diagonal in the chosen metric and `c_D` the
//! surface measure of the unit sphere (`2, 2π, 4π` Euclidean, `D·2^D`
//! Chebyshev). The reported value is the midpoint of
//! `[direct, direct + tail]`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Euclidean,
    Chebyshev,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Chebyshev => "chebyshev",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "chebyshev" => Ok(Metric::Chebyshev),
            other => Err(Error::InvalidInput(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatticeSpec {
    pub dim: u32,
    pub z: f64,
    pub delta: f64,
    /// `None` for the infinite lattice.
    pub radius: Option<u64>,
    pub metric: Metric,
}

impl LatticeSpec {
    pub fn new(dim: u32, z: f64, delta: f64, radius: Option<u64>, metric: Metric) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidInput(format!("dimension must be 1, 2 or 3, got {dim}")));
        }
        if !(z.is_finite() && z > 0.0) {
            return Err(Error::InvalidInput(format!("decay exponent must be positive, got {z}")));
        }
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(Error::InvalidInput(format!("amplitude must be non-negative, got {delta}")));
        }
        if radius == Some(0) {
            return Err(Error::InvalidInput("radius must be at least 1".into()));
        }
        Ok(Self {
            dim,
            z,
            delta,
            radius,
            metric,
        })
    }

    pub fn finite(dim: u32, z: f64, delta: f64, radius: u64, metric: Metric) -> Result<Self> {
        Self::new(dim, z, delta, Some(radius), metric)
    }

    pub fn unbounded(dim: u32, z: f64, delta: f64, metric: Metric) -> Result<Self> {
        Self::new(dim, z, delta, None, metric)
    }

    pub fn converges(&self) -> bool {
        self.radius.is_some() || self.z > self.dim as f64
    }
}

/// Adaptive-radius controls for unbounded sums.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SumOptions {
    /// Stop once the tail half-width is below this fraction of the value.
    pub rel_tol: f64,
    /// Never enumerate more than this many cube sites `(2R+1)^D`.
    pub max_sites: u64,
    pub start_radius: u64,
}

impl Default for SumOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            max_sites: 100_000_000,
            start_radius: 16,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LatticeSum {
    /// Midpoint of the enclosing interval (exact for finite radius).
    pub value: f64,
    /// Half-width of the enclosing interval (0 for finite radius).
    pub tail_halfwidth: f64,
    /// Radius of the direct part.
    pub radius_used: u64,
}

impl LatticeSum {
    pub fn lower(&self) -> f64 {
        self.value - self.tail_halfwidth
    }

    pub fn upper(&self) -> f64 {
        self.value + self.tail_halfwidth
    }

    pub fn contains(&self, x: f64) -> bool {
        // One ulp-scale allowance for summation roundoff.
        let slack = 1e-13 * self.value.abs();
        x >= self.lower() - slack && x <= self.upper() + slack
    }
}

/// Neumaier-compensated accumulator.
#[derive(Clone, Copy, Default)]
struct Compensated {
    sum: f64,
    c: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.c
    }
}

fn site_weight(coords: &[u64], z: f64, metric: Metric) -> f64 {
    let dist = match metric {
        Metric::Euclidean => (coords.iter().map(|&c| (c * c) as f64).sum::<f64>()).sqrt(),
        Metric::Chebyshev => coords.iter().copied().max().unwrap_or(0) as f64,
    };
    dist.powf(-z)
}

fn inside(coords: &[u64], radius: u64, metric: Metric) -> bool {
    match metric {
        Metric::Euclidean => coords.iter().map(|&c| c * c).sum::<u64>() <= radius * radius,
        Metric::Chebyshev => coords.iter().all(|&c| c <= radius),
    }
}

/// `Σ_{0 < |j| ≤ R} |j|^{-z}` for unit amplitude. Sites are enumerated in
/// the non-negative orthant with multiplicity `2^{#nonzero coordinates}`.
pub fn direct_sum(dim: u32, z: f64, radius: u64, metric: Metric) -> f64 {
    // Parallel over the first coordinate; partial sums are reduced in order.
    let partials: Vec<f64> = (0..=radius)
        .into_par_iter()
        .map(|x0| {
            let mut acc = Compensated::default();
            let m0 = if x0 == 0 { 1.0 } else { 2.0 };
            match dim {
                1 => {
                    if x0 != 0 {
                        acc.add(m0 * site_weight(&[x0], z, metric));
                    }
                }
                2 => {
                    for x1 in 0..=radius {
                        let c = [x0, x1];
                        if (x0, x1) == (0, 0) || !inside(&c, radius, metric) {
                            continue;
                        }
                        let m = m0 * if x1 == 0 { 1.0 } else { 2.0 };
                        acc.add(m * site_weight(&c, z, metric));
                    }
                }
                _ => {
                    for x1 in 0..=radius {
                        if !inside(&[x0, x1], radius, metric) {
                            break;
                        }
                        for x2 in 0..=radius {
                            let c = [x0, x1, x2];
                            if (x0, x1, x2) == (0, 0, 0) {
                                continue;
                            }
                            if !inside(&c, radius, metric) {
                                break;
                            }
                            let m = m0 * if x1 == 0 { 1.0 } else { 2.0 } * if x2 == 0 { 1.0 } else { 2.0 };
                            acc.add(m * site_weight(&c, z, metric));
                        }
                    }
                }
            }
            acc.value()
        })
        .collect();
    // Smallest terms first.
    let mut acc = Compensated::default();
    for p in partials.iter().rev() {
        acc.add(*p);
    }
    acc.value()
}

/// Rigorous upper bound on `Σ_{|j|>R} |j|^{-z}` (unit amplitude), `z > D`.
pub fn tail_bound(dim: u32, z: f64, radius: u64, metric: Metric) -> f64 {
    let d = dim as f64;
    let r = radius as f64;
    let (h, shell, inner) = match metric {
        Metric::Euclidean => {
            let shell = match dim {
                1 => 2.0,
                2 => 2.0 * PI,
                _ => 4.0 * PI,
            };
            let h = d.sqrt() / 2.0;
            (h, shell, r - h)
        }
        // Outside sites have |j|∞ ≥ R + 1, so their cubes sit beyond R + 1/2.
        Metric::Chebyshev => (0.5, d * 2f64.powi(dim as i32), r + 0.5),
    };
    let outer_ratio = match metric {
        Metric::Euclidean => 1.0 + h / r,
        Metric::Chebyshev => 1.0 + h / (r + 1.0),
    };
    outer_ratio.powf(z) * shell * inner.powf(d - z) / (z - d)
}

fn sites(dim: u32, radius: u64) -> u64 {
    (2 * radius + 1).saturating_pow(dim)
}

/// Lattice sum for `spec`; `Error::Divergent` when unbounded with `z ≤ D`.
pub fn lattice_sum(spec: &LatticeSpec, options: &SumOptions) -> Result<LatticeSum> {
    if let Some(r) = spec.radius {
        if sites(spec.dim, r) > options.max_sites.max(1 << 20) * 16 {
            return Err(Error::ResourceGuard(format!(
                "radius {r} in D = {} enumerates too many sites",
                spec.dim
            )));
        }
        return Ok(LatticeSum {
            value: spec.delta * direct_sum(spec.dim, spec.z, r, spec.metric),
            tail_halfwidth: 0.0,
            radius_used: r,
        });
    }
    if !spec.converges() {
        return Err(Error::Divergent {
            dim: spec.dim,
            z: spec.z,
        });
    }
    let mut radius = options.start_radius.max(2);
    let mut best = None;
    loop {
        if sites(spec.dim, radius) > options.max_sites && best.is_some() {
            break;
        }
        let direct = direct_sum(spec.dim, spec.z, radius, spec.metric);
        let tail = tail_bound(spec.dim, spec.z, radius, spec.metric);
        let candidate = (direct, tail, radius);
        best = Some(candidate);
        if tail / 2.0 < options.rel_tol * (direct + tail / 2.0) {
            break;
        }
        radius *= 2;
    }
    let (direct, tail, radius) = best.expect("at least one radius evaluated");
    Ok(LatticeSum {
        value: spec.delta * (direct + tail / 2.0),
        tail_halfwidth: spec.delta * tail / 2.0,
        radius_used: radius,
    })
}

/// Interval for the unbounded sum using a fixed direct radius.
pub fn lattice_sum_at_radius(spec: &LatticeSpec, radius: u64) -> Result<LatticeSum> {
    if spec.z <= spec.dim as f64 {
        return Err(Error::Divergent {
            dim: spec.dim,
            z: spec.z,
        });
    }
    let direct = direct_sum(spec.dim, spec.z, radius, spec.metric);
    let tail = tail_bound(spec.dim, spec.z, radius, spec.metric);
    Ok(LatticeSum {
        value: spec.delta * (direct + tail / 2.0),
        tail_halfwidth: spec.delta * tail / 2.0,
        radius_used: radius,
    })
}

/// `η = t0 · Σ_j ||H_ij||` for translation-invariant decaying couplings.
pub fn eta_for_lattice(spec: &LatticeSpec, t0: f64, options: &SumOptions) -> Result<f64> {
    if !(t0.is_finite() && t0 > 0.0) {
        return Err(Error::InvalidInput(format!("t0 must be positive, got {t0}")));
    }
    Ok(lattice_sum(spec, options)?.value * t0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Convergent,
    Divergent,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Convergent => "convergent",
            Verdict::Divergent => "divergent",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthLaw {
    /// `S(R) ≈ a ln R + b`.
    Logarithmic,
    /// `S(R) ≈ a R^p + b`.
    Power,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GrowthFit {
    pub law: GrowthLaw,
    pub coefficient: f64,
    /// Fitted `p` for power growth; 0 for logarithmic.
    pub exponent: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScanRow {
    pub dim: u32,
    pub z: f64,
    pub verdict: Verdict,
    pub sum: Option<LatticeSum>,
    pub growth: Option<GrowthFit>,
}

/// Partial sums `S(R)` at `R = 8, 16, ...` while `(2R+1)^D ≤ max_sites`.
pub fn partial_sums(dim: u32, z: f64, metric: Metric, max_sites: u64) -> Vec<(u64, f64)> {
    let mut out = Vec::new();
    let mut r = 8u64;
    while sites(dim, r) <= max_sites {
        out.push((r, direct_sum(dim, z, r, metric)));
        r *= 2;
    }
    out
}

fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Fits the growth of divergent partial sums (unit amplitude).
pub fn fit_growth(dim: u32, z: f64, metric: Metric, max_sites: u64) -> Option<GrowthFit> {
    let ps = partial_sums(dim, z, metric, max_sites);
    if ps.len() < 3 {
        return None;
    }
    if (z - dim as f64).abs() < 1e-12 {
        let xs: Vec<f64> = ps.iter().map(|(r, _)| (*r as f64).ln()).collect();
        let ys: Vec<f64> = ps.iter().map(|(_, s)| *s).collect();
        let (slope, _) = least_squares(&xs, &ys);
        Some(GrowthFit {
            law: GrowthLaw::Logarithmic,
            coefficient: slope,
            exponent: 0.0,
        })
    } else {
        // Increments S(2R) - S(R) ≈ a (2^p - 1) R^p remove the constant.
        let xs: Vec<f64> = ps.windows(2).map(|w| (w[0].0 as f64).ln()).collect();
        let ys: Vec<f64> = ps.windows(2).map(|w| (w[1].1 - w[0].1).ln()).collect();
        let (p, intercept) = least_squares(&xs, &ys);
        Some(GrowthFit {
            law: GrowthLaw::Power,
            coefficient: intercept.exp() / (2f64.powf(p) - 1.0),
            exponent: p,
        })
    }
}

/// Verdict (and value or growth fit) for every `(D, z)` cell.
pub fn divergence_scan(dims: &[u32], zs: &[f64], metric: Metric, options: &SumOptions, fit_max_sites: u64) -> Result<Vec<ScanRow>> {
    let mut rows = Vec::with_capacity(dims.len() * zs.len());
    for &dim in dims {
        for &z in zs {
            let spec = LatticeSpec::unbounded(dim, z, 1.0, metric)?;
            let row = match lattice_sum(&spec, options) {
                Ok(sum) => ScanRow {
                    dim,
                    z,
                    verdict: Verdict::Convergent,
                    sum: Some(sum),
                    growth: None,
                },
                Err(Error::Divergent { .. }) => ScanRow {
                    dim,
                    z,
                    verdict: Verdict::Divergent,
                    sum: None,
                    growth: fit_growth(dim, z, metric, fit_max_sites),
                },
                Err(e) => return Err(e),
            };
            rows.push(row);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Brute-force enumeration over the full cube, independent of the
    /// orthant/multiplicity trick.
    fn brute(dim: u32, z: f64, radius: i64, metric: Metric) -> f64 {
        let mut total = 0.0;
        let range = -radius..=radius;
        let mut visit = |c: &[i64]| {
            if c.iter().all(|&x| x == 0) {
                return;
            }
            let d = match metric {
                Metric::Euclidean => (c.iter().map(|&x| (x * x) as f64).sum::<f64>()).sqrt(),
                Metric::Chebyshev => c.iter().map(|x| x.abs()).max().unwrap() as f64,
            };
            if d <= radius as f64 + 1e-12 {
                total += d.powf(-z);
            }
        };
        match dim {
            1 => range.clone().for_each(|a| visit(&[a])),
            2 => range.clone().for_each(|a| range.clone().for_each(|b| visit(&[a, b]))),
            _ => range.clone().for_each(|a| {
                range
                    .clone()
                    .for_each(|b| range.clone().for_each(|c| visit(&[a, b, c])))
            }),
        }
        total
    }

    #[test]
    fn finite_example() {
        let s = LatticeSpec::finite(1, 2.0, 1.0, 2, Metric::Euclidean).unwrap();
        let v = lattice_sum(&s, &SumOptions::default()).unwrap();
        assert_relative_eq!(v.value, 2.5, max_relative = 1e-15);
        assert_eq!(v.tail_halfwidth, 0.0);
    }

    #[test]
    fn direct_sum_matches_brute_force() {
        for metric in [Metric::Euclidean, Metric::Chebyshev] {
            for dim in 1..=3 {
                for &z in &[0.5, 2.0, 3.7] {
                    let r = 6;
                    assert_relative_eq!(
                        direct_sum(dim, z, r, metric),
                        brute(dim, z, r as i64, metric),
                        max_relative = 1e-13
                    );
                }
            }
        }
    }

    #[test]
    fn one_dimensional_inverse_square() {
        let s = LatticeSpec::unbounded(1, 2.0, 1.0, Metric::Euclidean).unwrap();
        let v = lattice_sum(&s, &SumOptions::default()).unwrap();
        // 2 ζ(2) = π²/3.
        assert!(v.contains(PI * PI / 3.0), "{v:?}");
        assert!(v.tail_halfwidth < 1e-7);
    }

    #[test]
    fn harmonic_diverges() {
        let s = LatticeSpec::unbounded(1, 1.0, 1.0, Metric::Euclidean).unwrap();
        assert!(matches!(lattice_sum(&s, &SumOptions::default()), Err(Error::Divergent { .. })));
    }

    #[test]
    fn validation() {
        assert!(LatticeSpec::unbounded(4, 5.0, 1.0, Metric::Euclidean).is_err());
        assert!(LatticeSpec::unbounded(1, 0.0, 1.0, Metric::Euclidean).is_err());
        assert!(LatticeSpec::unbounded(1, 2.0, -1.0, Metric::Euclidean).is_err());
        assert!(LatticeSpec::finite(1, 2.0, 1.0, 0, Metric::Euclidean).is_err());
    }

    #[test]
    fn tail_interval_contains_larger_radii() {
        let opts = SumOptions::default();
        for metric in [Metric::Euclidean, Metric::Chebyshev] {
            for &(dim, z) in &[(1, 1.5), (1, 3.0), (2, 2.5), (2, 4.0), (3, 3.5)] {
                let r = 5u64;
                let spec = LatticeSpec::unbounded(dim, z, 1.0, metric).unwrap();
                let interval = lattice_sum_at_radius(&spec, r).unwrap();
                for rp in [6, 10, 20, 35, 50] {
                    let partial = direct_sum(dim, z, rp, metric);
                    assert!(
                        interval.contains(partial),
                        "D={dim} z={z} {metric:?} R'={rp}: {partial} not in {interval:?}"
                    );
                }
                // The adaptive interval must also contain the fine partial sums.
                let adaptive = lattice_sum(&spec, &SumOptions { max_sites: 2_000_000, ..opts }).unwrap();
                assert!(adaptive.upper() >= direct_sum(dim, z, 50, metric));
            }
        }
    }

    #[test]
    fn monotone_in_radius_and_chebyshev_dominates() {
        for dim in 1..=3 {
            let mut prev = 0.0;
            for r in 1..8 {
                let e = direct_sum(dim, 2.2, r, Metric::Euclidean);
                let c = direct_sum(dim, 2.2, r, Metric::Chebyshev);
                assert!(e >= prev);
                assert!(c >= e);
                prev = e;
            }
        }
    }

    #[test]
    fn amplitude_scales_linearly() {
        let opts = SumOptions::default();
        let unit = LatticeSpec::finite(2, 3.0, 1.0, 12, Metric::Euclidean).unwrap();
        let scaled = LatticeSpec { delta: 0.37, ..unit };
        let a = lattice_sum(&unit, &opts).unwrap().value;
        let b = lattice_sum(&scaled, &opts).unwrap().value;
        assert_eq!(b, 0.37 * a);
    }

    #[test]
    fn eta_examples() {
        let opts = SumOptions::default();
        let zero = LatticeSpec::unbounded(2, 3.0, 0.0, Metric::Euclidean).unwrap();
        assert_eq!(eta_for_lattice(&zero, 1.0, &opts).unwrap(), 0.0);
        let s = LatticeSpec::unbounded(1, 2.0, 1e-3, Metric::Euclidean).unwrap();
        assert_relative_eq!(eta_for_lattice(&s, 1.0, &opts).unwrap(), 1e-3 * PI * PI / 3.0, max_relative = 1e-7);
    }

    #[test]
    fn eta_matches_chain_model() {
        let opts = SumOptions::default();
        for r in 1..=3u64 {
            let delta = 0.004;
            let spec = LatticeSpec::finite(1, 2.0, delta, r, Metric::Euclidean).unwrap();
            let chain = crate::model::decaying_chain(2 * r as usize + 1, delta, 2.0, 1.0).unwrap();
            assert_relative_eq!(
                eta_for_lattice(&spec, 1.0, &opts).unwrap(),
                chain.eta().unwrap(),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn growth_fits() {
        let fit = fit_growth(1, 1.0, Metric::Euclidean, 4_000_000).unwrap();
        assert_eq!(fit.law, GrowthLaw::Logarithmic);
        assert!((fit.coefficient - 2.0).abs() < 0.1, "{fit:?}");
        let fit2 = fit_growth(2, 2.0, Metric::Euclidean, 4_000_000).unwrap();
        assert_eq!(fit2.law, GrowthLaw::Logarithmic);
        assert!((fit2.coefficient - 2.0 * PI).abs() < 0.05 * 2.0 * PI, "{fit2:?}");
        let fit3 = fit_growth(2, 1.0, Metric::Euclidean, 4_000_000).unwrap();
        assert_eq!(fit3.law, GrowthLaw::Power);
        assert!((fit3.exponent - 1.0).abs() < 0.02, "{fit3:?}");
    }

    #[test]
    fn scan_small_grid() {
        let opts = SumOptions {
            max_sites: 1_000_000,
            ..SumOptions::default()
        };
        let rows = divergence_scan(&[2], &[2.0, 3.0], Metric::Euclidean, &opts, 1_000_000).unwrap();
        assert_eq!(rows[0].verdict, Verdict::Divergent);
        assert_eq!(rows[0].growth.unwrap().law, GrowthLaw::Logarithmic);
        assert_eq!(rows[1].verdict, Verdict::Convergent);
    }
}

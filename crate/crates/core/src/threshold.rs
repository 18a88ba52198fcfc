//! Concatenation recursion `ε^(k) = C·binom(A, t+1)·(ε^(k-1))^(t+1)`, its
//! threshold `ε₀` and the long-range budgets derived from it.

use serde::Serialize;

use crate::bounds::{eta_from_epsilon, GateArity};
use crate::decay::{lattice_sum, LatticeSpec, SumOptions};
use crate::error::{Error, Result};

/// Abstract gadget parameters: `A` macro-locations per 1-gadget, `t`
/// correctable errors, combinatorial constant `C`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GadgetParams {
    pub a: u64,
    pub t: u64,
    pub c: f64,
}

impl GadgetParams {
    pub fn new(a: u64, t: u64, c: f64) -> Result<Self> {
        if t < 1 || a < t + 1 {
            return Err(Error::InvalidInput(format!(
                "gadget parameters need A >= t+1 >= 2, got A = {a}, t = {t}"
            )));
        }
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::InvalidInput(format!("C must be positive, got {c}")));
        }
        Ok(Self { a, t, c })
    }

    /// `binom(A, t+1)` in exact integer arithmetic.
    pub fn binomial(&self) -> Result<u128> {
        binomial(self.a, self.t + 1)
    }

    /// `C·binom(A, t+1)`.
    pub fn prefactor(&self) -> Result<f64> {
        Ok(self.c * self.binomial()? as f64)
    }
}

/// Exact `binom(n, k)`; errors on overflow of `u128`.
pub fn binomial(n: u64, k: u64) -> Result<u128> {
    if k > n {
        return Ok(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc·(n-i) is divisible by (i+1) after the multiplication.
        acc = acc
            .checked_mul((n - i) as u128)
            .ok_or_else(|| Error::ResourceGuard(format!("binom({n}, {k}) overflows u128")))?
            / (i as u128 + 1);
    }
    Ok(acc)
}

/// `ε₀ = (C·binom(A, t+1))^{-1/t}`.
pub fn epsilon_threshold(params: &GadgetParams) -> Result<f64> {
    Ok(params.prefactor()?.powf(-1.0 / params.t as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LevelValue {
    pub k: u32,
    pub epsilon: f64,
    /// The level exceeded 1 (or overflowed); later levels are not evaluated.
    pub saturated: bool,
}

/// `ε^(k)` by iterating the recursion `k` times.
pub fn epsilon_level(params: &GadgetParams, epsilon: f64, k: u32) -> Result<LevelValue> {
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(Error::InvalidInput(format!("epsilon must be non-negative, got {epsilon}")));
    }
    let prefactor = params.prefactor()?;
    let exponent = (params.t + 1) as i32;
    let mut value = epsilon;
    for level in 1..=k {
        value = prefactor * value.powi(exponent);
        if !value.is_finite() || value > 1.0 {
            return Ok(LevelValue {
                k: level,
                epsilon: value,
                saturated: true,
            });
        }
    }
    Ok(LevelValue {
        k,
        epsilon: value,
        saturated: false,
    })
}

/// `ε₀·(ε/ε₀)^((t+1)^k)`.
pub fn epsilon_level_closed_form(params: &GadgetParams, epsilon: f64, k: u32) -> Result<f64> {
    let eps0 = epsilon_threshold(params)?;
    let power = ((params.t + 1) as f64).powi(k as i32);
    Ok(eps0 * (epsilon / eps0).powf(power))
}

/// `η₀ = (ε₀ / (e^{1+1/2e}·√2))²`: the largest η whose induced two-qubit
/// locality strength stays at or below `ε₀`.
pub fn eta_budget(epsilon0: f64) -> Result<f64> {
    if !(epsilon0.is_finite() && epsilon0 > 0.0) {
        return Err(Error::InvalidInput(format!("epsilon0 must be positive, got {epsilon0}")));
    }
    Ok(eta_from_epsilon(epsilon0, GateArity::Two))
}

/// Largest decay amplitude δ with `δ·S·t0 ≤ η₀`, where `S` is the unit
/// amplitude lattice sum.
pub fn delta_budget(epsilon0: f64, lattice: &LatticeSpec, t0: f64, options: &SumOptions) -> Result<f64> {
    let eta0 = eta_budget(epsilon0)?;
    if !(t0.is_finite() && t0 > 0.0) {
        return Err(Error::InvalidInput(format!("t0 must be positive, got {t0}")));
    }
    let unit = LatticeSpec { delta: 1.0, ..*lattice };
    let sum = lattice_sum(&unit, options)?;
    // Upper end of the interval, so the budget stays rigorous.
    Ok(eta0 / ((sum.value + sum.tail_halfwidth) * t0))
}

/// Named gadget presets.
pub const PRESETS: &[&str] = &["paper-magnitude"];

/// Gadget parameters for a preset.
///
/// `paper-magnitude`: `t = 1`, `A = 448`, `C = 10^5 / binom(448, 2)`
/// (≈ 0.9987), so that `ε₀ = 10^{-5}`. Only the threshold magnitude is
/// meaningful; the gadget itself is not modelled.
pub fn preset(name: &str) -> Result<GadgetParams> {
    match name {
        "paper-magnitude" => {
            let a = 448;
            let t = 1;
            let b = binomial(a, t + 1)? as f64;
            GadgetParams::new(a, t, 1e5 / b)
        }
        other => Err(Error::InvalidInput(format!(
            "unknown preset {other:?} (available: {})",
            PRESETS.join(", ")
        ))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecursionTrace {
    pub params: GadgetParams,
    pub epsilon0: f64,
    pub input_epsilon: f64,
    pub levels: Vec<LevelValue>,
    /// Exact inversion of the two-qubit locality strength at `ε₀`.
    pub eta_budget: f64,
    /// `ε₀²`, the constant-free figure.
    pub eta_budget_constant_free: f64,
    /// Informational: ideal circuit size and the overhead estimate below.
    pub circuit_size: Option<u64>,
    pub overhead: Option<Overhead>,
}

/// Smallest level reaching a target accuracy and its size blow-up `A^k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Overhead {
    pub target: f64,
    pub level: u32,
    pub size_factor: f64,
}

/// Smallest `k ≤ max_level` with `ε^(k) ≤ target`, if any.
pub fn overhead_for_target(params: &GadgetParams, epsilon: f64, target: f64, max_level: u32) -> Result<Option<Overhead>> {
    for k in 0..=max_level {
        let lv = epsilon_level(params, epsilon, k)?;
        if lv.saturated {
            return Ok(None);
        }
        if lv.epsilon <= target {
            return Ok(Some(Overhead {
                target,
                level: k,
                size_factor: (params.a as f64).powi(k as i32),
            }));
        }
    }
    Ok(None)
}

/// Iterates the recursion up to `max_level` and collects budgets. When a
/// circuit size `L` is given, the overhead is computed for a total failure
/// target `1/L` per gate.
pub fn recursion_trace(params: &GadgetParams, epsilon: f64, max_level: u32, circuit_size: Option<u64>) -> Result<RecursionTrace> {
    let epsilon0 = epsilon_threshold(params)?;
    let mut levels = Vec::new();
    for k in 0..=max_level {
        let lv = epsilon_level(params, epsilon, k)?;
        levels.push(lv);
        if lv.saturated {
            break;
        }
    }
    let overhead = match circuit_size {
        Some(l) if l > 0 => overhead_for_target(params, epsilon, 1.0 / l as f64, max_level)?,
        _ => None,
    };
    Ok(RecursionTrace {
        params: *params,
        epsilon0,
        input_epsilon: epsilon,
        levels,
        eta_budget: eta_budget(epsilon0)?,
        eta_budget_constant_free: epsilon0 * epsilon0,
        circuit_size,
        overhead,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::epsilon_from_eta;
    use crate::decay::Metric;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn p(a: u64, t: u64, c: f64) -> GadgetParams {
        GadgetParams::new(a, t, c).unwrap()
    }

    #[test]
    fn binomial_exact() {
        assert_eq!(binomial(5, 2).unwrap(), 10);
        assert_eq!(binomial(448, 2).unwrap(), 100_128);
        assert_eq!(binomial(60, 30).unwrap(), 118_264_581_564_861_424);
        assert_eq!(binomial(3, 5).unwrap(), 0);
    }

    #[test]
    fn threshold_examples() {
        assert_relative_eq!(epsilon_threshold(&p(5, 1, 1.0)).unwrap(), 0.1, max_relative = 1e-15);
        assert_relative_eq!(epsilon_threshold(&p(3, 2, 1.0)).unwrap(), 1.0);
        assert_relative_eq!(epsilon_threshold(&p(4, 3, 2.5)).unwrap(), 2.5f64.powf(-1.0 / 3.0));
    }

    #[test]
    fn level_example() {
        let lv = epsilon_level(&p(5, 1, 1.0), 0.05, 2).unwrap();
        assert!(!lv.saturated);
        assert_relative_eq!(lv.epsilon, 0.00625, max_relative = 1e-14);
        assert_eq!(epsilon_level(&p(5, 1, 1.0), 0.05, 0).unwrap().epsilon, 0.05);
    }

    #[test]
    fn fixed_point() {
        let params = p(20, 2, 0.7);
        let eps0 = epsilon_threshold(&params).unwrap();
        for k in 0..=30 {
            let lv = epsilon_level(&params, eps0, k).unwrap();
            assert!((lv.epsilon - eps0).abs() <= 1e-10 * eps0, "k = {k}");
        }
    }

    #[test]
    fn saturation_flag() {
        let params = p(5, 1, 1.0);
        let lv = epsilon_level(&params, 0.5, 10).unwrap();
        assert!(lv.saturated);
        assert!(lv.epsilon > 1.0);
    }

    #[test]
    fn invalid_params() {
        assert!(GadgetParams::new(1, 1, 1.0).is_err());
        assert!(GadgetParams::new(5, 0, 1.0).is_err());
        assert!(GadgetParams::new(5, 1, 0.0).is_err());
        assert!(preset("nope").is_err());
    }

    #[test]
    fn preset_reaches_target() {
        let params = preset("paper-magnitude").unwrap();
        assert_relative_eq!(epsilon_threshold(&params).unwrap(), 1e-5, max_relative = 1e-12);
        assert!((params.c - 1.0).abs() < 0.01);
    }

    #[test]
    fn eta_budget_examples() {
        let c = crate::bounds::eta_prime_constant() * std::f64::consts::SQRT_2;
        assert_relative_eq!(eta_budget(c).unwrap(), 1.0, max_relative = 1e-14);
        // 1e-10 / (2·e^{2+1/e}) from a 40-digit evaluation.
        assert_relative_eq!(eta_budget(1e-5).unwrap(), 4.683_958_399_338_193e-12, max_relative = 1e-12);
        assert!(eta_budget(0.0).is_err());
    }

    #[test]
    fn delta_budget_examples() {
        let opts = SumOptions::default();
        let lattice = LatticeSpec::unbounded(1, 2.0, 1.0, Metric::Euclidean).unwrap();
        let d = delta_budget(1e-5, &lattice, 1.0, &opts).unwrap();
        // η₀ / (π²/3): 4.683958e-12 / 3.289868 (40-digit evaluation).
        assert_relative_eq!(d, 1.423_752_627_457_246_5e-12, max_relative = 1e-7);
        let divergent = LatticeSpec::unbounded(2, 2.0, 1.0, Metric::Euclidean).unwrap();
        assert!(matches!(delta_budget(1e-5, &divergent, 1.0, &opts), Err(Error::Divergent { .. })));
        // Linearity in the sum.
        let finite = LatticeSpec::finite(1, 2.0, 1.0, 2, Metric::Euclidean).unwrap();
        let eta0 = eta_budget(1e-5).unwrap();
        assert_relative_eq!(delta_budget(1e-5, &finite, 2.0, &opts).unwrap(), eta0 / (2.5 * 2.0), max_relative = 1e-14);
    }

    #[test]
    fn trace_contains_overhead() {
        let params = p(5, 1, 1.0);
        let tr = recursion_trace(&params, 0.05, 6, Some(1_000_000)).unwrap();
        assert_eq!(tr.levels.len(), 7);
        let oh = tr.overhead.unwrap();
        assert!(tr.levels[oh.level as usize].epsilon <= 1e-6);
        assert!(oh.level == 0 || tr.levels[oh.level as usize - 1].epsilon > 1e-6);
        assert_relative_eq!(oh.size_factor, 5f64.powi(oh.level as i32));
    }

    proptest! {
        #[test]
        fn iterative_matches_closed_form(
            a in 3u64..40, t in 1u64..3, c in 0.2f64..5.0, frac in 0.05f64..0.99, k in 0u32..5
        ) {
            prop_assume!(a >= t + 1);
            let params = p(a, t, c);
            let eps0 = epsilon_threshold(&params).unwrap();
            let eps = frac * eps0;
            let iter = epsilon_level(&params, eps, k).unwrap();
            let closed = epsilon_level_closed_form(&params, eps, k).unwrap();
            prop_assume!(closed > 1e-290);
            prop_assert!(((iter.epsilon - closed) / closed).abs() <= 1e-12);
        }

        #[test]
        fn contraction_below_threshold(frac in 0.01f64..0.99, a in 3u64..30) {
            let params = p(a, 1, 1.0);
            let eps0 = epsilon_threshold(&params).unwrap();
            let mut prev = frac * eps0;
            for k in 1..6 {
                let v = epsilon_level(&params, frac * eps0, k).unwrap().epsilon;
                if v == 0.0 { break; }
                prop_assert!(v < prev);
                prev = v;
            }
        }

        #[test]
        fn expansion_above_threshold(frac in 1.01f64..50.0, a in 3u64..30) {
            let params = p(a, 1, 1.0);
            let eps0 = epsilon_threshold(&params).unwrap();
            let mut prev = frac * eps0;
            for k in 1..12 {
                let lv = epsilon_level(&params, frac * eps0, k).unwrap();
                if lv.saturated { break; }
                prop_assert!(lv.epsilon > prev);
                prev = lv.epsilon;
            }
        }

        #[test]
        fn budget_inverts_epsilon(eta in 1e-14f64..1.0) {
            let eps = epsilon_from_eta(eta, GateArity::Two);
            prop_assert!(((eta_budget(eps).unwrap() - eta) / eta).abs() <= 1e-12);
        }

        #[test]
        fn budget_round_trip(eps0 in 1e-8f64..1.0) {
            let back = epsilon_from_eta(eta_budget(eps0).unwrap(), GateArity::Two);
            prop_assert!(((back - eps0) / eps0).abs() <= 1e-12);
        }
    }
}

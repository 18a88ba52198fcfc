//! Closed-form bounds for long-range noise: the contraction chain `S_k`,
//! the same-step closure `(η′)^r`, the induced locality strength `ε(η)`
//! and the many-body η.

use crate::error::{Error, Result};

/// `e^{1 + 1/(2e)}`, the prefactor of `η′ = e^{1+1/2e} √η`.
pub fn eta_prime_constant() -> f64 {
    let e = std::f64::consts::E;
    (1.0 + 1.0 / (2.0 * e)).exp()
}

/// `e^{2 + 1/e}`, the per-pair factor in `(e^{2+1/e} η)^n`.
pub fn pair_closure_constant() -> f64 {
    let e = std::f64::consts::E;
    (2.0 + 1.0 / e).exp()
}

/// `η′ = e^{1+1/2e} √η`.
pub fn eta_prime(eta: f64) -> f64 {
    eta_prime_constant() * eta.max(0.0).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContractionBoundInput {
    /// Half the number of same-step faults (`r = 2n`).
    pub n: u32,
    /// Number of contracted pairs.
    pub k: u32,
    pub eta: f64,
}

impl ContractionBoundInput {
    pub fn new(n: u32, k: u32, eta: f64) -> Result<Self> {
        if k > n {
            return Err(Error::InvalidInput(format!("contractions k = {k} exceed n = {n}")));
        }
        if !(eta.is_finite() && eta >= 0.0) {
            return Err(Error::InvalidInput(format!("eta must be finite and non-negative, got {eta}")));
        }
        Ok(Self { n, k, eta })
    }
}

fn ln_factorial(k: u32) -> f64 {
    (1..=k).map(|i| (i as f64).ln()).sum()
}

/// `(2nη)^k η^{2n-2k} / (2^k k!)`.
pub fn s_k_bound(input: &ContractionBoundInput) -> f64 {
    let ContractionBoundInput { n, k, eta } = *input;
    if k == 0 {
        return eta.powi(2 * n as i32);
    }
    if eta == 0.0 {
        return 0.0;
    }
    let (nf, kf) = (n as f64, k as f64);
    // Log space: the plain product underflows for n ~ 10, η ~ 1e-6.
    let ln = kf * (2.0 * nf * eta).ln() + (2.0 * nf - 2.0 * kf) * eta.ln()
        - kf * 2f64.ln()
        - ln_factorial(k);
    ln.exp()
}

/// `e^k (n/k)^k η^{2n-k}`, the looser form after `k! ≥ (k/e)^k`.
pub fn s_k_bound_loose(input: &ContractionBoundInput) -> f64 {
    let ContractionBoundInput { n, k, eta } = *input;
    if k == 0 {
        return eta.powi(2 * n as i32);
    }
    let (nf, kf) = (n as f64, k as f64);
    (kf * (1.0 + (nf / kf).ln()) + (2.0 * nf - kf) * eta.max(0.0).ln()).exp()
}

/// Same-step bound for `r` faults.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SameStepBound {
    /// `(η′)^r`.
    pub bound: f64,
    /// `(n+1) e^n e^{n/e} η^n` for even `r = 2n`; absent for odd `r`.
    pub intermediate: Option<f64>,
}

pub fn e_ir_same_step_bound(r: u32, eta: f64) -> SameStepBound {
    let eta = eta.max(0.0);
    let bound = eta_prime(eta).powi(r as i32);
    let intermediate = r.is_multiple_of(2).then(|| {
        let n = (r / 2) as f64;
        let e = std::f64::consts::E;
        (n + 1.0) * (n + n / e).exp() * eta.powf(n)
    });
    if let Some(i) = intermediate {
        debug_assert!(i <= bound * (1.0 + 1e-12) || bound == 0.0);
    }
    SameStepBound { bound, intermediate }
}

/// Arity of the gate at a faulty location.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateArity {
    One,
    Two,
}

/// Locality strength induced by long-range noise of strength `η`.
/// Two-qubit locations see `2η`.
pub fn epsilon_from_eta(eta: f64, arity: GateArity) -> f64 {
    match arity {
        GateArity::One => eta_prime(eta),
        GateArity::Two => eta_prime(2.0 * eta),
    }
}

/// Inverse of [`epsilon_from_eta`].
pub fn eta_from_epsilon(epsilon: f64, arity: GateArity) -> f64 {
    let eta = (epsilon / eta_prime_constant()).powi(2);
    match arity {
        GateArity::One => eta,
        GateArity::Two => eta / 2.0,
    }
}

/// One `p`-body coupling: qubits it acts on and `||H||` per time step
/// (a single entry means constant in time).
#[derive(Clone, Debug, PartialEq)]
pub struct ManyBodyTerm {
    pub indices: Vec<usize>,
    pub norms: Vec<f64>,
}

/// `max_{i, t} Σ_{terms ∋ i} ||H|| · t0`.
pub fn p_body_eta(terms: &[ManyBodyTerm], p: usize, t0: f64) -> Result<f64> {
    if p < 2 {
        return Err(Error::InvalidInput(format!("body count p must be at least 2, got {p}")));
    }
    let mut n_steps = 1;
    let mut n_qubits = 0;
    for (k, t) in terms.iter().enumerate() {
        if t.indices.len() != p {
            return Err(Error::InvalidInput(format!(
                "term {k} has {} indices, expected {p}",
                t.indices.len()
            )));
        }
        let mut sorted = t.indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != p {
            return Err(Error::InvalidInput(format!("term {k} repeats a qubit")));
        }
        if t.norms.is_empty() {
            return Err(Error::InvalidInput(format!("term {k} has no norm")));
        }
        if t.norms.len() > 1 {
            if n_steps > 1 && t.norms.len() != n_steps {
                return Err(Error::InvalidInput(format!("term {k} has inconsistent step count")));
            }
            n_steps = t.norms.len();
        }
        n_qubits = n_qubits.max(sorted[p - 1] + 1);
    }
    let mut worst = 0.0f64;
    for step in 0..n_steps {
        let mut rows = vec![0.0f64; n_qubits];
        for t in terms {
            let norm = if t.norms.len() == 1 { t.norms[0] } else { t.norms[step] };
            for &i in &t.indices {
                rows[i] += norm.abs();
            }
        }
        worst = rows.iter().fold(worst, |m, &r| m.max(r));
    }
    Ok(worst * t0)
}

/// `ε ≈ constant · η^{1/p}`. Only the exponent is established for `p > 2`;
/// the default constant is the two-body one and carries no guarantee.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PBodyEpsilon {
    pub exponent: f64,
    pub constant: f64,
    pub rigorous: bool,
}

pub fn p_body_epsilon_law(p: usize, constant: Option<f64>) -> Result<PBodyEpsilon> {
    if p < 2 {
        return Err(Error::InvalidInput(format!("body count p must be at least 2, got {p}")));
    }
    Ok(PBodyEpsilon {
        exponent: 1.0 / p as f64,
        constant: constant.unwrap_or_else(eta_prime_constant),
        rigorous: p == 2 && constant.is_none(),
    })
}

impl PBodyEpsilon {
    pub fn evaluate(&self, eta: f64) -> f64 {
        self.constant * eta.max(0.0).powf(self.exponent)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn s_k_without_contractions() {
        for n in 0..6 {
            let eta = 0.03;
            let v = s_k_bound(&ContractionBoundInput::new(n, 0, eta).unwrap());
            assert_relative_eq!(v, eta.powi(2 * n as i32), max_relative = 1e-14);
        }
    }

    #[test]
    fn s_k_single_contraction() {
        let v = s_k_bound(&ContractionBoundInput::new(1, 1, 0.01).unwrap());
        assert_relative_eq!(v, 0.01, max_relative = 1e-13);
    }

    #[test]
    fn s_k_tight_below_loose_exhaustive() {
        for &eta in &[1e-6, 1e-3, 0.05, 0.5] {
            for n in 1..=8 {
                for k in 1..=n {
                    let input = ContractionBoundInput::new(n, k, eta).unwrap();
                    let tight = s_k_bound(&input);
                    let loose = s_k_bound_loose(&input);
                    assert!(tight <= loose * (1.0 + 1e-12), "n={n} k={k} eta={eta}");
                }
            }
        }
    }

    #[test]
    fn contraction_input_validation() {
        assert!(ContractionBoundInput::new(2, 3, 0.1).is_err());
        assert!(ContractionBoundInput::new(2, 1, -0.1).is_err());
    }

    #[test]
    fn same_step_values() {
        assert_eq!(e_ir_same_step_bound(3, 0.0).bound, 0.0);
        let b = e_ir_same_step_bound(2, 0.01);
        // e^{2 + 1/e} = 10.674731869323309... (40-digit mpmath evaluation).
        assert_relative_eq!(b.bound, 0.106_747_318_693_233_1, max_relative = 1e-13);
        let b6 = e_ir_same_step_bound(6, 1e-3);
        let inter = b6.intermediate.unwrap();
        let e = std::f64::consts::E;
        assert_relative_eq!(inter, 4.0 * (3.0 + 3.0 / e).exp() * 1e-9, max_relative = 1e-12);
        assert_relative_eq!(b6.bound, (6.0 + 3.0 / e).exp() * 1e-9, max_relative = 1e-12);
        assert!(inter <= b6.bound);
        assert!(e_ir_same_step_bound(5, 1e-3).intermediate.is_none());
    }

    #[test]
    fn epsilon_from_eta_values() {
        assert_eq!(epsilon_from_eta(0.0, GateArity::Two), 0.0);
        assert_relative_eq!(
            epsilon_from_eta(0.005, GateArity::Two),
            0.326_722_081_734_971_04,
            max_relative = 1e-13
        );
    }

    #[test]
    fn p_body_reduces_to_pairs() {
        let m = crate::model::decaying_chain(5, 0.02, 1.5, 1.3).unwrap();
        let table: Vec<ManyBodyTerm> = crate::model::pair_norm_table(&m)
            .into_iter()
            .map(|(indices, norms)| ManyBodyTerm { indices, norms })
            .collect();
        assert_relative_eq!(
            p_body_eta(&table, 2, m.t0()).unwrap(),
            m.eta().unwrap(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn p_body_single_three_body() {
        let t = [ManyBodyTerm {
            indices: vec![0, 1, 2],
            norms: vec![0.2],
        }];
        assert_relative_eq!(p_body_eta(&t, 3, 1.0).unwrap(), 0.2);
        assert!(p_body_eta(&t, 1, 1.0).is_err());
        assert!(p_body_eta(&t, 2, 1.0).is_err());
    }

    #[test]
    fn p_body_dense_three_body_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let mut terms = Vec::new();
        let mut norm = [[[0.0f64; 4]; 4]; 4];
        for a in 0..4 {
            for b in a + 1..4 {
                for c in b + 1..4 {
                    let v: f64 = rng.random_range(0.0..1.0);
                    norm[a][b][c] = v;
                    terms.push(ManyBodyTerm {
                        indices: vec![a, b, c],
                        norms: vec![v],
                    });
                }
            }
        }
        // Oracle: for each i, sum over unordered {j, k} not containing i.
        let mut best = 0.0f64;
        for i in 0..4 {
            let mut row = 0.0;
            for j in 0..4 {
                for k in j + 1..4 {
                    if j == i || k == i {
                        continue;
                    }
                    let mut idx = [i, j, k];
                    idx.sort_unstable();
                    row += norm[idx[0]][idx[1]][idx[2]];
                }
            }
            best = f64::max(best, row);
        }
        assert_relative_eq!(p_body_eta(&terms, 3, 1.0).unwrap(), best, max_relative = 1e-14);
    }

    #[test]
    fn p_body_law_flags_rigor() {
        let law = p_body_epsilon_law(3, None).unwrap();
        assert!(!law.rigorous);
        assert_relative_eq!(law.exponent, 1.0 / 3.0);
        assert!(p_body_epsilon_law(2, None).unwrap().rigorous);
        assert_relative_eq!(
            p_body_epsilon_law(2, None).unwrap().evaluate(0.01),
            eta_prime(0.01),
            max_relative = 1e-15
        );
    }

    proptest! {
        #[test]
        fn epsilon_arity_ratio_is_sqrt2(eta in 1e-12f64..10.0) {
            let ratio = epsilon_from_eta(eta, GateArity::Two) / epsilon_from_eta(eta, GateArity::One);
            prop_assert!((ratio - std::f64::consts::SQRT_2).abs() <= 1e-12);
        }

        #[test]
        fn eta_epsilon_round_trip(eta in 1e-14f64..1.0, two in any::<bool>()) {
            let arity = if two { GateArity::Two } else { GateArity::One };
            let back = eta_from_epsilon(epsilon_from_eta(eta, arity), arity);
            prop_assert!(((back - eta) / eta).abs() <= 1e-12);
        }

        #[test]
        fn epsilon_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(epsilon_from_eta(lo, GateArity::Two) <= epsilon_from_eta(hi, GateArity::Two));
        }
    }
}

//! Exact fault-path oracle.
//!
//! Each working period `t0` is cut into `m` micro-intervals of width
//! `Δ = t0/m`. One micro-interval evolves by
//!
//! ```text
//! e^{-iΔ H_S} e^{-iΔ H_B} Π_terms (I - iΔ H_term)
//! ```
//!
//! with the noise terms multiplied in canonical order (pairs by `(i, j)`,
//! location terms by location). Deleting ("masking") a macro-location
//! removes every noise term that touches it for the whole step; in
//! long-range mode that is every `H_ij` with `i` or `j` in the location's
//! support.
//!
//! The sum `E(I)` of all fine-grained fault paths with every location of `I`
//! faulty (and anything elsewhere) is evaluated by inclusion–exclusion over
//! masked evolutions: `E(I) = Σ_{S ⊆ I} (-1)^{|S|} M(S)`. Masking `S` keeps
//! exactly the monomials without faults in `S`, so the alternating sum keeps
//! the monomials that fault at every location of `I`.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::eta_prime;
use crate::error::{Error, Result};
use crate::model::{MacroLocation, NoiseMode, SystemBathModel};
use crate::opcore::{embed, expm, sup_norm, Operator, C64};

/// Largest fault set accepted by the `2^r` oracle.
pub const MAX_FAULTS: usize = 12;

/// Absolute slack when comparing a measured norm against a bound.
pub const BOUND_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MicroGrid {
    t0: f64,
    m: usize,
}

impl MicroGrid {
    pub fn new(t0: f64, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidInput("micro-interval count must be at least 1".into()));
        }
        if !(t0.is_finite() && t0 > 0.0) {
            return Err(Error::InvalidInput("t0 must be positive".into()));
        }
        Ok(Self { t0, m })
    }

    pub fn for_model(model: &SystemBathModel, m: usize) -> Result<Self> {
        Self::new(model.t0(), m)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn delta(&self) -> f64 {
        self.t0 / self.m as f64
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn refined(&self) -> Self {
        Self {
            t0: self.t0,
            m: self.m * 2,
        }
    }
}

/// Distinct macro-locations declared faulty, in canonical order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FaultSet {
    locations: Vec<MacroLocation>,
}

impl FaultSet {
    pub fn new(model: &SystemBathModel, locations: Vec<MacroLocation>) -> Result<Self> {
        let mut locs: Vec<MacroLocation> = locations
            .into_iter()
            .map(|l| MacroLocation::new(l.step, l.support))
            .collect();
        for l in &locs {
            if model.gate_index(l).is_none() {
                return Err(Error::InvalidInput(format!(
                    "no gate location on qubits {:?} at step {}",
                    l.support, l.step
                )));
            }
        }
        locs.sort();
        let before = locs.len();
        locs.dedup();
        if locs.len() != before {
            return Err(Error::InvalidInput("fault set lists a location twice".into()));
        }
        Ok(Self { locations: locs })
    }

    pub fn empty() -> Self {
        Self { locations: vec![] }
    }

    pub fn locations(&self) -> &[MacroLocation] {
        &self.locations
    }

    pub fn r(&self) -> usize {
        self.locations.len()
    }

    /// Locations selected by the bits of `mask`.
    fn subset(&self, mask: usize) -> impl Iterator<Item = &MacroLocation> {
        self.locations
            .iter()
            .enumerate()
            .filter(move |(k, _)| mask >> k & 1 == 1)
            .map(|(_, l)| l)
    }
}

/// Every fault set of size `1..=max_r`, ordered by size then lexicographically.
pub fn enumerate_fault_sets(model: &SystemBathModel, max_r: usize) -> Vec<FaultSet> {
    let locs = model.locations();
    let mut out = Vec::new();
    for r in 1..=max_r.min(locs.len()) {
        let mut idx: Vec<usize> = (0..r).collect();
        loop {
            out.push(FaultSet {
                locations: idx.iter().map(|&k| locs[k].clone()).collect(),
            });
            // Next r-combination in lexicographic order.
            let Some(pos) = (0..r).rev().find(|&p| idx[p] != p + locs.len() - r) else {
                break;
            };
            idx[pos] += 1;
            for q in pos + 1..r {
                idx[q] = idx[q - 1] + 1;
            }
        }
    }
    out
}

/// Set of macro-locations whose noise is deleted.
pub type LocationMask = BTreeSet<MacroLocation>;

struct NoiseTerm {
    /// Index into `pair_terms` or `location_terms`.
    id: usize,
    /// Full-space operator with the step's scale applied.
    op: Operator,
    /// Gate indices (at this step) the term touches.
    hits: Vec<usize>,
}

/// Precomputed full-space operators for one model.
pub struct FaultPathOracle<'a> {
    model: &'a SystemBathModel,
    h_system: Vec<Operator>,
    h_bath: Operator,
    terms: Vec<Vec<NoiseTerm>>,
}

impl<'a> FaultPathOracle<'a> {
    pub fn new(model: &'a SystemBathModel) -> Result<Self> {
        let spec = &model.spec;
        let h_system = (0..model.n_steps())
            .map(|s| model.system_hamiltonian(s))
            .collect::<Result<Vec<_>>>()?;
        let h_bath = model.bath_hamiltonian()?;
        let bath = spec.bath_index();
        let mut terms = Vec::with_capacity(model.n_steps());
        for s in 0..model.n_steps() {
            let mut step_terms = Vec::new();
            match model.mode {
                NoiseMode::LongRange => {
                    for (id, p) in model.pair_terms.iter().enumerate() {
                        let scale = p.scale_at(s);
                        let op = embed(&p.op, &[p.i, p.j, bath], spec)?.scale(scale);
                        let mut hits = vec![model.gate_of_qubit(s, p.i), model.gate_of_qubit(s, p.j)];
                        hits.dedup();
                        step_terms.push(NoiseTerm { id, op, hits });
                    }
                }
                NoiseMode::ShortRange => {
                    for (id, t) in model.location_terms.iter().enumerate() {
                        if t.location.step != s {
                            continue;
                        }
                        let g = model.gate_index(&t.location).expect("validated at load");
                        let mut support = t.location.support.clone();
                        support.push(bath);
                        let op = embed(&t.op, &support, spec)?;
                        step_terms.push(NoiseTerm { id, op, hits: vec![g] });
                    }
                }
            }
            terms.push(step_terms);
        }
        Ok(Self {
            model,
            h_system,
            h_bath,
            terms,
        })
    }

    pub fn model(&self) -> &SystemBathModel {
        self.model
    }

    fn check_step(&self, step: usize) -> Result<()> {
        if step >= self.model.n_steps() {
            return Err(Error::InvalidInput(format!(
                "step {step} out of range ({} steps)",
                self.model.n_steps()
            )));
        }
        Ok(())
    }

    /// Term ids at `step` deleted by `mask`.
    pub fn suppressed_terms(&self, step: usize, mask: &LocationMask) -> Result<BTreeSet<usize>> {
        self.check_step(step)?;
        let masked_gates: Vec<usize> = mask
            .iter()
            .filter(|l| l.step == step)
            .map(|l| {
                self.model.gate_index(l).ok_or_else(|| {
                    Error::InvalidInput(format!("mask names no location {:?} at step {step}", l.support))
                })
            })
            .collect::<Result<_>>()?;
        Ok(self.terms[step]
            .iter()
            .filter(|t| t.hits.iter().any(|g| masked_gates.contains(g)))
            .map(|t| t.id)
            .collect())
    }

    /// One micro-interval propagator at `step` with the listed terms deleted.
    pub fn micro_step(&self, step: usize, grid: &MicroGrid, suppressed: &BTreeSet<usize>) -> Result<Operator> {
        self.check_step(step)?;
        let delta = grid.delta();
        let mut u = &expm(&self.h_system[step], delta)? * &expm(&self.h_bath, delta)?;
        let dim = u.dim();
        let minus_i_delta = C64::new(0.0, -delta);
        for t in &self.terms[step] {
            if suppressed.contains(&t.id) {
                continue;
            }
            let factor = &Operator::identity(dim) + &t.op.scale_complex(minus_i_delta);
            u = &u * &factor;
        }
        Ok(u)
    }

    /// Propagator for one full step: the micro-step raised to the `m`-th power.
    pub fn step_propagator(&self, step: usize, grid: &MicroGrid, mask: &LocationMask) -> Result<Operator> {
        let suppressed = self.suppressed_terms(step, mask)?;
        Ok(self.micro_step(step, grid, &suppressed)?.pow(grid.m()))
    }

    fn validate_mask(&self, mask: &LocationMask) -> Result<()> {
        for l in mask {
            if self.model.gate_index(l).is_none() {
                return Err(Error::InvalidInput(format!(
                    "mask names no location {:?} at step {}",
                    l.support, l.step
                )));
            }
        }
        Ok(())
    }

    /// Propagator over `steps` (later steps act on the left).
    pub fn evolve_range(&self, grid: &MicroGrid, mask: &LocationMask, steps: Range<usize>) -> Result<Operator> {
        self.validate_mask(mask)?;
        if steps.end > self.model.n_steps() {
            return Err(Error::InvalidInput(format!(
                "step range {steps:?} exceeds {} steps",
                self.model.n_steps()
            )));
        }
        let mut u = Operator::identity(self.model.spec.total_dim());
        for s in steps {
            u = &self.step_propagator(s, grid, mask)? * &u;
        }
        Ok(u)
    }

    /// Total propagator over all steps under the given suppression pattern.
    pub fn evolve_with_mask(&self, grid: &MicroGrid, mask: &LocationMask) -> Result<Operator> {
        self.evolve_range(grid, mask, 0..self.model.n_steps())
    }

    /// Reference propagator `Π_s e^{-i t0 H(s)}` with every noise term on.
    pub fn exact_evolution(&self) -> Result<Operator> {
        let t0 = self.model.t0();
        let mut u = Operator::identity(self.model.spec.total_dim());
        for s in 0..self.model.n_steps() {
            let mut h = &self.h_system[s] + &self.h_bath;
            for t in &self.terms[s] {
                h = &h + &t.op;
            }
            u = &expm(&h, t0)? * &u;
        }
        Ok(u)
    }

    /// Signed inclusion–exclusion branches `(-1)^{|S|} M(base ∪ S)` for every
    /// `S ⊆ faults`, indexed by the bitmask of `S`.
    fn branches(&self, grid: &MicroGrid, faults: &FaultSet, base: &LocationMask) -> Result<Vec<Operator>> {
        let r = faults.r();
        if r > MAX_FAULTS {
            return Err(Error::ResourceGuard(format!(
                "fault set of size {r} exceeds the oracle limit of {MAX_FAULTS}"
            )));
        }
        self.validate_mask(base)?;
        // Each step propagator depends only on the mask restricted to that
        // step, so cache them by (step, suppressed terms).
        let mut needed: BTreeSet<(usize, BTreeSet<usize>)> = BTreeSet::new();
        let mut plans = Vec::with_capacity(1 << r);
        for bits in 0..1usize << r {
            let mut mask = base.clone();
            mask.extend(faults.subset(bits).cloned());
            let mut keys = Vec::with_capacity(self.model.n_steps());
            for s in 0..self.model.n_steps() {
                let key = (s, self.suppressed_terms(s, &mask)?);
                needed.insert(key.clone());
                keys.push(key);
            }
            plans.push((bits, keys));
        }
        let computed: Vec<((usize, BTreeSet<usize>), Operator)> = needed
            .into_iter()
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|key| {
                let u = self.micro_step(key.0, grid, &key.1)?.pow(grid.m());
                Ok((key, u))
            })
            .collect::<Result<_>>()?;
        let cache: BTreeMap<_, _> = computed.into_iter().collect();
        let dim = self.model.spec.total_dim();
        Ok(plans
            .into_par_iter()
            .map(|(bits, keys)| {
                let mut u = Operator::identity(dim);
                for key in &keys {
                    u = &cache[key] * &u;
                }
                if bits.count_ones() % 2 == 1 {
                    u.scale(-1.0)
                } else {
                    u
                }
            })
            .collect())
    }

    /// `E(I)`: sum of all fault paths with every location of `faults` faulty.
    pub fn fault_sum(&self, grid: &MicroGrid, faults: &FaultSet) -> Result<Operator> {
        let branches = self.branches(grid, faults, &LocationMask::new())?;
        Ok(ordered_sum(&branches, self.model.spec.total_dim()))
    }

    /// Fault paths that are faulty at exactly the locations of `faults` and
    /// nowhere else: `Σ_{S ⊆ T} (-1)^{|S|} M(T^c ∪ S)`.
    pub fn exact_fault_sum(&self, grid: &MicroGrid, faults: &FaultSet) -> Result<Operator> {
        let complement: LocationMask = self
            .model
            .locations()
            .into_iter()
            .filter(|l| !faults.locations().contains(l))
            .collect();
        let branches = self.branches(grid, faults, &complement)?;
        Ok(ordered_sum(&branches, self.model.spec.total_dim()))
    }

    /// Inclusion–exclusion branches of `E(I)` (see [`Self::fault_sum`]).
    pub fn fault_branches(&self, grid: &MicroGrid, faults: &FaultSet) -> Result<Vec<Operator>> {
        self.branches(grid, faults, &LocationMask::new())
    }
}

fn ordered_sum(ops: &[Operator], dim: usize) -> Operator {
    ops.iter().fold(Operator::zeros(dim), |acc, b| &acc + b)
}

// ---------------------------------------------------------------------------
// Bound verification

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    ShortRange,
    LongRangeDistinctTimes,
    LongRangeSameStep,
}

/// Refinement policy for the micro-grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeltaPolicy {
    pub m_start: usize,
    pub m_max: usize,
    /// Stop refining once the norm changes by less than this on halving Δ.
    pub tolerance: f64,
}

impl Default for DeltaPolicy {
    fn default() -> Self {
        Self {
            m_start: 64,
            m_max: 1024,
            tolerance: 1e-6,
        }
    }
}

impl DeltaPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.m_start == 0 || self.m_max < 2 * self.m_start {
            return Err(Error::InvalidInput(format!(
                "delta grid needs 1 <= m_start and 2*m_start <= m_max, got {}..{}",
                self.m_start, self.m_max
            )));
        }
        Ok(())
    }
}

/// `E(I)` extrapolated to `Δ → 0`.
#[derive(Clone, Debug)]
pub struct Extrapolated {
    /// `2·E(Δ/2) - E(Δ)` on the finest pair of grids.
    pub operator: Operator,
    pub norm: f64,
    /// Finest Δ used.
    pub delta: f64,
    /// `| ||E(Δ/2)|| - ||E(Δ)|| |` on the finest pair.
    pub halved_change: f64,
    pub m_finest: usize,
}

impl FaultPathOracle<'_> {
    /// Richardson extrapolation of `E(I)` in `Δ`, halving Δ from `m_start`
    /// until the norm settles or `m_max` is reached.
    pub fn extrapolated_fault_sum(&self, faults: &FaultSet, policy: &DeltaPolicy) -> Result<Extrapolated> {
        policy.validate()?;
        let mut coarse_grid = MicroGrid::for_model(self.model, policy.m_start)?;
        let mut coarse = self.fault_sum(&coarse_grid, faults)?;
        let mut coarse_norm = sup_norm(&coarse)?;
        loop {
            let fine_grid = coarse_grid.refined();
            let fine = self.fault_sum(&fine_grid, faults)?;
            let fine_norm = sup_norm(&fine)?;
            let change = (fine_norm - coarse_norm).abs();
            if change < policy.tolerance || fine_grid.m() * 2 > policy.m_max {
                let operator = &fine.scale(2.0) - &coarse;
                let norm = sup_norm(&operator)?;
                return Ok(Extrapolated {
                    operator,
                    norm,
                    delta: fine_grid.delta(),
                    halved_change: change,
                    m_finest: fine_grid.m(),
                });
            }
            coarse_grid = fine_grid;
            coarse = fine;
            coarse_norm = fine_norm;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub measured_norm: f64,
    pub analytic_bound: f64,
    pub margin: f64,
    pub regime: Regime,
    pub epsilon: Option<f64>,
    pub eta: Option<f64>,
    pub eta_prime: Option<f64>,
    pub delta: f64,
    pub delta_halved_change: f64,
    pub r: usize,
    pub locations: Vec<MacroLocation>,
}

impl BoundReport {
    pub fn violated(&self) -> bool {
        self.measured_norm > self.analytic_bound + BOUND_SLACK
    }

    /// The same measurement against `factor` times the analytic bound.
    pub fn with_bound_factor(mut self, factor: f64) -> Self {
        self.analytic_bound *= factor;
        self.margin = margin(self.measured_norm, self.analytic_bound);
        self
    }

    pub fn to_line(&self) -> ReportLine {
        ReportLine {
            regime: self.regime,
            r: self.r,
            measured: self.measured_norm,
            bound: self.analytic_bound,
            margin: self.margin,
            delta: self.delta,
            delta_halved_change: self.delta_halved_change,
            locations: self.locations.clone(),
        }
    }
}

/// One JSON-lines report record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportLine {
    pub regime: Regime,
    pub r: usize,
    pub measured: f64,
    pub bound: f64,
    pub margin: f64,
    pub delta: f64,
    pub delta_halved_change: f64,
    pub locations: Vec<MacroLocation>,
}

fn margin(measured: f64, bound: f64) -> f64 {
    if bound > 0.0 {
        measured / bound
    } else if measured == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Bound, regime and the strength parameters it was built from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ApplicableBound {
    pub regime: Regime,
    pub bound: f64,
    pub epsilon: Option<f64>,
    pub eta: Option<f64>,
    pub eta_prime: Option<f64>,
}

/// Analytic bound applicable to `faults`, with its regime.
///
/// Short-range noise gives `ε^r`. For long-range noise `E(I)` factorizes
/// over time steps; a step holding a single faulty location contributes `η`
/// (`2η` for a two-qubit location) and a step holding `r_s ≥ 2` contributes
/// `(η′)^{r_s}`, with `η′` built from `2η` when any of them is a two-qubit
/// location.
pub fn applicable_bound(model: &SystemBathModel, faults: &FaultSet) -> Result<ApplicableBound> {
    let r = faults.r() as i32;
    match model.mode {
        NoiseMode::ShortRange => {
            let eps = model.epsilon_short()?;
            Ok(ApplicableBound {
                regime: Regime::ShortRange,
                bound: eps.powi(r),
                epsilon: Some(eps),
                eta: None,
                eta_prime: None,
            })
        }
        NoiseMode::LongRange => {
            let eta = model.eta()?;
            let mut by_step: BTreeMap<usize, Vec<&MacroLocation>> = BTreeMap::new();
            for l in faults.locations() {
                by_step.entry(l.step).or_default().push(l);
            }
            let same_step = by_step.values().any(|v| v.len() > 1);
            let mut bound = 1.0;
            let mut eta_p = None;
            for locs in by_step.values() {
                let two = locs.iter().any(|l| l.is_two_qubit());
                let eta_loc = if two { 2.0 * eta } else { eta };
                if locs.len() == 1 {
                    bound *= eta_loc;
                } else {
                    let ep = eta_prime(eta_loc);
                    eta_p = Some(eta_p.map_or(ep, |e: f64| e.max(ep)));
                    bound *= ep.powi(locs.len() as i32);
                }
            }
            let regime = if same_step {
                Regime::LongRangeSameStep
            } else {
                Regime::LongRangeDistinctTimes
            };
            Ok(ApplicableBound {
                regime,
                bound,
                epsilon: None,
                eta: Some(eta),
                eta_prime: eta_p.or(Some(eta_prime(eta))),
            })
        }
    }
}

/// Measures `||E(I)||` (extrapolated in Δ) and compares with the bound.
pub fn verify_bound(oracle: &FaultPathOracle<'_>, faults: &FaultSet, policy: &DeltaPolicy) -> Result<BoundReport> {
    let model = oracle.model();
    let ext = oracle.extrapolated_fault_sum(faults, policy)?;
    let ApplicableBound {
        regime,
        bound,
        epsilon,
        eta,
        eta_prime,
    } = applicable_bound(model, faults)?;
    Ok(BoundReport {
        measured_norm: ext.norm,
        analytic_bound: bound,
        margin: margin(ext.norm, bound),
        regime,
        epsilon,
        eta,
        eta_prime,
        delta: ext.delta,
        delta_halved_change: ext.halved_change,
        r: faults.r(),
        locations: faults.locations().to_vec(),
    })
}

// ---------------------------------------------------------------------------
// Randomized phases

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseStats {
    pub n_samples: usize,
    pub branches: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub min: f64,
    pub max: f64,
    /// Norm with every phase equal to zero, i.e. `||Σ_b branch_b||`.
    pub coherent: f64,
}

/// Norm of `Σ_b e^{iθ_b} branch_b` over uniformly random phases.
pub fn randomized_phase_norm_branches(branches: &[Operator], n_samples: usize, seed: u64) -> Result<PhaseStats> {
    if n_samples == 0 {
        return Err(Error::InvalidInput("n_samples must be at least 1".into()));
    }
    let Some(first) = branches.first() else {
        return Err(Error::InvalidInput("no branches to combine".into()));
    };
    let dim = first.dim();
    let coherent = sup_norm(&ordered_sum(branches, dim))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut norms = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let mut acc = Operator::zeros(dim);
        for b in branches {
            let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            acc = &acc + &b.scale_complex(C64::from_polar(1.0, theta));
        }
        norms.push(sup_norm(&acc)?);
    }
    let n = norms.len() as f64;
    let mean = norms.iter().sum::<f64>() / n;
    let var = norms.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Ok(PhaseStats {
        n_samples,
        branches: branches.len(),
        mean,
        std_dev: var.sqrt(),
        min: norms.iter().copied().fold(f64::INFINITY, f64::min),
        max: norms.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        coherent,
    })
}

/// Randomizes the relative phases of the `2^r` inclusion–exclusion branches
/// of `E(I)` on a fixed grid.
pub fn randomized_phase_norm(
    oracle: &FaultPathOracle<'_>,
    grid: &MicroGrid,
    faults: &FaultSet,
    n_samples: usize,
    seed: u64,
) -> Result<PhaseStats> {
    if n_samples == 0 {
        return Err(Error::InvalidInput("n_samples must be at least 1".into()));
    }
    let branches = oracle.fault_branches(grid, faults)?;
    randomized_phase_norm_branches(&branches, n_samples, seed)
}

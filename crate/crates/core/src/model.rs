//! System-bath noise models.
//!
//! A model couples `n` system qubits to one shared bath factor. The ideal
//! circuit is a schedule of time steps, each of duration `t0`, in which
//! every qubit belongs to exactly one gate location. Noise is either a set
//! of per-location couplings (short-range mode) or a set of pair couplings
//! `H_ij` acting on qubits `i`, `j` and the bath (long-range mode).

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::opcore::{embed, pauli, random_hermitian, sup_norm, Operator, TensorFactorSpec, Tolerances, C64};

/// Largest joint dimension accepted for a model.
pub const MAX_TOTAL_DIM: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    ShortRange,
    LongRange,
}

impl NoiseMode {
    pub fn name(self) -> &'static str {
        match self {
            NoiseMode::ShortRange => "short_range",
            NoiseMode::LongRange => "long_range",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateKind {
    Identity,
    X,
    Y,
    Z,
    H,
    S,
    T,
    Rx,
    Ry,
    Rz,
    Cz,
    Cnot,
    Swap,
    Xx,
    Zz,
    /// Explicit Hermitian generator supplied as a matrix.
    Generator,
}

impl GateKind {
    fn arity(self) -> Option<usize> {
        use GateKind::*;
        match self {
            Identity | X | Y | Z | H | S | T | Rx | Ry | Rz => Some(1),
            Cz | Cnot | Swap | Xx | Zz => Some(2),
            Generator => None,
        }
    }

    fn param_count(self) -> usize {
        use GateKind::*;
        match self {
            Rx | Ry | Rz | Xx | Zz => 1,
            _ => 0,
        }
    }
}

/// One ideal gate occupying one circuit location for one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct Gate {
    pub kind: GateKind,
    pub support: Vec<usize>,
    pub params: Vec<f64>,
    /// Hermitian `G` on the support qubits with `e^{-i t0 G}` the gate.
    pub generator: Operator,
}

impl Gate {
    /// Builds a gate and its generator for a working period `t0`.
    pub fn new(
        kind: GateKind,
        support: Vec<usize>,
        params: Vec<f64>,
        matrix: Option<Operator>,
        t0: f64,
    ) -> Result<Self> {
        if support.is_empty() || support.len() > 2 {
            return Err(Error::InvalidInput(format!(
                "gate support must hold 1 or 2 qubits, got {}",
                support.len()
            )));
        }
        if let Some(a) = kind.arity() {
            if a != support.len() {
                return Err(Error::InvalidInput(format!(
                    "{kind:?} acts on {a} qubit(s), support lists {}",
                    support.len()
                )));
            }
        }
        if params.len() != kind.param_count() {
            return Err(Error::InvalidInput(format!(
                "{kind:?} takes {} parameter(s), got {}",
                kind.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidInput("gate parameters must be finite".into()));
        }
        let generator = match (kind, matrix) {
            (GateKind::Generator, Some(m)) => {
                let dim = 1usize << support.len();
                if m.dim() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        found: m.dim(),
                    });
                }
                if !m.is_hermitian(&Tolerances::DEFAULT) {
                    return Err(Error::NotHermitian {
                        defect: m.hermiticity_defect(),
                        tolerance: Tolerances::DEFAULT.hermiticity,
                    });
                }
                m
            }
            (GateKind::Generator, None) => {
                return Err(Error::InvalidInput("generator gate requires a matrix".into()))
            }
            (_, Some(_)) => {
                return Err(Error::InvalidInput(format!(
                    "{kind:?} does not take a matrix"
                )))
            }
            (k, None) => named_generator(k, &params, t0),
        };
        Ok(Gate {
            kind,
            support,
            params,
            generator,
        })
    }

    pub fn identity(qubit: usize) -> Self {
        Gate {
            kind: GateKind::Identity,
            support: vec![qubit],
            params: vec![],
            generator: Operator::zeros(2),
        }
    }

    pub fn is_two_qubit(&self) -> bool {
        self.support.len() == 2
    }

    fn sorted_support(&self) -> Vec<usize> {
        let mut s = self.support.clone();
        s.sort_unstable();
        s
    }
}

fn named_generator(kind: GateKind, params: &[f64], t0: f64) -> Operator {
    use GateKind::*;
    let i2 = pauli::i2();
    let i4 = Operator::identity(4);
    // (P - I)·π/(2 t0) generates P for any involutory P.
    let involution = |p: Operator, id: &Operator| (&p - id).scale(PI / (2.0 * t0));
    match kind {
        Identity => Operator::zeros(2),
        X => involution(pauli::x(), &i2),
        Y => involution(pauli::y(), &i2),
        Z => involution(pauli::z(), &i2),
        H => involution(
            (&pauli::x() + &pauli::z()).scale(std::f64::consts::FRAC_1_SQRT_2),
            &i2,
        ),
        S => Operator::from_real_rows(&[&[0.0, 0.0], &[0.0, -PI / (2.0 * t0)]]).unwrap(),
        T => Operator::from_real_rows(&[&[0.0, 0.0], &[0.0, -PI / (4.0 * t0)]]).unwrap(),
        Rx => pauli::x().scale(params[0] / (2.0 * t0)),
        Ry => pauli::y().scale(params[0] / (2.0 * t0)),
        Rz => pauli::z().scale(params[0] / (2.0 * t0)),
        Cz => {
            let mut e = vec![C64::new(0.0, 0.0); 16];
            e[15] = C64::new(PI / t0, 0.0);
            Operator::from_row_major(4, &e).unwrap()
        }
        Cnot => {
            let p1 = Operator::from_real_rows(&[&[0.0, 0.0], &[0.0, 1.0]]).unwrap();
            p1.kron(&(&i2 - &pauli::x())).scale(PI / (2.0 * t0))
        }
        Swap => {
            let swap = Operator::from_real_rows(&[
                &[1.0, 0.0, 0.0, 0.0],
                &[0.0, 0.0, 1.0, 0.0],
                &[0.0, 1.0, 0.0, 0.0],
                &[0.0, 0.0, 0.0, 1.0],
            ])
            .unwrap();
            (&i4 - &swap).scale(PI / (2.0 * t0))
        }
        Xx => pauli::x().kron(&pauli::x()).scale(params[0] / (2.0 * t0)),
        Zz => pauli::z().kron(&pauli::z()).scale(params[0] / (2.0 * t0)),
        Generator => unreachable!("explicit generators carry a matrix"),
    }
}

/// Gates per time step plus the common working period `t0`.
#[derive(Clone, Debug, PartialEq)]
pub struct GateSchedule {
    pub t0: f64,
    pub steps: Vec<Vec<Gate>>,
}

impl GateSchedule {
    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }
}

/// Pair coupling `H_ij`, stored with `i < j`, acting on `q_i ⊗ q_j ⊗ bath`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairTerm {
    pub i: usize,
    pub j: usize,
    pub op: Operator,
    /// Optional per-step multiplier (time-dependent coupling).
    pub scale: Option<Vec<f64>>,
    norm: f64,
}

impl PairTerm {
    /// Registers `op` for the pair `(i, j)`; `op` acts on `q_i ⊗ q_j ⊗ bath`
    /// in that order. Reversed pairs are reordered so that `i < j`.
    pub fn new(i: usize, j: usize, op: Operator, scale: Option<Vec<f64>>, bath_dim: usize) -> Result<Self> {
        if i == j {
            return Err(Error::InvalidInput(format!("pair term couples qubit {i} to itself")));
        }
        let expected = 4 * bath_dim;
        if op.dim() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: op.dim(),
            });
        }
        if !op.is_hermitian(&Tolerances::DEFAULT) {
            return Err(Error::NotHermitian {
                defect: op.hermiticity_defect(),
                tolerance: Tolerances::DEFAULT.hermiticity,
            });
        }
        if let Some(s) = &scale {
            if s.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidInput("pair scale factors must be finite".into()));
            }
        }
        let (i, j, op) = if i < j {
            (i, j, op)
        } else {
            let local = TensorFactorSpec::new(2, bath_dim)?;
            (j, i, embed(&op, &[1, 0, 2], &local)?)
        };
        let norm = sup_norm(&op)?;
        Ok(PairTerm { i, j, op, scale, norm })
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn scale_at(&self, step: usize) -> f64 {
        self.scale.as_ref().map_or(1.0, |s| s[step])
    }

    pub fn touches(&self, qubit: usize) -> bool {
        self.i == qubit || self.j == qubit
    }
}

/// Short-range coupling `H_{SB,a}` for one location, acting on the location's
/// qubits (ascending) ⊗ bath.
#[derive(Clone, Debug, PartialEq)]
pub struct LocationTerm {
    pub location: MacroLocation,
    pub op: Operator,
    norm: f64,
}

impl LocationTerm {
    pub fn new(location: MacroLocation, op: Operator) -> Result<Self> {
        if !op.is_hermitian(&Tolerances::DEFAULT) {
            return Err(Error::NotHermitian {
                defect: op.hermiticity_defect(),
                tolerance: Tolerances::DEFAULT.hermiticity,
            });
        }
        let norm = sup_norm(&op)?;
        Ok(LocationTerm { location, op, norm })
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }
}

/// A gate location at one time step. `support` is kept sorted.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MacroLocation {
    pub step: usize,
    pub support: Vec<usize>,
}

impl MacroLocation {
    pub fn new(step: usize, mut support: Vec<usize>) -> Self {
        support.sort_unstable();
        MacroLocation { step, support }
    }

    pub fn single(step: usize, qubit: usize) -> Self {
        MacroLocation {
            step,
            support: vec![qubit],
        }
    }

    pub fn pair(step: usize, a: usize, b: usize) -> Self {
        Self::new(step, vec![a, b])
    }

    pub fn is_two_qubit(&self) -> bool {
        self.support.len() == 2
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SystemBathModel {
    pub spec: TensorFactorSpec,
    pub schedule: GateSchedule,
    pub h_bath: Operator,
    pub mode: NoiseMode,
    pub pair_terms: Vec<PairTerm>,
    pub location_terms: Vec<LocationTerm>,
}

impl SystemBathModel {
    /// Validates and canonicalizes a model. Idle qubits get identity gates,
    /// gates within a step are ordered by their smallest qubit, pair terms
    /// lexicographically by `(i, j)`, location terms by location.
    pub fn new(
        spec: TensorFactorSpec,
        t0: f64,
        steps: Vec<Vec<Gate>>,
        h_bath: Operator,
        mode: NoiseMode,
        mut pair_terms: Vec<PairTerm>,
        mut location_terms: Vec<LocationTerm>,
    ) -> Result<Self> {
        let n = spec.system_qubits;
        if n == 0 {
            return Err(Error::schema("n_qubits", "must be at least 1"));
        }
        if spec.total_dim() > MAX_TOTAL_DIM {
            return Err(Error::ResourceGuard(format!(
                "joint dimension {} exceeds {MAX_TOTAL_DIM}",
                spec.total_dim()
            )));
        }
        if !(t0.is_finite() && t0 > 0.0) {
            return Err(Error::schema("t0", "must be a positive finite number"));
        }
        if steps.is_empty() {
            return Err(Error::schema("steps", "at least one time step is required"));
        }
        if h_bath.dim() != spec.bath_dim {
            return Err(Error::schema(
                "bath_hamiltonian",
                format!("expected dimension {}, found {}", spec.bath_dim, h_bath.dim()),
            ));
        }
        if !h_bath.is_hermitian(&Tolerances::DEFAULT) {
            return Err(Error::schema("bath_hamiltonian", "matrix is not Hermitian"));
        }

        let n_steps = steps.len();
        let mut canonical_steps = Vec::with_capacity(n_steps);
        for (s, gates) in steps.into_iter().enumerate() {
            let mut owner: Vec<Option<usize>> = vec![None; n];
            for (g, gate) in gates.iter().enumerate() {
                for &q in &gate.support {
                    if q >= n {
                        return Err(Error::schema(
                            format!("steps[{s}][{g}].support"),
                            format!("qubit {q} out of range (n_qubits = {n})"),
                        ));
                    }
                    if let Some(prev) = owner[q] {
                        return Err(Error::schema(
                            format!("steps[{s}][{g}].support"),
                            format!("qubit {q} already used by gate {prev} in this step"),
                        ));
                    }
                    owner[q] = Some(g);
                }
            }
            let mut gates = gates;
            for (q, o) in owner.iter().enumerate() {
                if o.is_none() {
                    gates.push(Gate::identity(q));
                }
            }
            gates.sort_by_key(|g| *g.support.iter().min().unwrap());
            canonical_steps.push(gates);
        }
        let schedule = GateSchedule {
            t0,
            steps: canonical_steps,
        };

        match mode {
            NoiseMode::LongRange if !location_terms.is_empty() => {
                return Err(Error::schema(
                    "location_terms",
                    "per-location terms are only allowed in short_range mode",
                ))
            }
            NoiseMode::ShortRange if !pair_terms.is_empty() => {
                return Err(Error::schema(
                    "pair_terms",
                    "pair terms are only allowed in long_range mode",
                ))
            }
            _ => {}
        }

        for (k, p) in pair_terms.iter().enumerate() {
            if p.j >= n {
                return Err(Error::schema(
                    format!("pair_terms[{k}]"),
                    format!("qubit {} out of range (n_qubits = {n})", p.j),
                ));
            }
            if p.op.dim() != 4 * spec.bath_dim {
                return Err(Error::schema(
                    format!("pair_terms[{k}].matrix"),
                    format!("expected dimension {}, found {}", 4 * spec.bath_dim, p.op.dim()),
                ));
            }
            if let Some(sc) = &p.scale {
                if sc.len() != n_steps {
                    return Err(Error::schema(
                        format!("pair_terms[{k}].scale"),
                        format!("expected {n_steps} factors, found {}", sc.len()),
                    ));
                }
            }
            for (k2, q) in pair_terms[..k].iter().enumerate() {
                if (q.i, q.j) == (p.i, p.j) {
                    let msg = if q.op == p.op && q.scale == p.scale {
                        format!("duplicate registration of pair ({}, {}) (also pair_terms[{k2}])", p.i, p.j)
                    } else {
                        format!(
                            "asymmetric pair registration: ({}, {}) differs from pair_terms[{k2}]",
                            p.i, p.j
                        )
                    };
                    return Err(Error::schema(format!("pair_terms[{k}]"), msg));
                }
            }
        }
        pair_terms.sort_by_key(|p| (p.i, p.j));

        for (k, lt) in location_terms.iter().enumerate() {
            let loc = &lt.location;
            let gate = loc
                .step
                .lt(&n_steps)
                .then(|| {
                    schedule.steps[loc.step]
                        .iter()
                        .find(|g| g.sorted_support() == loc.support)
                })
                .flatten();
            let Some(gate) = gate else {
                return Err(Error::schema(
                    format!("location_terms[{k}]"),
                    format!("no gate location {:?} at step {}", loc.support, loc.step),
                ));
            };
            let expected = (1usize << gate.support.len()) * spec.bath_dim;
            if lt.op.dim() != expected {
                return Err(Error::schema(
                    format!("location_terms[{k}].matrix"),
                    format!("expected dimension {expected}, found {}", lt.op.dim()),
                ));
            }
            if location_terms[..k].iter().any(|o| o.location == *loc) {
                return Err(Error::schema(
                    format!("location_terms[{k}]"),
                    "location already has a coupling term",
                ));
            }
        }
        location_terms.sort_by(|a, b| a.location.cmp(&b.location));

        Ok(SystemBathModel {
            spec,
            schedule,
            h_bath,
            mode,
            pair_terms,
            location_terms,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.spec.system_qubits
    }

    pub fn n_steps(&self) -> usize {
        self.schedule.n_steps()
    }

    pub fn t0(&self) -> f64 {
        self.schedule.t0
    }

    /// Gates (locations) at a step, in canonical order.
    pub fn gates(&self, step: usize) -> &[Gate] {
        &self.schedule.steps[step]
    }

    /// Every macro-location in step-major canonical order.
    pub fn locations(&self) -> Vec<MacroLocation> {
        self.schedule
            .steps
            .iter()
            .enumerate()
            .flat_map(|(s, gates)| gates.iter().map(move |g| MacroLocation::new(s, g.support.clone())))
            .collect()
    }

    /// Index of the gate occupying `loc` within its step.
    pub fn gate_index(&self, loc: &MacroLocation) -> Option<usize> {
        let gates = self.schedule.steps.get(loc.step)?;
        gates.iter().position(|g| g.sorted_support() == loc.support)
    }

    /// Index of the gate that holds `qubit` at `step`.
    pub fn gate_of_qubit(&self, step: usize, qubit: usize) -> usize {
        self.schedule.steps[step]
            .iter()
            .position(|g| g.support.contains(&qubit))
            .expect("every qubit occupies a location each step")
    }

    /// `H_S` at a step, embedded in the joint space.
    pub fn system_hamiltonian(&self, step: usize) -> Result<Operator> {
        let mut h = Operator::zeros(self.spec.total_dim());
        for g in &self.schedule.steps[step] {
            if g.kind == GateKind::Identity {
                continue;
            }
            h = &h + &embed(&g.generator, &g.support, &self.spec)?;
        }
        Ok(h)
    }

    pub fn bath_hamiltonian(&self) -> Result<Operator> {
        embed(&self.h_bath, &[self.spec.bath_index()], &self.spec)
    }

    /// `max_i Σ_j ||H_ij|| · t0` over qubits and steps.
    pub fn eta(&self) -> Result<f64> {
        self.require(NoiseMode::LongRange)?;
        let mut worst = 0.0f64;
        for s in 0..self.n_steps() {
            for q in 0..self.n_qubits() {
                worst = worst.max(self.qubit_row_sum(q, s));
            }
        }
        Ok(worst * self.t0())
    }

    /// `Σ_j ||H_qj|| · |scale_s|` (without `t0`).
    pub fn qubit_row_sum(&self, qubit: usize, step: usize) -> f64 {
        self.pair_terms
            .iter()
            .filter(|p| p.touches(qubit))
            .map(|p| p.norm * p.scale_at(step).abs())
            .sum()
    }

    /// `max_a ||H_{SB,a}|| · t0`.
    pub fn epsilon_short(&self) -> Result<f64> {
        self.require(NoiseMode::ShortRange)?;
        Ok(self
            .location_terms
            .iter()
            .fold(0.0f64, |m, t| m.max(t.norm))
            * self.t0())
    }

    fn require(&self, mode: NoiseMode) -> Result<()> {
        if self.mode != mode {
            return Err(Error::ModeMismatch {
                expected: mode.name(),
                found: self.mode.name(),
            });
        }
        Ok(())
    }

    /// Copy with every noise term multiplied by `c`.
    pub fn with_noise_scaled(&self, c: f64) -> Self {
        let mut m = self.clone();
        for p in &mut m.pair_terms {
            p.op = p.op.scale(c);
            p.norm = sup_norm(&p.op).unwrap_or(0.0);
        }
        for t in &mut m.location_terms {
            t.op = t.op.scale(c);
            t.norm = sup_norm(&t.op).unwrap_or(0.0);
        }
        m
    }
}

// ---------------------------------------------------------------------------
// JSON documents

/// Complex matrix: flat row-major list of `[re, im]` pairs, or nested rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixDoc {
    Flat(Vec<[f64; 2]>),
    Rows(Vec<Vec<[f64; 2]>>),
}

impl MatrixDoc {
    pub fn from_operator(op: &Operator) -> Self {
        MatrixDoc::Flat(op.row_major().iter().map(|z| [z.re, z.im]).collect())
    }

    fn to_operator(&self, path: &str) -> Result<Operator> {
        let flat: Vec<[f64; 2]> = match self {
            MatrixDoc::Flat(v) => v.clone(),
            MatrixDoc::Rows(rows) => {
                let d = rows.len();
                if let Some((r, row)) = rows.iter().enumerate().find(|(_, row)| row.len() != d) {
                    return Err(Error::schema(
                        format!("{path}[{r}]"),
                        format!("row has {} entries, expected {d}", row.len()),
                    ));
                }
                rows.iter().flatten().copied().collect()
            }
        };
        let dim = (flat.len() as f64).sqrt().round() as usize;
        if dim == 0 || dim * dim != flat.len() {
            return Err(Error::schema(
                path,
                format!("{} entries do not form a square matrix", flat.len()),
            ));
        }
        let entries: Vec<C64> = flat.iter().map(|[re, im]| C64::new(*re, *im)).collect();
        Operator::from_row_major(dim, &entries).map_err(|e| Error::schema(path, e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateDoc {
    pub kind: GateKind,
    pub support: Vec<usize>,
    #[serde(default)]
    pub params: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<MatrixDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BathDoc {
    Seeded {
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        norm: Option<f64>,
    },
    Dense(MatrixDoc),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetDoc {
    pub name: String,
    pub strength: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairTermDoc {
    pub i: usize,
    pub j: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<MatrixDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<PresetDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocationTermDoc {
    pub step: usize,
    pub support: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<MatrixDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<PresetDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDoc {
    pub n_qubits: usize,
    pub bath_dim: usize,
    pub t0: f64,
    pub steps: Vec<Vec<GateDoc>>,
    pub bath_hamiltonian: BathDoc,
    #[serde(default)]
    pub pair_terms: Vec<PairTermDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub location_terms: Vec<LocationTermDoc>,
    pub mode: NoiseMode,
}

/// Resolves a named coupling preset on `qubits` qubits ⊗ bath.
fn preset_operator(p: &PresetDoc, qubits: usize, bath_dim: usize, path: &str) -> Result<Operator> {
    if !(p.strength.is_finite() && p.strength >= 0.0) {
        return Err(Error::schema(
            format!("{path}.strength"),
            "must be a non-negative finite number",
        ));
    }
    let tensor = |pl: Operator| {
        let mut op = pl.clone();
        for _ in 1..qubits {
            op = op.kron(&pl);
        }
        op.kron(&Operator::identity(bath_dim)).scale(p.strength)
    };
    match p.name.as_str() {
        "xx" | "x" => Ok(tensor(pauli::x())),
        "yy" | "y" => Ok(tensor(pauli::y())),
        "zz" | "z" => Ok(tensor(pauli::z())),
        "random" => {
            let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
            Ok(random_hermitian((1usize << qubits) * bath_dim, p.strength, &mut rng))
        }
        other => Err(Error::schema(
            format!("{path}.name"),
            format!("unknown preset {other:?} (expected xx, yy, zz or random)"),
        )),
    }
}

fn term_operator(
    matrix: &Option<MatrixDoc>,
    preset: &Option<PresetDoc>,
    qubits: usize,
    bath_dim: usize,
    path: &str,
) -> Result<Operator> {
    match (matrix, preset) {
        (Some(m), None) => m.to_operator(&format!("{path}.matrix")),
        (None, Some(p)) => preset_operator(p, qubits, bath_dim, &format!("{path}.preset")),
        _ => Err(Error::schema(path, "exactly one of `matrix` or `preset` is required")),
    }
}

fn with_path<T>(r: Result<T>, path: &str) -> Result<T> {
    r.map_err(|e| match e {
        Error::Schema { .. } | Error::ResourceGuard(_) => e,
        other => Error::schema(path, other.to_string()),
    })
}

impl ModelDoc {
    pub fn into_model(self) -> Result<SystemBathModel> {
        let spec = with_path(TensorFactorSpec::new(self.n_qubits, self.bath_dim), "bath_dim")?;
        if !(self.t0.is_finite() && self.t0 > 0.0) {
            return Err(Error::schema("t0", "must be a positive finite number"));
        }
        let mut steps = Vec::with_capacity(self.steps.len());
        for (s, gates) in self.steps.iter().enumerate() {
            let mut out = Vec::with_capacity(gates.len());
            for (g, gd) in gates.iter().enumerate() {
                let path = format!("steps[{s}][{g}]");
                let matrix = gd
                    .matrix
                    .as_ref()
                    .map(|m| m.to_operator(&format!("{path}.matrix")))
                    .transpose()?;
                let gate = with_path(
                    Gate::new(gd.kind, gd.support.clone(), gd.params.clone(), matrix, self.t0),
                    &path,
                )?;
                let mut sorted = gate.support.clone();
                sorted.dedup();
                if sorted.len() != gate.support.len() {
                    return Err(Error::schema(format!("{path}.support"), "repeated qubit"));
                }
                out.push(gate);
            }
            steps.push(out);
        }

        let h_bath = match &self.bath_hamiltonian {
            BathDoc::Seeded { seed, norm } => {
                let norm = norm.unwrap_or(1.0);
                if !(norm.is_finite() && norm >= 0.0) {
                    return Err(Error::schema("bath_hamiltonian.norm", "must be non-negative"));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                random_hermitian(self.bath_dim, norm, &mut rng)
            }
            BathDoc::Dense(m) => m.to_operator("bath_hamiltonian")?,
        };

        let mut pair_terms = Vec::with_capacity(self.pair_terms.len());
        for (k, pd) in self.pair_terms.iter().enumerate() {
            let path = format!("pair_terms[{k}]");
            for (name, q) in [("i", pd.i), ("j", pd.j)] {
                if q >= self.n_qubits {
                    return Err(Error::schema(
                        format!("{path}.{name}"),
                        format!("qubit {q} out of range (n_qubits = {})", self.n_qubits),
                    ));
                }
            }
            let op = term_operator(&pd.matrix, &pd.preset, 2, self.bath_dim, &path)?;
            pair_terms.push(with_path(
                PairTerm::new(pd.i, pd.j, op, pd.scale.clone(), self.bath_dim),
                &path,
            )?);
        }

        let mut location_terms = Vec::with_capacity(self.location_terms.len());
        for (k, ld) in self.location_terms.iter().enumerate() {
            let path = format!("location_terms[{k}]");
            let op = term_operator(&ld.matrix, &ld.preset, ld.support.len(), self.bath_dim, &path)?;
            location_terms.push(with_path(
                LocationTerm::new(MacroLocation::new(ld.step, ld.support.clone()), op),
                &path,
            )?);
        }

        SystemBathModel::new(spec, self.t0, steps, h_bath, self.mode, pair_terms, location_terms)
    }

    /// Fully resolved document: every matrix written out densely.
    pub fn from_model(model: &SystemBathModel) -> Self {
        let steps = model
            .schedule
            .steps
            .iter()
            .map(|gates| {
                gates
                    .iter()
                    .map(|g| GateDoc {
                        kind: g.kind,
                        support: g.support.clone(),
                        params: g.params.clone(),
                        matrix: (g.kind == GateKind::Generator).then(|| MatrixDoc::from_operator(&g.generator)),
                    })
                    .collect()
            })
            .collect();
        ModelDoc {
            n_qubits: model.n_qubits(),
            bath_dim: model.spec.bath_dim,
            t0: model.t0(),
            steps,
            bath_hamiltonian: BathDoc::Dense(MatrixDoc::from_operator(&model.h_bath)),
            pair_terms: model
                .pair_terms
                .iter()
                .map(|p| PairTermDoc {
                    i: p.i,
                    j: p.j,
                    matrix: Some(MatrixDoc::from_operator(&p.op)),
                    preset: None,
                    scale: p.scale.clone(),
                })
                .collect(),
            location_terms: model
                .location_terms
                .iter()
                .map(|t| LocationTermDoc {
                    step: t.location.step,
                    support: t.location.support.clone(),
                    matrix: Some(MatrixDoc::from_operator(&t.op)),
                    preset: None,
                })
                .collect(),
            mode: model.mode,
        }
    }
}

/// Parses and validates a model document.
pub fn load_model(document: &str) -> Result<SystemBathModel> {
    let doc: ModelDoc = serde_json::from_str(document).map_err(|e| {
        Error::schema(
            format!("line {} column {}", e.line(), e.column()),
            e.to_string(),
        )
    })?;
    doc.into_model()
}

pub fn save_model(model: &SystemBathModel) -> String {
    serde_json::to_string_pretty(&ModelDoc::from_model(model)).expect("model documents always serialize")
}

// ---------------------------------------------------------------------------
// Generators

/// Parameters for a seeded random model.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomModelConfig {
    pub n_qubits: usize,
    pub bath_dim: usize,
    pub n_steps: usize,
    /// Target value of η (long-range) or ε (short-range).
    pub strength: f64,
    pub two_qubit_gates: bool,
    pub seed: u64,
}

fn random_schedule(cfg: &RandomModelConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<Gate>>> {
    let mut steps = Vec::with_capacity(cfg.n_steps);
    for _ in 0..cfg.n_steps {
        let mut gates = Vec::new();
        let mut used = vec![false; cfg.n_qubits];
        if cfg.two_qubit_gates && cfg.n_qubits >= 2 && rng.random_bool(0.5) {
            let a = rng.random_range(0..cfg.n_qubits);
            let mut b = rng.random_range(0..cfg.n_qubits - 1);
            if b >= a {
                b += 1;
            }
            let kind = if rng.random_bool(0.5) { GateKind::Cz } else { GateKind::Cnot };
            gates.push(Gate::new(kind, vec![a, b], vec![], None, 1.0)?);
            used[a] = true;
            used[b] = true;
        }
        for (q, &taken) in used.iter().enumerate() {
            if taken {
                continue;
            }
            let kind = [GateKind::Rx, GateKind::Ry, GateKind::Rz, GateKind::Identity][rng.random_range(0..4)];
            let params = if kind == GateKind::Identity {
                vec![]
            } else {
                vec![rng.random_range(-PI..PI)]
            };
            gates.push(Gate::new(kind, vec![q], params, None, 1.0)?);
        }
        steps.push(gates);
    }
    Ok(steps)
}

/// Random long-range model with every pair coupled and η equal to `strength`.
pub fn random_long_range(cfg: &RandomModelConfig) -> Result<SystemBathModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let spec = TensorFactorSpec::new(cfg.n_qubits, cfg.bath_dim)?;
    let steps = random_schedule(cfg, &mut rng)?;
    let h_bath = random_hermitian(cfg.bath_dim, 1.0, &mut rng);
    let mut pairs = Vec::new();
    for i in 0..cfg.n_qubits {
        for j in i + 1..cfg.n_qubits {
            let strength = rng.random_range(0.2..1.0);
            let op = random_hermitian(4 * cfg.bath_dim, strength, &mut rng);
            pairs.push(PairTerm::new(i, j, op, None, cfg.bath_dim)?);
        }
    }
    let model = SystemBathModel::new(spec, 1.0, steps, h_bath, NoiseMode::LongRange, pairs, vec![])?;
    let eta = model.eta()?;
    if eta == 0.0 {
        return Ok(model);
    }
    Ok(model.with_noise_scaled(cfg.strength / eta))
}

/// Random short-range model with a coupling on every location and ε equal
/// to `strength`.
pub fn random_short_range(cfg: &RandomModelConfig) -> Result<SystemBathModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let spec = TensorFactorSpec::new(cfg.n_qubits, cfg.bath_dim)?;
    let steps = random_schedule(cfg, &mut rng)?;
    let h_bath = random_hermitian(cfg.bath_dim, 1.0, &mut rng);
    let skeleton = SystemBathModel::new(
        spec,
        1.0,
        steps.clone(),
        h_bath.clone(),
        NoiseMode::ShortRange,
        vec![],
        vec![],
    )?;
    let mut terms = Vec::new();
    for loc in skeleton.locations() {
        let dim = (1usize << loc.support.len()) * cfg.bath_dim;
        let strength = rng.random_range(0.2..1.0);
        terms.push(LocationTerm::new(loc, random_hermitian(dim, strength, &mut rng))?);
    }
    let model = SystemBathModel::new(spec, 1.0, steps, h_bath, NoiseMode::ShortRange, vec![], terms)?;
    let eps = model.epsilon_short()?;
    if eps == 0.0 {
        return Ok(model);
    }
    Ok(model.with_noise_scaled(cfg.strength / eps))
}

/// One-dimensional chain of `n` idle qubits (no bath) with couplings
/// `||H_ij|| = delta / |i-j|^z`, realized as `X⊗X` terms.
pub fn decaying_chain(n: usize, delta: f64, z: f64, t0: f64) -> Result<SystemBathModel> {
    let spec = TensorFactorSpec::new(n, 1)?;
    let xx = pauli::x().kron(&pauli::x());
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let strength = delta / ((j - i) as f64).powf(z);
            pairs.push(PairTerm::new(i, j, xx.scale(strength), None, 1)?);
        }
    }
    SystemBathModel::new(
        spec,
        t0,
        vec![vec![]],
        Operator::zeros(1),
        NoiseMode::LongRange,
        pairs,
        vec![],
    )
}

/// Two qubits, no bath, one idle step, single coupling `g·X⊗X` on (0, 1).
pub fn xx_pair(g: f64, t0: f64) -> Result<SystemBathModel> {
    let spec = TensorFactorSpec::new(2, 1)?;
    let xx = pauli::x().kron(&pauli::x()).scale(g);
    SystemBathModel::new(
        spec,
        t0,
        vec![vec![]],
        Operator::zeros(1),
        NoiseMode::LongRange,
        vec![PairTerm::new(0, 1, xx, None, 1)?],
        vec![],
    )
}

/// Builds the `(i, j) -> ||H_ij||·|scale|` rows used by many-body η checks.
pub fn pair_norm_table(model: &SystemBathModel) -> Vec<(Vec<usize>, Vec<f64>)> {
    model
        .pair_terms
        .iter()
        .map(|p| {
            let per_step = (0..model.n_steps()).map(|s| p.norm * p.scale_at(s).abs()).collect();
            (vec![p.i, p.j], per_step)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::opcore::expm;
    use approx::assert_relative_eq;

    fn minimal_doc() -> &'static str {
        r#"{
            "n_qubits": 1, "bath_dim": 1, "t0": 1.0,
            "steps": [[]],
            "bath_hamiltonian": [[0.0, 0.0]],
            "pair_terms": [],
            "mode": "long_range"
        }"#
    }

    #[test]
    fn minimal_document_is_noiseless() {
        let m = load_model(minimal_doc()).unwrap();
        assert_eq!(m.n_qubits(), 1);
        assert_eq!(m.gates(0).len(), 1);
        assert_eq!(m.gates(0)[0].kind, GateKind::Identity);
        assert_eq!(m.eta().unwrap(), 0.0);
    }

    #[test]
    fn overlapping_supports_rejected() {
        let doc = r#"{
            "n_qubits": 2, "bath_dim": 1, "t0": 1.0,
            "steps": [[{"kind": "x", "support": [0]}, {"kind": "cz", "support": [0, 1]}]],
            "bath_hamiltonian": {"seed": 1},
            "mode": "long_range"
        }"#;
        match load_model(doc) {
            Err(Error::Schema { path, .. }) => assert_eq!(path, "steps[0][1].support"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn asymmetric_pair_registration_rejected() {
        let doc = r#"{
            "n_qubits": 2, "bath_dim": 1, "t0": 1.0, "steps": [[]],
            "bath_hamiltonian": {"seed": 0},
            "pair_terms": [
                {"i": 0, "j": 1, "preset": {"name": "xx", "strength": 0.1}},
                {"i": 1, "j": 0, "preset": {"name": "zz", "strength": 0.1}}
            ],
            "mode": "long_range"
        }"#;
        let err = load_model(doc).unwrap_err();
        assert!(err.to_string().contains("asymmetric"), "{err}");
        assert!(err.to_string().contains("pair_terms[1]"), "{err}");
    }

    #[test]
    fn reversed_pair_is_reordered() {
        let spec_bath = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_hermitian(2, 1.0, &mut rng);
        let b = random_hermitian(2, 1.0, &mut rng);
        let c = random_hermitian(2, 1.0, &mut rng);
        // op on q1 ⊗ q0 ⊗ bath registered as (1, 0).
        let op = a.kron(&b).kron(&c);
        let p = PairTerm::new(1, 0, op, None, spec_bath).unwrap();
        assert_eq!((p.i, p.j), (0, 1));
        let expected = b.kron(&a).kron(&c);
        assert!(sup_norm(&(&p.op - &expected)).unwrap() < 1e-15);
    }

    #[test]
    fn eta_single_term() {
        let m = xx_pair(0.3, 1.0).unwrap();
        assert_relative_eq!(m.eta().unwrap(), 0.3, epsilon = 1e-15);
        assert!(matches!(m.epsilon_short(), Err(Error::ModeMismatch { .. })));
    }

    #[test]
    fn eta_chain_matches_direct_summation() {
        let delta = 0.01;
        let m = decaying_chain(5, delta, 2.0, 1.0).unwrap();
        // Direct oracle: row sums over all pairs.
        let mut best = 0.0f64;
        for i in 0..5i32 {
            let row: f64 = (0..5i32)
                .filter(|&j| j != i)
                .map(|j| delta / ((i - j).abs() as f64).powi(2))
                .sum();
            best = best.max(row);
        }
        // Center qubit: 2·(1 + 1/4).
        assert_relative_eq!(best, delta * 2.5, max_relative = 1e-14);
        assert_relative_eq!(m.eta().unwrap(), best, max_relative = 1e-12);
    }

    #[test]
    fn eta_uses_per_step_scale() {
        let doc = r#"{
            "n_qubits": 2, "bath_dim": 1, "t0": 2.0, "steps": [[], []],
            "bath_hamiltonian": {"seed": 0},
            "pair_terms": [{"i": 0, "j": 1, "preset": {"name": "xx", "strength": 0.1}, "scale": [0.5, 3.0]}],
            "mode": "long_range"
        }"#;
        let m = load_model(doc).unwrap();
        assert_relative_eq!(m.eta().unwrap(), 0.1 * 3.0 * 2.0, max_relative = 1e-14);
    }

    #[test]
    fn epsilon_short_is_max_location_norm() {
        let cfg = RandomModelConfig {
            n_qubits: 3,
            bath_dim: 2,
            n_steps: 2,
            strength: 0.2,
            two_qubit_gates: false,
            seed: 8,
        };
        let m = random_short_range(&cfg).unwrap();
        assert_eq!(m.location_terms.len(), 6);
        let oracle = m
            .location_terms
            .iter()
            .map(|t| sup_norm(&t.op).unwrap())
            .fold(0.0f64, f64::max);
        assert_relative_eq!(m.epsilon_short().unwrap(), oracle, max_relative = 1e-12);
        assert_relative_eq!(oracle, 0.2, max_relative = 1e-10);
        assert!(matches!(m.eta(), Err(Error::ModeMismatch { .. })));
    }

    #[test]
    fn epsilon_short_zero_terms() {
        let doc = r#"{
            "n_qubits": 1, "bath_dim": 1, "t0": 1.0, "steps": [[]],
            "bath_hamiltonian": {"seed": 0},
            "location_terms": [{"step": 0, "support": [0], "preset": {"name": "x", "strength": 0.0}}],
            "mode": "short_range"
        }"#;
        assert_eq!(load_model(doc).unwrap().epsilon_short().unwrap(), 0.0);
    }

    #[test]
    fn mode_exclusivity() {
        let doc = r#"{
            "n_qubits": 2, "bath_dim": 1, "t0": 1.0, "steps": [[]],
            "bath_hamiltonian": {"seed": 0},
            "pair_terms": [{"i": 0, "j": 1, "preset": {"name": "xx", "strength": 0.1}}],
            "mode": "short_range"
        }"#;
        let err = load_model(doc).unwrap_err();
        assert!(matches!(err, Error::Schema { ref path, .. } if path == "pair_terms"));
    }

    #[test]
    fn unknown_field_reports_location() {
        let doc = r#"{"n_qubits": 1, "bath_dim": 1, "t0": 1.0, "steps": [[]],
            "bath_hamiltonian": {"seed": 0}, "mode": "long_range", "bogus": 1}"#;
        let err = load_model(doc).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn named_gate_generators_reproduce_gates() {
        let t0 = 1.7;
        let cases: Vec<(GateKind, Vec<usize>, Operator)> = vec![
            (GateKind::X, vec![0], pauli::x()),
            (GateKind::Z, vec![0], pauli::z()),
            (
                GateKind::H,
                vec![0],
                (&pauli::x() + &pauli::z()).scale(std::f64::consts::FRAC_1_SQRT_2),
            ),
            (
                GateKind::Cnot,
                vec![0, 1],
                Operator::from_real_rows(&[
                    &[1.0, 0.0, 0.0, 0.0],
                    &[0.0, 1.0, 0.0, 0.0],
                    &[0.0, 0.0, 0.0, 1.0],
                    &[0.0, 0.0, 1.0, 0.0],
                ])
                .unwrap(),
            ),
            (
                GateKind::Cz,
                vec![0, 1],
                Operator::from_real_rows(&[
                    &[1.0, 0.0, 0.0, 0.0],
                    &[0.0, 1.0, 0.0, 0.0],
                    &[0.0, 0.0, 1.0, 0.0],
                    &[0.0, 0.0, 0.0, -1.0],
                ])
                .unwrap(),
            ),
        ];
        for (kind, support, target) in cases {
            let g = Gate::new(kind, support, vec![], None, t0).unwrap();
            let u = expm(&g.generator, t0).unwrap();
            assert!(sup_norm(&(&u - &target)).unwrap() < 1e-12, "{kind:?}");
        }
    }

    #[test]
    fn save_load_round_trip_random() {
        for seed in 0..5 {
            let cfg = RandomModelConfig {
                n_qubits: 3,
                bath_dim: 2,
                n_steps: 3,
                strength: 0.04,
                two_qubit_gates: true,
                seed,
            };
            let m = random_long_range(&cfg).unwrap();
            let back = load_model(&save_model(&m)).unwrap();
            assert_eq!(back, m);
            let s = random_short_range(&cfg).unwrap();
            assert_eq!(load_model(&save_model(&s)).unwrap(), s);
        }
    }

    #[test]
    fn nested_rows_matrix_accepted() {
        let doc = r#"{
            "n_qubits": 1, "bath_dim": 2, "t0": 1.0, "steps": [[]],
            "bath_hamiltonian": [[[1.0, 0.0], [0.0, 0.5]], [[0.0, -0.5], [-1.0, 0.0]]],
            "mode": "long_range"
        }"#;
        let m = load_model(doc).unwrap();
        assert_eq!(m.h_bath.entry(0, 1), C64::new(0.0, 0.5));
    }
}

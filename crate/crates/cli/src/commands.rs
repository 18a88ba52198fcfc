use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use faultpath_core::decay::{self, LatticeSpec, Metric, ScanRow, SumOptions, Verdict};
use faultpath_core::faultpath::{enumerate_fault_sets, randomized_phase_norm, verify_bound, BoundReport};
use faultpath_core::model::{random_long_range, random_short_range, RandomModelConfig};
use faultpath_core::threshold::{self, GadgetParams};
use faultpath_core::{load_model, DeltaPolicy, FaultPathOracle, FaultSet, MicroGrid, ReportLine, SystemBathModel};
use log::{debug, info};
use rayon::prelude::*;
use serde::Serialize;

use crate::parse::{parse_delta_grid, parse_fault_spec, parse_list};
use crate::{DecayArgs, Failure, OracleArgs, Outcome, PhaseArgs, SweepArgs, ThresholdArgs, VerifyArgs};

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Config(format!("cannot create {}: {e}", path.display())))
}

fn io(e: impl std::fmt::Display) -> Failure {
    Failure::Other(format!("write failed: {e}"))
}

fn write_json_line<T: Serialize>(w: &mut impl Write, value: &T) -> Result<(), Failure> {
    serde_json::to_writer(&mut *w, value).map_err(io)?;
    w.write_all(b"\n").map_err(io)
}

fn read_model(path: &Path) -> Result<SystemBathModel, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read model {}: {e}", path.display())))?;
    let model = load_model(&text).map_err(Failure::from_model)?;
    info!(
        "loaded model: {} qubits, {} steps, {:?} noise",
        model.n_qubits(),
        model.n_steps(),
        model.mode
    );
    Ok(model)
}

fn policy(args: &OracleArgs) -> Result<(DeltaPolicy, f64), Failure> {
    if !(args.bound_factor.is_finite() && args.bound_factor > 0.0) {
        return Err(Failure::Config(format!("--bound-factor must be positive, got {}", args.bound_factor)));
    }
    let (m_start, m_max) = parse_delta_grid(&args.delta_grid)?;
    let p = DeltaPolicy {
        m_start,
        m_max,
        tolerance: args.delta_tolerance,
    };
    p.validate().map_err(Failure::from_config)?;
    Ok((p, args.bound_factor))
}

fn metric(name: &str) -> Result<Metric, Failure> {
    name.parse().map_err(Failure::from_config)
}

/// Fault sets named on the command line, or every set up to `max_r`.
fn fault_sets(model: &SystemBathModel, specs: &[String], max_r: usize) -> Result<Vec<FaultSet>, Failure> {
    if specs.is_empty() {
        if max_r > faultpath_core::MAX_FAULTS {
            return Err(Failure::Guard(format!(
                "--max-r {max_r} exceeds the limit of {} faults",
                faultpath_core::MAX_FAULTS
            )));
        }
        return Ok(enumerate_fault_sets(model, max_r));
    }
    specs
        .iter()
        .map(|s| FaultSet::new(model, parse_fault_spec(s)?).map_err(Failure::from_config))
        .collect()
}

fn verify_all(model: &SystemBathModel, sets: &[FaultSet], (policy, factor): &(DeltaPolicy, f64)) -> Result<Vec<BoundReport>, Failure> {
    let oracle = FaultPathOracle::new(model).map_err(Failure::from_run)?;
    sets.par_iter()
        .map(|f| {
            let r = verify_bound(&oracle, f, policy).map_err(Failure::from_run)?.with_bound_factor(*factor);
            debug!("{:?}: measured {:e}, bound {:e}", f.locations(), r.measured_norm, r.analytic_bound);
            Ok(r)
        })
        .collect()
}

#[derive(Default)]
struct Tally {
    cases: usize,
    violations: usize,
    max_margin: f64,
}

impl Tally {
    fn add(&mut self, r: &BoundReport) {
        self.cases += 1;
        if r.violated() {
            self.violations += 1;
        }
        self.max_margin = self.max_margin.max(r.margin);
    }

    fn finish(&self, what: &str) -> Outcome {
        println!(
            "{what}: {} cases, max margin {:.6e}, {} violations",
            self.cases, self.max_margin, self.violations
        );
        if self.violations > 0 {
            Err(Failure::Violation(format!("{} bound violations", self.violations)))
        } else {
            Ok(())
        }
    }
}

pub fn verify_bounds(args: &VerifyArgs) -> Outcome {
    let policy = policy(&args.oracle)?;
    let model = read_model(&args.model)?;
    let sets = fault_sets(&model, &args.faults, args.max_r)?;
    info!("verifying {} fault sets", sets.len());
    let reports = verify_all(&model, &sets, &policy)?;
    let mut out = create(&args.out)?;
    let mut tally = Tally::default();
    for r in &reports {
        write_json_line(&mut out, &r.to_line())?;
        tally.add(r);
    }
    out.flush().map_err(io)?;
    tally.finish("verify-bounds")
}

#[derive(Serialize)]
struct ThresholdReport {
    #[serde(flatten)]
    trace: threshold::RecursionTrace,
    /// Largest decay amplitude whose lattice sum stays within the budget.
    delta_budget: Option<f64>,
}

pub fn threshold(args: &ThresholdArgs) -> Outcome {
    let base = threshold::preset(&args.preset).map_err(Failure::from_config)?;
    let params = GadgetParams::new(
        args.a.unwrap_or(base.a),
        args.t.unwrap_or(base.t),
        args.c.unwrap_or(base.c),
    )
    .map_err(Failure::from_config)?;
    let eps0 = threshold::epsilon_threshold(&params).map_err(Failure::from_run)?;
    let epsilon = args.epsilon.unwrap_or(eps0);
    let trace = threshold::recursion_trace(&params, epsilon, args.max_level, args.circuit_size).map_err(Failure::from_run)?;
    let delta_budget = match (args.decay_dim, args.decay_z) {
        (Some(d), Some(z)) => {
            let lattice = LatticeSpec::unbounded(d, z, 1.0, metric(&args.metric)?).map_err(Failure::from_config)?;
            match threshold::delta_budget(eps0, &lattice, args.t0, &SumOptions::default()) {
                Ok(v) => Some(v),
                Err(faultpath_core::Error::Divergent { .. }) => None,
                Err(e) => return Err(Failure::from_run(e)),
            }
        }
        _ => None,
    };
    let report = ThresholdReport { trace, delta_budget };
    let mut out = create(&args.out)?;
    serde_json::to_writer_pretty(&mut out, &report).map_err(io)?;
    out.write_all(b"\n").map_err(io)?;
    out.flush().map_err(io)?;
    let t = &report.trace;
    println!("threshold: epsilon0 {:.6e}", t.epsilon0);
    println!(
        "threshold: eta budget {:.6e} (constant-free {:.6e})",
        t.eta_budget, t.eta_budget_constant_free
    );
    if let Some(last) = t.levels.last() {
        println!(
            "threshold: level {} epsilon {:.6e}{}",
            last.k,
            last.epsilon,
            if last.saturated { " (saturated)" } else { "" }
        );
    }
    match report.delta_budget {
        Some(d) => println!("threshold: delta budget {d:.6e}"),
        None if args.decay_dim.is_some() => println!("threshold: delta budget none (lattice sum diverges)"),
        None => {}
    }
    Ok(())
}

#[derive(Serialize)]
struct DecayRow {
    #[serde(rename = "D")]
    dim: u32,
    z: f64,
    delta: f64,
    #[serde(rename = "R")]
    radius: String,
    metric: &'static str,
    value: Option<f64>,
    tail_halfwidth: Option<f64>,
    verdict: &'static str,
    growth_law: Option<&'static str>,
    growth_coefficient: Option<f64>,
    growth_exponent: Option<f64>,
}

pub fn decay_sum(args: &DecayArgs) -> Outcome {
    let dims: Vec<u32> = parse_list(&args.dims)?;
    let zs: Vec<f64> = parse_list(&args.zs)?;
    let metric = metric(&args.metric)?;
    let options = SumOptions {
        rel_tol: args.rel_tol,
        max_sites: args.max_sites,
        ..SumOptions::default()
    };
    let mut rows = Vec::new();
    for &dim in &dims {
        for &z in &zs {
            let spec = LatticeSpec::new(dim, z, args.delta, args.radius, metric).map_err(Failure::from_config)?;
            let scan = match decay::lattice_sum(&spec, &options) {
                Ok(sum) => ScanRow {
                    dim,
                    z,
                    verdict: Verdict::Convergent,
                    sum: Some(sum),
                    growth: None,
                },
                Err(faultpath_core::Error::Divergent { .. }) => ScanRow {
                    dim,
                    z,
                    verdict: Verdict::Divergent,
                    sum: None,
                    growth: decay::fit_growth(dim, z, metric, args.fit_max_sites),
                },
                Err(e) => return Err(Failure::from_run(e)),
            };
            rows.push(DecayRow {
                dim,
                z,
                delta: args.delta,
                radius: args.radius.map_or("inf".to_string(), |r| r.to_string()),
                metric: metric.name(),
                value: scan.sum.map(|s| s.value),
                tail_halfwidth: scan.sum.map(|s| s.tail_halfwidth),
                verdict: scan.verdict.name(),
                growth_law: scan.growth.map(|g| match g.law {
                    decay::GrowthLaw::Logarithmic => "logarithmic",
                    decay::GrowthLaw::Power => "power",
                }),
                // The fit is for unit amplitude.
                growth_coefficient: scan.growth.map(|g| g.coefficient * args.delta),
                growth_exponent: scan.growth.map(|g| g.exponent),
            });
        }
    }
    let mut w = csv::Writer::from_writer(create(&args.out)?);
    for row in &rows {
        w.serialize(row).map_err(io)?;
    }
    w.flush().map_err(io)?;
    let divergent = rows.iter().filter(|r| r.verdict == "divergent").count();
    println!(
        "decay-sum: {} cells, {} convergent, {} divergent",
        rows.len(),
        rows.len() - divergent,
        divergent
    );
    Ok(())
}

#[derive(Serialize)]
struct SweepLine {
    seed: u64,
    strength: f64,
    #[serde(flatten)]
    report: ReportLine,
}

pub fn sweep(args: &SweepArgs, seed: u64) -> Outcome {
    let policy = policy(&args.oracle)?;
    let strengths: Vec<f64> = parse_list(&args.strengths)?;
    let long_range = match args.mode.as_str() {
        "long-range" => true,
        "short-range" => false,
        other => return Err(Failure::Config(format!("unknown mode {other:?}"))),
    };
    if args.max_r > faultpath_core::MAX_FAULTS {
        return Err(Failure::Guard(format!("--max-r {} exceeds {}", args.max_r, faultpath_core::MAX_FAULTS)));
    }
    // Declaration order: strengths outer, seeds inner.
    let cells: Vec<(f64, u64)> = strengths
        .iter()
        .flat_map(|&s| (0..args.models).map(move |i| (s, seed + i)))
        .collect();
    info!("sweep over {} cells", cells.len());
    let results: Vec<Result<Vec<BoundReport>, Failure>> = cells
        .par_iter()
        .map(|&(strength, seed)| {
            let cfg = RandomModelConfig {
                n_qubits: args.n_qubits,
                bath_dim: args.bath_dim,
                n_steps: args.n_steps,
                strength,
                two_qubit_gates: true,
                seed,
            };
            let model = if long_range {
                random_long_range(&cfg)
            } else {
                random_short_range(&cfg)
            }
            .map_err(Failure::from_config)?;
            let sets = enumerate_fault_sets(&model, args.max_r);
            verify_all(&model, &sets, &policy)
        })
        .collect();
    let mut out = create(&args.out)?;
    let mut tally = Tally::default();
    for (&(strength, seed), res) in cells.iter().zip(results) {
        for r in res? {
            write_json_line(
                &mut out,
                &SweepLine {
                    seed,
                    strength,
                    report: r.to_line(),
                },
            )?;
            tally.add(&r);
        }
    }
    out.flush().map_err(io)?;
    tally.finish("sweep")
}

#[derive(Serialize)]
struct PhaseReport {
    locations: Vec<faultpath_core::MacroLocation>,
    m: usize,
    seed: u64,
    #[serde(flatten)]
    stats: faultpath_core::faultpath::PhaseStats,
}

pub fn phase_experiment(args: &PhaseArgs, seed: u64) -> Outcome {
    let locations = parse_fault_spec(&args.faults)?;
    let model = read_model(&args.model)?;
    let faults = FaultSet::new(&model, locations).map_err(Failure::from_config)?;
    let grid = MicroGrid::for_model(&model, args.m).map_err(Failure::from_config)?;
    let oracle = FaultPathOracle::new(&model).map_err(Failure::from_run)?;
    let stats = randomized_phase_norm(&oracle, &grid, &faults, args.samples, seed).map_err(Failure::from_run)?;
    let report = PhaseReport {
        locations: faults.locations().to_vec(),
        m: args.m,
        seed,
        stats,
    };
    let mut out = create(&args.out)?;
    write_json_line(&mut out, &report)?;
    out.flush().map_err(io)?;
    println!(
        "phase-experiment: {} branches, {} samples, mean {:.6e}, coherent {:.6e}",
        report.stats.branches, report.stats.n_samples, report.stats.mean, report.stats.coherent
    );
    Ok(())
}

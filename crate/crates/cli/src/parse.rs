use faultpath_core::MacroLocation;

use crate::Failure;

/// Parses `step:q` / `step:q,q` entries separated by `;`.
pub fn parse_fault_spec(spec: &str) -> Result<Vec<MacroLocation>, Failure> {
    let bad = |why: &str| Failure::Config(format!("bad fault spec {spec:?}: {why}"));
    let mut out = Vec::new();
    for entry in spec.split(';').map(str::trim).filter(|e| !e.is_empty()) {
        let (step, qubits) = entry.split_once(':').ok_or_else(|| bad("expected step:qubit"))?;
        let step: usize = step.trim().parse().map_err(|_| bad("step is not an integer"))?;
        let support = qubits
            .split(',')
            .map(|q| q.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| bad("qubit is not an integer"))?;
        if support.is_empty() || support.len() > 2 {
            return Err(bad("a location has one or two qubits"));
        }
        out.push(MacroLocation::new(step, support));
    }
    Ok(out)
}

/// Parses `m0,mmax`.
pub fn parse_delta_grid(s: &str) -> Result<(usize, usize), Failure> {
    let v: Vec<usize> = parse_list(s)?;
    match v.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err(Failure::Config(format!("--delta-grid expects m0,mmax, got {s:?}"))),
    }
}

/// Parses a comma-separated list.
pub fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, Failure> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<T>()
                .map_err(|_| Failure::Config(format!("cannot parse {x:?} in list {s:?}")))
        })
        .collect()
}

use std::fs;
use std::path::Path;

use lcm::bounds::{BoundSet, Load};
use lcm::protocol::PatternOutcome;

use crate::Failure;

pub fn ratio(r: &Load) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

pub fn decimal(r: &Load) -> String {
    format!("{:.6}", *r.numer() as f64 / *r.denom() as f64)
}

fn io(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn writer(dir: &Path, name: &str) -> Result<(csv::Writer<fs::File>, std::path::PathBuf), Failure> {
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let path = dir.join(name);
    let w = csv::Writer::from_path(&path).map_err(|e| io(&path, e))?;
    Ok((w, path))
}

/// `pattern_id,client,c_up,c_up_decimal,c_down,c_down_decimal`
pub fn write_loads(dir: &Path, outcomes: &[PatternOutcome]) -> Result<(), Failure> {
    let (mut w, path) = writer(dir, "loads.csv")?;
    w.write_record(["pattern_id", "client", "c_up", "c_up_decimal", "c_down", "c_down_decimal"])
        .map_err(|e| io(&path, e))?;
    for o in outcomes {
        for (client, c_down) in o.client_c_down.iter().enumerate() {
            w.write_record([
                o.pattern_id.to_string(),
                client.to_string(),
                ratio(&o.c_up),
                decimal(&o.c_up),
                ratio(c_down),
                decimal(c_down),
            ])
            .map_err(|e| io(&path, e))?;
        }
    }
    w.flush().map_err(|e| io(&path, e))
}

const BOUND_HEADER: [&str; 10] = [
    "c_up_lower",
    "c_up_lower_decimal",
    "c_up_lcm",
    "c_up_lcm_decimal",
    "c_down_lower",
    "c_down_lower_decimal",
    "c_down_lcm",
    "c_down_lcm_decimal",
    "measured_worst_c_down",
    "measured_worst_c_down_decimal",
];

fn bound_fields(b: &BoundSet, worst: Option<&Load>) -> Vec<String> {
    let mut row = Vec::with_capacity(BOUND_HEADER.len());
    for r in [&b.c_up_lower, &b.c_up_lcm, &b.c_down_lower, &b.c_down_lcm] {
        row.push(ratio(r));
        row.push(decimal(r));
    }
    match worst {
        Some(r) => {
            row.push(ratio(r));
            row.push(decimal(r));
        }
        None => row.extend([String::new(), String::new()]),
    }
    row
}

/// One row; the measured columns are empty when nothing was simulated.
pub fn write_bounds(dir: &Path, bounds: &BoundSet, worst: Option<&Load>) -> Result<(), Failure> {
    let (mut w, path) = writer(dir, "bounds.csv")?;
    w.write_record(BOUND_HEADER).map_err(|e| io(&path, e))?;
    w.write_record(bound_fields(bounds, worst)).map_err(|e| io(&path, e))?;
    w.flush().map_err(|e| io(&path, e))
}

/// One row per swept value: `parameter,value,` then the bound columns.
/// Infeasible values keep their row with every load column empty.
pub fn write_sweep(dir: &Path, parameter: &str, rows: &[(usize, Option<(BoundSet, Load)>)]) -> Result<(), Failure> {
    let (mut w, path) = writer(dir, "sweep.csv")?;
    let mut header = vec!["parameter", "value"];
    header.extend(BOUND_HEADER);
    w.write_record(&header).map_err(|e| io(&path, e))?;
    for (value, result) in rows {
        let mut row = vec![parameter.to_string(), value.to_string()];
        match result {
            Some((b, worst)) => row.extend(bound_fields(b, Some(worst))),
            None => row.extend(std::iter::repeat_n(String::new(), BOUND_HEADER.len())),
        }
        w.write_record(&row).map_err(|e| io(&path, e))?;
    }
    w.flush().map_err(|e| io(&path, e))
}

//! Sample table: one CSV row per critical point, sorted by (base point, branch).

use std::io::Write;
use std::path::Path;

use crate::report::RunReport;
use crate::RunError;

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn header(n: usize, k: usize) -> Vec<String> {
    let mut h: Vec<String> = (1..=n).map(|i| format!("q_{i}")).collect();
    h.extend((1..=k).map(|i| format!("lambda_{i}")));
    h.extend((1..=n).map(|i| format!("f_{i}")));
    h.extend(["residual_norm", "branch_id", "rank"].map(String::from));
    h
}

pub fn write_samples<W: Write>(report: &RunReport, out: W) -> Result<(), RunError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(report.family.n, report.family.k))?;
    let mut rows: Vec<(usize, usize, Vec<String>)> = Vec::new();
    for bp in &report.base_points {
        for c in &bp.critical_points {
            let mut row: Vec<String> = c.q.iter().chain(&c.lambda).chain(&c.f).map(|x| fmt(*x)).collect();
            row.push(fmt(c.residual_norm));
            row.push(c.branch_id.to_string());
            row.push(c.rank.to_string());
            rows.push((bp.index, c.branch_id, row));
        }
    }
    rows.sort_by_key(|(i, b, _)| (*i, *b));
    for (_, _, row) in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_samples(report: &RunReport, path: &Path) -> Result<(), RunError> {
    let file = std::fs::File::create(path)
        .map_err(|e| RunError::Output(format!("cannot write samples {}: {e}", path.display())))?;
    write_samples(report, std::io::BufWriter::new(file))
}

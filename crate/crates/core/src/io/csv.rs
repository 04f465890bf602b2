//! Fixed-column CSV outputs. Floats use Rust's shortest round-trip formatting
//! so identical values always produce identical bytes.

use crate::encoder::train::HistoryRow;

pub const HISTORY_HEADER: &str = "step,lr,emd_ab,emd_ba,vec_ab,vec_ba,total";

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.step, r.lr, r.emd_ab, r.emd_ba, r.vec_ab, r.vec_ba, r.total
        ));
    }
    out
}

/// Parses [`history_csv`] output back into rows.
pub fn parse_history_csv(text: &str) -> Option<Vec<HistoryRow>> {
    let mut lines = text.lines();
    if lines.next()? != HISTORY_HEADER {
        return None;
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return None;
            }
            let num = |i: usize| f[i].parse::<f64>().ok();
            Some(HistoryRow {
                step: f[0].parse().ok()?,
                lr: num(1)?,
                emd_ab: num(2)?,
                emd_ba: num(3)?,
                vec_ab: num(4)?,
                vec_ba: num(5)?,
                total: num(6)?,
            })
        })
        .collect()
}

/// `height` lines of `width` comma-separated values.
pub fn grid_csv(values: &[f64], height: usize, width: usize) -> String {
    assert_eq!(values.len(), height * width);
    let mut out = String::new();
    for row in values.chunks_exact(width) {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_grid_csv(text: &str) -> Option<Vec<Vec<f64>>> {
    text.lines()
        .map(|l| l.split(',').map(|v| v.parse::<f64>().ok()).collect::<Option<Vec<_>>>())
        .collect()
}

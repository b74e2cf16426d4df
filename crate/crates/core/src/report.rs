//! Text output: metrics and energy CSVs, snapshot names.
//!
//! Numbers go through Rust's `Display`, which is locale independent and
//! prints the shortest string that reads back to the same value.

use std::fmt::Write as _;

use crate::harness::StepMetrics;

pub const METRICS_HEADER: &str =
    "step,imbalance,max_load,mean_load,particles_migrated,cost_migrated,perimeter,locality_max,solver_iters,field_energy";

pub const ENERGY_HEADER: &str = "step,field_energy,solver_iters,solver_residual,solver_converged";

/// One metrics row, without the newline.
pub fn metrics_row(m: &StepMetrics) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        m.step,
        m.imbalance,
        m.max_load(),
        m.mean_load(),
        m.particles_migrated,
        m.cost_migrated,
        m.perimeter,
        m.locality_max(),
        m.solver_iterations,
        m.field_energy
    )
}

pub fn energy_row(m: &StepMetrics) -> String {
    format!("{},{},{},{},{}", m.step, m.field_energy, m.solver_iterations, m.solver_residual, m.solver_converged)
}

/// The whole metrics CSV: header plus one row per step.
pub fn emit_metrics(series: &[StepMetrics]) -> String {
    emit(METRICS_HEADER, series, metrics_row)
}

pub fn emit_energy(series: &[StepMetrics]) -> String {
    emit(ENERGY_HEADER, series, energy_row)
}

fn emit(header: &str, series: &[StepMetrics], row: fn(&StepMetrics) -> String) -> String {
    let mut out = String::with_capacity(64 * (series.len() + 1));
    out.push_str(header);
    out.push('\n');
    for m in series {
        let _ = writeln!(out, "{}", row(m));
    }
    out
}

/// `partition_step0042.txt`; steps past 9999 just get more digits.
pub fn snapshot_name(step: usize) -> String {
    format!("partition_step{step:04}.txt")
}

/// Whether a snapshot is written after `step`. Step 0 is always
/// written; a period of 0 means only step 0.
pub fn snapshot_due(step: usize, period: usize) -> bool {
    step == 0 || (period > 0 && step.is_multiple_of(period))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(step: usize) -> StepMetrics {
        StepMetrics {
            step,
            loads: vec![3, 5],
            imbalance: 1.25,
            particles_migrated: 2,
            cost_migrated: 0.5,
            rebalanced: true,
            perimeter: 8,
            touched: vec![2, 4],
            locality: vec![0.25, 0.5],
            solver_iterations: 17,
            solver_residual: 1e-7,
            solver_converged: true,
            field_energy: 0.001,
        }
    }

    #[test]
    fn empty_series_is_header_only() {
        assert_eq!(emit_metrics(&[]), format!("{METRICS_HEADER}\n"));
        assert_eq!(emit_energy(&[]).lines().count(), 1);
    }

    #[test]
    fn row_layout() {
        assert_eq!(metrics_row(&sample(3)), "3,1.25,5,4,2,0.5,8,0.5,17,0.001");
        assert_eq!(energy_row(&sample(3)), "3,0.001,17,0.0000001,true");
        let csv = emit_metrics(&[sample(1), sample(2)]);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().all(|l| l.split(',').count() == 10));
    }

    #[test]
    fn snapshots() {
        assert_eq!(snapshot_name(0), "partition_step0000.txt");
        assert_eq!(snapshot_name(123), "partition_step0123.txt");
        assert_eq!(snapshot_name(12345), "partition_step12345.txt");
        assert!(snapshot_due(0, 0));
        assert!(!snapshot_due(50, 0));
        assert!(snapshot_due(50, 50) && !snapshot_due(49, 50));
    }
}

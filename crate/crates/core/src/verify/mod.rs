//! Reproducibility harness: gradient certification, the norm sweep over
//! stacked FC layers, the centring benchmark and the tape-size comparison.
//! Every report renders as CSV.

pub mod bench;
pub mod gradcheck;
pub mod norms;

pub use bench::{
    bn_bench, median_time, tape_ratio, tape_rows_csv, tape_size_bench, BenchMethod, BenchOptions,
    BenchReport, BenchRow, TapeRow, TapeSizeOptions,
};
pub use gradcheck::{gradcheck_all, GradReport, GradRow, GradcheckOptions};
pub use norms::{norm_sweep, norm_sweep_csv, NormRow, NormSweepOptions};

/// Shortest representation that parses back to the same value.
pub(crate) fn csv_f64(v: f64) -> String {
    format!("{v:?}")
}

#[cfg(test)]
mod tests;

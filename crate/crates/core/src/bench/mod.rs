//! The synthetic random-walk benchmark: task generator, cell runner, sweeps
//! and CSV output.

mod generator;
mod runner;

use std::io::{Read, Write};

use crate::error::Result;

pub use generator::{bayes_rate, generate, GeneratorConfig, Observations, Task, Trajectory};
pub use runner::{
    aggregate, build_stack, check_cell, run_cell, run_cell_with, run_sweep, AggregateRow, Applicability, BenchConfig,
    Cell, Method, PhiFamily, ResultRecord, SeedData, SideKind, StackConfig, Sweep, DEFAULT_N_TRAIN, NO_PROCEDURE,
};

/// Header of the raw results CSV.
pub const RAW_HEADER: &str =
    "side_info,pattern,procedure,n_train,seed,test_accuracy,main_loss,side_loss,wall_ms,failed";
/// Header of the aggregated CSV.
pub const AGGREGATE_HEADER: &str = "side_info,pattern,procedure,n_train,mean_accuracy,stderr,n_seeds";

fn write_rows<W: Write, T: serde::Serialize>(out: W, rows: &[T], header: &str) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header.split(','))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Floats use the shortest representation that parses back to the same bits.
pub fn write_raw_csv<W: Write>(out: W, rows: &[ResultRecord]) -> Result<()> {
    write_rows(out, rows, RAW_HEADER)
}

pub fn write_aggregate_csv<W: Write>(out: W, rows: &[AggregateRow]) -> Result<()> {
    write_rows(out, rows, AGGREGATE_HEADER)
}

pub fn read_raw_csv<R: Read>(input: R) -> Result<Vec<ResultRecord>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

pub fn read_aggregate_csv<R: Read>(input: R) -> Result<Vec<AggregateRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(acc: f64) -> ResultRecord {
        ResultRecord {
            side_info: "embedded".into(),
            pattern: "multi-view-corr".into(),
            procedure: "simultaneous".into(),
            n_train: 200,
            seed: u64::MAX,
            test_accuracy: acc,
            main_loss: 0.1 + 0.2,
            side_loss: f64::NAN,
            wall_ms: 12,
            failed: false,
        }
    }

    #[test]
    fn raw_csv_round_trips_every_bit() {
        let rows = vec![record(1.0 / 3.0), record(5e-324), record(0.9876543210123457)];
        let mut buf = Vec::new();
        write_raw_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), RAW_HEADER);
        let back = read_raw_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(a.test_accuracy.to_bits(), b.test_accuracy.to_bits());
            assert_eq!(a.main_loss.to_bits(), b.main_loss.to_bits());
            assert!(b.side_loss.is_nan());
            assert_eq!(a.seed, b.seed);
        }
    }

    #[test]
    fn aggregate_csv_has_the_documented_header() {
        let agg = aggregate(&[record(0.5), record(0.75)]);
        let mut buf = Vec::new();
        write_aggregate_csv(&mut buf, &agg).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), AGGREGATE_HEADER);
        assert_eq!(read_aggregate_csv(buf.as_slice()).unwrap(), agg);
    }
}

//! Metrics rows, their CSV file, and trailing moving averages.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METRICS_SCHEMA: &str = "osiwae.metrics.v1";

/// One row per cadence tick. Column order is fixed by field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub learner: String,
    pub seed: u64,
    /// Mean absolute error of the model block against the truth, on the
    /// natural scale.
    pub mae_model: f64,
    /// Squared error of the filter mean against the Kalman mean under the
    /// true parameters (LGSSM only).
    pub filter_mse: Option<f64>,
    pub ess: f64,
    pub wall_clock_ns: u64,
}

pub fn mean_absolute_error(estimate: &[f64], truth: &[f64]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    estimate.iter().zip(truth).map(|(a, b)| (a - b).abs()).sum::<f64>() / truth.len() as f64
}

/// Appends rows to a metrics file, writing the schema line and header when
/// the file is new.
pub struct MetricsWriter {
    inner: csv::Writer<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut file = File::create(path)?;
        writeln!(file, "# schema={METRICS_SCHEMA}")?;
        Ok(Self {
            inner: csv::WriterBuilder::new().has_headers(true).from_writer(file),
        })
    }

    pub fn append(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(Self {
            inner: csv::WriterBuilder::new().has_headers(false).from_writer(file),
        })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.inner.serialize(row)?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    if first.trim() != format!("# schema={METRICS_SCHEMA}") {
        return Err(Error::Stream(format!("unexpected metrics schema line {first:?}")));
    }
    csv::Reader::from_reader(reader)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// Trailing mean over `window` points; the first points average what is
/// available.
pub fn moving_average(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::Config("moving-average window must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(series.len());
    let mut sum = 0.0;
    for (i, v) in series.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= series[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    Ok(out)
}

/// A small plotting script written next to a metrics file.
pub fn plot_script(metrics_file: &str) -> String {
    format!(
        r##"import sys
import pandas as pd
import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "{metrics_file}"
df = pd.read_csv(path, comment="#")
fig, axes = plt.subplots(1, 2, figsize=(10, 4))
for learner, part in df.groupby("learner"):
    axes[0].plot(part["step"], part["mae_model"], label=learner)
    axes[1].plot(part["step"], part["ess"], label=learner)
axes[0].set_ylabel("parameter MAE")
axes[1].set_ylabel("ESS")
for ax in axes:
    ax.set_xlabel("step")
    ax.legend()
fig.tight_layout()
fig.savefig(path.rsplit(".", 1)[0] + ".png", dpi=120)
"##
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moving_average_examples() {
        assert_eq!(moving_average(&[2.0; 5], 3).unwrap(), vec![2.0; 5]);
        let s = [1.0, -4.0, 9.5];
        assert_eq!(moving_average(&s, 1).unwrap(), s.to_vec());
        assert_eq!(moving_average(&[1.0, 2.0, 3.0], 2).unwrap(), vec![1.0, 1.5, 2.5]);
        assert!(moving_average(&s, 0).is_err());
    }

    #[test]
    fn header_order_is_fixed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let mut w = MetricsWriter::create(&path).unwrap();
        let row = MetricsRow {
            step: 10,
            learner: "osiwae".into(),
            seed: 1,
            mae_model: 0.25,
            filter_mse: None,
            ess: 80.0,
            wall_clock_ns: 0,
        };
        w.write(&row).unwrap();
        w.flush().unwrap();
        drop(w);
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# schema=osiwae.metrics.v1"));
        assert_eq!(lines.next(), Some("step,learner,seed,mae_model,filter_mse,ess,wall_clock_ns"));
        assert_eq!(read_metrics(&path).unwrap(), vec![row]);
    }
}

//! Data simulation and the stream file format.
//!
//! A stream file starts with a schema line
//! `# schema=osiwae.stream.v1 dim_x=<dx> dim_y=<dy>` followed by CSV with
//! columns `t, y_0 .. y_{dy-1}, x_0 .. x_{dx-1}`. The latent columns are kept
//! for diagnostics and are never handed to a learner.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Dynamics, Observation};
use crate::rng::{Role, Streams};

pub const STREAM_SCHEMA: &str = "osiwae.stream.v1";

/// A simulated observation stream with the latent path that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub observations: Vec<Observation>,
    pub latent: Vec<Vec<f64>>,
}

impl Trace {
    pub fn values(&self) -> Vec<Vec<f64>> {
        self.observations.iter().map(|o| o.values.clone()).collect()
    }
}

/// Simulates `x_0 .. x_{T-1}` and `y_0 .. y_{T-1}` under the model block `theta`.
pub fn simulate(dynamics: &dyn Dynamics, theta: &[f64], horizon: usize, seed: u64) -> Result<Trace> {
    let streams = Streams::new(seed);
    let mut latent: Vec<Vec<f64>> = Vec::with_capacity(horizon);
    let mut observations = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let mut rx = streams.at(t as u64, Role::SimulateLatent);
        let x = match latent.last() {
            None => dynamics.sample_initial(&mut rx),
            Some(prev) => dynamics.sample_transition(theta, prev, t, &mut rx),
        };
        let mut ry = streams.at(t as u64, Role::SimulateObservation);
        let y = dynamics.sample_emission(theta, &x, t, &mut ry);
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("simulated trace"));
        }
        observations.push(Observation::new(y, t)?);
        latent.push(x);
    }
    Ok(Trace { observations, latent })
}

pub fn write_stream(path: &Path, trace: &Trace) -> Result<()> {
    let dx = trace.latent.first().map_or(0, Vec::len);
    let dy = trace.observations.first().map_or(0, |o| o.values.len());
    let mut file = File::create(path)?;
    writeln!(file, "# schema={STREAM_SCHEMA} dim_x={dx} dim_y={dy}")?;
    let mut w = csv::Writer::from_writer(file);
    let mut header = vec!["t".to_string()];
    header.extend((0..dy).map(|k| format!("y{k}")));
    header.extend((0..dx).map(|k| format!("x{k}")));
    w.write_record(&header)?;
    for (obs, x) in trace.observations.iter().zip(&trace.latent) {
        let mut row = vec![obs.time_index.to_string()];
        row.extend(obs.values.iter().map(|v| format!("{v:e}")));
        row.extend(x.iter().map(|v| format!("{v:e}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_header(line: &str) -> Result<(usize, usize)> {
    let mut schema = None;
    let (mut dx, mut dy) = (None, None);
    for token in line.trim_start_matches('#').split_whitespace() {
        match token.split_once('=') {
            Some(("schema", v)) => schema = Some(v.to_string()),
            Some(("dim_x", v)) => dx = v.parse().ok(),
            Some(("dim_y", v)) => dy = v.parse().ok(),
            _ => {}
        }
    }
    if schema.as_deref() != Some(STREAM_SCHEMA) {
        return Err(Error::Stream(format!("expected schema {STREAM_SCHEMA}, got {line:?}")));
    }
    match (dx, dy) {
        (Some(dx), Some(dy)) => Ok((dx, dy)),
        _ => Err(Error::Stream(format!("missing dimensions in {line:?}"))),
    }
}

pub fn read_stream(path: &Path) -> Result<Trace> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let (dx, dy) = parse_header(first.trim())?;
    let mut csv = csv::Reader::from_reader(reader);
    let mut trace = Trace {
        observations: Vec::new(),
        latent: Vec::new(),
    };
    for (row, record) in csv.records().enumerate() {
        let record = record?;
        if record.len() != 1 + dy + dx {
            return Err(Error::Stream(format!("row {row} has {} fields, expected {}", record.len(), 1 + dx + dy)));
        }
        let num = |s: &str| -> Result<f64> { s.trim().parse().map_err(|_| Error::Stream(format!("bad number {s:?} in row {row}"))) };
        let t: usize = record[0].trim().parse().map_err(|_| Error::Stream(format!("bad time index in row {row}")))?;
        if t != row {
            return Err(Error::Stream(format!("row {row} has time index {t}")));
        }
        let y = (1..1 + dy).map(|k| num(&record[k])).collect::<Result<Vec<_>>>()?;
        let x = (1 + dy..1 + dy + dx).map(|k| num(&record[k])).collect::<Result<Vec<_>>>()?;
        trace.observations.push(Observation::new(y, t)?);
        trace.latent.push(x);
    }
    Ok(trace)
}

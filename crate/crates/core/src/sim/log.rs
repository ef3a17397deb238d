use std::io::{Read, Write};

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use super::{ContactForce, SimError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogSample {
    pub t: f64,
    pub base: Vector3<f64>,
    pub base_vel: Vector3<f64>,
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub tau_cmd: DVector<f64>,
    /// After the actuator clamp.
    pub tau_applied: DVector<f64>,
    pub forces: Vec<ContactForce>,
    pub bus_voltage: f64,
}

impl LogSample {
    pub fn total_normal(&self) -> f64 {
        self.forces.iter().map(|f| f.normal).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RolloutLog {
    pub samples: Vec<LogSample>,
}

impl RolloutLog {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn last(&self) -> Option<&LogSample> {
        self.samples.last()
    }

    /// Highest torso height in the log.
    pub fn max_height(&self) -> f64 {
        self.samples.iter().map(|s| s.base.y).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    fn header(n_joints: usize, n_contacts: usize) -> Vec<String> {
        let mut h: Vec<String> = ["t", "x", "z", "pitch", "xd", "zd", "pitchd"].iter().map(|s| s.to_string()).collect();
        for prefix in ["q", "qd", "tau_cmd", "tau"] {
            h.extend((0..n_joints).map(|j| format!("{prefix}_{j}")));
        }
        for i in 0..n_contacts {
            h.push(format!("fn_{i}"));
            h.push(format!("ft_{i}"));
        }
        h.push("v_bus".into());
        h
    }
}

fn fmt(x: f64) -> String {
    format!("{x:.11e}")
}

/// Writes the log as CSV with 12 significant digits.
pub fn write_log_csv<W: Write>(log: &RolloutLog, out: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    let (nj, nc) = log.samples.first().map(|s| (s.q.len(), s.forces.len())).unwrap_or((0, 0));
    let csv_err = |e: csv::Error| SimError::Csv(e.to_string());
    w.write_record(RolloutLog::header(nj, nc)).map_err(csv_err)?;
    for s in &log.samples {
        let mut row: Vec<String> = Vec::with_capacity(8 + 4 * nj + 2 * nc);
        row.push(fmt(s.t));
        row.extend(s.base.iter().chain(s.base_vel.iter()).map(|&v| fmt(v)));
        for v in [&s.q, &s.qd, &s.tau_cmd, &s.tau_applied] {
            row.extend(v.iter().map(|&x| fmt(x)));
        }
        for f in &s.forces {
            row.push(fmt(f.normal));
            row.push(fmt(f.tangential));
        }
        row.push(fmt(s.bus_voltage));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a log written by [`write_log_csv`].
pub fn read_log_csv<R: Read>(input: R) -> Result<RolloutLog, SimError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(|e| SimError::Csv(e.to_string()))?.clone();
    let nj = header.iter().filter(|h| h.starts_with("q_")).count();
    let nc = header.iter().filter(|h| h.starts_with("fn_")).count();
    let expected = RolloutLog::header(nj, nc);
    if header.iter().ne(expected.iter().map(|s| s.as_str())) {
        return Err(SimError::Csv("unexpected header".into()));
    }
    let mut samples = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| SimError::Csv(e.to_string()))?;
        let vals: Vec<f64> = rec
            .iter()
            .enumerate()
            .map(|(c, s)| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| SimError::Csv(format!("row {}: bad value in column '{}'", line + 2, expected[c])))
            })
            .collect::<Result<_, _>>()?;
        let take = |from: usize, n: usize| DVector::from_column_slice(&vals[from..from + n]);
        let f0 = 7 + 4 * nj;
        samples.push(LogSample {
            t: vals[0],
            base: Vector3::new(vals[1], vals[2], vals[3]),
            base_vel: Vector3::new(vals[4], vals[5], vals[6]),
            q: take(7, nj),
            qd: take(7 + nj, nj),
            tau_cmd: take(7 + 2 * nj, nj),
            tau_applied: take(7 + 3 * nj, nj),
            forces: (0..nc)
                .map(|i| ContactForce {
                    normal: vals[f0 + 2 * i],
                    tangential: vals[f0 + 2 * i + 1],
                })
                .collect(),
            bus_voltage: vals[f0 + 2 * nc],
        });
    }
    Ok(RolloutLog { samples })
}

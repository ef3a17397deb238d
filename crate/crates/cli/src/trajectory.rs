//! Knot-per-row trajectory CSV.
//!
//! Columns: `k, t, p_x, p_y, p_z, R00..R22, v_x..v_z, w_x..w_z, q_0..q_{n-1}`,
//! then for every contact `r_ix, r_iy, r_iz, f_ix, f_iy, f_iz, c_i`.
//! Reals are written with 12 significant digits.

use std::io::{Read, Write};

use jumpleg::control::{ControlError, JumpReference};
use jumpleg::robot::RobotModel;
use jumpleg::trajopt::{DecisionVariables, JumpProblem, JumpSolution, VarLayout};
use nalgebra::{DVector, Matrix3, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("trajectory header: {0}")]
    Header(String),
    #[error("trajectory row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("trajectory: {0}")]
    Invalid(String),
    #[error("trajectory csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactKnot {
    pub r: Vector3<f64>,
    pub f: Vector3<f64>,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Knot {
    pub k: usize,
    pub t: f64,
    pub p: Vector3<f64>,
    pub rot: Matrix3<f64>,
    pub v: Vector3<f64>,
    pub w: Vector3<f64>,
    pub q: DVector<f64>,
    pub contacts: Vec<ContactKnot>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub n_joints: usize,
    pub n_contacts: usize,
    pub knots: Vec<Knot>,
}

pub fn header(n_joints: usize, n_contacts: usize) -> Vec<String> {
    let mut h: Vec<String> = ["k", "t", "p_x", "p_y", "p_z"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for a in 0..3 {
        for b in 0..3 {
            h.push(format!("R{a}{b}"));
        }
    }
    h.extend(
        ["v_x", "v_y", "v_z", "w_x", "w_y", "w_z"]
            .iter()
            .map(|s| s.to_string()),
    );
    h.extend((0..n_joints).map(|j| format!("q_{j}")));
    for i in 0..n_contacts {
        for name in ["r_{}x", "r_{}y", "r_{}z", "f_{}x", "f_{}y", "f_{}z", "c_{}"] {
            h.push(name.replace("{}", &i.to_string()));
        }
    }
    h
}

fn fmt(x: f64) -> String {
    format!("{x:.11e}")
}

impl Trajectory {
    pub fn from_solution(problem: &JumpProblem, solution: &JumpSolution) -> Self {
        let v = &solution.vars;
        let layout = v.layout;
        let knots = (0..layout.n_knots)
            .map(|k| Knot {
                k,
                t: problem.schedule.time(k),
                p: v.p(k),
                rot: v.rot(k),
                v: v.v(k),
                w: v.w(k),
                q: v.q(k),
                contacts: (0..layout.n_contacts)
                    .map(|i| ContactKnot {
                        r: v.pos(k, i),
                        f: v.force(k, i),
                        active: problem.schedule.is_active(k, i),
                    })
                    .collect(),
            })
            .collect();
        Self {
            n_joints: layout.n_joints,
            n_contacts: layout.n_contacts,
            knots,
        }
    }

    pub fn n_columns(&self) -> usize {
        header(self.n_joints, self.n_contacts).len()
    }

    pub fn write<W: Write>(&self, out: W) -> Result<(), TrajectoryError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(header(self.n_joints, self.n_contacts))?;
        for knot in &self.knots {
            let mut row = vec![knot.k.to_string(), fmt(knot.t)];
            row.extend(knot.p.iter().map(|&x| fmt(x)));
            for a in 0..3 {
                row.extend((0..3).map(|b| fmt(knot.rot[(a, b)])));
            }
            row.extend(
                knot.v
                    .iter()
                    .chain(knot.w.iter())
                    .chain(knot.q.iter())
                    .map(|&x| fmt(x)),
            );
            for c in &knot.contacts {
                row.extend(c.r.iter().chain(c.f.iter()).map(|&x| fmt(x)));
                row.push(if c.active { "1" } else { "0" }.to_string());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a file laid out for `n_joints` joints and `n_contacts` contacts.
    /// Any header or row-length mismatch names the first offending column.
    pub fn read<R: Read>(
        input: R,
        n_joints: usize,
        n_contacts: usize,
    ) -> Result<Self, TrajectoryError> {
        let expected = header(n_joints, n_contacts);
        let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
        let found = rdr.headers()?.clone();
        for (i, name) in expected.iter().enumerate() {
            match found.get(i) {
                None => {
                    return Err(TrajectoryError::Header(format!(
                        "missing column '{name}' (column {})",
                        i + 1
                    )))
                }
                Some(f) if f.trim() != name => {
                    return Err(TrajectoryError::Header(format!(
                        "column {} should be '{name}', found '{}'",
                        i + 1,
                        f.trim()
                    )))
                }
                _ => {}
            }
        }
        if found.len() > expected.len() {
            return Err(TrajectoryError::Header(format!(
                "unexpected column '{}' (column {})",
                &found[expected.len()],
                expected.len() + 1
            )));
        }

        let mut knots: Vec<Knot> = Vec::new();
        for (idx, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = idx + 2;
            if rec.len() < expected.len() {
                return Err(TrajectoryError::Row {
                    row,
                    message: format!(
                        "missing column '{}' (column {})",
                        expected[rec.len()],
                        rec.len() + 1
                    ),
                });
            }
            if rec.len() > expected.len() {
                return Err(TrajectoryError::Row {
                    row,
                    message: format!(
                        "extra value in column {} after '{}'",
                        expected.len() + 1,
                        expected[expected.len() - 1]
                    ),
                });
            }
            let vals: Vec<f64> = rec
                .iter()
                .enumerate()
                .map(|(c, s)| {
                    s.trim().parse::<f64>().map_err(|_| TrajectoryError::Row {
                        row,
                        message: format!("cannot parse '{}' in column '{}'", s.trim(), expected[c]),
                    })
                })
                .collect::<Result<_, _>>()?;
            let v3 = |at: usize| Vector3::new(vals[at], vals[at + 1], vals[at + 2]);
            let base = 20 + n_joints;
            let contacts = (0..n_contacts)
                .map(|i| {
                    let at = base + 7 * i;
                    let c = vals[at + 6];
                    if c != 0.0 && c != 1.0 {
                        return Err(TrajectoryError::Row {
                            row,
                            message: format!("column 'c_{i}' must be 0 or 1, found {c}"),
                        });
                    }
                    Ok(ContactKnot {
                        r: v3(at),
                        f: v3(at + 3),
                        active: c == 1.0,
                    })
                })
                .collect::<Result<_, _>>()?;
            let knot = Knot {
                k: vals[0] as usize,
                t: vals[1],
                p: v3(2),
                rot: Matrix3::from_row_slice(&vals[5..14]),
                v: v3(14),
                w: v3(17),
                q: DVector::from_column_slice(&vals[20..20 + n_joints]),
                contacts,
            };
            if let Some(prev) = knots.last() {
                if !(knot.t > prev.t) {
                    return Err(TrajectoryError::Row {
                        row,
                        message: format!("column 't' must increase ({} after {})", knot.t, prev.t),
                    });
                }
            }
            knots.push(knot);
        }
        if knots.len() < 2 {
            return Err(TrajectoryError::Invalid("need at least two knots".into()));
        }
        Ok(Self {
            n_joints,
            n_contacts,
            knots,
        })
    }

    /// Decision vector with this trajectory's values.
    pub fn to_vars(&self) -> DecisionVariables {
        let layout = VarLayout::new(self.n_joints, self.n_contacts, self.knots.len());
        let mut vars = DecisionVariables::zeros(layout);
        for (k, knot) in self.knots.iter().enumerate() {
            let z = &mut vars.z;
            z.fixed_rows_mut::<3>(layout.p(k)).copy_from(&knot.p);
            for a in 0..3 {
                for b in 0..3 {
                    z[layout.r(k, a, b)] = knot.rot[(a, b)];
                }
            }
            z.fixed_rows_mut::<3>(layout.v(k)).copy_from(&knot.v);
            z.fixed_rows_mut::<3>(layout.w(k)).copy_from(&knot.w);
            z.rows_mut(layout.q(k), self.n_joints).copy_from(&knot.q);
            for (i, c) in knot.contacts.iter().enumerate() {
                z.fixed_rows_mut::<3>(layout.pos(k, i)).copy_from(&c.r);
                z.fixed_rows_mut::<3>(layout.force(k, i)).copy_from(&c.f);
            }
        }
        vars
    }

    pub fn contact_schedule(&self) -> Vec<Vec<bool>> {
        self.knots
            .iter()
            .map(|k| k.contacts.iter().map(|c| c.active).collect())
            .collect()
    }

    pub fn to_reference(&self, model: &RobotModel, mu: f64) -> Result<JumpReference, ControlError> {
        let p: Vec<_> = self.knots.iter().map(|k| k.p).collect();
        let rot: Vec<_> = self.knots.iter().map(|k| k.rot).collect();
        let forces: Vec<Vec<_>> = self
            .knots
            .iter()
            .map(|k| k.contacts.iter().map(|c| c.f).collect())
            .collect();
        JumpReference::from_knots(
            model,
            self.knots.iter().map(|k| k.t).collect(),
            &p,
            &rot,
            self.knots.iter().map(|k| k.q.clone()).collect(),
            &forces,
            self.contact_schedule(),
            mu,
        )
    }
}

use crate::robot::{ContactGroup, RobotModel};
use crate::srbd::MAX_DT;

use super::TrajoptError;

/// Which contacts touch the ground at each knot.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactSchedule {
    /// `active[k][i]`: contact `i` is on the ground at knot `k`.
    pub active: Vec<Vec<bool>>,
    pub dt: f64,
}

impl ContactSchedule {
    /// Every contact on the ground at every knot.
    pub fn stance_only(n_contacts: usize, n_knots: usize, dt: f64) -> Self {
        Self {
            active: vec![vec![true; n_contacts]; n_knots],
            dt,
        }
    }

    /// Stance for `stance_knots` knots with the heel lifting at
    /// `heel_release`, then `flight_knots + 1` airborne knots.
    pub fn jump(model: &RobotModel, dt: f64, stance_knots: usize, flight_knots: usize, heel_release: usize) -> Self {
        let n = stance_knots + flight_knots + 1;
        let active = (0..n)
            .map(|k| {
                model
                    .contacts
                    .iter()
                    .map(|c| match c.group {
                        ContactGroup::Toe => k < stance_knots,
                        ContactGroup::Heel => k < stance_knots.min(heel_release),
                    })
                    .collect()
            })
            .collect();
        Self { active, dt }
    }

    pub fn n_knots(&self) -> usize {
        self.active.len()
    }

    pub fn n_contacts(&self) -> usize {
        self.active.first().map_or(0, |r| r.len())
    }

    pub fn is_active(&self, k: usize, i: usize) -> bool {
        self.active[k][i]
    }

    pub fn c(&self, k: usize, i: usize) -> f64 {
        if self.active[k][i] {
            1.0
        } else {
            0.0
        }
    }

    pub fn any_active(&self, k: usize) -> bool {
        self.active[k].iter().any(|&a| a)
    }

    /// Number of leading knots with at least one contact.
    pub fn stance_knots(&self) -> usize {
        (0..self.n_knots()).take_while(|&k| self.any_active(k)).count()
    }

    pub fn has_flight(&self) -> bool {
        self.stance_knots() < self.n_knots()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn validate(&self, n_contacts: usize) -> Result<(), TrajoptError> {
        let bad = |m: String| Err(TrajoptError::Schedule(m));
        if !(self.dt > 0.0 && self.dt <= MAX_DT) {
            return bad(format!("dt {} outside (0, {MAX_DT}]", self.dt));
        }
        if self.n_knots() < 2 {
            return bad("need at least two knots".into());
        }
        if self.active.iter().any(|r| r.len() != n_contacts) {
            return bad(format!("every knot needs {n_contacts} contact flags"));
        }
        if !self.any_active(0) {
            return Err(TrajoptError::NoStance);
        }
        for i in 0..n_contacts {
            // stance then flight: once lifted, a contact stays lifted
            let lifted = (0..self.n_knots()).find(|&k| !self.active[k][i]);
            if let Some(l) = lifted {
                if (l..self.n_knots()).any(|k| self.active[k][i]) {
                    return bad(format!("contact {i} touches down again after lifting at knot {l}"));
                }
            }
        }
        Ok(())
    }
}

use serde::{Deserialize, Serialize};

use super::RolloutLog;

/// Total normal force below which the robot counts as airborne, N.
pub const FLIGHT_FORCE_THRESHOLD: f64 = 1.0;
/// A new phase must persist this long before it is accepted, s.
pub const PHASE_HYSTERESIS: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseKind {
    Stance,
    Flight,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub kind: PhaseKind,
    pub t_start: f64,
    pub t_end: f64,
}

impl Phase {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }
}

pub fn detect_phases(log: &RolloutLog) -> Vec<Phase> {
    let series: Vec<(f64, f64)> = log.samples.iter().map(|s| (s.t, s.total_normal())).collect();
    detect_phases_from(&series)
}

/// Stance/flight segmentation of `(t, total normal force)` samples.
///
/// A change is committed only once the raw classification has held for
/// [`PHASE_HYSTERESIS`]; the new phase is dated from the first sample of
/// that run.
pub fn detect_phases_from(series: &[(f64, f64)]) -> Vec<Phase> {
    let classify = |f: f64| {
        if f < FLIGHT_FORCE_THRESHOLD {
            PhaseKind::Flight
        } else {
            PhaseKind::Stance
        }
    };
    let Some(&(t0, f0)) = series.first() else {
        return Vec::new();
    };
    let t_last = series.last().map(|s| s.0).unwrap_or(t0);
    let mut phases = Vec::new();
    let mut current = classify(f0);
    let mut start = t0;
    let mut candidate: Option<f64> = None;
    for &(t, f) in &series[1..] {
        if classify(f) == current {
            candidate = None;
            continue;
        }
        let since = *candidate.get_or_insert(t);
        if t - since >= PHASE_HYSTERESIS - 1e-12 {
            phases.push(Phase {
                kind: current,
                t_start: start,
                t_end: since,
            });
            current = classify(f);
            start = since;
            candidate = None;
        }
    }
    phases.push(Phase {
        kind: current,
        t_start: start,
        t_end: t_last,
    });
    phases
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_blip_is_ignored() {
        let series: Vec<(f64, f64)> = (0..100)
            .map(|k| {
                let t = k as f64 * 1e-3;
                (t, if (40..43).contains(&k) { 0.0 } else { 50.0 })
            })
            .collect();
        let p = detect_phases_from(&series);
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].kind, PhaseKind::Stance);
    }

    #[test]
    fn empty_series() {
        assert!(detect_phases_from(&[]).is_empty());
    }
}

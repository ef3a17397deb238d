//! TOML model files. A `format = 1` key is mandatory.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::Deserialize;
use thiserror::Error;
use toml::Spanned;

use super::{ContactGroup, ContactPoint, DrivetrainMap, JointSpec, LinkParams, LinkageTerm, ModelError, RobotModel};
use crate::actuator::ActuatorParams;

pub const DEFAULT_MODEL_TOML: &str = include_str!("../../models/default.toml");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: {source}")]
    Model {
        line: usize,
        #[source]
        source: ModelError,
    },
    #[error("{0}")]
    Invalid(#[from] ModelError),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    format: Spanned<i64>,
    name: String,
    #[serde(default)]
    planar: bool,
    #[serde(default)]
    payload_kg: f64,
    link: Vec<Spanned<RawLink>>,
    joint: Vec<Spanned<RawJoint>>,
    #[serde(default)]
    contact: Vec<Spanned<RawContact>>,
    actuator: Vec<Spanned<RawActuator>>,
    drivetrain: Spanned<RawDrivetrain>,
    #[serde(default)]
    pose: Vec<Spanned<RawPose>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLink {
    name: String,
    length: f64,
    #[serde(default = "down")]
    direction: [f64; 3],
    mass: f64,
    com_offset: f64,
    inertia: RawInertia,
}

fn down() -> [f64; 3] {
    [0.0, 0.0, -1.0]
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawInertia {
    Scalar(f64),
    /// `[ixx, iyy, izz, ixy, ixz, iyz]`
    Full([f64; 6]),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawJoint {
    name: String,
    axis: [f64; 3],
    q_min: f64,
    q_max: f64,
    #[serde(default)]
    actuators: Vec<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawContact {
    link: String,
    offset: [f64; 3],
    group: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawActuator {
    name: String,
    kt: f64,
    tau_peak: f64,
    omega_max: f64,
    internal_gear_ratio: f64,
    #[serde(default)]
    backlash_output: f64,
    winding_resistance: f64,
    #[serde(default = "nominal_bus")]
    v_bus_nominal: f64,
}

fn nominal_bus() -> f64 {
    crate::actuator::NOMINAL_BUS_VOLTAGE
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Ratio {
    Number(f64),
    Fraction(String),
}

impl Ratio {
    fn value(&self) -> Result<f64, String> {
        match self {
            Ratio::Number(v) => Ok(*v),
            Ratio::Fraction(s) => {
                let (a, b) = s.split_once('/').ok_or_else(|| format!("bad ratio '{s}'"))?;
                let a: f64 = a.trim().parse().map_err(|_| format!("bad ratio '{s}'"))?;
                let b: f64 = b.trim().parse().map_err(|_| format!("bad ratio '{s}'"))?;
                Ok(a / b)
            }
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDrivetrain {
    ratios: Vec<Vec<Ratio>>,
    #[serde(default)]
    linkage: Vec<RawLinkage>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLinkage {
    row: usize,
    col: usize,
    var: usize,
    coeffs: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPose {
    name: String,
    q: Vec<f64>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

fn vec3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

/// Parses a model description from TOML text.
pub fn parse_model(text: &str) -> Result<RobotModel, ConfigError> {
    let raw: RawModel = toml::from_str(text).map_err(|e| ConfigError::Syntax {
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(1),
        message: e.message().to_string(),
    })?;
    let at = |span: std::ops::Range<usize>| line_of(text, span.start);
    let model_err = |line: usize, source: ModelError| ConfigError::Model { line, source };

    if *raw.format.get_ref() != 1 {
        return Err(ConfigError::Syntax {
            line: at(raw.format.span()),
            message: format!("unsupported format {}, expected 1", raw.format.get_ref()),
        });
    }

    let mut links = Vec::new();
    for l in &raw.link {
        let line = at(l.span());
        let l = l.get_ref();
        let inertia = match l.inertia {
            RawInertia::Scalar(i) => Matrix3::identity() * i,
            RawInertia::Full([xx, yy, zz, xy, xz, yz]) => Matrix3::new(xx, xy, xz, xy, yy, yz, xz, yz, zz),
        };
        let dir = vec3(l.direction);
        if dir.norm() == 0.0 {
            return Err(model_err(line, ModelError::InvalidLink(l.name.clone(), "zero direction".into())));
        }
        links.push(LinkParams {
            name: l.name.clone(),
            length: l.length,
            direction: dir.normalize(),
            mass: l.mass,
            com_offset: l.com_offset,
            inertia_about_com: inertia,
        });
    }

    let joints: Vec<JointSpec> = raw
        .joint
        .iter()
        .map(|j| {
            let j = j.get_ref();
            JointSpec {
                name: j.name.clone(),
                axis: vec3(j.axis),
                q_min: j.q_min,
                q_max: j.q_max,
                actuator_ids: j.actuators.clone(),
            }
        })
        .collect();

    let mut contacts = Vec::new();
    for (id, c) in raw.contact.iter().enumerate() {
        let line = at(c.span());
        let c = c.get_ref();
        let link_index = links
            .iter()
            .position(|l| l.name == c.link)
            .ok_or_else(|| model_err(line, ModelError::InvalidContact(id, format!("unknown link '{}'", c.link))))?;
        let group = match c.group.as_str() {
            "toe" => ContactGroup::Toe,
            "heel" => ContactGroup::Heel,
            other => {
                return Err(model_err(
                    line,
                    ModelError::InvalidContact(id, format!("group must be toe or heel, got '{other}'")),
                ))
            }
        };
        contacts.push(ContactPoint {
            id,
            parent_link: c.link.clone(),
            link_index,
            offset: vec3(c.offset),
            group,
        });
    }

    let mut actuators = Vec::new();
    for a in &raw.actuator {
        let line = at(a.span());
        let a = a.get_ref();
        let p = ActuatorParams {
            name: a.name.clone(),
            kt: a.kt,
            tau_peak: a.tau_peak,
            omega_max: a.omega_max,
            internal_gear_ratio: a.internal_gear_ratio,
            backlash_output: a.backlash_output,
            winding_resistance: a.winding_resistance,
            v_bus_nominal: a.v_bus_nominal,
        };
        p.validate()
            .map_err(|e| model_err(line, ModelError::Other(e.to_string())))?;
        actuators.push(p);
    }

    let dt_line = at(raw.drivetrain.span());
    let dt = raw.drivetrain.get_ref();
    let rows = dt.ratios.len();
    let cols = dt.ratios.first().map_or(0, |r| r.len());
    if dt.ratios.iter().any(|r| r.len() != cols) {
        return Err(model_err(dt_line, ModelError::InvalidDrivetrain("ragged ratio matrix".into())));
    }
    let mut ratios = DMatrix::zeros(rows, cols);
    for (i, row) in dt.ratios.iter().enumerate() {
        for (j, r) in row.iter().enumerate() {
            ratios[(i, j)] = r
                .value()
                .map_err(|m| model_err(dt_line, ModelError::InvalidDrivetrain(m)))?;
        }
    }
    if actuators.len() != rows {
        return Err(model_err(
            dt_line,
            ModelError::InvalidDrivetrain(format!(
                "{} actuators declared for {} drivetrain rows",
                actuators.len(),
                rows
            )),
        ));
    }
    let drivetrain = DrivetrainMap {
        motor_count: rows,
        constant_ratios: ratios,
        linkage_terms: dt
            .linkage
            .iter()
            .map(|t| LinkageTerm {
                row: t.row,
                col: t.col,
                var: t.var,
                coeffs: t.coeffs.clone(),
            })
            .collect(),
        motor_torque_max: DVector::from_iterator(rows, actuators.iter().map(|a| a.tau_peak)),
        motor_speed_max: DVector::from_iterator(rows, actuators.iter().map(|a| a.omega_max)),
    };

    let poses = raw
        .pose
        .iter()
        .map(|p| {
            let p = p.get_ref();
            (p.name.clone(), DVector::from_vec(p.q.clone()))
        })
        .collect();

    let model = RobotModel {
        name: raw.name,
        planar: raw.planar,
        links,
        joints,
        contacts,
        drivetrain,
        actuators,
        base_mass_extra: raw.payload_kg,
        poses,
    };
    if let Err(e) = model.validate() {
        // point at the offending section when we can tell which one it is
        let line = match &e {
            ModelError::InvalidLink(name, _) => raw
                .link
                .iter()
                .find(|l| &l.get_ref().name == name)
                .map(|l| at(l.span())),
            ModelError::InvalidJoint(name, _) => raw
                .joint
                .iter()
                .find(|j| &j.get_ref().name == name)
                .map(|j| at(j.span())),
            ModelError::InvalidContact(id, _) => raw.contact.get(*id).map(|c| at(c.span())),
            ModelError::InvalidDrivetrain(_) | ModelError::NegativeCapacity { .. } => Some(dt_line),
            _ => None,
        };
        return Err(match line {
            Some(line) => ConfigError::Model { line, source: e },
            None => ConfigError::Invalid(e),
        });
    }
    Ok(model)
}

pub fn load_model(path: &Path) -> Result<RobotModel, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_model(&text)
}

/// The shipped planar model (16 kg, no payload).
pub fn default_model() -> RobotModel {
    parse_model(DEFAULT_MODEL_TOML).expect("shipped model is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_model_loads() {
        let m = default_model();
        assert_eq!(m.n_joints(), 4);
        assert_eq!(m.contacts_in_group(ContactGroup::Toe).len(), 4);
        assert_eq!(m.contacts_in_group(ContactGroup::Heel).len(), 1);
        assert!((m.total_mass() - 16.0).abs() < 1e-12);
        assert!((m.with_payload(1.0).total_mass() - 17.0).abs() < 1e-12);
    }

    #[test]
    fn missing_format_is_rejected() {
        let text = DEFAULT_MODEL_TOML.replacen("format = 1", "", 1);
        assert!(parse_model(&text).is_err());
        let text = DEFAULT_MODEL_TOML.replacen("format = 1", "format = 2", 1);
        let err = parse_model(&text).unwrap_err().to_string();
        assert!(err.starts_with("line 1:"), "{err}");
    }

    #[test]
    fn syntax_error_reports_line() {
        let mut text = DEFAULT_MODEL_TOML.to_string();
        text.push_str("\n[[joint]\n");
        let err = parse_model(&text).unwrap_err();
        let expected = DEFAULT_MODEL_TOML.lines().count() + 2;
        match err {
            ConfigError::Syntax { line, .. } => assert_eq!(line, expected),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn bad_joint_limits_point_at_the_joint() {
        let text = DEFAULT_MODEL_TOML.replacen("q_min = -2.3", "q_min = 0.5", 1);
        let err = parse_model(&text).unwrap_err();
        let knee_line = DEFAULT_MODEL_TOML
            .lines()
            .position(|l| l.contains("name = \"knee\"") )
            .unwrap()
            + 1;
        match err {
            ConfigError::Model { line, source } => {
                assert!(matches!(source, ModelError::InvalidJoint(ref n, _) if n == "knee"));
                assert!(line <= knee_line && line + 2 >= knee_line, "line {line} vs {knee_line}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn negative_capacity_is_a_validation_error() {
        let text = DEFAULT_MODEL_TOML.replacen("coeffs = [0.3, -0.9]", "coeffs = [-30.0, 0.0]", 1);
        let err = parse_model(&text).unwrap_err();
        assert!(matches!(
            err,
            ConfigError::Model {
                source: ModelError::NegativeCapacity { joint: 1, .. },
                ..
            }
        ));
    }
}

//! Robot description: serial kinematic chain from the torso, contact points,
//! and the co-actuation drivetrain.

mod config;
mod drivetrain;
mod kinematics;

pub use config::{default_model, load_model, parse_model, ConfigError, DEFAULT_MODEL_TOML};
pub use drivetrain::{DrivetrainMap, LinkageTerm};
pub use kinematics::ChainPose;

use nalgebra::{DVector, Matrix3, Vector3};
use thiserror::Error;

use crate::actuator::ActuatorParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("joint vector has {got} entries, model has {expected} joints")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid link '{0}': {1}")]
    InvalidLink(String, String),
    #[error("invalid joint '{0}': {1}")]
    InvalidJoint(String, String),
    #[error("invalid contact {0}: {1}")]
    InvalidContact(usize, String),
    #[error("invalid drivetrain: {0}")]
    InvalidDrivetrain(String),
    #[error("negative torque capacity {value:.6} at joint {joint}")]
    NegativeCapacity { joint: usize, value: f64 },
    #[error("{0}")]
    Other(String),
}

/// One rigid link. The link frame sits at the proximal joint; the distal
/// joint is `length` along `direction`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkParams {
    pub name: String,
    pub length: f64,
    pub direction: Vector3<f64>,
    pub mass: f64,
    /// CoM position along `direction`, meters from the link frame origin.
    pub com_offset: f64,
    pub inertia_about_com: Matrix3<f64>,
}

impl LinkParams {
    pub fn distal_offset(&self) -> Vector3<f64> {
        self.direction * self.length
    }

    pub fn com_local(&self) -> Vector3<f64> {
        self.direction * self.com_offset
    }
}

/// Revolute joint between link `i` (parent) and link `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSpec {
    pub name: String,
    /// Rotation axis in the parent link frame.
    pub axis: Vector3<f64>,
    pub q_min: f64,
    pub q_max: f64,
    /// Drivetrain rows (motors) that contribute torque to this joint.
    pub actuator_ids: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ContactGroup {
    Toe,
    Heel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactPoint {
    pub id: usize,
    pub parent_link: String,
    pub link_index: usize,
    pub offset: Vector3<f64>,
    pub group: ContactGroup,
}

/// Complete robot description. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    pub name: String,
    pub planar: bool,
    pub links: Vec<LinkParams>,
    pub joints: Vec<JointSpec>,
    pub contacts: Vec<ContactPoint>,
    pub drivetrain: DrivetrainMap,
    pub actuators: Vec<ActuatorParams>,
    /// Payload rigidly attached at the torso frame origin.
    pub base_mass_extra: f64,
    /// Named joint configurations (e.g. `stand`, `crouch`).
    pub poses: Vec<(String, DVector<f64>)>,
}

impl RobotModel {
    pub fn n_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn n_contacts(&self) -> usize {
        self.contacts.len()
    }

    pub fn total_mass(&self) -> f64 {
        self.links.iter().map(|l| l.mass).sum::<f64>() + self.base_mass_extra
    }

    pub fn with_payload(&self, kg: f64) -> RobotModel {
        let mut m = self.clone();
        m.base_mass_extra = kg;
        m
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    pub fn pose(&self, name: &str) -> Option<&DVector<f64>> {
        self.poses.iter().find(|(n, _)| n == name).map(|(_, q)| q)
    }

    pub fn q_min(&self) -> DVector<f64> {
        DVector::from_iterator(self.n_joints(), self.joints.iter().map(|j| j.q_min))
    }

    pub fn q_max(&self) -> DVector<f64> {
        DVector::from_iterator(self.n_joints(), self.joints.iter().map(|j| j.q_max))
    }

    pub fn contacts_in_group(&self, group: ContactGroup) -> Vec<usize> {
        self.contacts
            .iter()
            .filter(|c| c.group == group)
            .map(|c| c.id)
            .collect()
    }

    pub(crate) fn check_dims(&self, q: &DVector<f64>) -> Result<(), ModelError> {
        if q.len() != self.n_joints() {
            return Err(ModelError::DimensionMismatch {
                expected: self.n_joints(),
                got: q.len(),
            });
        }
        Ok(())
    }

    /// Structural validation. Called by the config loader.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.links.len() != self.joints.len() + 1 {
            return Err(ModelError::Other(format!(
                "a serial chain needs links = joints + 1 (got {} links, {} joints)",
                self.links.len(),
                self.joints.len()
            )));
        }
        for l in &self.links {
            let bad = |r: &str| ModelError::InvalidLink(l.name.clone(), r.to_string());
            if !(l.length > 0.0) {
                return Err(bad("length must be positive"));
            }
            if !(l.mass > 0.0) {
                return Err(bad("mass must be positive"));
            }
            if (l.direction.norm() - 1.0).abs() > 1e-9 {
                return Err(bad("direction must be a unit vector"));
            }
            let sym = (l.inertia_about_com - l.inertia_about_com.transpose()).norm();
            let pd = l.inertia_about_com.cholesky().is_some();
            if sym > 1e-12 || !pd {
                return Err(bad("inertia must be symmetric positive definite"));
            }
        }
        for j in &self.joints {
            let bad = |r: &str| ModelError::InvalidJoint(j.name.clone(), r.to_string());
            if !(j.q_min < j.q_max) {
                return Err(bad("q_min must be below q_max"));
            }
            if (j.axis.norm() - 1.0).abs() > 1e-9 {
                return Err(bad("axis must be a unit vector"));
            }
            if j.actuator_ids.iter().any(|&m| m >= self.drivetrain.motor_count) {
                return Err(bad("actuator id out of range"));
            }
        }
        for (k, c) in self.contacts.iter().enumerate() {
            if c.id != k {
                return Err(ModelError::InvalidContact(k, "ids must be dense and ordered".into()));
            }
            if c.link_index >= self.links.len() || self.links[c.link_index].name != c.parent_link {
                return Err(ModelError::InvalidContact(k, format!("unknown link '{}'", c.parent_link)));
            }
        }
        if self.base_mass_extra < 0.0 {
            return Err(ModelError::Other("payload mass must be non-negative".into()));
        }
        if self.planar {
            for j in &self.joints {
                if j.axis.x != 0.0 || j.axis.z != 0.0 {
                    return Err(ModelError::InvalidJoint(
                        j.name.clone(),
                        "planar models need pitch (y) axes".into(),
                    ));
                }
            }
            for l in &self.links {
                if l.direction.y != 0.0 {
                    return Err(ModelError::InvalidLink(
                        l.name.clone(),
                        "planar models need in-plane directions".into(),
                    ));
                }
            }
            for c in &self.contacts {
                if c.offset.y != 0.0 {
                    return Err(ModelError::InvalidContact(c.id, "planar offsets need y = 0".into()));
                }
            }
        }
        for (name, q) in &self.poses {
            if q.len() != self.n_joints() {
                return Err(ModelError::Other(format!("pose '{name}' has wrong length")));
            }
        }
        self.drivetrain.validate(self)?;
        Ok(())
    }
}

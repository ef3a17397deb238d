//! Jump planning and validation for a single-leg robot with an actuated toe
//! and a co-actuated drivetrain.
//!
//! The pipeline: describe the robot ([`robot`]), plan a jump with a single
//! rigid body model coupled to full kinematics ([`trajopt`]), then replay it
//! in an articulated simulator ([`sim`]) under joint impedance control or
//! the whole-body balance controller ([`control`]).

pub mod actuator;
pub mod math;
pub mod robot;
pub mod control;
pub mod sim;
pub mod srbd;
pub mod trajopt;

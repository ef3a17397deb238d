//! Planar floating-base chain: generalized coordinates `[x, z, pitch, q..]`,
//! mass matrix, bias forces and point Jacobians.

use nalgebra::{DMatrix, DVector, Vector2};

use crate::robot::RobotModel;
use crate::srbd::G;

use super::SimError;

/// Number of base coordinates (x, z, pitch).
pub const BASE_DOF: usize = 3;

/// `d/dφ` of a vector rotated by `φ` about +y, in the (x, z) plane.
#[inline]
pub(crate) fn perp(w: &Vector2<f64>) -> Vector2<f64> {
    Vector2::new(w.y, -w.x)
}

/// Rotation by `angle` about +y restricted to the (x, z) plane.
#[inline]
pub(crate) fn rotate(angle: f64, v: &Vector2<f64>) -> Vector2<f64> {
    let (s, c) = angle.sin_cos();
    Vector2::new(v.x * c + v.y * s, -v.x * s + v.y * c)
}

#[derive(Debug, Clone)]
struct PlanarLink {
    mass: f64,
    inertia: f64,
    distal: Vector2<f64>,
    com: Vector2<f64>,
}

/// The robot model reduced to the sagittal plane.
#[derive(Debug, Clone)]
pub struct PlanarChain {
    links: Vec<PlanarLink>,
    /// +1 for joints about +y, -1 about -y.
    signs: Vec<f64>,
    payload: f64,
    contacts: Vec<(usize, Vector2<f64>)>,
    pub q_min: DVector<f64>,
    pub q_max: DVector<f64>,
}

/// Link angles, origins and rates at one configuration.
#[derive(Debug, Clone)]
pub struct ChainFrames {
    pub angle: Vec<f64>,
    pub rate: Vec<f64>,
    pub origin: Vec<Vector2<f64>>,
    /// Distal offset of each link, world frame.
    pub segment: Vec<Vector2<f64>>,
}

impl PlanarChain {
    pub fn new(model: &RobotModel) -> Result<Self, SimError> {
        let not_planar = |why: String| SimError::Unsupported(why);
        if !model.planar {
            return Err(not_planar("model is not planar".into()));
        }
        let mut signs = Vec::with_capacity(model.n_joints());
        for j in &model.joints {
            if j.axis.x.abs() > 1e-12 || j.axis.z.abs() > 1e-12 {
                return Err(not_planar(format!("joint '{}' is not a pitch joint", j.name)));
            }
            signs.push(j.axis.y.signum());
        }
        let mut links = Vec::with_capacity(model.links.len());
        for l in &model.links {
            if l.direction.y.abs() > 1e-12 {
                return Err(not_planar(format!("link '{}' leaves the sagittal plane", l.name)));
            }
            let d = l.distal_offset();
            let c = l.com_local();
            links.push(PlanarLink {
                mass: l.mass,
                inertia: l.inertia_about_com[(1, 1)],
                distal: Vector2::new(d.x, d.z),
                com: Vector2::new(c.x, c.z),
            });
        }
        let contacts = model
            .contacts
            .iter()
            .map(|c| (c.link_index, Vector2::new(c.offset.x, c.offset.z)))
            .collect();
        Ok(Self {
            links,
            signs,
            payload: model.base_mass_extra,
            contacts,
            q_min: model.q_min(),
            q_max: model.q_max(),
        })
    }

    pub fn n_joints(&self) -> usize {
        self.signs.len()
    }

    pub fn n_dof(&self) -> usize {
        BASE_DOF + self.n_joints()
    }

    pub fn n_contacts(&self) -> usize {
        self.contacts.len()
    }

    pub fn total_mass(&self) -> f64 {
        self.links.iter().map(|l| l.mass).sum::<f64>() + self.payload
    }

    pub fn frames(&self, pos: &DVector<f64>, vel: &DVector<f64>) -> ChainFrames {
        let n = self.links.len();
        let mut angle = Vec::with_capacity(n);
        let mut rate = Vec::with_capacity(n);
        let mut origin = Vec::with_capacity(n);
        let mut segment = Vec::with_capacity(n);
        let (mut a, mut r) = (pos[2], vel[2]);
        let mut o = Vector2::new(pos[0], pos[1]);
        for (i, link) in self.links.iter().enumerate() {
            if i > 0 {
                a += self.signs[i - 1] * pos[BASE_DOF + i - 1];
                r += self.signs[i - 1] * vel[BASE_DOF + i - 1];
            }
            let seg = rotate(a, &link.distal);
            angle.push(a);
            rate.push(r);
            origin.push(o);
            segment.push(seg);
            o += seg;
        }
        ChainFrames {
            angle,
            rate,
            origin,
            segment,
        }
    }

    /// World position of a point fixed on `link`.
    pub fn point(&self, frames: &ChainFrames, link: usize, local: &Vector2<f64>) -> Vector2<f64> {
        frames.origin[link] + rotate(frames.angle[link], local)
    }

    /// 2×n Jacobian of a world point attached to `link`.
    pub fn point_jacobian(&self, frames: &ChainFrames, link: usize, at: &Vector2<f64>) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(2, self.n_dof());
        jac[(0, 0)] = 1.0;
        jac[(1, 1)] = 1.0;
        let col = perp(&(at - frames.origin[0]));
        jac[(0, 2)] = col.x;
        jac[(1, 2)] = col.y;
        for j in 0..link.min(self.n_joints()) {
            let col = perp(&(at - frames.origin[j + 1])) * self.signs[j];
            jac[(0, BASE_DOF + j)] = col.x;
            jac[(1, BASE_DOF + j)] = col.y;
        }
        jac
    }

    /// `J̇ u` for a point attached to `link` at link-local `local`.
    pub fn point_bias(&self, frames: &ChainFrames, link: usize, local: &Vector2<f64>) -> Vector2<f64> {
        let mut acc = -rotate(frames.angle[link], local) * frames.rate[link].powi(2);
        for k in 0..link {
            acc -= frames.segment[k] * frames.rate[k].powi(2);
        }
        acc
    }

    /// Row of link `link`'s angle with respect to the generalized coordinates.
    fn angle_row(&self, link: usize) -> DVector<f64> {
        let mut row = DVector::zeros(self.n_dof());
        row[2] = 1.0;
        for j in 0..link {
            row[BASE_DOF + j] = self.signs[j];
        }
        row
    }

    /// Mass matrix and bias forces (Coriolis, centrifugal, gravity) so that
    /// `M u̇ + h = generalized forces`.
    pub fn mass_and_bias(&self, frames: &ChainFrames) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.n_dof();
        let mut m = DMatrix::zeros(n, n);
        let mut h = DVector::zeros(n);
        let gravity = Vector2::new(0.0, -G);
        for (i, link) in self.links.iter().enumerate() {
            let at = self.point(frames, i, &link.com);
            let jv = self.point_jacobian(frames, i, &at);
            let jw = self.angle_row(i);
            m += jv.transpose() * &jv * link.mass + &jw * jw.transpose() * link.inertia;
            let bias = self.point_bias(frames, i, &link.com);
            h += jv.transpose() * ((bias - gravity) * link.mass);
        }
        if self.payload > 0.0 {
            m[(0, 0)] += self.payload;
            m[(1, 1)] += self.payload;
            h[1] += self.payload * G;
        }
        (m, h)
    }

    /// Generalized gravity forces at `pos`.
    pub fn gravity_forces(&self, pos: &DVector<f64>) -> DVector<f64> {
        let frames = self.frames(pos, &DVector::zeros(self.n_dof()));
        self.mass_and_bias(&frames).1
    }

    pub fn potential_energy(&self, frames: &ChainFrames) -> f64 {
        let links: f64 = self
            .links
            .iter()
            .enumerate()
            .map(|(i, l)| l.mass * G * self.point(frames, i, &l.com).y)
            .sum();
        links + self.payload * G * frames.origin[0].y
    }

    /// Whole-body centre of mass, world (x, z).
    pub fn com(&self, frames: &ChainFrames) -> Vector2<f64> {
        let mut acc = frames.origin[0] * self.payload;
        for (i, l) in self.links.iter().enumerate() {
            acc += self.point(frames, i, &l.com) * l.mass;
        }
        acc / self.total_mass()
    }

    pub fn contact_point(&self, frames: &ChainFrames, i: usize) -> Vector2<f64> {
        let (link, local) = &self.contacts[i];
        self.point(frames, *link, local)
    }

    pub fn contact_jacobian(&self, frames: &ChainFrames, i: usize) -> DMatrix<f64> {
        let (link, _) = self.contacts[i];
        self.point_jacobian(frames, link, &self.contact_point(frames, i))
    }

    pub fn contact_bias(&self, frames: &ChainFrames, i: usize) -> Vector2<f64> {
        let (link, local) = &self.contacts[i];
        self.point_bias(frames, *link, local)
    }
}

//! Flat decision-vector layout: per knot `[p, R (row-major), v, ω, q, r_i…, f_i…]`.

use nalgebra::{DVector, Matrix3, Vector3};

use crate::srbd::SrbdState;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarLayout {
    pub n_joints: usize,
    pub n_contacts: usize,
    pub n_knots: usize,
}

impl VarLayout {
    pub const P: usize = 0;
    pub const R: usize = 3;
    pub const V: usize = 12;
    pub const W: usize = 15;
    pub const Q: usize = 18;

    pub fn new(n_joints: usize, n_contacts: usize, n_knots: usize) -> Self {
        Self {
            n_joints,
            n_contacts,
            n_knots,
        }
    }

    pub fn stride(&self) -> usize {
        18 + self.n_joints + 6 * self.n_contacts
    }

    pub fn len(&self) -> usize {
        self.stride() * self.n_knots
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn knot(&self, k: usize) -> usize {
        k * self.stride()
    }

    pub fn p(&self, k: usize) -> usize {
        self.knot(k) + Self::P
    }

    /// Index of `R[a][b]`.
    pub fn r(&self, k: usize, a: usize, b: usize) -> usize {
        self.knot(k) + Self::R + 3 * a + b
    }

    pub fn v(&self, k: usize) -> usize {
        self.knot(k) + Self::V
    }

    pub fn w(&self, k: usize) -> usize {
        self.knot(k) + Self::W
    }

    pub fn q(&self, k: usize) -> usize {
        self.knot(k) + Self::Q
    }

    /// Contact position of contact `i`.
    pub fn pos(&self, k: usize, i: usize) -> usize {
        self.knot(k) + Self::Q + self.n_joints + 3 * i
    }

    pub fn force(&self, k: usize, i: usize) -> usize {
        self.knot(k) + Self::Q + self.n_joints + 3 * self.n_contacts + 3 * i
    }
}

/// Decision variables at every knot, stored as one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionVariables {
    pub layout: VarLayout,
    pub z: DVector<f64>,
}

impl DecisionVariables {
    pub fn zeros(layout: VarLayout) -> Self {
        Self {
            layout,
            z: DVector::zeros(layout.len()),
        }
    }

    pub fn n_knots(&self) -> usize {
        self.layout.n_knots
    }

    fn vec3(&self, at: usize) -> Vector3<f64> {
        Vector3::new(self.z[at], self.z[at + 1], self.z[at + 2])
    }

    fn set3(&mut self, at: usize, v: &Vector3<f64>) {
        self.z[at] = v.x;
        self.z[at + 1] = v.y;
        self.z[at + 2] = v.z;
    }

    pub fn p(&self, k: usize) -> Vector3<f64> {
        self.vec3(self.layout.p(k))
    }

    pub fn rot(&self, k: usize) -> Matrix3<f64> {
        let s = self.layout.r(k, 0, 0);
        Matrix3::from_row_slice(&self.z.as_slice()[s..s + 9])
    }

    pub fn v(&self, k: usize) -> Vector3<f64> {
        self.vec3(self.layout.v(k))
    }

    pub fn w(&self, k: usize) -> Vector3<f64> {
        self.vec3(self.layout.w(k))
    }

    pub fn q(&self, k: usize) -> DVector<f64> {
        let s = self.layout.q(k);
        DVector::from_column_slice(&self.z.as_slice()[s..s + self.layout.n_joints])
    }

    pub fn pos(&self, k: usize, i: usize) -> Vector3<f64> {
        self.vec3(self.layout.pos(k, i))
    }

    pub fn force(&self, k: usize, i: usize) -> Vector3<f64> {
        self.vec3(self.layout.force(k, i))
    }

    pub fn positions(&self, k: usize) -> Vec<Vector3<f64>> {
        (0..self.layout.n_contacts).map(|i| self.pos(k, i)).collect()
    }

    pub fn forces(&self, k: usize) -> Vec<Vector3<f64>> {
        (0..self.layout.n_contacts).map(|i| self.force(k, i)).collect()
    }

    pub fn state(&self, k: usize) -> SrbdState {
        SrbdState {
            p: self.p(k),
            rot: self.rot(k),
            v: self.v(k),
            omega: self.w(k),
        }
    }

    pub fn set_p(&mut self, k: usize, v: &Vector3<f64>) {
        self.set3(self.layout.p(k), v);
    }

    pub fn set_rot(&mut self, k: usize, r: &Matrix3<f64>) {
        for a in 0..3 {
            for b in 0..3 {
                let at = self.layout.r(k, a, b);
                self.z[at] = r[(a, b)];
            }
        }
    }

    pub fn set_v(&mut self, k: usize, v: &Vector3<f64>) {
        self.set3(self.layout.v(k), v);
    }

    pub fn set_w(&mut self, k: usize, v: &Vector3<f64>) {
        self.set3(self.layout.w(k), v);
    }

    pub fn set_q(&mut self, k: usize, q: &DVector<f64>) {
        let s = self.layout.q(k);
        self.z.rows_mut(s, self.layout.n_joints).copy_from(q);
    }

    pub fn set_pos(&mut self, k: usize, i: usize, v: &Vector3<f64>) {
        self.set3(self.layout.pos(k, i), v);
    }

    pub fn set_force(&mut self, k: usize, i: usize, v: &Vector3<f64>) {
        self.set3(self.layout.force(k, i), v);
    }

    pub fn set_state(&mut self, k: usize, s: &SrbdState) {
        self.set_p(k, &s.p);
        self.set_rot(k, &s.rot);
        self.set_v(k, &s.v);
        self.set_w(k, &s.omega);
    }
}

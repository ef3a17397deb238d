use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use super::{ModelError, RobotModel};
use crate::math::{axis_angle, skew};

/// Link frames of the chain expressed in the torso (base) frame.
#[derive(Debug, Clone)]
pub struct ChainPose {
    pub link_rot: Vec<Matrix3<f64>>,
    pub link_origin: Vec<Vector3<f64>>,
    /// Joint axes in the base frame; joint `j` sits at `link_origin[j + 1]`.
    pub joint_axis: Vec<Vector3<f64>>,
}

impl ChainPose {
    pub fn joint_origin(&self, j: usize) -> Vector3<f64> {
        self.link_origin[j + 1]
    }

    pub fn point(&self, link: usize, local: &Vector3<f64>) -> Vector3<f64> {
        self.link_origin[link] + self.link_rot[link] * local
    }
}

impl RobotModel {
    pub fn chain_pose(&self, q: &DVector<f64>) -> Result<ChainPose, ModelError> {
        self.check_dims(q)?;
        let n_links = self.links.len();
        let mut link_rot = Vec::with_capacity(n_links);
        let mut link_origin = Vec::with_capacity(n_links);
        let mut joint_axis = Vec::with_capacity(self.joints.len());
        link_rot.push(Matrix3::identity());
        link_origin.push(Vector3::zeros());
        for (j, joint) in self.joints.iter().enumerate() {
            let parent_rot: Matrix3<f64> = link_rot[j];
            let origin = link_origin[j] + parent_rot * self.links[j].distal_offset();
            joint_axis.push(parent_rot * joint.axis);
            link_rot.push(parent_rot * axis_angle(&joint.axis, q[j]));
            link_origin.push(origin);
        }
        Ok(ChainPose {
            link_rot,
            link_origin,
            joint_axis,
        })
    }

    /// Contact positions in the base frame.
    pub fn contact_points_base(&self, pose: &ChainPose) -> Vec<Vector3<f64>> {
        self.contacts
            .iter()
            .map(|c| pose.point(c.link_index, &c.offset))
            .collect()
    }

    /// `∂b/∂q` for a point `b` (base frame) rigidly attached to `link`.
    pub fn point_jacobian_base(&self, pose: &ChainPose, link: usize, b: &Vector3<f64>) -> DMatrix<f64> {
        let n = self.n_joints();
        let mut jac = DMatrix::zeros(3, n);
        for j in 0..n.min(link) {
            let col = pose.joint_axis[j].cross(&(b - pose.joint_origin(j)));
            jac.fixed_view_mut::<3, 1>(0, j).copy_from(&col);
        }
        jac
    }

    /// Second derivatives `∂²b/∂q_j∂q_l`, indexed `[j * n + l]`.
    pub fn point_hessian_base(&self, pose: &ChainPose, link: usize, b: &Vector3<f64>) -> Vec<Vector3<f64>> {
        let n = self.n_joints();
        let mut h = vec![Vector3::zeros(); n * n];
        let active = n.min(link);
        for j in 0..active {
            for l in j..active {
                // proximal axis crossed into the distal partial
                let inner = pose.joint_axis[l].cross(&(b - pose.joint_origin(l)));
                let v = pose.joint_axis[j].cross(&inner);
                h[j * n + l] = v;
                h[l * n + j] = v;
            }
        }
        h
    }

    /// World positions of every contact point.
    pub fn forward_kinematics(
        &self,
        base_pos: &Vector3<f64>,
        base_rot: &Matrix3<f64>,
        q: &DVector<f64>,
    ) -> Result<Vec<Vector3<f64>>, ModelError> {
        let pose = self.chain_pose(q)?;
        Ok(self
            .contact_points_base(&pose)
            .iter()
            .map(|b| base_pos + base_rot * b)
            .collect())
    }

    /// Contact Jacobians, `3 × (n + 6)` each, columns ordered
    /// `[base linear velocity (world), base angular velocity (body), joints]`.
    pub fn contact_jacobians(
        &self,
        _base_pos: &Vector3<f64>,
        base_rot: &Matrix3<f64>,
        q: &DVector<f64>,
    ) -> Result<Vec<DMatrix<f64>>, ModelError> {
        let pose = self.chain_pose(q)?;
        let n = self.n_joints();
        Ok(self
            .contacts
            .iter()
            .map(|c| {
                let b = pose.point(c.link_index, &c.offset);
                let mut jac = DMatrix::zeros(3, n + 6);
                jac.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
                jac.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-base_rot * skew(&b)));
                let jq = self.point_jacobian_base(&pose, c.link_index, &b);
                jac.view_mut((0, 6), (3, n)).copy_from(&(base_rot * jq));
                jac
            })
            .collect())
    }

    /// Per-link CoM positions in the base frame.
    pub fn link_coms_base(&self, pose: &ChainPose) -> Vec<Vector3<f64>> {
        self.links
            .iter()
            .enumerate()
            .map(|(i, l)| pose.point(i, &l.com_local()))
            .collect()
    }

    /// Whole-body CoM in the base frame (payload at the torso origin).
    pub fn com_base(&self, pose: &ChainPose) -> Vector3<f64> {
        let mut acc = Vector3::zeros();
        for (l, c) in self.links.iter().zip(self.link_coms_base(pose)) {
            acc += c * l.mass;
        }
        acc / self.total_mass()
    }

    pub fn com_position(
        &self,
        base_pos: &Vector3<f64>,
        base_rot: &Matrix3<f64>,
        q: &DVector<f64>,
    ) -> Result<Vector3<f64>, ModelError> {
        let pose = self.chain_pose(q)?;
        Ok(base_pos + base_rot * self.com_base(&pose))
    }

    /// Composite inertia about the whole-body CoM, base frame.
    pub fn composite_inertia(&self, q: &DVector<f64>) -> Result<Matrix3<f64>, ModelError> {
        let pose = self.chain_pose(q)?;
        let com = self.com_base(&pose);
        let point_mass = |m: f64, at: Vector3<f64>| {
            let d = at - com;
            (Matrix3::identity() * d.norm_squared() - d * d.transpose()) * m
        };
        let mut inertia = point_mass(self.base_mass_extra, Vector3::zeros());
        for (i, (l, c)) in self.links.iter().zip(self.link_coms_base(&pose)).enumerate() {
            let r = pose.link_rot[i];
            inertia += r * l.inertia_about_com * r.transpose() + point_mass(l.mass, c);
        }
        Ok(inertia)
    }
}

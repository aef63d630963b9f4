//! Fourteen-joint humanoid skeleton with per-bone rotation limits.
//!
//! Bone `c` is the segment `parent(c) → c`; its axis-angle parameter rotates the
//! segment and everything below it about the parent joint. Bone 0 has no
//! geometry and carries the global root rotation about the pelvis.

use nalgebra::{Matrix3, Rotation3, Vector3};

pub const NUM_JOINTS: usize = 14;
pub const NUM_PARTS: usize = 6;

pub const PART_NAMES: [&str; NUM_PARTS] = ["head", "torso", "left_arm", "right_arm", "left_leg", "right_leg"];

pub mod joint {
    pub const PELVIS: usize = 0;
    pub const CHEST: usize = 1;
    pub const NECK: usize = 2;
    pub const HEAD: usize = 3;
    pub const L_ELBOW: usize = 4;
    pub const L_WRIST: usize = 5;
    pub const R_ELBOW: usize = 6;
    pub const R_WRIST: usize = 7;
    pub const L_HIP: usize = 8;
    pub const L_KNEE: usize = 9;
    pub const L_ANKLE: usize = 10;
    pub const R_HIP: usize = 11;
    pub const R_KNEE: usize = 12;
    pub const R_ANKLE: usize = 13;
}

/// Componentwise bounds on an axis-angle vector, radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLimits {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl JointLimits {
    const fn new(lo: [f64; 3], hi: [f64; 3]) -> Self {
        Self { lo, hi }
    }

    const fn sym(x: f64, y: f64, z: f64) -> Self {
        Self::new([-x, -y, -z], [x, y, z])
    }

    /// Clamps `r` into bounds; reports whether anything moved.
    pub fn clamp(&self, r: [f64; 3]) -> ([f64; 3], bool) {
        let mut out = r;
        let mut moved = false;
        for d in 0..3 {
            let c = r[d].clamp(self.lo[d], self.hi[d]);
            moved |= c != r[d];
            out[d] = c;
        }
        (out, moved)
    }
}

#[derive(Debug, Clone)]
pub struct Skeleton {
    pub names: [&'static str; NUM_JOINTS],
    pub parent: [usize; NUM_JOINTS],
    /// Bone vectors `joint - parent joint`; the root entry is the pelvis position.
    pub rest_offsets: [[f64; 3]; NUM_JOINTS],
    pub joint_limits: [JointLimits; NUM_JOINTS],
    /// Capsule radius of the bone ending at each joint (unused for the root).
    pub bone_radius: [f64; NUM_JOINTS],
    pub part_of_bone: [usize; NUM_JOINTS],
}

/// Rigid map `x ↦ rot·x + trans`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rot: Matrix3<f64>,
    pub trans: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rot: Matrix3::identity(),
            trans: Vector3::zeros(),
        }
    }

    #[inline]
    pub fn apply(&self, p: &[f64; 3]) -> [f64; 3] {
        let v = self.rot * Vector3::new(p[0], p[1], p[2]) + self.trans;
        [v.x, v.y, v.z]
    }
}

pub fn axis_angle(r: &[f64; 3]) -> Matrix3<f64> {
    Rotation3::from_scaled_axis(Vector3::new(r[0], r[1], r[2])).into_inner()
}

impl Skeleton {
    pub fn humanoid() -> Self {
        use joint::*;
        let rest_joints: [[f64; 3]; NUM_JOINTS] = [
            [0.0, 0.95, 0.0],
            [0.0, 1.20, 0.0],
            [0.0, 1.45, 0.0],
            [0.0, 1.62, 0.0],
            [0.40, 1.42, 0.0],
            [0.68, 1.42, 0.0],
            [-0.40, 1.42, 0.0],
            [-0.68, 1.42, 0.0],
            [0.10, 0.90, 0.0],
            [0.11, 0.50, 0.0],
            [0.12, 0.09, 0.0],
            [-0.10, 0.90, 0.0],
            [-0.11, 0.50, 0.0],
            [-0.12, 0.09, 0.0],
        ];
        let parent = [
            PELVIS, PELVIS, CHEST, NECK, NECK, L_ELBOW, NECK, R_ELBOW, PELVIS, L_HIP, L_KNEE, PELVIS, R_HIP, R_KNEE,
        ];
        let mut rest_offsets = [[0.0; 3]; NUM_JOINTS];
        rest_offsets[0] = rest_joints[0];
        for c in 1..NUM_JOINTS {
            let (a, b) = (rest_joints[parent[c]], rest_joints[c]);
            rest_offsets[c] = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        }
        let joint_limits = [
            JointLimits::sym(0.2, 0.6, 0.15),
            JointLimits::new([-0.3, -0.3, -0.25], [0.4, 0.3, 0.25]),
            JointLimits::sym(0.2, 0.2, 0.15),
            JointLimits::sym(0.4, 0.5, 0.3),
            JointLimits::new([-0.6, -0.6, -1.3], [0.6, 0.6, 0.4]),
            JointLimits::new([-0.3, -1.6, -0.3], [0.3, 0.1, 0.3]),
            JointLimits::new([-0.6, -0.6, -0.4], [0.6, 0.6, 1.3]),
            JointLimits::new([-0.3, -0.1, -0.3], [0.3, 1.6, 0.3]),
            JointLimits::sym(0.1, 0.1, 0.1),
            JointLimits::new([-1.2, -0.3, -0.1], [0.4, 0.3, 0.5]),
            JointLimits::new([-0.05, -0.1, -0.1], [1.4, 0.1, 0.1]),
            JointLimits::sym(0.1, 0.1, 0.1),
            JointLimits::new([-1.2, -0.3, -0.5], [0.4, 0.3, 0.1]),
            JointLimits::new([-0.05, -0.1, -0.1], [1.4, 0.1, 0.1]),
        ];
        let bone_radius = [
            0.0, 0.15, 0.14, 0.09, 0.05, 0.04, 0.05, 0.04, 0.07, 0.07, 0.05, 0.07, 0.07, 0.05,
        ];
        let part_of_bone = [1, 1, 1, 0, 2, 2, 3, 3, 4, 4, 4, 5, 5, 5];
        Self {
            names: [
                "pelvis", "chest", "neck", "head", "l_elbow", "l_wrist", "r_elbow", "r_wrist", "l_hip", "l_knee",
                "l_ankle", "r_hip", "r_knee", "r_ankle",
            ],
            parent,
            rest_offsets,
            joint_limits,
            bone_radius,
            part_of_bone,
        }
    }

    pub fn num_joints(&self) -> usize {
        NUM_JOINTS
    }

    pub fn rest_joints(&self) -> [[f64; 3]; NUM_JOINTS] {
        let mut out = [[0.0; 3]; NUM_JOINTS];
        out[0] = self.rest_offsets[0];
        for c in 1..NUM_JOINTS {
            let p = out[self.parent[c]];
            let o = self.rest_offsets[c];
            out[c] = [p[0] + o[0], p[1] + o[1], p[2] + o[2]];
        }
        out
    }

    pub fn children(&self, j: usize) -> Vec<usize> {
        (1..NUM_JOINTS).filter(|&c| self.parent[c] == j).collect()
    }

    /// Global bone transforms for clamped rotations; the flag reports clamping.
    pub fn forward_kinematics(&self, rotations: &[[f64; 3]]) -> ([RigidTransform; NUM_JOINTS], bool) {
        let rest = self.rest_joints();
        let mut clamped = false;
        let mut out = [RigidTransform::identity(); NUM_JOINTS];
        for c in 0..NUM_JOINTS {
            let (r, moved) = self.joint_limits[c].clamp(rotations[c]);
            clamped |= moved;
            let local = axis_angle(&r);
            let pivot = Vector3::from(rest[self.parent[c]]);
            // Parents precede children in joint order.
            let parent = if c == 0 { RigidTransform::identity() } else { out[self.parent[c]] };
            out[c] = RigidTransform {
                rot: parent.rot * local,
                trans: parent.rot * (pivot - local * pivot) + parent.trans,
            };
        }
        (out, clamped)
    }

    /// Posed joint positions: the far end of each bone.
    pub fn joint_positions(&self, transforms: &[RigidTransform; NUM_JOINTS]) -> [[f64; 3]; NUM_JOINTS] {
        let rest = self.rest_joints();
        let mut out = [[0.0; 3]; NUM_JOINTS];
        for c in 0..NUM_JOINTS {
            out[c] = transforms[c].apply(&rest[c]);
        }
        out
    }
}

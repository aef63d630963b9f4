use super::skeleton::NUM_JOINTS;
use super::template::BodyTemplate;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct PosedBody {
    pub vertices: Vec<[f64; 3]>,
    /// `joint_regressor · vertices`.
    pub joints_3d: Vec<[f64; 3]>,
    /// Set when any rotation was outside its joint limits and got clamped.
    pub clamped: bool,
}

/// Forward kinematics plus linear blend skinning, in the template frame.
pub fn pose_mesh(template: &BodyTemplate, joint_rotations: &[[f64; 3]]) -> Result<PosedBody> {
    if joint_rotations.len() != NUM_JOINTS {
        return Err(Error::dim("pose_mesh rotations", NUM_JOINTS, joint_rotations.len()));
    }
    let (transforms, clamped) = template.skeleton.forward_kinematics(joint_rotations);
    let vertices: Vec<[f64; 3]> = template
        .mesh
        .vertices
        .iter()
        .zip(&template.skin_weights)
        .map(|(v, weights)| {
            let mut out = [0.0; 3];
            for &(bone, w) in weights {
                let p = transforms[bone].apply(v);
                for d in 0..3 {
                    out[d] += w * p[d];
                }
            }
            out
        })
        .collect();
    let joints_3d = template.regress_joints(&vertices);
    Ok(PosedBody {
        vertices,
        joints_3d,
        clamped,
    })
}

//! Capsule humanoid: one capsule per bone, stitched into a single mesh.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::skeleton::{Skeleton, NUM_JOINTS, NUM_PARTS};
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::sparse::Csr;

/// Vertices around each capsule ring.
pub const RING_SEGMENTS: usize = 8;
/// Rings per capsule, evenly spaced from the parent joint to the child joint.
pub const RINGS: usize = 5;
const VERTS_PER_CAPSULE: usize = RINGS * RING_SEGMENTS + 2;

#[derive(Debug, Clone)]
pub struct BodyTemplate {
    pub skeleton: Skeleton,
    pub mesh: Mesh<f64>,
    /// Sparse skinning rows `(bone, weight)`, at most 4 entries, summing to 1.
    pub skin_weights: Vec<Vec<(usize, f64)>>,
    /// `K × N`, rows sum to 1.
    pub joint_regressor: Csr<f64>,
}

/// Index of `ring`'s `k`-th vertex in capsule `bone` (bones are 1-based).
fn ring_vertex(bone: usize, ring: usize, k: usize) -> usize {
    (bone - 1) * VERTS_PER_CAPSULE + 1 + ring * RING_SEGMENTS + k % RING_SEGMENTS
}

fn start_pole(bone: usize) -> usize {
    (bone - 1) * VERTS_PER_CAPSULE
}

fn end_pole(bone: usize) -> usize {
    (bone - 1) * VERTS_PER_CAPSULE + VERTS_PER_CAPSULE - 1
}

/// Orthonormal `(e1, e2)` with `e1 × e2 = axis`.
fn ring_basis(axis: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if axis.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
    let e1 = helper.cross(axis).normalize();
    let e2 = axis.cross(&e1);
    (e1, e2)
}

/// Builds the template. `seed` only rotates each capsule's ring phase; seed 0 is canonical.
pub fn build_template(seed: u64) -> Result<BodyTemplate> {
    let skeleton = Skeleton::humanoid();
    let rest = skeleton.rest_joints();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase_step = std::f64::consts::TAU / RING_SEGMENTS as f64;

    let mut vertices = Vec::with_capacity((NUM_JOINTS - 1) * VERTS_PER_CAPSULE);
    let mut part_of_vertex = Vec::new();
    let mut faces = Vec::new();
    let mut part_of_face = Vec::new();
    let mut skin_weights = Vec::new();

    for bone in 1..NUM_JOINTS {
        let parent_joint = skeleton.parent[bone];
        let a = Vector3::from(rest[parent_joint]);
        let b = Vector3::from(rest[bone]);
        let axis = (b - a).normalize();
        let (e1, e2) = ring_basis(&axis);
        let radius = skeleton.bone_radius[bone];
        let phase = if seed == 0 { 0.0 } else { rng.random::<f64>() * phase_step };
        let part = skeleton.part_of_bone[bone];
        // Blend the first ring with the parent bone so joints bend smoothly.
        let blended = vec![(bone, 0.5), (parent_joint, 0.5)];
        let rigid = vec![(bone, 1.0)];

        let pole0 = a - axis * radius;
        vertices.push([pole0.x, pole0.y, pole0.z]);
        skin_weights.push(blended.clone());
        for ring in 0..RINGS {
            let t = ring as f64 / (RINGS - 1) as f64;
            let center = a + (b - a) * t;
            for k in 0..RING_SEGMENTS {
                let theta = phase + k as f64 * phase_step;
                let p = center + (e1 * theta.cos() + e2 * theta.sin()) * radius;
                vertices.push([p.x, p.y, p.z]);
                skin_weights.push(if ring == 0 { blended.clone() } else { rigid.clone() });
            }
        }
        let pole1 = b + axis * radius;
        vertices.push([pole1.x, pole1.y, pole1.z]);
        skin_weights.push(rigid);
        part_of_vertex.extend(std::iter::repeat_n(part, VERTS_PER_CAPSULE));

        let mut push = |f: [usize; 3]| {
            faces.push(f);
            part_of_face.push(part);
        };
        for k in 0..RING_SEGMENTS {
            push([start_pole(bone), ring_vertex(bone, 0, k + 1), ring_vertex(bone, 0, k)]);
        }
        for ring in 0..RINGS - 1 {
            for k in 0..RING_SEGMENTS {
                let (p, q) = (ring_vertex(bone, ring, k), ring_vertex(bone, ring, k + 1));
                let (r, s) = (ring_vertex(bone, ring + 1, k + 1), ring_vertex(bone, ring + 1, k));
                push([p, q, r]);
                push([p, r, s]);
            }
        }
        for k in 0..RING_SEGMENTS {
            push([end_pole(bone), ring_vertex(bone, RINGS - 1, k), ring_vertex(bone, RINGS - 1, k + 1)]);
        }
    }

    // Stitch each capsule's start pole to the ring it grows out of.
    for bone in 2..NUM_JOINTS {
        let parent_joint = skeleton.parent[bone];
        let (anchor_bone, anchor_ring) = if parent_joint == 0 { (1, 0) } else { (parent_joint, RINGS - 1) };
        let pole = vertices[start_pole(bone)];
        let nearest = (0..RING_SEGMENTS)
            .min_by(|&i, &j| {
                let d = |k: usize| {
                    let v = vertices[ring_vertex(anchor_bone, anchor_ring, k)];
                    (0..3).map(|x| (v[x] - pole[x]).powi(2)).sum::<f64>()
                };
                d(i).total_cmp(&d(j))
            })
            .unwrap_or(0);
        faces.push([
            start_pole(bone),
            ring_vertex(anchor_bone, anchor_ring, nearest),
            ring_vertex(anchor_bone, anchor_ring, nearest + 1),
        ]);
        part_of_face.push(skeleton.part_of_bone[bone]);
    }

    // Each joint is the centroid of the ring centred on it.
    let n = vertices.len();
    let w = 1.0 / RING_SEGMENTS as f64;
    let rows = (0..NUM_JOINTS)
        .map(|j| {
            let (bone, ring) = if j == 0 { (1, 0) } else { (j, RINGS - 1) };
            (0..RING_SEGMENTS).map(|k| (ring_vertex(bone, ring, k), w)).collect()
        })
        .collect();
    let joint_regressor = Csr::from_rows(n, rows)?;

    let mesh = Mesh::new(vertices, faces, part_of_vertex, part_of_face)?;
    let template = BodyTemplate {
        skeleton,
        mesh,
        skin_weights,
        joint_regressor,
    };
    template.self_check()?;
    Ok(template)
}

impl BodyTemplate {
    pub fn num_vertices(&self) -> usize {
        self.mesh.num_vertices()
    }

    pub fn num_joints(&self) -> usize {
        NUM_JOINTS
    }

    pub fn num_parts(&self) -> usize {
        NUM_PARTS
    }

    /// `G · V` for any `N × 3` vertex set.
    pub fn regress_joints(&self, vertices: &[[f64; 3]]) -> Vec<[f64; 3]> {
        let flat: Vec<f64> = vertices.iter().flatten().copied().collect();
        self.joint_regressor
            .mul_dense(&flat, 3)
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect()
    }

    /// Dense row-major `K × N` regressor.
    pub fn regressor_dense(&self) -> Vec<f64> {
        self.joint_regressor.to_dense()
    }

    /// Row `j` of the regressor as a dense `N`-vector.
    pub fn regressor_row(&self, j: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.num_vertices()];
        for (c, v) in self.joint_regressor.row(j) {
            row[c] = v;
        }
        row
    }

    fn self_check(&self) -> Result<()> {
        for (i, row) in self.skin_weights.iter().enumerate() {
            let s: f64 = row.iter().map(|&(_, w)| w).sum();
            if row.len() > 4 || (s - 1.0).abs() > 1e-9 || row.iter().any(|&(_, w)| w < 0.0) {
                return Err(Error::Mesh(format!("bad skin weights at vertex {i}")));
            }
        }
        for j in 0..NUM_JOINTS {
            if (self.joint_regressor.row_sum(j) - 1.0).abs() > 1e-9 {
                return Err(Error::Mesh(format!("regressor row {j} does not sum to 1")));
            }
        }
        let rest = self.skeleton.rest_joints();
        for (j, p) in self.regress_joints(&self.mesh.vertices).iter().enumerate() {
            let err = (0..3).map(|d| (p[d] - rest[j][d]).abs()).fold(0.0, f64::max);
            if err > 1e-6 {
                return Err(Error::Mesh(format!("regressor misses joint {j} by {err} m")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_mesh_graph;

    #[test]
    fn template_is_deterministic() {
        let a = build_template(0).unwrap();
        let b = build_template(0).unwrap();
        let bytes = |t: &BodyTemplate| -> Vec<u8> { t.mesh.vertices.iter().flatten().flat_map(|x| x.to_le_bytes()).collect() };
        assert_eq!(bytes(&a), bytes(&b));
        assert_eq!(a.mesh.faces, b.mesh.faces);
    }

    #[test]
    fn template_satisfies_mesh_invariants_for_several_seeds() {
        for seed in [0, 1, 17, 123456] {
            let t = build_template(seed).unwrap();
            let n = t.num_vertices();
            assert!((300..=1200).contains(&n), "{n} vertices");
            let g = build_mesh_graph(&t.mesh).unwrap();
            assert!(g.degrees.iter().all(|&d| d >= 2));
            assert!(g.adjacency.is_symmetric());
            assert_eq!(t.mesh.num_parts(), NUM_PARTS);
        }
    }

    #[test]
    fn regressor_reproduces_rest_joints() {
        let t = build_template(0).unwrap();
        let rest = t.skeleton.rest_joints();
        let mut worst: f64 = 0.0;
        for (j, p) in t.regress_joints(&t.mesh.vertices).iter().enumerate() {
            for d in 0..3 {
                worst = worst.max((p[d] - rest[j][d]).abs());
            }
        }
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn rest_height_is_about_one_point_seven() {
        let t = build_template(0).unwrap();
        let ys: Vec<f64> = t.mesh.vertices.iter().map(|v| v[1]).collect();
        let h = ys.iter().cloned().fold(f64::MIN, f64::max) - ys.iter().cloned().fold(f64::MAX, f64::min);
        assert!((1.6..1.8).contains(&h), "height {h}");
    }
}

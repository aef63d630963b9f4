//! Fixed, topology-derived operators shared by every forward pass.

use std::sync::Arc;

use crate::body::BodyTemplate;
use crate::error::Result;
use crate::mesh::{build_mesh_graph, flatten3, LaplacianOperator, MeshGraph};
use crate::scalar::{cast_points, Real};
use crate::sparse::Csr;

#[derive(Debug, Clone)]
pub struct BodyModel<T> {
    pub template_vertices: Vec<[T; 3]>,
    pub faces: Arc<Vec<[usize; 3]>>,
    pub part_of_face: Arc<Vec<usize>>,
    pub num_parts: usize,
    pub num_joints: usize,
    pub graph: MeshGraph<T>,
    pub abar: Arc<Csr<T>>,
    /// `Ā V` for the template, row-major `N × 3`.
    pub abar_v: Arc<Vec<T>>,
    pub laplacian: Arc<Csr<T>>,
    pub joint_regressor: Arc<Csr<T>>,
    /// Regressor row of the root joint.
    pub root_weights: Arc<Vec<T>>,
}

impl<T: Real> BodyModel<T> {
    pub fn from_template(template: &BodyTemplate) -> Result<Self> {
        let graph = build_mesh_graph(&template.mesh)?.cast::<T>();
        let lap = LaplacianOperator::uniform(&graph)?;
        let verts: Vec<[T; 3]> = cast_points(&template.mesh.vertices);
        let abar_v = graph.normalized_adjacency.mul_dense(&flatten3(&verts), 3);
        Ok(Self {
            template_vertices: verts,
            faces: Arc::new(template.mesh.faces.clone()),
            part_of_face: Arc::new(template.mesh.part_of_face.clone()),
            num_parts: template.num_parts(),
            num_joints: template.num_joints(),
            abar: Arc::new(graph.normalized_adjacency.clone()),
            abar_v: Arc::new(abar_v),
            laplacian: Arc::new(lap.matrix),
            joint_regressor: Arc::new(template.joint_regressor.cast()),
            root_weights: Arc::new(template.regressor_row(0).into_iter().map(T::c).collect()),
            graph,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.template_vertices.len()
    }
}

//! Spatial models and assembly of the stored energy
//! `I(t, φ, P) = Σ_q w_q [W(∇φ P⁻¹) + K(P) + |∇P|^{q_G}/q_G + η W̃(∇φ)] − ⟨ℓ(t), φ⟩`.
//!
//! Two meshes are supported:
//!
//! * **point**: a spatially homogeneous material point. The deformation is
//!   affine, `φ(x) = F x`, so the deformation degrees of freedom are the d²
//!   entries of `F` (row-major). There is one plastic node, one quadrature
//!   point of weight `|Ω|`, and `∇P ≡ 0`. `F` is either pinned to the affine
//!   boundary datum `F0` or left free.
//! * **fem2d**: bilinear quadrilaterals on a structured n×n grid of the unit
//!   square with 2×2 Gauss quadrature. Both `φ` and `P` are nodal.
//!
//! Dissipation and the state-space norm use the nodal (trapezoidal) rule with
//! lumped weights `m_a`, which makes the discrete dissipation separable per
//! node. The point mesh has a single node of weight `|Ω|`.

use serde::{Deserialize, Serialize};

use crate::constitutive::{
    d_elastic_w, d_hardening_k, d_regularizer_wtilde, elastic_w, hardening_k, mandel_stress,
    regularizer_wtilde, Energy, Material,
};
use crate::error::{Error, Result};
use crate::tensor::{Mat, Tensor3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshMode {
    Point,
    Fem2d,
}

/// Which nodes of the fem2d grid carry Dirichlet data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DirichletSet {
    /// The edge x = 0.
    Left,
    /// The whole boundary.
    Boundary,
}

/// Shape-function data of one node at one quadrature point.
#[derive(Clone, Copy, Debug)]
struct ShapeEntry {
    node: usize,
    value: f64,
    grad: [f64; 2],
}

#[derive(Clone, Debug)]
struct QuadPoint {
    weight: f64,
    shape: Vec<ShapeEntry>,
}

#[derive(Clone, Debug)]
pub struct Mesh {
    mode: MeshMode,
    dim: usize,
    cells_per_side: usize,
    nodes: Vec<[f64; 2]>,
    elements: Vec<[usize; 4]>,
    quad: Vec<QuadPoint>,
    nodal_weights: Vec<f64>,
    dirichlet: Vec<bool>,
    area: f64,
    centroid: Vec<f64>,
    // ⟨ℓ, φ⟩ = shape(t) · load_basis · φ for a unit load shape
    load_weights: Vec<f64>,
}

impl Mesh {
    /// Homogeneous material point on a domain of measure `area` with the given
    /// centroid. With `pinned`, `F` is fixed to its Dirichlet value.
    pub fn point(dim: usize, area: f64, centroid: Vec<f64>, pinned: bool) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::Config(format!("dimension must be 2 or 3, got {dim}")));
        }
        if centroid.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: centroid.len() });
        }
        if !(area > 0.0) {
            return Err(Error::Config("domain measure must be positive".into()));
        }
        Ok(Self {
            mode: MeshMode::Point,
            dim,
            cells_per_side: 0,
            nodes: Vec::new(),
            elements: Vec::new(),
            quad: vec![QuadPoint {
                weight: area,
                shape: vec![ShapeEntry { node: 0, value: 1.0, grad: [0.0; 2] }],
            }],
            nodal_weights: vec![area],
            dirichlet: vec![pinned; dim * dim],
            area,
            centroid,
            load_weights: Vec::new(),
        })
    }

    /// Unit square point model with centroid (½, …, ½).
    pub fn unit_point(dim: usize, pinned: bool) -> Self {
        Self::point(dim, 1.0, vec![0.5; dim], pinned).expect("valid point mesh")
    }

    /// Structured `n × n` bilinear grid on the unit square.
    pub fn fem2d(n: usize, dirichlet: DirichletSet) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("fem2d mesh needs at least one cell per side".into()));
        }
        let h = 1.0 / n as f64;
        let np = n + 1;
        let nodes: Vec<[f64; 2]> = (0..np * np)
            .map(|id| [(id % np) as f64 * h, (id / np) as f64 * h])
            .collect();
        let mut elements = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                let a = j * np + i;
                elements.push([a, a + 1, a + 1 + np, a + np]);
            }
        }
        let g = 1.0 / 3f64.sqrt();
        let gauss = [(-g, -g), (g, -g), (g, g), (-g, g)];
        let corners = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
        let jac = h * h / 4.0;
        let mut quad = Vec::with_capacity(4 * elements.len());
        for el in &elements {
            for &(xi, eta) in &gauss {
                let shape = el
                    .iter()
                    .zip(corners.iter())
                    .map(|(&node, &(cx, cy))| ShapeEntry {
                        node,
                        value: 0.25 * (1.0 + cx * xi) * (1.0 + cy * eta),
                        grad: [
                            0.25 * cx * (1.0 + cy * eta) * 2.0 / h,
                            0.25 * cy * (1.0 + cx * xi) * 2.0 / h,
                        ],
                    })
                    .collect();
                quad.push(QuadPoint { weight: jac, shape });
            }
        }
        let nodal_weights = nodes
            .iter()
            .map(|x| {
                let edge = |c: f64| if c == 0.0 || (c - 1.0).abs() < 1e-14 { 0.5 } else { 1.0 };
                h * h * edge(x[0]) * edge(x[1])
            })
            .collect();
        let mut load_weights = vec![0.0; nodes.len()];
        for q in &quad {
            for s in &q.shape {
                load_weights[s.node] += q.weight * s.value;
            }
        }
        let mut dof_dirichlet = vec![false; 2 * nodes.len()];
        for (a, x) in nodes.iter().enumerate() {
            let on = match dirichlet {
                DirichletSet::Left => x[0] == 0.0,
                DirichletSet::Boundary => {
                    x[0] == 0.0 || x[1] == 0.0 || (x[0] - 1.0).abs() < 1e-14 || (x[1] - 1.0).abs() < 1e-14
                }
            };
            dof_dirichlet[2 * a] = on;
            dof_dirichlet[2 * a + 1] = on;
        }
        Ok(Self {
            mode: MeshMode::Fem2d,
            dim: 2,
            cells_per_side: n,
            nodes,
            elements,
            quad,
            nodal_weights,
            dirichlet: dof_dirichlet,
            area: 1.0,
            centroid: vec![0.5, 0.5],
            load_weights,
        })
    }

    pub fn mode(&self) -> MeshMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells_per_side(&self) -> usize {
        self.cells_per_side
    }

    pub fn area(&self) -> f64 {
        self.area
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn elements(&self) -> &[[usize; 4]] {
        &self.elements
    }

    /// Number of plastic nodes.
    pub fn n_p_nodes(&self) -> usize {
        self.nodal_weights.len()
    }

    pub fn n_phi_dofs(&self) -> usize {
        self.dirichlet.len()
    }

    pub fn n_quadrature_points(&self) -> usize {
        self.quad.len()
    }

    /// Lumped nodal weights `m_a`; they sum to `|Ω|`.
    pub fn nodal_weights(&self) -> &[f64] {
        &self.nodal_weights
    }

    pub fn dirichlet_mask(&self) -> &[bool] {
        &self.dirichlet
    }

    pub fn free_dofs(&self) -> Vec<usize> {
        (0..self.dirichlet.len()).filter(|&i| !self.dirichlet[i]).collect()
    }

    /// The affine deformation `φ(x) = F0 x` in this mesh's layout.
    pub fn affine_deformation(&self, f0: &Mat) -> DeformationField {
        assert_eq!(f0.dim(), self.dim);
        match self.mode {
            MeshMode::Point => DeformationField { dofs: f0.to_vec() },
            MeshMode::Fem2d => {
                let mut dofs = Vec::with_capacity(2 * self.nodes.len());
                for x in &self.nodes {
                    dofs.push(f0.get(0, 0) * x[0] + f0.get(0, 1) * x[1]);
                    dofs.push(f0.get(1, 0) * x[0] + f0.get(1, 1) * x[1]);
                }
                DeformationField { dofs }
            }
        }
    }

    /// Linear functional `b` with `⟨f, φ⟩_Ω = b · φ` for a constant body force `f`.
    pub fn body_force_vector(&self, force: &[f64]) -> Vec<f64> {
        assert_eq!(force.len(), self.dim);
        match self.mode {
            MeshMode::Point => {
                // ∫ f·(F x) dx = |Ω| Σ_ij f_i F_ij x̄_j
                let d = self.dim;
                let mut b = vec![0.0; d * d];
                for i in 0..d {
                    for j in 0..d {
                        b[i * d + j] = self.area * force[i] * self.centroid[j];
                    }
                }
                b
            }
            MeshMode::Fem2d => {
                let mut b = vec![0.0; 2 * self.nodes.len()];
                for (a, w) in self.load_weights.iter().enumerate() {
                    b[2 * a] = w * force[0];
                    b[2 * a + 1] = w * force[1];
                }
                b
            }
        }
    }

    pub fn check_phi(&self, phi: &DeformationField) -> Result<()> {
        if phi.dofs.len() != self.n_phi_dofs() {
            return Err(Error::DimensionMismatch { expected: self.n_phi_dofs(), found: phi.dofs.len() });
        }
        Ok(())
    }

    pub fn check_p(&self, p: &PlasticField) -> Result<()> {
        if p.values.len() != self.n_p_nodes() {
            return Err(Error::DimensionMismatch { expected: self.n_p_nodes(), found: p.values.len() });
        }
        if let Some(m) = p.values.iter().find(|m| m.dim() != self.dim) {
            return Err(Error::DimensionMismatch { expected: self.dim, found: m.dim() });
        }
        Ok(())
    }

    /// Interpolated values `P(x_q)` at every quadrature point.
    pub fn p_at_quadrature(&self, p: &PlasticField) -> Vec<Mat> {
        self.quad
            .iter()
            .map(|q| {
                q.shape.iter().fold(Mat::zeros(self.dim), |acc, s| acc + p.values[s.node] * s.value)
            })
            .collect()
    }

    /// Smallest of det(P) over nodes and quadrature points.
    pub fn min_det(&self, p: &PlasticField) -> f64 {
        let nodal = p.values.iter().map(|m| m.det());
        let quad = self.p_at_quadrature(p).into_iter().map(|m| m.det());
        nodal.chain(quad).fold(f64::INFINITY, f64::min)
    }

    /// Membership in the admissible plastic set: det(P) > 0 at every node and
    /// every quadrature point.
    pub fn is_admissible(&self, p: &PlasticField) -> bool {
        self.min_det(p) > 0.0
    }

    fn deformation_gradient(&self, q: &QuadPoint, phi: &DeformationField) -> Mat {
        match self.mode {
            MeshMode::Point => Mat::from_row_slice(&phi.dofs),
            MeshMode::Fem2d => {
                let mut f = Mat::zeros(2);
                for s in &q.shape {
                    for i in 0..2 {
                        let v = phi.dofs[2 * s.node + i];
                        f.add_to(i, 0, v * s.grad[0]);
                        f.add_to(i, 1, v * s.grad[1]);
                    }
                }
                f
            }
        }
    }

    /// Adds `w · ∂F_q/∂φ : stress` into a φ-gradient.
    fn scatter_phi(&self, q: &QuadPoint, stress: &Mat, w: f64, grad: &mut [f64]) {
        match self.mode {
            MeshMode::Point => {
                for (g, s) in grad.iter_mut().zip(stress.to_vec()) {
                    *g += w * s;
                }
            }
            MeshMode::Fem2d => {
                for s in &q.shape {
                    for i in 0..2 {
                        grad[2 * s.node + i] +=
                            w * (stress.get(i, 0) * s.grad[0] + stress.get(i, 1) * s.grad[1]);
                    }
                }
            }
        }
    }

    fn plastic_gradient(&self, q: &QuadPoint, p: &PlasticField) -> Tensor3 {
        let mut a = Tensor3::zeros(self.dim);
        if self.mode == MeshMode::Fem2d {
            // Σ_a ∇N_a = 0, so differences against one node give an exact zero
            // for constant fields.
            let base = p.values[q.shape[0].node];
            for s in &q.shape {
                let pa = p.values[s.node] - base;
                for i in 0..2 {
                    for j in 0..2 {
                        a.add_to(i, j, 0, pa.get(i, j) * s.grad[0]);
                        a.add_to(i, j, 1, pa.get(i, j) * s.grad[1]);
                    }
                }
            }
        }
        a
    }
}

/// Deformation degrees of freedom in mesh layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeformationField {
    pub dofs: Vec<f64>,
}

impl DeformationField {
    /// Overwrites the Dirichlet entries with the boundary datum.
    pub fn enforce_dirichlet(&mut self, mesh: &Mesh, datum: &DeformationField) {
        for (i, &fixed) in mesh.dirichlet_mask().iter().enumerate() {
            if fixed {
                self.dofs[i] = datum.dofs[i];
            }
        }
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.dofs.iter().zip(other).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(&self.dofs).sqrt()
    }
}

/// Nodal plastic values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlasticField {
    pub values: Vec<Mat>,
}

impl PlasticField {
    pub fn uniform(mesh: &Mesh, value: Mat) -> Self {
        Self { values: vec![value; mesh.n_p_nodes()] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, Mat::dim)
    }
}

/// Discrete `L^p(Ω)` norm of a nodal matrix field with the lumped weights.
pub fn lp_norm(field: &[Mat], mesh: &Mesh, p: f64) -> f64 {
    assert_eq!(field.len(), mesh.n_p_nodes(), "field does not conform to mesh");
    field
        .iter()
        .zip(mesh.nodal_weights())
        .map(|(m, w)| w * m.norm().powf(p))
        .sum::<f64>()
        .powf(1.0 / p)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LoadShape {
    Constant,
    /// `ℓ(t) = rate · t · f0`
    Ramp { rate: f64 },
    /// `ℓ(t) = sin(ω t) · f0`
    Sine { omega: f64 },
}

/// Body force `ℓ(t) = shape(t) · f0` with analytic time derivative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadSpec {
    pub force: Vec<f64>,
    pub shape: LoadShape,
}

impl LoadSpec {
    pub fn zero(dim: usize) -> Self {
        Self { force: vec![0.0; dim], shape: LoadShape::Constant }
    }

    pub fn factor(&self, t: f64) -> f64 {
        match self.shape {
            LoadShape::Constant => 1.0,
            LoadShape::Ramp { rate } => rate * t,
            LoadShape::Sine { omega } => (omega * t).sin(),
        }
    }

    pub fn factor_rate(&self, t: f64) -> f64 {
        match self.shape {
            LoadShape::Constant => 0.0,
            LoadShape::Ramp { rate } => rate,
            LoadShape::Sine { omega } => omega * (omega * t).cos(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.force.iter().all(|f| *f == 0.0)
    }
}

/// Everything needed to evaluate `I(t, φ, P)`: mesh, material, load, Dirichlet
/// datum, and the regularization weight η (0 for the base model).
#[derive(Clone, Debug)]
pub struct Model {
    pub mesh: Mesh,
    pub material: Material,
    pub load: LoadSpec,
    /// Full deformation whose Dirichlet entries define `φ_Dir`; also the
    /// affine reference candidate.
    pub reference: DeformationField,
    pub eta: f64,
    load_basis: Vec<f64>,
}

/// The three parts of the nodal P-gradient, kept separate.
#[derive(Clone, Debug, PartialEq)]
pub struct PGradient {
    /// From `|∇P|^{q_G}/q_G` (the discrete q_G-Laplacian).
    pub laplacian: Vec<Mat>,
    /// From `K(P)`.
    pub hardening: Vec<Mat>,
    /// From `W(∇φ P⁻¹)`; pointwise this is `−B(∇φ, P)`.
    pub elastic: Vec<Mat>,
}

impl PGradient {
    pub fn total(&self) -> Vec<Mat> {
        self.laplacian
            .iter()
            .zip(&self.hardening)
            .zip(&self.elastic)
            .map(|((a, b), c)| *a + *b + *c)
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub energy: Energy,
    pub grad_phi: Option<Vec<f64>>,
    pub grad_p: Option<PGradient>,
}

impl Model {
    pub fn new(mesh: Mesh, material: Material, load: LoadSpec, f0: &Mat, eta: f64) -> Result<Self> {
        if load.force.len() != mesh.dim() {
            return Err(Error::DimensionMismatch { expected: mesh.dim(), found: load.force.len() });
        }
        if f0.dim() != mesh.dim() {
            return Err(Error::DimensionMismatch { expected: mesh.dim(), found: f0.dim() });
        }
        if !(eta >= 0.0) {
            return Err(Error::Config("regularization weight eta must be nonnegative".into()));
        }
        let load_basis = mesh.body_force_vector(&load.force);
        let reference = mesh.affine_deformation(f0);
        Ok(Self { mesh, material, load, reference, eta, load_basis })
    }

    /// `ℓ(t)` as a vector in φ-dof layout.
    pub fn load_vector(&self, t: f64) -> Vec<f64> {
        let s = self.load.factor(t);
        self.load_basis.iter().map(|b| s * b).collect()
    }

    /// `ℓ̇(t)` in φ-dof layout.
    pub fn load_rate_vector(&self, t: f64) -> Vec<f64> {
        let s = self.load.factor_rate(t);
        self.load_basis.iter().map(|b| s * b).collect()
    }

    /// Same model with a different regularization weight.
    pub fn with_eta(&self, eta: f64) -> Self {
        Self { eta, ..self.clone() }
    }

    pub fn evaluate(
        &self,
        t: f64,
        phi: &DeformationField,
        p: &PlasticField,
        want_phi: bool,
        want_p: bool,
    ) -> Result<Evaluation> {
        self.mesh.check_phi(phi)?;
        self.mesh.check_p(p)?;
        let infinite = Evaluation { energy: Energy::Infinite, grad_phi: None, grad_p: None };
        if p.values.iter().any(|m| !(m.det() > 0.0)) {
            return Ok(infinite);
        }
        let mat = &self.material;
        let q_f = mat.exponents.q_f;
        let q_g = mat.exponents.q_g;
        let d = self.mesh.dim();
        let n_nodes = self.mesh.n_p_nodes();

        let mut energy = 0.0;
        let mut grad_phi = want_phi.then(|| vec![0.0; self.mesh.n_phi_dofs()]);
        let mut grad_p = want_p.then(|| PGradient {
            laplacian: vec![Mat::zeros(d); n_nodes],
            hardening: vec![Mat::zeros(d); n_nodes],
            elastic: vec![Mat::zeros(d); n_nodes],
        });

        for q in &self.mesh.quad {
            let pq = q.shape.iter().fold(Mat::zeros(d), |acc, s| acc + p.values[s.node] * s.value);
            let det_p = pq.det();
            if !(det_p > 0.0) {
                return Ok(infinite);
            }
            let Ok(p_inv) = pq.inv() else {
                return Ok(infinite);
            };
            let f = self.mesh.deformation_gradient(q, phi);
            let fe = f * p_inv;
            let (Energy::Finite(w), Energy::Finite(k)) = (elastic_w(&fe, &mat.elastic, q_f), hardening_k(&pq, &mat.hardening))
            else {
                return Ok(infinite);
            };
            let a = self.mesh.plastic_gradient(q, p);
            let a_nsq = a.norm_sq();
            let mut density = w + k + a_nsq.powf(0.5 * q_g) / q_g;
            if self.eta > 0.0 {
                match regularizer_wtilde(&f, &mat.regularizer, mat.exponents.p) {
                    Energy::Finite(wt) => density += self.eta * wt,
                    Energy::Infinite => return Ok(infinite),
                }
            }
            energy += q.weight * density;

            if let Some(g) = grad_phi.as_mut() {
                let mut stress = d_elastic_w(&fe, &mat.elastic, q_f)? * p_inv.transpose();
                if self.eta > 0.0 {
                    stress += d_regularizer_wtilde(&f, &mat.regularizer, mat.exponents.p)? * self.eta;
                }
                self.mesh.scatter_phi(q, &stress, q.weight, g);
            }
            if let Some(gp) = grad_p.as_mut() {
                let elastic = -(mandel_stress(&fe, &mat.elastic, q_f)? * p_inv.transpose());
                let hard = d_hardening_k(&pq, &mat.hardening)?;
                let coeff = if a_nsq == 0.0 { 0.0 } else { a_nsq.powf(0.5 * (q_g - 2.0)) };
                for s in &q.shape {
                    gp.elastic[s.node] += elastic * (q.weight * s.value);
                    gp.hardening[s.node] += hard * (q.weight * s.value);
                    if coeff != 0.0 {
                        let mut lap = Mat::zeros(d);
                        for k in 0..2 {
                            lap += a.slice(k) * s.grad[k];
                        }
                        gp.laplacian[s.node] += lap * (q.weight * coeff);
                    }
                }
            }
        }

        let load = self.load_vector(t);
        energy -= phi.dot(&load);
        if let Some(g) = grad_phi.as_mut() {
            for ((gi, li), fixed) in g.iter_mut().zip(&load).zip(self.mesh.dirichlet_mask()) {
                *gi = if *fixed { 0.0 } else { *gi - li };
            }
        }
        Ok(Evaluation { energy: Energy::Finite(energy), grad_phi, grad_p })
    }

    pub fn assemble_energy(&self, t: f64, phi: &DeformationField, p: &PlasticField) -> Result<Energy> {
        Ok(self.evaluate(t, phi, p, false, false)?.energy)
    }

    /// Gradient with respect to the φ-dofs; Dirichlet entries are zero.
    pub fn grad_phi_energy(&self, t: f64, phi: &DeformationField, p: &PlasticField) -> Result<Vec<f64>> {
        let ev = self.evaluate(t, phi, p, true, false)?;
        ev.energy.value()?;
        Ok(ev.grad_phi.expect("requested"))
    }

    /// Nodal gradient with respect to P, split into its three parts.
    pub fn grad_p_energy(&self, t: f64, phi: &DeformationField, p: &PlasticField) -> Result<PGradient> {
        let ev = self.evaluate(t, phi, p, false, true)?;
        ev.energy.value()?;
        Ok(ev.grad_p.expect("requested"))
    }
}

//! The generalized gradient system built on a [`Model`]: reduced energy by
//! inner minimization over the deformation, the state-dependent dissipation
//! and its conjugate, a marginal-subdifferential selection, and the power
//! functional.
//!
//! Dual quantities are nodal densities: `Ξ_a = (∂I/∂P_a) / m_a`, paired with
//! rates through `⟨Ξ, V⟩ = Σ_a m_a Ξ_a : V_a`.

use crate::constitutive::{dissipation_r, dissipation_r_conj, prox_r, DissipationParams, Energy};
use crate::discretization::{DeformationField, Model, PlasticField};
use crate::error::{Error, Result};
use crate::optim::{lbfgs, LbfgsOptions};
use crate::tensor::Mat;

#[derive(Clone, Debug, PartialEq)]
pub struct ReducedEnergyResult {
    pub value: f64,
    pub minimizer_phi: DeformationField,
    pub converged: bool,
    pub inner_iterations: usize,
    pub grad_norm: f64,
}

/// One element of the marginal subdifferential, `D_P I(t, φ*, P)` as nodal
/// densities, with its three contributions stored separately.
#[derive(Clone, Debug, PartialEq)]
pub struct SubdiffSelection {
    pub xi: Vec<Mat>,
    pub phi_star: DeformationField,
    pub laplacian: Vec<Mat>,
    pub hardening: Vec<Mat>,
    /// Elastic contribution; pointwise `−B(∇φ, P)`.
    pub backstress: Vec<Mat>,
    pub energy: ReducedEnergyResult,
}

/// The operations the minimizing-movement scheme needs from a gradient system.
pub trait GeneralizedGradientSystem {
    fn dim(&self) -> usize;

    /// Lumped nodal weights `m_a` used by every pairing.
    fn weights(&self) -> &[f64];

    /// `E(t, P)` with the minimizing deformation.
    fn reduced_energy(&mut self, t: f64, p: &PlasticField) -> Result<ReducedEnergyResult>;

    fn subdifferential_select(&mut self, t: f64, p: &PlasticField) -> Result<SubdiffSelection>;

    /// `𝔓(t, P, Ξ)` evaluated at the selected minimizer.
    fn power(&self, t: f64, sel: &SubdiffSelection) -> f64;

    /// `Ψ_P(V) = Σ_a m_a R_a(V_a P_a⁻¹)`.
    fn dissipation(&self, p: &PlasticField, v: &[Mat]) -> Result<f64>;

    /// `Ψ*_P(Ξ) = Σ_a m_a R*_a(Ξ_a P_aᵀ)`.
    fn dual_dissipation(&self, p: &PlasticField, xi: &[Mat]) -> Result<f64>;

    /// Reduced density `R_a(U)` at node `a`.
    fn reduced_density(&self, node: usize, u: &Mat) -> f64;

    /// Reduced conjugate density `R*_a(Θ)` at node `a`.
    fn reduced_density_conj(&self, node: usize, theta: &Mat) -> f64;

    /// `argmin_U ½|U − y|² + s R_a(U)`.
    fn prox_reduced(&self, node: usize, y: &Mat, s: f64) -> Mat;

    /// Yield radius at a node, for yield-state bookkeeping.
    fn yield_radius(&self, node: usize) -> f64;

    /// Smallest `det P` over the points where the energy evaluates `P`.
    fn min_det(&self, p: &PlasticField) -> f64;

    fn warm_start(&self) -> Option<&DeformationField>;

    fn set_warm_start(&mut self, phi: DeformationField);
}

#[derive(Clone, Copy, Debug)]
pub struct InnerOptions {
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl InnerOptions {
    pub fn point() -> Self {
        Self { grad_tol: 1e-8, max_iter: 500 }
    }

    pub fn fem2d() -> Self {
        Self { grad_tol: 1e-6, max_iter: 500 }
    }
}

/// The viscoplastic gradient system of a [`Model`].
#[derive(Clone, Debug)]
pub struct ViscoplasticSystem {
    pub model: Model,
    pub inner: InnerOptions,
    dissipation: Vec<DissipationParams>,
    warm: Option<DeformationField>,
}

impl ViscoplasticSystem {
    /// Homogeneous dissipation taken from the model's material.
    pub fn new(model: Model, inner: InnerOptions) -> Self {
        let dissipation = vec![model.material.dissipation; model.mesh.n_p_nodes()];
        Self { model, inner, dissipation, warm: None }
    }

    /// Per-node yield stress and viscosity.
    pub fn with_dissipation_field(mut self, field: Vec<DissipationParams>) -> Result<Self> {
        if field.len() != self.model.mesh.n_p_nodes() {
            return Err(Error::DimensionMismatch { expected: self.model.mesh.n_p_nodes(), found: field.len() });
        }
        for d in &field {
            d.validate()?;
        }
        self.dissipation = field;
        Ok(self)
    }

    pub fn dissipation_params(&self) -> &[DissipationParams] {
        &self.dissipation
    }

    /// Minimizes `φ ↦ I(t, φ, P)` from `phi_init` over the free dofs.
    pub fn inner_minimize(&self, t: f64, p: &PlasticField, phi_init: &DeformationField) -> Result<ReducedEnergyResult> {
        let mesh = &self.model.mesh;
        mesh.check_p(p)?;
        mesh.check_phi(phi_init)?;
        if !mesh.is_admissible(p) {
            return Err(Error::NonPositiveDeterminant { det: mesh.min_det(p) });
        }
        let mut phi = phi_init.clone();
        phi.enforce_dirichlet(mesh, &self.model.reference);
        let free = mesh.free_dofs();
        let x0: Vec<f64> = free.iter().map(|&i| phi.dofs[i]).collect();
        let opts = LbfgsOptions { grad_tol: self.inner.grad_tol, max_iter: self.inner.max_iter, memory: 10 };
        let mut work = phi.clone();
        let res = lbfgs(x0, &opts, |x| {
            for (k, &i) in free.iter().enumerate() {
                work.dofs[i] = x[k];
            }
            let ev = self.model.evaluate(t, &work, p, true, false).ok()?;
            let value = ev.energy.finite()?;
            let g = ev.grad_phi?;
            Some((value, free.iter().map(|&i| g[i]).collect()))
        })?;
        for (k, &i) in free.iter().enumerate() {
            phi.dofs[i] = res.x[k];
        }
        if !res.converged {
            return Err(Error::InnerSolverDiverged { iterations: res.iterations, grad_norm: res.grad_norm });
        }
        Ok(ReducedEnergyResult {
            value: res.value,
            minimizer_phi: phi,
            converged: true,
            inner_iterations: res.iterations,
            grad_norm: res.grad_norm,
        })
    }

    /// Reduced energy of the model with regularization weight `eta`, started
    /// from the current warm start. Does not modify `self`.
    pub fn regularized_energy(&self, t: f64, p: &PlasticField, eta: f64) -> Result<ReducedEnergyResult> {
        let mut other = self.clone();
        other.model = self.model.with_eta(eta);
        other.reduced_energy(t, p)
    }

    fn selection_from(&self, t: f64, p: &PlasticField, energy: ReducedEnergyResult) -> Result<SubdiffSelection> {
        let g = self.model.grad_p_energy(t, &energy.minimizer_phi, p)?;
        let w = self.model.mesh.nodal_weights();
        let density = |v: Vec<Mat>| -> Vec<Mat> { v.into_iter().zip(w).map(|(m, wa)| m * (1.0 / wa)).collect() };
        let laplacian = density(g.laplacian);
        let hardening = density(g.hardening);
        let backstress = density(g.elastic);
        let xi = laplacian
            .iter()
            .zip(&hardening)
            .zip(&backstress)
            .map(|((a, b), c)| *a + *b + *c)
            .collect();
        Ok(SubdiffSelection { xi, phi_star: energy.minimizer_phi.clone(), laplacian, hardening, backstress, energy })
    }
}

impl GeneralizedGradientSystem for ViscoplasticSystem {
    fn dim(&self) -> usize {
        self.model.mesh.dim()
    }

    fn weights(&self) -> &[f64] {
        self.model.mesh.nodal_weights()
    }

    fn reduced_energy(&mut self, t: f64, p: &PlasticField) -> Result<ReducedEnergyResult> {
        let reference = self.model.reference.clone();
        let start = self.warm.clone().unwrap_or_else(|| reference.clone());
        let usable = matches!(self.model.assemble_energy(t, &start, p)?, Energy::Finite(_));
        let mut best = if usable {
            self.inner_minimize(t, p, &start)?
        } else {
            self.inner_minimize(t, p, &reference)?
        };
        // E(t,P) ≤ I(t, φ_ref, P) must hold for the affine reference too.
        if usable && start != reference {
            if let Energy::Finite(e_ref) = self.model.assemble_energy(t, &reference, p)? {
                if e_ref < best.value {
                    let alt = self.inner_minimize(t, p, &reference)?;
                    if alt.value < best.value {
                        best = alt;
                    }
                }
            }
        }
        self.warm = Some(best.minimizer_phi.clone());
        Ok(best)
    }

    fn subdifferential_select(&mut self, t: f64, p: &PlasticField) -> Result<SubdiffSelection> {
        let energy = self.reduced_energy(t, p)?;
        self.selection_from(t, p, energy)
    }

    fn power(&self, t: f64, sel: &SubdiffSelection) -> f64 {
        -sel.phi_star.dot(&self.model.load_rate_vector(t))
    }

    fn dissipation(&self, p: &PlasticField, v: &[Mat]) -> Result<f64> {
        self.model.mesh.check_p(p)?;
        if v.len() != p.len() {
            return Err(Error::DimensionMismatch { expected: p.len(), found: v.len() });
        }
        let mut total = 0.0;
        for (a, (pa, va)) in p.values.iter().zip(v).enumerate() {
            total += self.weights()[a] * dissipation_r(&(*va * pa.inv()?), &self.dissipation[a]);
        }
        Ok(total)
    }

    fn dual_dissipation(&self, p: &PlasticField, xi: &[Mat]) -> Result<f64> {
        self.model.mesh.check_p(p)?;
        if xi.len() != p.len() {
            return Err(Error::DimensionMismatch { expected: p.len(), found: xi.len() });
        }
        let mut total = 0.0;
        for (a, (pa, xa)) in p.values.iter().zip(xi).enumerate() {
            let det = pa.det();
            if !(det > 0.0) {
                return Err(Error::NonPositiveDeterminant { det });
            }
            total += self.weights()[a] * dissipation_r_conj(&(*xa * pa.transpose()), &self.dissipation[a]);
        }
        Ok(total)
    }

    fn reduced_density(&self, node: usize, u: &Mat) -> f64 {
        dissipation_r(u, &self.dissipation[node])
    }

    fn reduced_density_conj(&self, node: usize, theta: &Mat) -> f64 {
        dissipation_r_conj(theta, &self.dissipation[node])
    }

    fn prox_reduced(&self, node: usize, y: &Mat, s: f64) -> Mat {
        prox_r(y, s, &self.dissipation[node])
    }

    fn yield_radius(&self, node: usize) -> f64 {
        self.dissipation[node].sigma_yield
    }

    fn min_det(&self, p: &PlasticField) -> f64 {
        self.model.mesh.min_det(p)
    }

    fn warm_start(&self) -> Option<&DeformationField> {
        self.warm.as_ref()
    }

    fn set_warm_start(&mut self, phi: DeformationField) {
        self.warm = Some(phi);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constitutive::Material;
    use crate::discretization::{DirichletSet, LoadShape, LoadSpec, Mesh};

    fn pinned_point() -> ViscoplasticSystem {
        let mesh = Mesh::unit_point(2, true);
        let model = Model::new(mesh, Material::example(2), LoadSpec::zero(2), &Mat::identity(2), 0.0).unwrap();
        ViscoplasticSystem::new(model, InnerOptions::point())
    }

    #[test]
    fn point_selection_at_identity() {
        let mut sys = pinned_point();
        let p = PlasticField::uniform(&sys.model.mesh, Mat::identity(2));
        let sel = sys.subdifferential_select(0.0, &p).unwrap();
        assert_eq!(sel.xi[0], Mat::scalar(2, -10.0));
        assert_eq!(sel.xi[0], sel.laplacian[0] + sel.hardening[0] + sel.backstress[0]);
        assert_eq!(sel.energy.inner_iterations, 0);
        assert_eq!(sys.power(0.0, &sel), 0.0);
    }

    #[test]
    fn dissipation_vanishes_at_zero_rate() {
        let sys = pinned_point();
        let p = PlasticField { values: vec![Mat::from_rows([[1.2, 0.3], [-0.1, 0.9]])] };
        assert_eq!(sys.dissipation(&p, &[Mat::zeros(2)]).unwrap(), 0.0);
        let id = PlasticField { values: vec![Mat::identity(2)] };
        let v = Mat::from_rows([[0.4, 0.0], [0.3, -0.2]]);
        let expected = dissipation_r(&v, &sys.model.material.dissipation);
        assert!((sys.dissipation(&id, &[v]).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn fem2d_affine_is_reproduced() {
        let mesh = Mesh::fem2d(4, DirichletSet::Boundary).unwrap();
        let f0 = Mat::diag(&[1.1, 0.95]);
        let model = Model::new(mesh, Material::example(2), LoadSpec::zero(2), &f0, 0.0).unwrap();
        let sys = ViscoplasticSystem::new(model, InnerOptions { grad_tol: 1e-9, max_iter: 500 });
        let p = PlasticField::uniform(&sys.model.mesh, Mat::identity(2));
        let mut init = sys.model.reference.clone();
        for (i, v) in init.dofs.iter_mut().enumerate() {
            *v += 0.02 * ((i * 7 % 11) as f64 / 11.0 - 0.5);
        }
        let r = sys.inner_minimize(0.0, &p, &init).unwrap();
        let target = sys.model.material.w(&f0).value().unwrap() + 9.0;
        assert!((r.value - target).abs() <= 1e-8 * target, "{} vs {}", r.value, target);
    }

    #[test]
    fn zero_load_energy_is_time_independent() {
        let mesh = Mesh::unit_point(2, false);
        let model = Model::new(mesh, Material::example(2), LoadSpec::zero(2), &Mat::identity(2), 0.0).unwrap();
        let mut sys = ViscoplasticSystem::new(model, InnerOptions::point());
        let p = PlasticField { values: vec![Mat::from_rows([[1.05, 0.02], [0.0, 0.97]])] };
        let e0 = sys.reduced_energy(0.0, &p).unwrap();
        let mut sys2 = sys.clone();
        sys2.warm = None;
        let e1 = sys2.reduced_energy(0.7, &p).unwrap();
        assert_eq!(e0.value, e1.value);
    }

    #[test]
    fn ramp_power_is_minus_load_pairing() {
        let mesh = Mesh::unit_point(2, false);
        let load = LoadSpec { force: vec![2.0, 0.0], shape: LoadShape::Ramp { rate: 1.5 } };
        let model = Model::new(mesh, Material::example(2), load, &Mat::identity(2), 0.0).unwrap();
        let mut sys = ViscoplasticSystem::new(model, InnerOptions::point());
        let p = PlasticField { values: vec![Mat::identity(2)] };
        let sel = sys.subdifferential_select(0.4, &p).unwrap();
        let l1: Vec<f64> = sys.model.mesh.body_force_vector(&[2.0, 0.0]).iter().map(|b| 1.5 * b).collect();
        let expected = -sel.phi_star.dot(&l1);
        assert!((sys.power(0.4, &sel) - expected).abs() < 1e-14);
    }
}

//! Energy and dissipation densities, their derivatives and conjugates, and
//! the stress tensors built from them.
//!
//! Densities that can be infinite return [`Energy`]; derivatives and stresses
//! return `Result` and fail with [`Error::NonPositiveDeterminant`] outside
//! GL⁺(d).

use std::cmp::Ordering;
use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Mat, Tensor3};

/// An energy value that is either finite or the absorbing `+∞` marker.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Energy {
    Finite(f64),
    Infinite,
}

impl Energy {
    pub fn finite(self) -> Option<f64> {
        match self {
            Energy::Finite(v) => Some(v),
            Energy::Infinite => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Energy::Finite(_))
    }

    /// Finite value or [`Error::InfiniteEnergyState`].
    pub fn value(self) -> Result<f64> {
        self.finite().ok_or(Error::InfiniteEnergyState)
    }

    /// `f64` view for reporting only; `+∞` maps to `f64::INFINITY`.
    pub fn to_f64(self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }

    pub fn scale(self, s: f64) -> Energy {
        match self {
            Energy::Finite(v) => Energy::Finite(v * s),
            Energy::Infinite => Energy::Infinite,
        }
    }
}

impl Add for Energy {
    type Output = Energy;
    fn add(self, rhs: Energy) -> Energy {
        match (self, rhs) {
            (Energy::Finite(a), Energy::Finite(b)) => Energy::Finite(a + b),
            _ => Energy::Infinite,
        }
    }
}

impl Add<f64> for Energy {
    type Output = Energy;
    fn add(self, rhs: f64) -> Energy {
        self + Energy::Finite(rhs)
    }
}

impl PartialOrd for Energy {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (Energy::Finite(a), Energy::Finite(b)) => a.partial_cmp(b),
            (Energy::Finite(_), Energy::Infinite) => Some(Ordering::Less),
            (Energy::Infinite, Energy::Finite(_)) => Some(Ordering::Greater),
            (Energy::Infinite, Energy::Infinite) => Some(Ordering::Equal),
        }
    }
}

/// Growth exponents of the energy and the dissipation exponent `p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentSet {
    pub dim: usize,
    pub q_phi: f64,
    pub q_f: f64,
    pub q_p: f64,
    pub q_g: f64,
    pub q_gamma: f64,
    pub p: f64,
}

impl ExponentSet {
    /// q_Φ = d+1, q_F = q_P = q_G = 2d+2, q_γ = 4d+4, p = 2.
    pub fn example(dim: usize) -> Self {
        let d = dim as f64;
        Self {
            dim,
            q_phi: d + 1.0,
            q_f: 2.0 * d + 2.0,
            q_p: 2.0 * d + 2.0,
            q_g: 2.0 * d + 2.0,
            q_gamma: 4.0 * d + 4.0,
            p: 2.0,
        }
    }

    /// `q̃` from `1/q̃ = 2/q_γ + 1/q_G`.
    pub fn q_tilde(&self) -> f64 {
        1.0 / (2.0 / self.q_gamma + 1.0 / self.q_g)
    }

    /// Conjugate exponent `p' = p/(p−1)`.
    pub fn p_conj(&self) -> f64 {
        self.p / (self.p - 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim as f64;
        if self.dim != 2 && self.dim != 3 {
            return Err(Error::Config(format!("dimension must be 2 or 3, got {}", self.dim)));
        }
        let all = [
            ("q_phi", self.q_phi),
            ("q_F", self.q_f),
            ("q_P", self.q_p),
            ("q_G", self.q_g),
            ("q_gamma", self.q_gamma),
            ("p", self.p),
        ];
        for (name, v) in all {
            if !(v.is_finite() && v > 1.0) {
                return Err(Error::Config(format!("exponent {name} = {v} must be a real > 1")));
            }
        }
        let mismatch = 1.0 / self.q_phi - (1.0 / self.q_f + 1.0 / self.q_p);
        if mismatch.abs() > 1e-12 || !(self.q_phi > d) {
            return Err(Error::Config(format!(
                "exponent condition 1/q_phi = 1/q_F + 1/q_P with q_phi > d violated \
                 (q_phi = {}, q_F = {}, q_P = {}, d = {})",
                self.q_phi, self.q_f, self.q_p, self.dim
            )));
        }
        let q_tilde = self.q_tilde();
        if !(q_tilde > d) {
            return Err(Error::Config(format!(
                "exponent condition q_tilde > d with 1/q_tilde = 2/q_gamma + 1/q_G violated \
                 (q_gamma = {}, q_G = {}, q_tilde = {q_tilde}, d = {})",
                self.q_gamma, self.q_g, self.dim
            )));
        }
        for (name, v) in [("q_G", self.q_g), ("q_P", self.q_p), ("q_gamma", self.q_gamma), ("q_F", self.q_f)] {
            if !(v > d) {
                return Err(Error::Config(format!("exponent {name} = {v} must exceed d = {}", self.dim)));
            }
        }
        Ok(())
    }
}

/// Hardening function `K(P) = c1|P|^q_P + c2 det(P)^{−q_γ}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardeningParams {
    pub c1: f64,
    pub c2: f64,
    pub q_p: f64,
    pub q_gamma: f64,
}

/// Elastic density `W(F) = c3|F|^q_F + c4 det(F)^{−η_W}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElasticParams {
    pub c3: f64,
    pub c4: f64,
    pub eta_w: f64,
}

/// Dissipation density `R(V) = σ|V| + (ν/p)|V|^p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DissipationParams {
    pub sigma_yield: f64,
    pub nu: f64,
    pub p: f64,
}

/// Regularizer `W̃(F) = max(C7(|F|^{p'q_W} + |F⁻¹|^{p'q_W}) − C8, 0)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizerParams {
    pub c7: f64,
    pub c8: f64,
    pub q_w: f64,
}

impl HardeningParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c1 > 0.0 && self.c2 > 0.0) {
            return Err(Error::Config("hardening constants c1, c2 must be positive".into()));
        }
        Ok(())
    }
}

impl ElasticParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c3 > 0.0 && self.c4 > 0.0 && self.eta_w > 0.0) {
            return Err(Error::Config("elastic constants c3, c4, eta_W must be positive".into()));
        }
        Ok(())
    }
}

impl DissipationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_yield > 0.0 && self.sigma_yield.is_finite()) {
            return Err(Error::Config("sigma_yield must be positive and finite".into()));
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::Config("viscosity nu must be positive and finite".into()));
        }
        if !(self.p > 1.0) {
            return Err(Error::Config("dissipation exponent p must exceed 1".into()));
        }
        Ok(())
    }

    pub fn p_conj(&self) -> f64 {
        self.p / (self.p - 1.0)
    }
}

impl RegularizerParams {
    pub fn validate(&self, exps: &ExponentSet, ep: &ElasticParams) -> Result<()> {
        if !(self.c7 >= 0.0 && self.c8 >= 0.0) {
            return Err(Error::Config("regularizer constants C7, C8 must be nonnegative".into()));
        }
        let needed = exps.q_f.max(exps.dim as f64 * ep.eta_w);
        if !(self.q_w >= needed) {
            return Err(Error::Config(format!(
                "regularizer exponent q_W = {} must be at least max(q_F, d*eta_W) = {needed}",
                self.q_w
            )));
        }
        Ok(())
    }
}

// |X|^q from |X|², exact for integer powers of √2 and friends
fn norm_pow(norm_sq: f64, q: f64) -> f64 {
    norm_sq.powf(0.5 * q)
}

// |X|^{q−2} with the 0-at-0 convention
fn power_grad_coeff(norm_sq: f64, q: f64) -> f64 {
    if norm_sq == 0.0 {
        0.0
    } else {
        norm_sq.powf(0.5 * (q - 2.0))
    }
}

pub fn hardening_k(p: &Mat, hp: &HardeningParams) -> Energy {
    let det = p.det();
    if !(det > 0.0) {
        return Energy::Infinite;
    }
    Energy::Finite(hp.c1 * norm_pow(p.norm_sq(), hp.q_p) + hp.c2 * det.powf(-hp.q_gamma))
}

/// `DK(P) = c1 q_P |P|^{q_P−2} P − c2 q_γ det(P)^{−q_γ} P⁻ᵀ`.
pub fn d_hardening_k(p: &Mat, hp: &HardeningParams) -> Result<Mat> {
    let det = p.det();
    if !(det > 0.0) {
        return Err(Error::NonPositiveDeterminant { det });
    }
    let inv_t = p.cofactor() * (1.0 / det);
    Ok(*p * (hp.c1 * hp.q_p * power_grad_coeff(p.norm_sq(), hp.q_p))
        - inv_t * (hp.c2 * hp.q_gamma * det.powf(-hp.q_gamma)))
}

/// Value and partial derivatives of `H(P, A) = K(P) + |A|^{q_G}/q_G`.
#[derive(Clone, Copy, Debug)]
pub struct HValue {
    pub value: f64,
    pub d_p: Mat,
    pub d_a: Tensor3,
}

pub fn gradient_term_h(p: &Mat, a: &Tensor3, hp: &HardeningParams, q_g: f64) -> Result<HValue> {
    let k = hardening_k(p, hp).finite().ok_or(Error::NonPositiveDeterminant { det: p.det() })?;
    let nsq = a.norm_sq();
    Ok(HValue {
        value: k + norm_pow(nsq, q_g) / q_g,
        d_p: d_hardening_k(p, hp)?,
        d_a: a.scaled(power_grad_coeff(nsq, q_g)),
    })
}

pub fn elastic_w(f: &Mat, ep: &ElasticParams, q_f: f64) -> Energy {
    let det = f.det();
    if !(det > 0.0) {
        return Energy::Infinite;
    }
    Energy::Finite(ep.c3 * norm_pow(f.norm_sq(), q_f) + ep.c4 * det.powf(-ep.eta_w))
}

/// `DW(F) = c3 q_F |F|^{q_F−2} F − c4 η det(F)^{−η−1} cof(F)`.
pub fn d_elastic_w(f: &Mat, ep: &ElasticParams, q_f: f64) -> Result<Mat> {
    let det = f.det();
    if !(det > 0.0) {
        return Err(Error::NonPositiveDeterminant { det });
    }
    Ok(*f * (ep.c3 * q_f * power_grad_coeff(f.norm_sq(), q_f))
        - f.cofactor() * (ep.c4 * ep.eta_w * det.powf(-ep.eta_w - 1.0)))
}

/// Mandel stress `M(F) = Fᵀ DW(F)` in closed form:
/// `c3 q_F |F|^{q_F−2} FᵀF − c4 η det(F)^{−η} I`.
pub fn mandel_stress(f: &Mat, ep: &ElasticParams, q_f: f64) -> Result<Mat> {
    let det = f.det();
    if !(det > 0.0) {
        return Err(Error::NonPositiveDeterminant { det });
    }
    let d = f.dim();
    Ok((f.transpose() * *f) * (ep.c3 * q_f * power_grad_coeff(f.norm_sq(), q_f))
        - Mat::scalar(d, ep.c4 * ep.eta_w * det.powf(-ep.eta_w)))
}

/// Kirchhoff stress `S(F) = DW(F) Fᵀ`.
pub fn kirchhoff_stress(f: &Mat, ep: &ElasticParams, q_f: f64) -> Result<Mat> {
    Ok(d_elastic_w(f, ep, q_f)? * f.transpose())
}

/// Backstress `B(F, P) = M(F P⁻¹) P⁻ᵀ`.
///
/// The derivative of `P ↦ W(F P⁻¹)` is `−B(F, P)`.
pub fn backstress_b(f: &Mat, p: &Mat, ep: &ElasticParams, q_f: f64) -> Result<Mat> {
    let det_f = f.det();
    if !(det_f > 0.0) {
        return Err(Error::NonPositiveDeterminant { det: det_f });
    }
    let p_inv = p.inv()?;
    let fe = *f * p_inv;
    Ok(mandel_stress(&fe, ep, q_f)? * p_inv.transpose())
}

pub fn regularizer_wtilde(f: &Mat, rp: &RegularizerParams, p: f64) -> Energy {
    let det = f.det();
    if !(det > 0.0) {
        return Energy::Infinite;
    }
    let Ok(g) = f.inv() else {
        return Energy::Infinite;
    };
    let k = p / (p - 1.0) * rp.q_w;
    let raw = rp.c7 * (norm_pow(f.norm_sq(), k) + norm_pow(g.norm_sq(), k)) - rp.c8;
    Energy::Finite(raw.max(0.0))
}

/// Derivative of [`regularizer_wtilde`]; zero where the clamp is active.
pub fn d_regularizer_wtilde(f: &Mat, rp: &RegularizerParams, p: f64) -> Result<Mat> {
    let det = f.det();
    if !(det > 0.0) {
        return Err(Error::NonPositiveDeterminant { det });
    }
    let g = f.inv()?;
    let k = p / (p - 1.0) * rp.q_w;
    let (nf, ng) = (f.norm_sq(), g.norm_sq());
    if rp.c7 * (norm_pow(nf, k) + norm_pow(ng, k)) - rp.c8 <= 0.0 {
        return Ok(Mat::zeros(f.dim()));
    }
    let gt = g.transpose();
    Ok((*f * (k * power_grad_coeff(nf, k)) - (gt * g * gt) * (k * power_grad_coeff(ng, k))) * rp.c7)
}

pub fn dissipation_r(v: &Mat, dp: &DissipationParams) -> f64 {
    let nsq = v.norm_sq();
    dp.sigma_yield * nsq.sqrt() + dp.nu / dp.p * norm_pow(nsq, dp.p)
}

/// Convex conjugate of [`dissipation_r`]:
/// `R*(Ξ) = (1/(p' ν^{p'−1})) max(|Ξ| − σ, 0)^{p'}`; for p = 2 this is
/// `dist²(Ξ, E)/(2ν)` with the elastic domain `E = {|Ξ| ≤ σ}`.
pub fn dissipation_r_conj(xi: &Mat, dp: &DissipationParams) -> f64 {
    let excess = xi.norm() - dp.sigma_yield;
    if excess <= 0.0 {
        return 0.0;
    }
    let q = dp.p_conj();
    if dp.p == 2.0 {
        return excess * excess / (2.0 * dp.nu);
    }
    excess.powf(q) / (q * dp.nu.powf(q - 1.0))
}

/// The subdifferential of `R` at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Subgradient {
    /// `V ≠ 0`: the single element `σ V/|V| + ν|V|^{p−2} V`.
    Unique(Mat),
    /// `V = 0`: the yield ball `{Ξ : |Ξ| ≤ σ}`.
    YieldBall { radius: f64 },
}

impl Subgradient {
    pub fn contains(&self, xi: &Mat) -> bool {
        match self {
            Subgradient::Unique(m) => *m == *xi,
            Subgradient::YieldBall { radius } => xi.norm() <= *radius,
        }
    }
}

pub fn subdiff_r(v: &Mat, dp: &DissipationParams) -> Subgradient {
    let n = v.norm();
    if n == 0.0 {
        return Subgradient::YieldBall { radius: dp.sigma_yield };
    }
    Subgradient::Unique(*v * (dp.sigma_yield / n + dp.nu * n.powf(dp.p - 2.0)))
}

/// Proximal map `argmin_U ½|U − y|² + s R(U)`.
///
/// R is radial, so the minimizer is `ρ y/|y|` where `ρ = 0` inside the
/// shrunken yield ball and otherwise `ρ + sν ρ^{p−1} = |y| − sσ`.
pub fn prox_r(y: &Mat, s: f64, dp: &DissipationParams) -> Mat {
    let r = y.norm();
    let c = r - s * dp.sigma_yield;
    if c <= 0.0 {
        return Mat::zeros(y.dim());
    }
    let rho = if dp.p == 2.0 {
        c / (1.0 + s * dp.nu)
    } else {
        solve_radial(c, s * dp.nu, dp.p)
    };
    *y * (rho / r)
}

// Root of g(ρ) = ρ + a ρ^{p−1} − c on (0, c]; g is increasing.
fn solve_radial(c: f64, a: f64, p: f64) -> f64 {
    let g = |x: f64| x + a * x.powf(p - 1.0) - c;
    let (mut lo, mut hi) = (0.0f64, c);
    let mut x = if p > 2.0 { c.min((c / a).powf(1.0 / (p - 1.0))) } else { 0.5 * c };
    for _ in 0..200 {
        let gx = g(x);
        if gx == 0.0 {
            return x;
        }
        if gx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let dg = 1.0 + a * (p - 1.0) * x.powf(p - 2.0);
        let mut next = x - gx / dg;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 4.0 * f64::EPSILON * x.max(f64::MIN_POSITIVE) {
            return next;
        }
        x = next;
    }
    x
}

/// `|M(F)| / (W(F) + 1)`.
///
/// Bounded above by `q_F + η_W √d` for the example family: the triangle
/// inequality on the closed-form Mandel stress gives
/// `|M| ≤ q_F c3|F|^{q_F−2}|FᵀF| + η c4 det^{−η}|I| ≤ q_F·c3|F|^{q_F} + η√d·c4 det^{−η}`,
/// using `|FᵀF| ≤ |F|²`, and both terms are dominated by `(q_F + η√d)(W + 1)`.
pub fn stress_control_ratio(f: &Mat, ep: &ElasticParams, q_f: f64) -> Result<f64> {
    let m = mandel_stress(f, ep, q_f)?;
    let w = elastic_w(f, ep, q_f).value()?;
    Ok(m.norm() / (w + 1.0))
}

/// The analytic bound `q_F + η_W √d` for [`stress_control_ratio`].
pub fn stress_control_bound(ep: &ElasticParams, q_f: f64, dim: usize) -> f64 {
    q_f + ep.eta_w * (dim as f64).sqrt()
}

/// Complete parameter set for the example material.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub exponents: ExponentSet,
    pub hardening: HardeningParams,
    pub elastic: ElasticParams,
    pub dissipation: DissipationParams,
    pub regularizer: RegularizerParams,
}

impl Material {
    /// Example material: unit constants, η_W = 2, σ = ν = 1, C7 = 1, C8 = 0.
    pub fn example(dim: usize) -> Self {
        let exponents = ExponentSet::example(dim);
        Self {
            exponents,
            hardening: HardeningParams {
                c1: 1.0,
                c2: 1.0,
                q_p: exponents.q_p,
                q_gamma: exponents.q_gamma,
            },
            elastic: ElasticParams { c3: 1.0, c4: 1.0, eta_w: 2.0 },
            dissipation: DissipationParams { sigma_yield: 1.0, nu: 1.0, p: exponents.p },
            regularizer: RegularizerParams { c7: 1.0, c8: 0.0, q_w: exponents.q_f },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.exponents.validate()?;
        self.hardening.validate()?;
        self.elastic.validate()?;
        self.dissipation.validate()?;
        self.regularizer.validate(&self.exponents, &self.elastic)?;
        if self.hardening.q_p != self.exponents.q_p || self.hardening.q_gamma != self.exponents.q_gamma {
            return Err(Error::Config("hardening exponents disagree with the exponent set".into()));
        }
        if self.dissipation.p != self.exponents.p {
            return Err(Error::Config("dissipation exponent disagrees with the exponent set".into()));
        }
        Ok(())
    }

    pub fn w(&self, f: &Mat) -> Energy {
        elastic_w(f, &self.elastic, self.exponents.q_f)
    }

    pub fn k(&self, p: &Mat) -> Energy {
        hardening_k(p, &self.hardening)
    }
}

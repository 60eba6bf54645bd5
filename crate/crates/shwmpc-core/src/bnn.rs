//! Bijective neural networks: conditioned layered maps with guaranteed
//! invertibility, an analytic layerwise inverse and exact input Jacobians.
//!
//! Each layer computes `xi <- phi(Omega(eta) xi + beta(eta), alpha(eta))`
//! where `phi` is the strictly increasing activation
//! `asinh(alpha + sinh(.))` and `Omega`, `beta`, `alpha` are small dense
//! tanh networks of the conditioning input. The general variant emits a full
//! weight matrix whose entries are free network outputs (nonsingularity is
//! monitored, not reparameterized); the diagonal variant emits
//! `sign * exp(raw)` diagonal entries, so each coordinate is a strictly
//! monotone scalar map and box constraints transport to box constraints.

use alloc::vec;
use alloc::vec::Vec;

use crate::dense::DenseNet;
use crate::math;
use crate::real::{asinh_sinh, asinh_sinh_deriv, asinh_sinh_inv, Dual, Real};
use crate::rng::Rng;
use crate::{Error, Result};

pub use crate::real::{
    asinh_sinh as activation, asinh_sinh_deriv as activation_deriv,
    asinh_sinh_inv as activation_inv,
};

/// Determinant magnitude below which a conditioning weight matrix is treated
/// as singular. Reaching it during training is surfaced as an error.
pub const DET_GUARD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnnVariant {
    /// Full weight matrices; almost surely nonsingular, monitored at runtime.
    General,
    /// Diagonal weight matrices `sign * exp(raw)`; structurally invertible
    /// and coordinatewise monotone.
    Diagonal,
}

/// Architecture of a bijective network.
#[derive(Clone, Debug, PartialEq)]
pub struct BnnArch {
    pub xi_dim: usize,
    pub eta_dim: usize,
    pub depth: usize,
    /// Hidden widths of the conditioning networks (omega, beta, alpha).
    pub cond_hidden: Vec<usize>,
    pub variant: BnnVariant,
    /// Fixed per-layer, per-coordinate signs of the diagonal entries
    /// (`depth * xi_dim` values of +-1). Empty for the general variant.
    pub diag_signs: Vec<f64>,
}

impl BnnArch {
    pub fn new(
        xi_dim: usize,
        eta_dim: usize,
        depth: usize,
        cond_hidden: &[usize],
        variant: BnnVariant,
    ) -> Self {
        let diag_signs = match variant {
            BnnVariant::Diagonal => vec![1.0; depth * xi_dim],
            BnnVariant::General => Vec::new(),
        };
        BnnArch {
            xi_dim,
            eta_dim,
            depth,
            cond_hidden: cond_hidden.to_vec(),
            variant,
            diag_signs,
        }
    }

    pub fn omega_net(&self) -> DenseNet {
        let out = match self.variant {
            BnnVariant::General => self.xi_dim * self.xi_dim,
            BnnVariant::Diagonal => self.xi_dim,
        };
        DenseNet::new(self.eta_dim, &self.cond_hidden, out)
    }

    pub fn beta_net(&self) -> DenseNet {
        DenseNet::new(self.eta_dim, &self.cond_hidden, self.xi_dim)
    }

    pub fn alpha_net(&self) -> DenseNet {
        DenseNet::new(self.eta_dim, &self.cond_hidden, self.xi_dim)
    }

    pub fn layer_param_count(&self) -> usize {
        self.omega_net().param_count()
            + self.beta_net().param_count()
            + self.alpha_net().param_count()
    }

    pub fn param_count(&self) -> usize {
        self.depth * self.layer_param_count()
    }

    /// Parameters of the identity map: all conditioning nets zero, with the
    /// general variant's omega output biased to the identity matrix (the
    /// diagonal variant's `exp(0) = 1` is already the identity scale).
    pub fn identity_params(&self) -> Vec<f64> {
        let mut theta = vec![0.0; self.param_count()];
        if self.variant == BnnVariant::General {
            let omega = self.omega_net();
            for layer in 0..self.depth {
                let base = layer * self.layer_param_count() + omega.final_bias_offset();
                for i in 0..self.xi_dim {
                    theta[base + i * self.xi_dim + i] = 1.0;
                }
            }
        }
        theta
    }

    /// Near-identity random initialization: conditioning weights ~ N(0, std),
    /// final biases pinned so every layer starts at the identity map.
    pub fn init(&self, rng: &mut Rng, std: f64) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.param_count());
        for _ in 0..self.depth {
            self.omega_net().init(rng, std, &mut theta);
            self.beta_net().init(rng, std, &mut theta);
            self.alpha_net().init(rng, std, &mut theta);
        }
        if self.variant == BnnVariant::General {
            let omega = self.omega_net();
            for layer in 0..self.depth {
                let base = layer * self.layer_param_count() + omega.final_bias_offset();
                for i in 0..self.xi_dim {
                    theta[base + i * self.xi_dim + i] = 1.0;
                }
            }
        }
        theta
    }

    pub(crate) fn layer_theta<'a, T>(
        &self,
        theta: &'a [T],
        layer: usize,
    ) -> (&'a [T], &'a [T], &'a [T]) {
        let lp = self.layer_param_count();
        let base = layer * lp;
        let n_omega = self.omega_net().param_count();
        let n_beta = self.beta_net().param_count();
        let n_alpha = self.alpha_net().param_count();
        (
            &theta[base..base + n_omega],
            &theta[base + n_omega..base + n_omega + n_beta],
            &theta[base + n_omega + n_beta..base + n_omega + n_beta + n_alpha],
        )
    }

    /// Effective weight matrix of one layer, row-major (diagonal variant
    /// returns the dense embedding of the diagonal).
    fn omega_matrix<T: Real>(&self, raw: &[T], layer: usize) -> Vec<T> {
        let n = self.xi_dim;
        match self.variant {
            BnnVariant::General => raw.to_vec(),
            BnnVariant::Diagonal => {
                let mut m = vec![raw[0].lift(0.0); n * n];
                for i in 0..n {
                    let s = self.diag_signs[layer * n + i];
                    m[i * n + i] = raw[i].exp() * s;
                }
                m
            }
        }
    }
}

/// An owned bijective network: architecture plus flat parameters.
#[derive(Clone, Debug)]
pub struct BnnParams {
    pub arch: BnnArch,
    pub theta: Vec<f64>,
}

impl BnnParams {
    pub fn identity(arch: BnnArch) -> Self {
        let theta = arch.identity_params();
        BnnParams { arch, theta }
    }

    pub fn init(arch: BnnArch, rng: &mut Rng, std: f64) -> Self {
        let theta = arch.init(rng, std);
        BnnParams { arch, theta }
    }

    pub fn forward(&self, xi: &[f64], eta: &[f64]) -> Result<Vec<f64>> {
        forward(&self.arch, &self.theta, xi, eta)
    }

    pub fn inverse(&self, w: &[f64], eta: &[f64]) -> Result<Vec<f64>> {
        inverse(&self.arch, &self.theta, w, eta)
    }

    pub fn jacobian_xi(&self, xi: &[f64], eta: &[f64]) -> Result<Vec<f64>> {
        Ok(forward_with_jacobian(&self.arch, &self.theta, xi, eta)?.1)
    }
}

fn check_dims<T>(arch: &BnnArch, theta: &[T], xi: &[T], eta: &[T]) -> Result<()> {
    if xi.len() != arch.xi_dim {
        return Err(Error::dim("bnn", "xi dimension mismatch"));
    }
    if eta.len() != arch.eta_dim {
        return Err(Error::dim("bnn", "eta dimension mismatch"));
    }
    if theta.len() != arch.param_count() {
        return Err(Error::dim("bnn", "parameter count mismatch"));
    }
    if arch.depth == 0 {
        return Err(Error::dim("bnn", "depth must be at least 1"));
    }
    Ok(())
}

/// Forward pass `xi^(L)` of the layered map.
pub fn forward<T: Real>(arch: &BnnArch, theta: &[T], xi: &[T], eta: &[T]) -> Result<Vec<T>> {
    check_dims(arch, theta, xi, eta)?;
    let n = arch.xi_dim;
    let mut cur = xi.to_vec();
    for layer in 0..arch.depth {
        let (th_omega, th_beta, th_alpha) = arch.layer_theta(theta, layer);
        let omega_raw = arch.omega_net().eval(th_omega, eta);
        let omega = arch.omega_matrix(&omega_raw, layer);
        let beta = arch.beta_net().eval(th_beta, eta);
        let alpha = arch.alpha_net().eval(th_alpha, eta);
        let mut next = Vec::with_capacity(n);
        for i in 0..n {
            let mut acc = beta[i];
            for (j, &c) in cur.iter().enumerate() {
                acc = acc + omega[i * n + j] * c;
            }
            next.push(asinh_sinh(acc, alpha[i]));
        }
        cur = next;
    }
    Ok(cur)
}

/// Forward pass together with the exact Jacobian d(forward)/d(xi), row-major
/// `xi_dim x xi_dim`, accumulated as the product of per-layer
/// `diag(phi') * Omega` factors.
pub fn forward_with_jacobian<T: Real>(
    arch: &BnnArch,
    theta: &[T],
    xi: &[T],
    eta: &[T],
) -> Result<(Vec<T>, Vec<T>)> {
    check_dims(arch, theta, xi, eta)?;
    let n = arch.xi_dim;
    let zero = theta[0].lift(0.0);
    let mut cur = xi.to_vec();
    let mut jac = vec![zero; n * n];
    for i in 0..n {
        jac[i * n + i] = theta[0].lift(1.0);
    }
    for layer in 0..arch.depth {
        let (th_omega, th_beta, th_alpha) = arch.layer_theta(theta, layer);
        let omega_raw = arch.omega_net().eval(th_omega, eta);
        let omega = arch.omega_matrix(&omega_raw, layer);
        let beta = arch.beta_net().eval(th_beta, eta);
        let alpha = arch.alpha_net().eval(th_alpha, eta);

        // pre-activation and Omega * J
        let mut pre = Vec::with_capacity(n);
        let mut oj = vec![zero; n * n];
        for i in 0..n {
            let mut acc = beta[i];
            for j in 0..n {
                let w = omega[i * n + j];
                acc = acc + w * cur[j];
                for k in 0..n {
                    oj[i * n + k] = oj[i * n + k] + w * jac[j * n + k];
                }
            }
            pre.push(acc);
        }
        let mut next = Vec::with_capacity(n);
        for i in 0..n {
            let d = asinh_sinh_deriv(pre[i], alpha[i]);
            for k in 0..n {
                oj[i * n + k] = oj[i * n + k] * d;
            }
            next.push(asinh_sinh(pre[i], alpha[i]));
        }
        cur = next;
        jac = oj;
    }
    Ok((cur, jac))
}

/// Analytic inverse: peel layers back to front,
/// `xi^(i-1) = Omega^-1 (phi^-1(xi^(i), alpha) - beta)`.
pub fn inverse<T: Real>(arch: &BnnArch, theta: &[T], w: &[T], eta: &[T]) -> Result<Vec<T>> {
    check_dims(arch, theta, w, eta)?;
    let n = arch.xi_dim;
    let mut cur = w.to_vec();
    for layer in (0..arch.depth).rev() {
        let (th_omega, th_beta, th_alpha) = arch.layer_theta(theta, layer);
        let omega_raw = arch.omega_net().eval(th_omega, eta);
        let beta = arch.beta_net().eval(th_beta, eta);
        let alpha = arch.alpha_net().eval(th_alpha, eta);
        let mut rhs: Vec<T> = (0..n)
            .map(|i| asinh_sinh_inv(cur[i], alpha[i]) - beta[i])
            .collect();
        match arch.variant {
            BnnVariant::Diagonal => {
                for i in 0..n {
                    let s = arch.diag_signs[layer * n + i];
                    cur[i] = rhs[i] / (omega_raw[i].exp() * s);
                }
            }
            BnnVariant::General => {
                let mut mat = arch.omega_matrix(&omega_raw, layer);
                let det = crate::linalg::solve_generic(&mut mat, n, &mut rhs)?;
                if math::abs(det.val()) <= DET_GUARD {
                    return Err(Error::IllConditioned {
                        context: "bnn::inverse",
                        det: det.val(),
                        record: None,
                    });
                }
                cur = rhs;
            }
        }
    }
    Ok(cur)
}

/// Determinant of the input Jacobian at `(xi, eta)` (f64 path).
pub fn jacobian_det(arch: &BnnArch, theta: &[f64], xi: &[f64], eta: &[f64]) -> Result<f64> {
    let (_, jac) = forward_with_jacobian(arch, theta, xi, eta)?;
    let m = crate::linalg::Matrix::from_vec(arch.xi_dim, arch.xi_dim, jac)?;
    m.det()
}

/// Directional derivative of the forward map with respect to the
/// conditioning input: `(d forward / d eta) * dir`, computed by one
/// forward-mode pass nested over the scalar type.
pub fn jvp_eta<T: Real>(
    arch: &BnnArch,
    theta: &[T],
    xi: &[T],
    eta: &[T],
    dir: &[T],
) -> Result<Vec<T>> {
    if dir.len() != arch.eta_dim {
        return Err(Error::dim("bnn::jvp_eta", "direction dimension mismatch"));
    }
    let theta_d: Vec<Dual<T>> = theta.iter().map(|&t| Dual::passive(t)).collect();
    let xi_d: Vec<Dual<T>> = xi.iter().map(|&x| Dual::passive(x)).collect();
    let eta_d: Vec<Dual<T>> = eta.iter().zip(dir).map(|(&e, &d)| Dual::new(e, d)).collect();
    let out = forward(arch, &theta_d, &xi_d, &eta_d)?;
    Ok(out.into_iter().map(|o| o.du).collect())
}

/// Transport a box on the input of a diagonal network to the box it induces
/// on the output, per coordinate: the image of each interval endpoint pair,
/// sorted (the map is strictly monotone coordinatewise).
pub fn diagonal_box_image(
    arch: &BnnArch,
    theta: &[f64],
    lo: &[f64],
    hi: &[f64],
    eta: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if arch.variant != BnnVariant::Diagonal {
        return Err(Error::precondition(
            "bnn::diagonal_box_image",
            "box transport requires the diagonal variant",
        ));
    }
    let a = forward(arch, theta, lo, eta)?;
    let b = forward(arch, theta, hi, eta)?;
    let mut out_lo = Vec::with_capacity(arch.xi_dim);
    let mut out_hi = Vec::with_capacity(arch.xi_dim);
    for i in 0..arch.xi_dim {
        out_lo.push(math::min(a[i], b[i]));
        out_hi.push(math::max(a[i], b[i]));
    }
    Ok((out_lo, out_hi))
}

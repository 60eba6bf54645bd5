//! Partially input convex neural networks: maps `Xi(xi; eta)` convex in `xi`
//! for every conditioning input `eta`, smooth in both, with exact gradients
//! and Hessians in the convex block.
//!
//! Layer recursion (softplus activations throughout):
//!
//! ```text
//! zeta^i = sp( Wz^i (zeta^(i-1) . sp(vz^i)) + Wx^i (xi . vx^i) + vh^i )
//! eta^i  = sp( We^i eta^(i-1) + be^i )
//! vz^i   = Wzh^i eta^(i-1) + bzh^i     (and vx, vh alike)
//! ```
//!
//! Convexity needs every `Wz` entry nonnegative; they are stored as raw
//! values mapped through softplus, so the invariant survives arbitrary
//! gradient updates.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::Matrix;
use crate::real::{Dual, Real};
use crate::rng::Rng;
use crate::{Error, Result};

/// Architecture of a partially input convex network. Depth `L` is
/// `z_hidden.len() + 1`; `eta_hidden` must have the same length as
/// `z_hidden` (the eta path stops one layer short of the output).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PicnnArch {
    pub xi_dim: usize,
    pub eta_dim: usize,
    pub out_dim: usize,
    pub z_hidden: Vec<usize>,
    pub eta_hidden: Vec<usize>,
}

/// Raw weight value whose softplus image is numerically zero.
const RAW_ZERO: f64 = -40.0;

impl PicnnArch {
    pub fn new(
        xi_dim: usize,
        eta_dim: usize,
        out_dim: usize,
        z_hidden: &[usize],
        eta_hidden: &[usize],
    ) -> Result<Self> {
        if z_hidden.len() != eta_hidden.len() {
            return Err(Error::dim("PicnnArch", "z_hidden and eta_hidden must have equal length"));
        }
        Ok(PicnnArch {
            xi_dim,
            eta_dim,
            out_dim,
            z_hidden: z_hidden.to_vec(),
            eta_hidden: eta_hidden.to_vec(),
        })
    }

    pub fn depth(&self) -> usize {
        self.z_hidden.len() + 1
    }

    /// zeta-path width entering layer `i` (1-based); `h_0 = xi_dim`.
    fn h(&self, i: usize) -> usize {
        if i == 0 {
            self.xi_dim
        } else if i <= self.z_hidden.len() {
            self.z_hidden[i - 1]
        } else {
            self.out_dim
        }
    }

    /// eta-path width after layer `i`; `m_0 = eta_dim`.
    fn m(&self, i: usize) -> usize {
        if i == 0 {
            self.eta_dim
        } else {
            self.eta_hidden[i - 1]
        }
    }

    fn layer_param_count(&self, i: usize) -> usize {
        let (hp, hi, mp) = (self.h(i - 1), self.h(i), self.m(i - 1));
        let mut c = hi * hp; // Wz raw
        c += hi * self.xi_dim; // Wx
        c += hp * mp + hp; // Wzh, bzh
        c += self.xi_dim * mp + self.xi_dim; // Wxh, bxh
        c += hi * mp + hi; // Whh, bhh
        if i < self.depth() {
            c += self.m(i) * mp + self.m(i); // We, be
        }
        c
    }

    pub fn param_count(&self) -> usize {
        (1..=self.depth()).map(|i| self.layer_param_count(i)).sum()
    }

    /// All parameters zero with the raw convex-path weights pushed to
    /// `softplus^-1(~0)`, so the network output is the constant obtained by
    /// composing `softplus` over zero pre-activations.
    pub fn zero_weight_params(&self) -> Vec<f64> {
        let mut theta = vec![0.0; self.param_count()];
        for (range, _) in self.wz_raw_ranges() {
            for t in &mut theta[range] {
                *t = RAW_ZERO;
            }
        }
        theta
    }

    /// Offsets of the raw Wz blocks, with their shapes, for invariant checks.
    pub fn wz_raw_ranges(&self) -> Vec<(core::ops::Range<usize>, (usize, usize))> {
        let mut out = Vec::new();
        let mut off = 0;
        for i in 1..=self.depth() {
            let (hp, hi) = (self.h(i - 1), self.h(i));
            out.push((off..off + hi * hp, (hi, hp)));
            off += self.layer_param_count(i);
        }
        out
    }

    /// Random initialization: raw Wz around -2 (small positive effective
    /// weights), affine conditioning paths ~ N(0, std), biases zero.
    pub fn init(&self, rng: &mut Rng, std: f64) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.param_count());
        for i in 1..=self.depth() {
            let (hp, hi, mp) = (self.h(i - 1), self.h(i), self.m(i - 1));
            for _ in 0..hi * hp {
                theta.push(-2.0 + rng.normal_scaled(0.5));
            }
            for _ in 0..hi * self.xi_dim {
                theta.push(rng.normal_scaled(std));
            }
            for _ in 0..hp * mp {
                theta.push(rng.normal_scaled(std));
            }
            theta.extend(core::iter::repeat_n(0.0, hp));
            for _ in 0..self.xi_dim * mp {
                theta.push(rng.normal_scaled(std));
            }
            for _ in 0..self.xi_dim {
                theta.push(rng.normal_scaled(std));
            }
            for _ in 0..hi * mp {
                theta.push(rng.normal_scaled(std));
            }
            theta.extend(core::iter::repeat_n(0.0, hi));
            if i < self.depth() {
                for _ in 0..self.m(i) * mp {
                    theta.push(rng.normal_scaled(std));
                }
                theta.extend(core::iter::repeat_n(0.0, self.m(i)));
            }
        }
        theta
    }
}

/// Owned PICNN: architecture plus flat parameters.
#[derive(Clone, Debug)]
pub struct PicnnParams {
    pub arch: PicnnArch,
    pub theta: Vec<f64>,
}

impl PicnnParams {
    pub fn init(arch: PicnnArch, rng: &mut Rng, std: f64) -> Self {
        let theta = arch.init(rng, std);
        PicnnParams { arch, theta }
    }

    pub fn zero_weight(arch: PicnnArch) -> Self {
        let theta = arch.zero_weight_params();
        PicnnParams { arch, theta }
    }

    pub fn forward(&self, xi: &[f64], eta: &[f64]) -> Result<Vec<f64>> {
        forward(&self.arch, &self.theta, xi, eta)
    }

    pub fn grad_xi(&self, xi: &[f64], eta: &[f64]) -> Result<Matrix> {
        let g = grad_xi(&self.arch, &self.theta, xi, eta)?;
        Matrix::from_vec(self.arch.out_dim, self.arch.xi_dim, g)
    }
}

struct LayerView<'a, T> {
    wz_raw: &'a [T],
    wx: &'a [T],
    wzh: &'a [T],
    bzh: &'a [T],
    wxh: &'a [T],
    bxh: &'a [T],
    whh: &'a [T],
    bhh: &'a [T],
    weta: &'a [T],
    beta: &'a [T],
}

fn layer_view<'a, T>(
    arch: &PicnnArch,
    theta: &'a [T],
    i: usize,
    off: &mut usize,
) -> LayerView<'a, T> {
    let (hp, hi, mp) = (arch.h(i - 1), arch.h(i), arch.m(i - 1));
    let mut take = |len: usize| {
        let s = &theta[*off..*off + len];
        *off += len;
        s
    };
    let wz_raw = take(hi * hp);
    let wx = take(hi * arch.xi_dim);
    let wzh = take(hp * mp);
    let bzh = take(hp);
    let wxh = take(arch.xi_dim * mp);
    let bxh = take(arch.xi_dim);
    let whh = take(hi * mp);
    let bhh = take(hi);
    let (weta, beta) = if i < arch.depth() {
        (take(arch.m(i) * mp), take(arch.m(i)))
    } else {
        (&theta[0..0], &theta[0..0])
    };
    LayerView { wz_raw, wx, wzh, bzh, wxh, bxh, whh, bhh, weta, beta }
}

fn affine<T: Real>(w: &[T], b: &[T], x: &[T]) -> Vec<T> {
    let rows = b.len();
    let cols = x.len();
    debug_assert_eq!(w.len(), rows * cols);
    (0..rows)
        .map(|r| {
            let mut acc = b[r];
            for (wij, xj) in w[r * cols..(r + 1) * cols].iter().zip(x) {
                acc = acc + *wij * *xj;
            }
            acc
        })
        .collect()
}

fn check_dims<T>(arch: &PicnnArch, theta: &[T], xi: &[T], eta: &[T]) -> Result<()> {
    if xi.len() != arch.xi_dim {
        return Err(Error::dim("picnn", "xi dimension mismatch"));
    }
    if eta.len() != arch.eta_dim {
        return Err(Error::dim("picnn", "eta dimension mismatch"));
    }
    if theta.len() != arch.param_count() {
        return Err(Error::dim("picnn", "parameter count mismatch"));
    }
    Ok(())
}

/// Forward evaluation `zeta^(L)`.
pub fn forward<T: Real>(arch: &PicnnArch, theta: &[T], xi: &[T], eta: &[T]) -> Result<Vec<T>> {
    check_dims(arch, theta, xi, eta)?;
    let mut zeta = xi.to_vec();
    let mut eta_cur = eta.to_vec();
    let mut off = 0;
    for i in 1..=arch.depth() {
        let lv = layer_view(arch, theta, i, &mut off);
        let (hp, hi) = (arch.h(i - 1), arch.h(i));

        let vz = affine(lv.wzh, lv.bzh, &eta_cur);
        let vx = affine(lv.wxh, lv.bxh, &eta_cur);
        let vh = affine(lv.whh, lv.bhh, &eta_cur);

        let zs: Vec<T> = (0..hp).map(|j| zeta[j] * vz[j].softplus()).collect();
        let xs: Vec<T> = (0..arch.xi_dim).map(|j| xi[j] * vx[j]).collect();

        let mut pre = vh;
        for r in 0..hi {
            let mut acc = pre[r];
            for (j, zj) in zs.iter().enumerate() {
                acc = acc + lv.wz_raw[r * hp + j].softplus() * *zj;
            }
            for (j, xj) in xs.iter().enumerate() {
                acc = acc + lv.wx[r * arch.xi_dim + j] * *xj;
            }
            pre[r] = acc;
        }
        zeta = pre.into_iter().map(|p| p.softplus()).collect();

        if i < arch.depth() {
            eta_cur = affine(lv.weta, lv.beta, &eta_cur)
                .into_iter()
                .map(|p| p.softplus())
                .collect();
        }
    }
    Ok(zeta)
}

/// Exact gradient `d zeta^(L) / d xi`, row-major `out_dim x xi_dim`,
/// accumulated forward alongside the zeta path.
pub fn grad_xi<T: Real>(arch: &PicnnArch, theta: &[T], xi: &[T], eta: &[T]) -> Result<Vec<T>> {
    check_dims(arch, theta, xi, eta)?;
    let nx = arch.xi_dim;
    let zero = theta[0].lift(0.0);
    let mut zeta = xi.to_vec();
    let mut jac = vec![zero; nx * nx];
    for j in 0..nx {
        jac[j * nx + j] = theta[0].lift(1.0);
    }
    let mut eta_cur = eta.to_vec();
    let mut off = 0;
    for i in 1..=arch.depth() {
        let lv = layer_view(arch, theta, i, &mut off);
        let (hp, hi) = (arch.h(i - 1), arch.h(i));

        let vz = affine(lv.wzh, lv.bzh, &eta_cur);
        let vx = affine(lv.wxh, lv.bxh, &eta_cur);
        let vh = affine(lv.whh, lv.bhh, &eta_cur);
        let spvz: Vec<T> = vz.iter().map(|v| v.softplus()).collect();

        let mut pre = vh;
        let mut jpre = vec![zero; hi * nx];
        for r in 0..hi {
            let mut acc = pre[r];
            for j in 0..hp {
                let w = lv.wz_raw[r * hp + j].softplus() * spvz[j];
                acc = acc + w * zeta[j];
                for k in 0..nx {
                    jpre[r * nx + k] = jpre[r * nx + k] + w * jac[j * nx + k];
                }
            }
            for j in 0..nx {
                let w = lv.wx[r * nx + j] * vx[j];
                acc = acc + w * xi[j];
                jpre[r * nx + j] = jpre[r * nx + j] + w;
            }
            pre[r] = acc;
        }
        let mut znext = Vec::with_capacity(hi);
        for r in 0..hi {
            let s = pre[r].sigmoid();
            for k in 0..nx {
                jpre[r * nx + k] = jpre[r * nx + k] * s;
            }
            znext.push(pre[r].softplus());
        }
        zeta = znext;
        jac = jpre;

        if i < arch.depth() {
            eta_cur = affine(lv.weta, lv.beta, &eta_cur)
                .into_iter()
                .map(|p| p.softplus())
                .collect();
        }
    }
    Ok(jac)
}

/// Hessians of each output channel with respect to `xi`, from forward-mode
/// duals over the analytic gradient (one seeded pass per coordinate).
pub fn hess_xi(arch: &PicnnArch, theta: &[f64], xi: &[f64], eta: &[f64]) -> Result<Vec<Matrix>> {
    let nx = arch.xi_dim;
    let theta_d: Vec<Dual<f64>> = theta.iter().map(|&t| Dual::passive(t)).collect();
    let eta_d: Vec<Dual<f64>> = eta.iter().map(|&e| Dual::passive(e)).collect();
    let mut hessians = vec![Matrix::zeros(nx, nx); arch.out_dim];
    for seed in 0..nx {
        let xi_d: Vec<Dual<f64>> = xi
            .iter()
            .enumerate()
            .map(|(j, &x)| Dual::new(x, if j == seed { 1.0 } else { 0.0 }))
            .collect();
        let g = grad_xi(arch, &theta_d, &xi_d, &eta_d)?;
        for (out, hess) in hessians.iter_mut().enumerate() {
            for k in 0..nx {
                hess[(k, seed)] = g[out * nx + k].du;
            }
        }
    }
    Ok(hessians)
}

/// Effective (post-softplus) convex-path weights for invariant checks.
pub fn effective_wz(arch: &PicnnArch, theta: &[f64]) -> Vec<Vec<f64>> {
    arch.wz_raw_ranges()
        .into_iter()
        .map(|(range, _)| theta[range].iter().map(|&r| crate::math::softplus(r)).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math;

    fn test_arch() -> PicnnArch {
        PicnnArch::new(3, 2, 2, &[5], &[4]).unwrap()
    }

    #[test]
    fn zero_weight_output_is_ln2() {
        // L = 1: all pre-activations zero, output = softplus(0) = ln 2.
        let arch = PicnnArch::new(2, 1, 1, &[], &[]).unwrap();
        let p = PicnnParams::zero_weight(arch);
        let out = p.forward(&[0.7, -1.3], &[0.4]).unwrap();
        assert!((out[0] - math::ln(2.0)).abs() < 1e-10);
        // and the gradient is zero
        let g = p.grad_xi(&[0.7, -1.3], &[0.4]).unwrap();
        assert!(g.max_abs() < 1e-10);
    }

    #[test]
    fn reduces_to_scalar_softplus() {
        // L = 1, Wx = 1, vx = 1 (via bxh), everything else zero.
        let arch = PicnnArch::new(1, 1, 1, &[], &[]).unwrap();
        let mut theta = arch.zero_weight_params();
        // layout for L=1: wz_raw, wx, wzh, bzh, wxh, bxh, whh, bhh
        theta[1] = 1.0; // wx
        theta[5] = 1.0; // bxh -> vx = 1
        let p = PicnnParams { arch, theta };
        for &x in &[-2.0, -0.3, 0.0, 1.1, 3.0] {
            let out = p.forward(&[x], &[0.0]).unwrap();
            assert!((out[0] - math::softplus(x)).abs() < 1e-10, "x={x}");
            let g = p.grad_xi(&[x], &[0.0]).unwrap();
            assert!((g[(0, 0)] - math::sigmoid(x)).abs() < 1e-10);
        }
    }

    #[test]
    fn jensen_convexity_probe() {
        let mut rng = crate::rng::Rng::new(60);
        let arch = test_arch();
        let p = PicnnParams::init(arch.clone(), &mut rng, 0.8);
        for _ in 0..10_000 {
            let eta: Vec<f64> = (0..2).map(|_| rng.range(-1.5, 1.5)).collect();
            let x1: Vec<f64> = (0..3).map(|_| rng.range(-2.0, 2.0)).collect();
            let x2: Vec<f64> = (0..3).map(|_| rng.range(-2.0, 2.0)).collect();
            let mid: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| 0.5 * (a + b)).collect();
            let f1 = p.forward(&x1, &eta).unwrap();
            let f2 = p.forward(&x2, &eta).unwrap();
            let fm = p.forward(&mid, &eta).unwrap();
            for k in 0..arch.out_dim {
                assert!(
                    fm[k] <= 0.5 * (f1[k] + f2[k]) + 1e-12,
                    "violation {}",
                    fm[k] - 0.5 * (f1[k] + f2[k])
                );
            }
        }
    }

    #[test]
    fn convexity_along_segments() {
        let mut rng = crate::rng::Rng::new(61);
        let arch = test_arch();
        let p = PicnnParams::init(arch.clone(), &mut rng, 0.8);
        for _ in 0..2000 {
            let eta: Vec<f64> = (0..2).map(|_| rng.range(-1.5, 1.5)).collect();
            let x1: Vec<f64> = (0..3).map(|_| rng.range(-2.0, 2.0)).collect();
            let x2: Vec<f64> = (0..3).map(|_| rng.range(-2.0, 2.0)).collect();
            let t = rng.uniform();
            let xt: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| t * a + (1.0 - t) * b).collect();
            let f1 = p.forward(&x1, &eta).unwrap();
            let f2 = p.forward(&x2, &eta).unwrap();
            let ft = p.forward(&xt, &eta).unwrap();
            for k in 0..arch.out_dim {
                assert!(ft[k] <= t * f1[k] + (1.0 - t) * f2[k] + 1e-10);
            }
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = crate::rng::Rng::new(62);
        let arch = test_arch();
        let p = PicnnParams::init(arch.clone(), &mut rng, 0.8);
        let xi = [0.4, -0.9, 1.3];
        let eta = [0.2, -0.6];
        let g = p.grad_xi(&xi, &eta).unwrap();
        let h = 1e-5;
        for j in 0..3 {
            let mut xp = xi;
            xp[j] += h;
            let mut xm = xi;
            xm[j] -= h;
            let fp = p.forward(&xp, &eta).unwrap();
            let fm = p.forward(&xm, &eta).unwrap();
            for k in 0..arch.out_dim {
                let fd = (fp[k] - fm[k]) / (2.0 * h);
                let rel = (g[(k, j)] - fd).abs() / (1.0 + fd.abs());
                assert!(rel < 1e-5, "rel {rel}");
            }
        }
    }

    #[test]
    fn gradient_monotonicity_certificate() {
        let mut rng = crate::rng::Rng::new(63);
        let arch = test_arch();
        let p = PicnnParams::init(arch.clone(), &mut rng, 0.8);
        for _ in 0..2000 {
            let eta: Vec<f64> = (0..2).map(|_| rng.range(-1.5, 1.5)).collect();
            let x1: Vec<f64> = (0..3).map(|_| rng.range(-2.0, 2.0)).collect();
            let x2: Vec<f64> = (0..3).map(|_| rng.range(-2.0, 2.0)).collect();
            let g1 = p.grad_xi(&x1, &eta).unwrap();
            let g2 = p.grad_xi(&x2, &eta).unwrap();
            for k in 0..arch.out_dim {
                let mut acc = 0.0;
                for j in 0..3 {
                    acc += (g1[(k, j)] - g2[(k, j)]) * (x1[j] - x2[j]);
                }
                assert!(acc >= -1e-10, "monotonicity violated: {acc}");
            }
        }
    }

    #[test]
    fn hessian_is_symmetric_psd_and_matches_fd() {
        let mut rng = crate::rng::Rng::new(64);
        let arch = test_arch();
        let p = PicnnParams::init(arch.clone(), &mut rng, 0.8);
        let xi = [0.3, -0.5, 0.9];
        let eta = [0.1, 0.7];
        let hs = hess_xi(&arch, &p.theta, &xi, &eta).unwrap();
        let h = 1e-5;
        for (k, hk) in hs.iter().enumerate() {
            assert!(hk.sub(&hk.transpose()).max_abs() < 1e-9);
            // PSD via Cholesky of H + tiny ridge
            crate::linalg::cholesky(&hk.add(&Matrix::identity(3).scale(1e-9))).unwrap();
            for j in 0..3 {
                let mut xp = xi;
                xp[j] += h;
                let mut xm = xi;
                xm[j] -= h;
                let gp = p.grad_xi(&xp, &eta).unwrap();
                let gm = p.grad_xi(&xm, &eta).unwrap();
                for l in 0..3 {
                    let fd = (gp[(k, l)] - gm[(k, l)]) / (2.0 * h);
                    assert!((hk[(l, j)] - fd).abs() < 1e-6 * (1.0 + fd.abs()));
                }
            }
        }
    }

    #[test]
    fn effective_weights_stay_nonnegative() {
        let mut rng = crate::rng::Rng::new(65);
        let arch = test_arch();
        let mut theta = arch.init(&mut rng, 0.8);
        // arbitrary updates, including large negative ones
        for t in theta.iter_mut() {
            *t += rng.normal_scaled(10.0);
        }
        for block in effective_wz(&arch, &theta) {
            assert!(block.iter().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn dimension_errors() {
        let arch = test_arch();
        let theta = arch.zero_weight_params();
        assert!(forward(&arch, &theta, &[0.0; 2], &[0.0; 2]).is_err());
        assert!(forward(&arch, &theta, &[0.0; 3], &[0.0; 3]).is_err());
        assert!(PicnnArch::new(3, 2, 1, &[5, 5], &[4]).is_err());
    }
}

//! Small dense tanh networks used to condition weights, biases and dynamics
//! matrices on the disturbance. Parameters live in a flat slice so the same
//! evaluation code runs on `f64`, duals and tape variables.

use alloc::vec::Vec;

use crate::real::Real;
use crate::rng::Rng;

/// Architecture of a dense network: `input -> hidden(tanh)* -> output(linear)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DenseNet {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
}

impl DenseNet {
    pub fn new(input: usize, hidden: &[usize], output: usize) -> Self {
        DenseNet { input, hidden: hidden.to_vec(), output }
    }

    /// Total parameter count: per layer a weight matrix and a bias vector.
    pub fn param_count(&self) -> usize {
        let mut count = 0;
        let mut prev = self.input;
        for &w in self.hidden.iter().chain(core::iter::once(&self.output)) {
            count += w * prev + w;
            prev = w;
        }
        count
    }

    /// Evaluate with parameters `theta` (length [`Self::param_count`]).
    /// Layout per layer: row-major weight matrix then bias.
    pub fn eval<T: Real>(&self, theta: &[T], x: &[T]) -> Vec<T> {
        debug_assert_eq!(theta.len(), self.param_count());
        debug_assert_eq!(x.len(), self.input);
        let mut cur: Vec<T> = x.to_vec();
        let mut off = 0;
        let last = self.hidden.len();
        for (li, &width) in self.hidden.iter().chain(core::iter::once(&self.output)).enumerate() {
            let prev = cur.len();
            let mut next: Vec<T> = Vec::with_capacity(width);
            for row in 0..width {
                let wrow = &theta[off + row * prev..off + (row + 1) * prev];
                let mut acc = theta[off + width * prev + row]; // bias
                for (w, xi) in wrow.iter().zip(&cur) {
                    acc = acc + *w * *xi;
                }
                next.push(if li < last { acc.tanh() } else { acc });
            }
            off += width * prev + width;
            cur = next;
        }
        cur
    }

    /// Random initialization: weights ~ N(0, std), biases zero.
    pub fn init(&self, rng: &mut Rng, std: f64, out: &mut Vec<f64>) {
        let mut prev = self.input;
        for &w in self.hidden.iter().chain(core::iter::once(&self.output)) {
            for _ in 0..w * prev {
                out.push(rng.normal_scaled(std));
            }
            for _ in 0..w {
                out.push(0.0);
            }
            prev = w;
        }
    }

    /// Offset of the final layer's bias within this net's parameter block
    /// (used to pin network outputs at initialization).
    pub fn final_bias_offset(&self) -> usize {
        let mut off = 0;
        let mut prev = self.input;
        for &w in &self.hidden {
            off += w * prev + w;
            prev = w;
        }
        off + self.output * prev
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::real::Dual;

    #[test]
    fn param_count_and_zero_net() {
        let net = DenseNet::new(2, &[3], 4);
        assert_eq!(net.param_count(), 2 * 3 + 3 + 3 * 4 + 4);
        let theta = alloc::vec![0.0; net.param_count()];
        let out = net.eval(&theta, &[1.0, -1.0]);
        assert_eq!(out.len(), 4);
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn final_bias_sets_output_exactly() {
        let net = DenseNet::new(2, &[3, 3], 2);
        let mut theta = alloc::vec![0.0; net.param_count()];
        let off = net.final_bias_offset();
        theta[off] = 4.0;
        theta[off + 1] = -2.5;
        let out = net.eval(&theta, &[0.3, 0.9]);
        assert_eq!(out, alloc::vec![4.0, -2.5]);
    }

    #[test]
    fn single_linear_layer_is_affine() {
        let net = DenseNet::new(2, &[], 1);
        // W = [2, -3], b = 0.5
        let theta = alloc::vec![2.0, -3.0, 0.5];
        let out = net.eval(&theta, &[1.0, 1.0]);
        assert!((out[0] - (-0.5)).abs() < 1e-15);
    }

    #[test]
    fn dual_directional_derivative_matches_fd() {
        let net = DenseNet::new(2, &[4], 3);
        let mut rng = Rng::new(8);
        let mut theta = alloc::vec::Vec::new();
        net.init(&mut rng, 0.7, &mut theta);
        let x = [0.4, -1.1];
        let dir = [0.9, 0.2];

        let dx: alloc::vec::Vec<Dual<f64>> = (0..2)
            .map(|i| Dual::new(x[i], dir[i]))
            .collect();
        let dtheta: alloc::vec::Vec<Dual<f64>> = theta.iter().map(|&t| Dual::passive(t)).collect();
        let out = net.eval(&dtheta, &dx);

        let h = 1e-6;
        let xp: alloc::vec::Vec<f64> = (0..2).map(|i| x[i] + h * dir[i]).collect();
        let xm: alloc::vec::Vec<f64> = (0..2).map(|i| x[i] - h * dir[i]).collect();
        let fp = net.eval(&theta, &xp);
        let fm = net.eval(&theta, &xm);
        for k in 0..3 {
            let fd = (fp[k] - fm[k]) / (2.0 * h);
            assert!((out[k].du - fd).abs() < 1e-8 * (1.0 + fd.abs()));
        }
    }
}

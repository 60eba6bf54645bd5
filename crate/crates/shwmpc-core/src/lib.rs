//! Structured Hammerstein-Wiener modeling and convex model-predictive control.
//!
//! The crate learns sandwich models of the form
//!
//! ```text
//!     v = Psi(u; d)                     (bijective input map, diagonal)
//!     dx/dt = A(d) x + B(d) v + c(d)    (disturbance-scheduled linear dynamics)
//!     y = Phi^-1(x; d)                  (bijective output map)
//!     z = Xi(x, v; d)                   (convex constraint output)
//! ```
//!
//! from time-series data, and exploits the structure so that the receding-horizon
//! tracking problem becomes a strictly convex program in the transformed input
//! sequence V, with a unique solution and a locally Lipschitz control law. A
//! lightweight fallback controller combines an LQR gain around a stationarily
//! realizable target with a control-barrier-function QP filter.
//!
//! The crate is `no_std` (with `alloc`); all IO, file formats and the command
//! line live in the companion `shwmpc-cli` crate.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod baseline;
pub mod bnn;
pub mod cbf;
pub mod dense;
mod error;
pub mod ident;
pub mod linalg;
mod math;
pub mod ocp;
pub mod picnn;
pub mod plant;
pub mod real;
pub mod rng;
pub mod shw;
pub mod tape;

pub use error::{Error, Result};

/// Signal dimensions shared by every module: input, output, constraint output
/// and disturbance widths. The model structure requires `n_u == n_y`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SignalDims {
    pub n_u: usize,
    pub n_y: usize,
    pub n_z: usize,
    pub n_d: usize,
}

impl SignalDims {
    pub fn new(n_u: usize, n_y: usize, n_z: usize, n_d: usize) -> Result<Self> {
        if n_u != n_y {
            return Err(Error::dim("SignalDims", "n_u must equal n_y"));
        }
        if n_u == 0 || n_z == 0 {
            return Err(Error::dim("SignalDims", "n_u and n_z must be positive"));
        }
        Ok(Self { n_u, n_y, n_z, n_d })
    }
}

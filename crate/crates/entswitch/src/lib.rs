//! Markov-chain model of a multipartite entanglement distribution
//! switch: exact transition kernels, closed-form performance figures,
//! Monte Carlo estimation, truncated stationary solving, and
//! Lyapunov-drift stability certification, with every closed form
//! cross-checked against independent numerical routes.
//!
//! The switch serves n-partite entangled states to k identical links.
//! Its occupancy chain lives on (n-1)-dimensional nonnegative integer
//! vectors and is uniformized at the constant total rate `k*mu`, which
//! makes the discrete-time kernel exact rather than approximate.
//!
//! Modules:
//! - [`model`] — parameters, states, the state-space partition and the
//!   one-step kernels;
//! - [`analytic`] — capacity, expected occupancy, swap-ready mass and
//!   related closed forms;
//! - [`comb`] — path counting, the re-entry law after excursions, and
//!   the truncated-series identity machinery with certified tails;
//! - [`lyapunov`] — embedded-chain drift analysis, negative-drift
//!   certification and the instability conditions at the critical point;
//! - [`simulate`] — seeded Monte Carlo estimation with batch-means
//!   confidence intervals;
//! - [`solve`] — stationary distribution of the buffer-truncated chain.
//!
//! ```
//! use entswitch::model::SwitchParams;
//! use entswitch::simulate::{self, SimConfig};
//! use entswitch::analytic;
//!
//! let params = SwitchParams::new(5, 3, 1.0, 0.8)?;
//! let closed = analytic::report(&params)?;
//! assert!((closed.capacity - 4.0 / 3.0).abs() < 1e-12);
//!
//! let config = SimConfig::new(40_000, 2_000, 7, 1, 20)?;
//! let sim = simulate::run(&params, &config)?;
//! assert!((sim.occupancy_est - closed.expected_qubits).abs()
//!     <= 3.0 * sim.occupancy_halfwidth);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod analytic;
pub mod comb;
pub mod lyapunov;
pub mod model;
pub mod simulate;
pub mod solve;

#[cfg(test)]
pub(crate) mod oracle;

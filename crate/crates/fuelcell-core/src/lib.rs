//! Numerics for a micromaser pumped by 1-3 atom cluster states.
//!
//! A lossless single-mode cavity is crossed by a stream of small atomic
//! clusters prepared in some state `rho_cluster`. Each transit applies a
//! short resonant Tavis-Cummings kick to the field; coarse-graining over
//! many kicks yields a Lindblad-type generator whose coefficients are
//! simple sums over the entries of `rho_cluster`. Which entries feed
//! which coefficient is decided purely by the excitation structure of
//! the pair of basis states the entry connects, so every cluster
//! coherence can be classified as thermal fuel, displacement fuel,
//! squeezing fuel, or ineffective cargo.
//!
//! The crate is organised bottom-up:
//!
//! * [`linalg`]: small dense complex kernels (LU, Hermitian eigen, expm).
//! * [`hilbert`]: truncated Fock space, joint atom-field operators and
//!   propagators (exact and second order in `g*tau`).
//! * [`cluster`]: cluster-state container, named-state catalogue, and
//!   the coherence classification rule.
//! * [`generator`]: fuel coefficients `(r_e, r_g, lambda, xi)`, the
//!   cavity Liouvillian, and the one-transit kick map.
//! * [`dynamics`]: density-matrix evolution (RK4 / exponential stepping
//!   / Monte Carlo over transit times) and steady-state solvers.
//! * [`analytics`]: closed-form steady-state moments, effective
//!   temperatures, squeezed-bath parameters and threshold diagnostics.

pub mod analytics;
pub mod cluster;
pub mod dynamics;
pub mod generator;
pub mod hilbert;
pub mod linalg;

pub use num_complex::Complex64 as C64;

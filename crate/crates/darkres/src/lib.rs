// `!(x > 0.0)` guards are deliberate: they reject NaN along with
// nonpositive values, which `x <= 0.0` would not.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Dark-resonance thermometry for trapped ions.
//!
//! This crate computes fluorescence spectra of a laser-driven multi-level ion
//! from the steady state of the Lindblad master equation, models thermal
//! (Doppler) broadening of the dark resonances, and fits measured spectra to
//! extract the ion temperature and drive parameters.
//!
//! The physical systems covered are a generic three-level Λ configuration and
//! the 8-level Zeeman-split S₁/₂–P₁/₂–D₃/₂ manifold of ⁴⁰Ca⁺ driven by lasers
//! near 397 nm and 866 nm with σ⁺+σ⁻ polarization.
//!
//! # Units
//!
//! Every frequency crossing the public API (detunings Δ, Rabi frequencies Ω,
//! decay rates Γ, linewidths, Zeeman splitting b) is an ordinary frequency
//! ν in MHz. Internal computations use angular frequency in rad/µs
//! (ω = 2π·ν), times are in µs, magnetic fields in tesla, temperatures in
//! millikelvin, wavelengths in nm, masses in atomic mass units. See [`units`].
//!
//! # Modules
//!
//! - [`levels`]: Hamiltonians and collapse operators of the driven ion.
//! - [`steadystate`]: Liouvillian assembly and the steady-state solver.
//! - [`spectrum`]: fluorescence spectra over detuning scans, thermal
//!   broadening, dark-resonance location.
//! - [`thermometry`]: MCMC and least-squares fits, relaxation and scaling
//!   fits.
//! - [`io`]: config files, spectrum serialization, synthetic measurements.
//! - [`cli`]: the command-line front end used by the `darkres` binary.

pub mod cli;
mod error;
pub mod io;
pub mod levels;
pub mod spectrum;
pub mod steadystate;
pub mod thermometry;
pub mod units;

pub use error::{Error, Result};

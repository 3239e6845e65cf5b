//! Toolkit for synchronizing networks of agents whose dynamics are chains of
//! integrators with a scalar nonlinearity at the bottom (companion form).
//!
//! The crate synthesizes families of coupling matrices with interlocked
//! spectra ([`collection`]), certifies the quadratic energy argument that
//! guarantees synchronization under those couplings ([`lyapunov`]), assembles
//! the distributed controllers that realize them ([`control`]), and simulates
//! the closed loop ([`simkit`]). [`matrixcore`] holds the shared dense
//! symmetric-matrix primitives, including the eigensolver everything is built
//! on.
//!
//! The controllers are proportional-derivative couplings on state differences
//! (one coupling matrix per derivative order), optionally augmented with
//! iterated-integral couplings on the first coordinate for constant
//! disturbance rejection, and optionally composed with a state transform so
//! feedback-linearizable agents can be handled in their own coordinates.

pub mod collection;
pub mod control;
pub mod graphs;
pub mod lyapunov;
pub mod matrixcore;
pub mod report;
pub mod simkit;

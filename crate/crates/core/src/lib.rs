//! Quantum deep dreaming workbench.
//!
//! Circuits are encoded as multi-hot vectors, a feed-forward regressor
//! learns their VQE energy under a transverse-field Ising Hamiltonian, and
//! gradient descent on the input vector of the frozen regressor moves a
//! circuit toward a target energy while every intermediate circuit is
//! decoded and relabeled.

pub mod analysis;
pub mod circuit;
pub mod datagen;
pub mod dreaming;
pub mod encoding;
pub mod neuralnet;
pub mod presets;
pub mod seeding;
pub mod simulator;
pub mod vqe;

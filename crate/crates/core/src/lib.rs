//! Imitation learning from trajectory demonstrations on acceleration-driven
//! systems.
//!
//! The crate trains reactive acceleration policies from a fixed set of
//! demonstrations with two objectives:
//!
//! * behavior cloning, which regresses demonstrated actions on demonstrated
//!   states, and
//! * collocation, which jointly fits an explicitly parameterized auxiliary
//!   trajectory per demonstration and a policy that reproduces the actions of
//!   those auxiliary trajectories.
//!
//! Everything here is pure computation over owned values and builds without
//! `std` (an allocator is required). File formats, configuration and the
//! command line live in the companion `collocate` crate.
//!
//! Module map:
//!
//! | module      | contents                                                        |
//! |-------------|-----------------------------------------------------------------|
//! | [`linalg`]  | small dense matrices, symmetric eigen-solver, pseudo-inverse     |
//! | [`diff`]    | batched reverse-mode gradient tape                              |
//! | [`mlp`]     | multilayer perceptrons, initialization, Lipschitz certificates  |
//! | [`optim`]   | Adam with decoupled weight decay, plateau learning-rate decay    |
//! | [`gradcheck`] | central finite-difference gradient verification               |
//! | [`arm`]     | planar n-link arm kinematics and discrete double-integrator     |
//! | [`policy`]  | neural-network and Riemannian-motion-policy acceleration policies |
//! | [`aux`]     | boundary-anchored auxiliary trajectories                        |
//! | [`train`]   | losses, noise injection and the training loop                   |
//! | [`expert`]  | state-machine demonstrator and dataset generation               |
//! | [`eval`]    | rollout metrics and error-bound audits                          |
#![cfg_attr(not(any(test, feature = "std")), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

pub mod arm;
pub mod aux;
pub mod diff;
pub mod eval;
pub mod expert;
pub mod gradcheck;
pub mod linalg;
pub(crate) mod math;
pub mod mlp;
pub mod optim;
pub mod policy;
pub mod rng;
pub mod train;

pub use arm::{ArmSpec, Dataset, State, TaskMeta, Trajectory};
pub use aux::{AuxMode, AuxTrajParams};
pub use mlp::{Activation, MlpParams};
pub use policy::{NnPolicy, Policy, PolicyClass, RmpPolicy};
pub use train::{Method, TrainConfig};

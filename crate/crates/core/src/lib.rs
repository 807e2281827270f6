//! Step-size schedules for stochastic gradient methods, the SGD/ASGD
//! variants that use them, stochastic Armijo line searches, closed-form
//! hard-instance oracles, and a benchmarking harness that compares the
//! strategies on finite-sum problems and verifies their convergence
//! behaviour at desk scale.

pub mod harness;
pub mod linesearch;
pub mod lowerbounds;
pub mod optimizers;
pub mod problems;
pub mod schedules;

mod util;

pub use linesearch::{LineSearchConfig, LineSearchResult, SearchMode};
pub use optimizers::{
    AsgdParams, Checkpoint, GammaPolicy, ProbeIndex, RunOptions, RunStatus, RunTrace,
};
pub use problems::{
    FiniteSumProblem, LinearModelProblem, Loss, QuadraticComponent, QuadraticSum, Reference,
    SeparableQuadratic, SparseRow,
};
pub use schedules::Schedule;

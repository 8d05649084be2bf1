//! Measuring instruments: transport and weighted total-variation distances,
//! localized space-time norms, the local maximal function, and Monte Carlo
//! Krylov and Khasminskii ratios.

mod checks;
mod distances;
mod maximal;
mod norms;

pub use checks::{exp_moment_check, krylov_check, pair_krylov_check, ExpMomentReport, KrylovEntry, KrylovReport, KrylovTest};
pub use distances::{wasserstein_1d, wasserstein_1d_grid, wasserstein_1d_samples_grid, wasserstein_discrete, weighted_tv, DISCRETE_ATOM_CAP};
pub use maximal::{dyadic_radii, maximal_function};
pub use norms::{global_norm, localized_norm, mixed_localized_norm, Lattice, NormSpec, PairField, SpaceTimeField};

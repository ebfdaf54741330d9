//! Viscosity-solution solvers for second-order fully nonlinear PDEs with a
//! Caputo time-fractional derivative,
//!
//! ```text
//! ∂_t^α u + F(t, x, u, ∇u, ∇²u) = 0   in (0, T] × Ω,
//! ```
//!
//! on intervals and rectangles, with either a homogeneous Dirichlet condition
//! imposed pointwise or a homogeneous Neumann condition in the viscosity sense.
//!
//! The crate is organised by capability:
//!
//! * [`fracops`] evaluates the Caputo derivative on time series: the L1
//!   scheme, the `J + K` splitting, the Marchaud form, multi-term sums and the
//!   Riemann-Liouville integral.
//! * [`oracles`] holds independent reference values (power rule, adaptive
//!   quadrature of the defining integral, Mittag-Leffler function, exact
//!   eigenmode solutions, the closed-form kernel of the truncated power barrier).
//! * [`envelopes`] computes sup- and inf-convolutions of grid functions.
//! * [`operators`] is the catalog of degenerate elliptic nonlinearities and
//!   their monotone finite-difference stencils.
//! * [`solver`] marches the discrete problem in time, builds explicit barriers
//!   and runs the discrete Perron iteration.
//! * [`verify`] checks viscosity inequalities, the comparison principle and the
//!   `α → 1` limit numerically.
//! * [`cli`] reads run configurations, dispatches studies and writes CSV, SVG
//!   and run metadata.
//!
//! Runnable walkthroughs of each capability live in the crate's `examples/`
//! directory.

pub mod cli;
pub mod envelopes;
pub mod fracops;
pub mod geometry;
pub mod linalg;
pub mod operators;
pub mod oracles;
pub mod solver;
pub mod verify;

pub use fracops::{FractionalOrder, MultiTermOrder, TimeGrid, TimeOrder, TimeSeries};
pub use geometry::{DomainGeometry, GridFunction};
pub use operators::EllipticOperator;
pub use solver::{BoundaryKind, ProblemSpec, Solution, Stepping};

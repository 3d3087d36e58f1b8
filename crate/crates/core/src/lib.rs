//! Entropic optimal transport by stochastic gradient descent on the Fourier
//! coefficients of the dual potential, with regularized Monge-Kantorovich
//! quantiles and contours built on top.

pub mod baselines;
pub mod bench;
pub mod costs;
pub mod distributions;
pub mod entropic_map;
pub mod eot;
pub mod error;
pub mod grid;
pub mod sgd;
pub mod spectral;

pub use baselines::{sinkhorn, SemiDiscreteState, SinkhornResult, SinkhornSolver};
pub use bench::{BenchReport, ProblemSpec, RaceOptions, SolverSpec};
pub use costs::{cost, cost_field, CostEvaluator, CostKind};
pub use distributions::{ObservationSet, Sampler, SeededRng};
pub use entropic_map::{build_estimator, quantile_contour, EntropicMapEstimator, QuantileContour};
pub use eot::{DualEvaluator, DualState};
pub use error::{Error, Result};
pub use grid::{CoefficientVector, FieldValues, FrequencySet, GridSpec, WeightVector};
pub use sgd::{FourierSgd, RunRecord, SolverConfig, SolverState, Stream};
pub use spectral::SpectralPlan;

//! Transfer operators over free-coordinate groupoids on the full shift
//! `{1,…,d}^ℕ`: the Haar-Ruelle operator, its separable and
//! Hutchinson-Barnsley variants, and the Haar operator, with exact depth-`k`
//! reductions, Perron eigenmeasures and quasi-invariance checks.
//!
//! Numerical code is generic over [`Real`] (`f32`, `f64`); the combinatorial
//! layer (metric, `t` coordinates, cocycle identities) is generic over
//! [`Scalar`] and also runs over exact rationals.

pub mod cocycle;
pub mod eigen;
pub mod error;
pub mod operator;
pub mod quasi;
pub mod relation;
pub mod runner;
pub mod scalar;
pub mod symbolic;

pub use cocycle::{
    cocycle_identity_residual, dini_bound, holder_estimate, Cocycle, ModularParameters, Potential, PotentialConfig,
};
pub use eigen::{
    build_matrix, histogram, perron_pair, ratio_distribution_tree, ratio_iteration, solve_eigen, CylinderMeasure,
    DenseMatrix, EigenResult, HistogramTable, RatioMethod, SolverOptions,
};
pub use error::{Error, Result};
pub use operator::{
    apply_haar, apply_haar_ruelle, apply_hutchinson_barnsley, apply_normalized_haar, apply_separable_haar_ruelle,
    DepthFunction, OperatorFlavor, OperatorSpec,
};
pub use quasi::{
    haar_fixed_point_residual, quasi_invariance_residual, quasi_invariance_suite, transform_measure, PairTestFunction,
    QuasiInvarianceReport, TransformDirection,
};
pub use relation::{
    lipschitz_estimate, max_lipschitz_estimate, ClassEnumeration, FreeCoordinateRelation, GroupoidElement,
};
pub use scalar::{Real, Scalar};
pub use symbolic::{concat, enumerate_cylinders, metric, shift, t_coordinate, Alphabet, Cylinder, Point, Symbol};

/// Exact rational scalar for the combinatorial layer.
pub type Rational = num_rational::Rational64;

pub type Potential64 = Potential<f64>;
pub type Cocycle64 = Cocycle<f64>;
pub type ModularParameters64 = ModularParameters<f64>;
pub type DepthFunction64 = DepthFunction<f64>;
pub type OperatorSpec64 = OperatorSpec<f64>;
pub type CylinderMeasure64 = CylinderMeasure<f64>;
pub type EigenResult64 = EigenResult<f64>;
pub type DenseMatrix64 = DenseMatrix<f64>;
pub type HistogramTable64 = HistogramTable<f64>;

pub type Potential32 = Potential<f32>;
pub type OperatorSpec32 = OperatorSpec<f32>;
pub type DepthFunction32 = DepthFunction<f32>;
pub type CylinderMeasure32 = CylinderMeasure<f32>;

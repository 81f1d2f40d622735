//! Ergodic Bellman problems on the flat torus.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod banded;
pub mod cde;
pub mod ergodic;
pub mod error;
pub mod expr;
pub mod fit;
pub mod fmt;
pub mod grid;
pub mod hjb;
pub mod homogenization;
pub mod model;
pub mod small;

pub use cde::{compare_ergodic, compare_ergodic_with, scaling_study, scaling_study_with, CdeReport, ScalingReport};
pub use ergodic::{
    ergodic_from_evolutive, solve_ergodic, solve_ergodic_operator, ErgodicOptions, ErgodicSolution, LambdaStep,
};
pub use error::{Error, Result};
pub use expr::{Expr, Var};
pub use fit::{fit_power_law, PowerLaw};
pub use grid::{derivatives, norms, point_derivatives, GridFunction, NormReport, TorusGrid};
pub use hjb::{
    discretize, march_evolutive, solve_discounted, solve_discounted_with, DiscountedSolution, DiscreteBellmanOperator,
    EvolutiveTrace, HowardOptions, HowardStep,
};
pub use homogenization::{
    effective_hamiltonian, measure_rate, measure_rate_with, semilinear_oracle, solve_effective, solve_effective_with,
    solve_oscillatory, EffectiveCoefficients, EffectiveHamiltonianSample, EffectiveOptions, EffectiveRoute,
    EffectiveSolution, FineRule, RateReport,
};
pub use model::{
    coefficient_distance, evaluate_hamiltonian, freeze_cell_problem, hamiltonian_argmax, Bounds, CellProblemSpec,
    CoefficientDistance, CoefficientField, ControlCoefficients, ControlSet, DeclaredBounds, Direction, ProblemSpec,
    TwoScaleCoefficientField,
};
pub use small::{SymMatrix, Vector};

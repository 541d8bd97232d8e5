//! Operator norms of matrix-coefficient polynomials in random unitaries and
//! permutations, compared against their free group counterparts.

pub mod coeffs;
pub mod freegroup;
pub mod linalg;
pub mod linearization;
pub mod matrix_models;
pub mod nccs;
pub mod paths;
pub mod resolvent_ib;
pub mod rng;
pub mod schreier;
pub mod star_ops;
pub mod weingarten;

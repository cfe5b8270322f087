//! Time-optimal unicycle planning around convex obstacles with continuous-time
//! collision certificates.
//!
//! The trajectory is transcribed by RK4 multiple shooting. Each interval's
//! position is a cubic polynomial whose Bernstein control points, combined
//! with a linearly interpolated separating hyperplane per obstacle, give a
//! polynomial inequality whose nonnegative coefficients certify clearance over
//! the whole interval. Hyperplanes are either solver variables (coupled
//! formulation) or computed between solver iterations by small SVM problems
//! (decoupled formulation).

pub mod ad;
pub mod bench;
pub mod bernstein;
pub mod dynamics;
pub mod geometry;
pub mod linalg;
pub mod planner;
pub mod sqp;
pub mod svm;
pub mod transcription;

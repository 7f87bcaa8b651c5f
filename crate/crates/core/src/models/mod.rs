//! Concrete targets.

mod filamentary;
mod gaussian;
mod logistic;

pub use filamentary::{Ellipsoid, FilamentaryTarget};
pub use gaussian::{exact_gaussian_flow, FlatTarget, GaussianPath, GaussianTarget};
pub use logistic::{load_sonar, LogisticRegressionTarget};

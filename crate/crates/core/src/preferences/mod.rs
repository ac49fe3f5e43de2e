//! Utility functions and discount functions.

mod discount;
mod utility;
mod validation;

pub use discount::{DiscountFunction, DiscountKind};
pub use utility::{FrommImkellerTable, Kappa, TableConfig, UtilityFunction, UtilityKind};
pub use validation::{
    utility_class_check, validate_lambda, Check, Marginals, ValidationReport, Violation,
};

//! A laboratory for school-choice and college-admission mechanisms.
//!
//! The crate implements the mechanisms that appear in real admission systems
//! (student-proposing deferred acceptance, serial dictatorship,
//! first-preference-first, the Boston immediate-acceptance rule, and the
//! Chinese parallel rounds), the classical stability predicates, and a set of
//! exhaustive audits that measure how manipulable a mechanism is: per-profile
//! vulnerability, strategy-proof admission of a student to a school, immunity
//! comparisons between mechanisms, and a Nash-equilibrium refinement of all of
//! the above.
//!
//! Every audit quantifies over an explicit, enumerable [`analysis::PreferenceDomain`]
//! and is exact relative to that domain. Results are deterministic: witnesses
//! are selected by minimum enumeration index regardless of how many worker
//! threads participate in a scan.

pub mod analysis;
pub mod cli;
pub mod mechanisms;
pub mod model;
pub mod scenarios;
pub mod stability;

pub use mechanisms::{
    apply_mechanism, boston, chinese_parallel, first_preference_first, gale_shapley,
    serial_dictatorship, Family, MechanismError, MechanismSpec, RoundLengths,
};
pub use model::{
    Environment, Matching, Names, Preference, PreferenceProfile, PriorityOrder, Problem, SchoolId,
    StudentId, ValidationReport,
};

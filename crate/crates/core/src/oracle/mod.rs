//! Exact, enumeration-based ground truth over a tabular joint distribution.

mod frechet;
mod joint;
mod kl;
mod nelbo;

pub use frechet::{
    counterexample, frechet_truncate, mode_exclusion_witness, FrechetSupport, MarginalSet,
    ModeWitness, COUNTEREXAMPLE_WORDS,
};
pub use joint::{entropy, TabularJoint, MAX_TABLE};
pub use kl::{kl_closed_form_check, KlCheck};
pub use nelbo::{nelbo_bound, nelbo_bound_terms, nelbo_gap, nelbo_gap_terms, NelboTerms, MAX_WORK};

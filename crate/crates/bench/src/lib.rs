//! Benchmark fixtures; the benchmarks themselves live in `benches/`.

use mmbm_core::acceptance::{random_models, COMMON_REFERENCE, DIVIDEND_REFERENCE};
use mmbm_core::{DividendModel, MmbmModel};

pub fn reference_model() -> MmbmModel {
    COMMON_REFERENCE.model().expect("reference model is valid")
}

/// The largest (four-state) model of the seeded acceptance draws.
pub fn four_state_model() -> MmbmModel {
    random_models()
        .into_iter()
        .find(|m| m.n_states() == 4)
        .expect("draws include four-state models")
}

pub fn dividend_model() -> DividendModel {
    DIVIDEND_REFERENCE.model().expect("reference dividend model is valid")
}

//! Decoy-state parameter estimation: Chernoff intervals on the observed set
//! sizes, linear programs over the photon-number population, Serfling
//! scaling onto the kept string and the single-photon phase-error bound.

mod budget;
mod estimate;
pub mod lp;
mod observed;

pub use budget::ErrorBudget;
pub use estimate::{
    check_validity, chernoff_interval, estimate_yields, lower_bound_m_k0, lower_bound_m_k1,
    observed_error_rate, serfling_scale, true_error_upper_bound, upper_bound_e_k1, validity_mu,
    x_basis_aux, ChernoffInterval, DecoyBound, ErrorSample, PhotonPopulation, XBasisAux,
    YieldEstimate,
};
pub use observed::{estimate_from_session, GroundTruth, SessionEstimate};

//! Feature-analysis instruments: code/label co-occurrence and layer-wise
//! CCA/PWCCA similarity profiles.

pub mod cca;
pub mod cooccurrence;
pub mod profile;

pub use cca::{cca, pwcca, CcaResult, Mat};
pub use cooccurrence::{cooccurrence, CoOccurrence, CoOccurrenceMeta};
pub use profile::{layer_similarity_profile, write_profile_csv, ProfileRow};

//! Closed-loop stability certificates: the block LMI (global and per agent),
//! closed-form conditions for scalar agents and feasibility-region grids.

mod lmi;
mod region;
mod scalar;

pub use lmi::{
    assemble_lmi, check_certificate, check_lmi, lyapunov_decrease, search_certificate, search_lmi,
    search_local_certificates, CertificateCheck, CertificateResult, LmiData, LocalCertificates, SearchOptions,
};
pub use region::{feasibility_region, first_condition_holds, Axis, RegionGrid, RegionPoint, RegionSpec};
pub use scalar::{scalar_certificate, ScalarCertificate, ScalarCertificateInput, ScalarCondition};

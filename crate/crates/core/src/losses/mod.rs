//! Training losses, evaluation metrics and metric reports.

pub mod metrics;
pub mod ops;
pub mod pit;
pub mod report;

pub use metrics::{sdr, si_snr, si_snr_improvement, CAP_DB};
pub use ops::{LossConfig, MultiResL1, MultiResOutput};
pub use pit::{permutations, MAX_PIT_SOURCES};
pub use report::{read_records, write_records, MetricRecord};

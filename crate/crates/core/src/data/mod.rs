//! Domain types and tabular ingestion.

mod ingest;
mod types;
mod write;

pub use ingest::{
    ingest_applications, ingest_demographics, ingest_loans, CashflowLayout, DemographicsIngest,
    LoanIngest, LoanSchema, DEMOGRAPHIC_COLUMNS,
};
pub use types::{
    ApplicationRecord, CashflowVector, Dataset, DemographicWeights, Gender, LoanRecord, Race,
    YearMonth, DEFAULT_GRACE_MONTHS, RENORMALIZE_TOLERANCE, SIMPLEX_TOLERANCE,
};
pub use write::{load_dataset, write_dataset, DatasetPaths, IngestSummary};

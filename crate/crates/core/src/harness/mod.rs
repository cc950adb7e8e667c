//! Datasets, the reactive-versus-preemptive study runner, statistics and
//! report export.

mod dataset;
mod report;
mod stats;
mod study;

use std::path::PathBuf;

use thiserror::Error;

pub use dataset::{
    dataset_to_string, gen_dataset, parse_dataset, read_dataset, training_samples, write_dataset,
};
pub use report::{export_report, read_report_csv, report_csv, CsvRow, ReportFormat, CSV_COLUMNS};
pub use stats::{mann_whitney_u, quantile, significance, Summary};
pub use study::{
    run_study, CellComparison, Overall, PairedDifference, StudyConfig, StudyReport, SummaryRow,
    TrialFailure,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("dataset must contain at least one trajectory")]
    EmptyDataset,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("need at least 2 samples per group, got {0} and {1}")]
    TooFewSamples(usize, usize),
    #[error("study needs at least one cell and one trial")]
    EmptyStudy,
    #[error("cannot pick {want} distinct cells from a grid of {have}")]
    TooManyCells { want: usize, have: usize },
    #[error("malformed csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Sim(#[from] crate::sim::SimError),
    #[error(transparent)]
    Grid(#[from] crate::grid::GridError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}

use alphamerge::harness::HarnessError;
use alphamerge::merge::MergeError;
use alphamerge::prompt::PromptError;
use alphamerge::report::ReportError;
use alphamerge::scoring::ScoreError;
use alphamerge::tensorstore::TensorError;

pub const FORMAT: i32 = 3;
pub const MERGE: i32 = 4;
pub const SCORING: i32 = 5;
pub const HARNESS: i32 = 6;
pub const PARTIAL: i32 = 7;
pub const REPORT: i32 = 8;
pub const CONFIG: i32 = 9;
pub const IO: i32 = 10;

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

impl ConfigError {
    pub fn new(msg: impl Into<String>) -> Self {
        ConfigError(msg.into())
    }
}

/// Some samples failed after all retries; the others were written.
#[derive(Debug, thiserror::Error)]
#[error("{failed} of {requested} request(s) failed; see {errors_file}")]
pub struct PartialFailure {
    pub failed: usize,
    pub requested: usize,
    pub errors_file: String,
}

/// Maps an error to the exit code of its family.
pub fn code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<PartialFailure>() {
            return PARTIAL;
        }
        if cause.is::<ConfigError>() {
            return CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<MergeError>() {
            return match e {
                MergeError::Tensor(TensorError::Io(_)) | MergeError::Io(_) => IO,
                MergeError::Tensor(_) => FORMAT,
                _ => MERGE,
            };
        }
        if let Some(e) = cause.downcast_ref::<TensorError>() {
            return if matches!(e, TensorError::Io(_)) { IO } else { FORMAT };
        }
        if let Some(e) = cause.downcast_ref::<ScoreError>() {
            return if matches!(e, ScoreError::Io(_)) { IO } else { SCORING };
        }
        if let Some(e) = cause.downcast_ref::<HarnessError>() {
            return if matches!(e, HarnessError::Io(_)) { IO } else { HARNESS };
        }
        if cause.is::<PromptError>() {
            return HARNESS;
        }
        if let Some(e) = cause.downcast_ref::<ReportError>() {
            return if matches!(e, ReportError::Io(_)) { IO } else { REPORT };
        }
        if cause.is::<std::io::Error>() {
            return IO;
        }
    }
    1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn families_are_distinct() {
        let cases: Vec<(anyhow::Error, i32)> = vec![
            (TensorError::MalformedHeader("x".into()).into(), FORMAT),
            (MergeError::Tensor(TensorError::Overlap("x".into())).into(), FORMAT),
            (MergeError::AlphaOutOfRange(2.0).into(), MERGE),
            (ScoreError::EmptyLabelSet.into(), SCORING),
            (HarnessError::EmptyManifest.into(), HARNESS),
            (ReportError::EmptySummary.into(), REPORT),
            (ConfigError::new("x").into(), CONFIG),
            (std::io::Error::other("x").into(), IO),
            (
                PartialFailure {
                    failed: 1,
                    requested: 2,
                    errors_file: "e".into(),
                }
                .into(),
                PARTIAL,
            ),
        ];
        for (err, want) in cases {
            let err = err.context("while doing something");
            assert_eq!(code(&err), want, "{err:#}");
        }
    }
}

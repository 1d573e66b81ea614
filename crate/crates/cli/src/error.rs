use bayesboost::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::Singular(_) | CoreError::Numeric(_) => CliError::Numeric(msg),
            CoreError::InvalidConfig(_)
            | CoreError::DfOutOfRange { .. }
            | CoreError::InvalidBasis(_)
            | CoreError::DegenerateConstraint(_)
            | CoreError::DuplicateAtom(..)
            | CoreError::NonPositiveWeight(..)
            | CoreError::AtomOutsideInterval { .. }
            | CoreError::AtomOnGridNode(..)
            | CoreError::InvalidInterval(..)
            | CoreError::GridTooSmall { .. }
            | CoreError::EmptyMeasure
            | CoreError::WrongMeasureKind(_)
            | CoreError::UnknownCovariate(_)
            | CoreError::InvalidArgument(_) => CliError::Config(msg),
            _ => CliError::Data(msg),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub(crate) fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

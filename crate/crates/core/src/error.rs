use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    /// A quantity is outside the domain where it is defined (e.g. a zero
    /// reference probability in a relative entropy).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("step size {dt} too large: maximal admissible step is {max_dt}")]
    StepTooLarge { dt: f64, max_dt: f64 },

    #[error("integration unstable at t={t}: entry {value:e} below -1e-13, reduce dt")]
    Unstable { t: f64, value: f64 },
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// Numeric failures (NaN, instability, solver breakdown) as opposed to
    /// bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Numeric(_) | Error::Unstable { .. } | Error::StepTooLarge { .. }
        )
    }
}

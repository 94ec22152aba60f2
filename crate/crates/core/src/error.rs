use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature did not converge at t = {t} s (last error estimate {error_estimate:e})")]
    NonConvergence { t: f64, error_estimate: f64 },

    #[error("mode series not converged at order {order} (last term {last_term:e}, partial sum {partial_sum:e})")]
    TailNotConverged {
        order: usize,
        last_term: f64,
        partial_sum: f64,
    },

    #[error("exponent {exponent} exceeds the floating-point range")]
    Overflow { exponent: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("histogram and curve grids do not match: {0}")]
    GridMismatch(String),

    #[error("objective is not unimodal on [{t_lo}, {t_hi}] ({peaks} separated maxima)")]
    NotUnimodal { t_lo: f64, t_hi: f64, peaks: usize },

    #[error("maximum lies at the edge of the search window [{t_lo}, {t_hi}]")]
    Window { t_lo: f64, t_hi: f64 },

    #[error("evaluation failed at index {index}: {source}")]
    AtIndex {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn at(index: usize, source: Error) -> Self {
        Error::AtIndex {
            index,
            source: Box::new(source),
        }
    }

    /// Strips any index wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtIndex { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures of the numerical evaluators, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::NonConvergence { .. }
                | Error::TailNotConverged { .. }
                | Error::Overflow { .. }
                | Error::NotUnimodal { .. }
                | Error::Window { .. }
        )
    }
}

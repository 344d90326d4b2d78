use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported dimension {0}")]
    UnsupportedDimension(usize),

    #[error("invalid edge: {0}")]
    InvalidEdge(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("singular integrand: {0}")]
    Singularity(String),

    #[error("vertex cap of {cap} exceeded")]
    VertexCapExceeded { cap: usize },

    #[error("no grid path joins the requested points inside the domain")]
    DisconnectedDomain,

    #[error("point {0:?} lies outside the grid domain")]
    OutsideGrid(Vec<f64>),

    #[error("insufficient samples: {0}")]
    InsufficientSample(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable category, reported by the command-line tool.
    pub fn category(&self) -> &'static str {
        match self {
            Error::UnsupportedDimension(_) => "runtime.unsupported_dimension",
            Error::InvalidEdge(_) => "runtime.invalid_edge",
            Error::Domain(_) => "runtime.domain",
            Error::Precondition(_) => "runtime.precondition",
            Error::Singularity(_) => "runtime.singularity",
            Error::VertexCapExceeded { .. } => "runtime.vertex_cap",
            Error::DisconnectedDomain => "runtime.disconnected_domain",
            Error::OutsideGrid(_) => "runtime.outside_grid",
            Error::InsufficientSample(_) => "runtime.insufficient_sample",
            Error::Parse(_) => "runtime.parse",
            Error::Io(_) => "runtime.io",
            Error::Json(_) => "runtime.json",
        }
    }
}

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config file not readable: {0}")]
    ConfigNotFound(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("mesh file not found: {0}")]
    MeshNotFound(String),
    #[error("invalid mesh: {0}")]
    Mesh(String),
    #[error("input file not found: {0}")]
    InputNotFound(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("{0}")]
    Numerical(String),
    #[error("cannot write output: {0}")]
    Output(#[from] std::io::Error),
}

impl CliError {
    /// Stable machine-readable code written to `summary.json`.
    pub fn code(&self) -> &'static str {
        match self {
            CliError::ConfigNotFound(_) => "config_not_found",
            CliError::Config(_) => "invalid_config",
            CliError::MeshNotFound(_) => "mesh_not_found",
            CliError::Mesh(_) => "invalid_mesh",
            CliError::InputNotFound(_) => "input_not_found",
            CliError::Input(_) => "invalid_input",
            CliError::Shape(_) => "shape_mismatch",
            CliError::Numerical(_) => "numerical_failure",
            CliError::Output(_) => "output_failure",
        }
    }

    /// 2 for bad inputs, 1 for failures during the computation itself.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numerical(_) | CliError::Output(_) => 1,
            _ => 2,
        }
    }
}

impl From<epit::eit::MeshError> for CliError {
    fn from(e: epit::eit::MeshError) -> Self {
        match e {
            epit::eit::MeshError::NotFound(p) => CliError::MeshNotFound(p),
            other => CliError::Mesh(other.to_string()),
        }
    }
}

pub fn numerical(e: impl std::fmt::Display) -> CliError {
    CliError::Numerical(e.to_string())
}

use gsdyn_autodiff::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("quaternion has zero norm")]
    ZeroQuaternion,

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("{} at {position:?} is outside the grid interior", describe_particle(*.particle))]
    OutsideGrid {
        particle: Option<usize>,
        position: [f64; 3],
    },

    #[error(
        "CFL violated at substep {substep}: dt * max|v| = {dt} * {speed} >= h = {h}; use a smaller dt"
    )]
    Cfl {
        substep: usize,
        dt: f64,
        speed: f64,
        h: f64,
    },

    #[error("non-finite particle velocity at substep {substep}")]
    NonFinite { substep: usize },

    #[error("image shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),

    #[error("image of {width}x{height} is smaller than the {window}x{window} SSIM window")]
    ImageTooSmall {
        width: usize,
        height: usize,
        window: usize,
    },

    #[error("loss diverged at iteration {iteration} ({pathway} pathway)")]
    Diverged {
        iteration: usize,
        pathway: &'static str,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn describe_particle(p: Option<usize>) -> String {
    match p {
        Some(i) => format!("particle {i}"),
        None => "position".into(),
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

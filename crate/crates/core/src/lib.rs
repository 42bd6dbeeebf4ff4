//! Core of the formloop design loop: rigid-transform algebra, pinhole camera
//! geometry, point-cloud normalization, block scenes, the tracking pipeline
//! with occlusion handling, synthetic benchmarks, a D2Q9 wind solver and
//! image rendering.

pub mod bench;
pub mod camera;
pub mod ingest;
pub mod pipeline;
pub mod protocol;
pub mod render;
pub mod scene;
pub mod se3;
pub mod seed;
pub mod wind;

pub use se3::{Pose, Rotation};

/// Any failure surfaced by this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Se3(#[from] se3::Se3Error),
    #[error(transparent)]
    Camera(#[from] camera::CameraError),
    #[error(transparent)]
    Ingest(#[from] ingest::IngestError),
    #[error(transparent)]
    Scene(#[from] scene::SceneError),
    #[error(transparent)]
    Track(#[from] pipeline::TrackError),
    #[error(transparent)]
    Bench(#[from] bench::BenchError),
    #[error(transparent)]
    Wind(#[from] wind::WindError),
    #[error(transparent)]
    Render(#[from] render::RenderError),
}

impl Error {
    /// Stable machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Se3(_) => "se3",
            Error::Camera(_) => "camera",
            Error::Ingest(_) => "ingest",
            Error::Scene(_) => "scene",
            Error::Track(_) => "track",
            Error::Bench(_) => "bench",
            Error::Wind(_) => "wind",
            Error::Render(_) => "render",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

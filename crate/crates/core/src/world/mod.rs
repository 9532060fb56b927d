//! The synthetic world: procedural scenes, a raster renderer, the oracle
//! detector that grades generated images, deterministic text encoders, and
//! the dataset pipeline.

mod dataset;
mod encoders;
mod prompt;
mod scene;

pub use dataset::{sample_dataset, Dataset, DatasetItem};
pub use encoders::{Encoders, TokenEmbeddings, DEFAULT_D_POOL, DEFAULT_D_TOKEN, N_TEXT};
pub use prompt::{AttrKind, Clause, ColorName, DetailKind, ShapeKind, SizeKind, ToyPrompt};
pub use scene::{detect_scene, render_scene, Detection, DetectedScene, Image, ToyScene};
pub use scene::{CELLS_PER_SIDE, CHANNELS, IMG_LEN, MAX_COUNT, RESOLUTION};

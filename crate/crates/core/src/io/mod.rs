//! Checkpoints, label tables, image preprocessing and configuration.

pub mod checkpoint;
pub mod config;
pub mod labels;
pub mod preprocess;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{load_config, AppConfig};
pub use labels::{decode_predictions, LabelTable, Prediction};
pub use preprocess::{preprocess_image, ChannelMode, PreprocessSpec, ResizeMode, Scaling};

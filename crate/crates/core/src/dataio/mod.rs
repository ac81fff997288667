//! Image files, datasets on disk, checkpoints and CSV output.

mod checkpoint;
mod csv;
mod dataset;
mod image;

pub use checkpoint::{checkpoint_bytes, load_checkpoint, network_from_bytes, read_tensors, save_checkpoint, MAGIC, VERSION};
pub use csv::{csv_text, fmt_float, write_csv};
pub use dataset::{
    class_dirs, image_files, load_dataset, stratified_split, Dataset, DatasetManifest, ImageRecord, ManifestEntry, Split,
};
pub use image::{
    decode_bytes, decode_image, denormalize, encode_bytes, encode_image, normalize, resize_bilinear, ImageFormat,
    PixelRange, RgbImage,
};

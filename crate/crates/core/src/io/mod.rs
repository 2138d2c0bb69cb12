//! On-disk formats: PFM float images and the light-field video container.

pub mod container;
pub mod pfm;

pub use container::{
    frame_dir_name, read_image, read_meta, read_video, sai_file_name, write_image, write_video,
    ContainerMeta, GroundTruthFiles, PixelFormat, META_FILE,
};
pub use pfm::{read_flow, read_pfm, write_flow, write_pfm};

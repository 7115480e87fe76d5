//! The structure-to-image mapping: pinhole projection of object boxes and
//! the 9-channel instance map.

mod camera;
mod raster;

pub use camera::{cube_corners, BBox2D, CameraModel, Projected, NEAR_PLANE};
pub use raster::{
    label_embedding, project_boxes, rasterize_instance_map, rotation_bin, rotation_onehot,
    InstanceMap, ResizeMeta, CHANNELS, SIMAP_MAGIC, WORKING_SIZE,
};

//! Image representation, PNG I/O, preprocessing and augmentation.

mod io;
mod tensor;
mod transform;

pub use io::{intensity_to_level, level_to_intensity, load_image, save_image};
pub use tensor::ImageTensor;
pub use transform::{
    augment, center_crop_resize, crop, flip_horizontal, flip_vertical, gaussian_blur,
    resize_bilinear, rotate, AugmentSpec,
};

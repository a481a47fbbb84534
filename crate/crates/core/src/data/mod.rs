//! Data pipeline: annotation model, VOC-style XML, image rasters and PNG/PPM
//! I/O, Lanczos standardization to 300x300, the training-time augmentation
//! pipeline, dataset splitting and the synthetic smear generator.

mod augment;
mod color;
mod io;
mod resample;
mod split;
mod synth;
mod voc;

pub use augment::{augment, AugmentConfig};
pub use color::{hsv_to_rgb, rgb_to_hsv};
pub use io::{load_raster, save_png, save_ppm};
pub use resample::{standardize, StandardizePolicy};
pub use split::split_dataset;
pub use synth::{generate_synthetic_smear, write_synthetic_dataset, SmearSpec, SyntheticScene};
pub use voc::{parse_voc_xml, write_voc_xml};

use crate::geometry::BBox;
use crate::tensor::Tensor;
use thiserror::Error;

pub const IMAGE_SIDE: usize = 300;

/// Class ids: 0 is background, 1..=3 are the cell classes in this order.
pub const CLASS_NAMES: [&str; 3] = [
    "aggregate_reticulocyte",
    "punctate_reticulocyte",
    "erythrocyte",
];

pub fn class_id_of(name: &str) -> Option<usize> {
    CLASS_NAMES.iter().position(|&n| n == name).map(|i| i + 1)
}

pub fn class_name_of(id: usize) -> Option<&'static str> {
    (1..=3).contains(&id).then(|| CLASS_NAMES[id - 1])
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Invalid(String),
    #[error("placement failed: placed {achieved} of {requested} cells under the overlap cap")]
    Placement { achieved: usize, requested: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("image error on {path}: {message}")]
    Image { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, DataError>;

/// One labeled object: class id (1..=3) and its pixel-space box.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectLabel {
    pub class_id: usize,
    pub bbox: BBox,
}

/// Ground truth for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<ObjectLabel>,
}

impl Annotation {
    pub fn class_counts(&self) -> [usize; 3] {
        let mut counts = [0usize; 3];
        for obj in &self.objects {
            counts[obj.class_id - 1] += 1;
        }
        counts
    }

    pub fn boxes(&self) -> Vec<(usize, BBox)> {
        self.objects.iter().map(|o| (o.class_id, o.bbox)).collect()
    }
}

/// RGB raster with channel-planar storage (CHW) and values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    data: Vec<f64>,
}

impl Raster {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; 3 * width * height],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(DataError::Invalid(format!(
                "raster {width}x{height} needs {} values, got {}",
                3 * width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.width * self.height..(c + 1) * self.width * self.height]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let plane = self.width * self.height;
        &mut self.data[c * plane..(c + 1) * plane]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let plane = self.width * self.height;
        let i = y * self.width + x;
        [self.data[i], self.data[plane + i], self.data[2 * plane + i]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let plane = self.width * self.height;
        let i = y * self.width + x;
        self.data[i] = rgb[0];
        self.data[plane + i] = rgb[1];
        self.data[2 * plane + i] = rgb[2];
    }

    /// Converts to a (1, 3, H, W) tensor for the network.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![1, 3, self.height, self.width], self.data.clone())
            .expect("raster storage is consistent by construction")
    }

    pub fn clamp_in_place(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }
}

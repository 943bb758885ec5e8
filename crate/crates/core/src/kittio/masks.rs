//! Instance label images: one grayscale PNG per frame, pixel value = instance
//! id, 0 = background. 8-bit and 16-bit images are accepted.

use std::collections::BTreeMap;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::fusion2d3d::InstanceMask;

fn image_err(path: &Path, msg: impl ToString) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    }
}

/// Reads one label image into masks ordered by id. Returns the image size too.
pub fn read_instance_png(path: &Path) -> Result<((u32, u32), Vec<InstanceMask>)> {
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    let (w, h) = (img.width(), img.height());
    let values: Vec<u32> = match img {
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(u32::from).collect(),
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(u32::from).collect(),
        other => return Err(image_err(path, format!("expected a grayscale label image, found {:?}", other.color()))),
    };
    let mut by_id: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for (lin, v) in values.into_iter().enumerate() {
        if v != 0 {
            by_id.entry(v).or_default().push(lin as u32);
        }
    }
    let masks = by_id
        .into_iter()
        .map(|(id, px)| InstanceMask::from_linear(id, &px, 1.0))
        .collect();
    Ok(((w, h), masks))
}

/// Writes masks as a 16-bit label image. Later masks overwrite earlier ones
/// where they overlap.
pub fn write_instance_png(path: &Path, image_size: (u32, u32), masks: &[InstanceMask]) -> Result<()> {
    let (w, h) = image_size;
    let mut buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::new(w, h);
    for m in masks {
        let id = u16::try_from(m.id).map_err(|_| image_err(path, format!("mask id {} does not fit in 16 bits", m.id)))?;
        for lin in m.linear_pixels(image_size)? {
            buf.put_pixel(lin % w, lin / w, Luma([id]));
        }
    }
    buf.save(path).map_err(|e| image_err(path, e))
}

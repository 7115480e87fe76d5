use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grammar::{GrammarSpec, ObjectInstance, ParseGraph};

use super::camera::BBox2D;

pub const CHANNELS: usize = 9;
pub const SIMAP_MAGIC: &[u8; 6] = b"SIMAP1";

/// Working resolution the instance map is resized to
/// before refinement.
pub const WORKING_SIZE: (u32, u32) = (256, 256);

/// Fixed base-4 code: `label = d2·16 + d1·4 + d0`, channel `i` of
/// `[d2, d1, d0]` is `(d + 0.5) / 4`.
pub fn label_embedding(label: usize) -> Result<[f64; 3]> {
    if label >= 64 {
        return Err(Error::LabelOutOfRange(label));
    }
    let digit = |shift: usize| ((label >> shift) & 3) as f64;
    Ok([
        (digit(4) + 0.5) / 4.0,
        (digit(2) + 0.5) / 4.0,
        (digit(0) + 0.5) / 4.0,
    ])
}

/// 15° bin of the rotation after reduction modulo 90°.
pub fn rotation_bin(theta: f64) -> usize {
    let reduced = theta.rem_euclid(90.0);
    ((reduced / 15.0).floor() as usize).min(5)
}

pub fn rotation_onehot(theta: f64) -> [f64; 6] {
    let mut v = [0.0; 6];
    v[rotation_bin(theta)] = 1.0;
    v
}

/// Scale factors between the native map size and the working size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResizeMeta {
    pub source: (u32, u32),
    pub working: (u32, u32),
    pub scale_x: f64,
    pub scale_y: f64,
}

/// H×W×9 raster: 3 label-embedding channels then 6 rotation one-hot channels.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMap {
    pub width: u32,
    pub height: u32,
    /// Row-major, channel innermost.
    pub data: Vec<f32>,
    pub source: Option<String>,
}

impl InstanceMap {
    pub fn zeros(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width as usize * height as usize * CHANNELS],
            source: None,
        }
    }

    pub fn channels(&self) -> usize {
        CHANNELS
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[f32] {
        let start = (y as usize * self.width as usize + x as usize) * CHANNELS;
        &self.data[start..start + CHANNELS]
    }

    fn pixel_mut(&mut self, x: u32, y: u32) -> &mut [f32] {
        let start = (y as usize * self.width as usize + x as usize) * CHANNELS;
        &mut self.data[start..start + CHANNELS]
    }

    pub fn resize_meta(&self) -> ResizeMeta {
        ResizeMeta {
            source: (self.width, self.height),
            working: WORKING_SIZE,
            scale_x: WORKING_SIZE.0 as f64 / self.width as f64,
            scale_y: WORKING_SIZE.1 as f64 / self.height as f64,
        }
    }

    /// `SIMAP1` magic, width/height/channels as u32 LE, then f32 LE values.
    pub fn to_simap_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(18 + self.data.len() * 4);
        out.extend_from_slice(SIMAP_MAGIC);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&(CHANNELS as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_simap_bytes(bytes: &[u8]) -> Result<Self> {
        let header = SIMAP_MAGIC.len() + 12;
        if bytes.len() < header {
            return Err(Error::Format {
                offset: bytes.len(),
                message: format!("truncated header, expected {header} bytes"),
            });
        }
        if &bytes[..6] != SIMAP_MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: "bad magic, expected SIMAP1".into(),
            });
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let (width, height, channels) = (word(6), word(10), word(14));
        if channels as usize != CHANNELS {
            return Err(Error::Format {
                offset: 14,
                message: format!("expected {CHANNELS} channels, found {channels}"),
            });
        }
        let count = width as usize * height as usize * CHANNELS;
        let expected = header + count * 4;
        if bytes.len() != expected {
            return Err(Error::Format {
                offset: bytes.len().min(expected),
                message: format!("expected {expected} bytes, found {}", bytes.len()),
            });
        }
        let data = bytes[header..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            width,
            height,
            data,
            source: None,
        })
    }

    /// Binary PPM preview of the label-embedding channels.
    pub fn to_ppm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.reserve(self.width as usize * self.height as usize * 3);
        for px in self.data.chunks_exact(CHANNELS) {
            for &c in &px[..3] {
                out.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        out
    }

    pub fn write_simap(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_simap_bytes())
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.to_ppm_bytes())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Canonical far-to-near order. Ties in depth fall back to the object's
/// own attributes so the result does not depend on list order.
fn paint_order(a: &(BBox2D, &ObjectInstance), b: &(BBox2D, &ObjectInstance)) -> Ordering {
    b.0.depth
        .total_cmp(&a.0.depth)
        .then(a.1.label.cmp(&b.1.label))
        .then(a.1.size.cmp(&b.1.size))
        .then(a.1.location.x.total_cmp(&b.1.location.x))
        .then(a.1.location.y.total_cmp(&b.1.location.y))
        .then(a.1.location.z.total_cmp(&b.1.location.z))
        .then(a.1.rotation.total_cmp(&b.1.rotation))
}

/// Projected boxes for every object, in object order.
pub fn project_boxes(g: &ParseGraph, spec: &GrammarSpec) -> Result<Vec<BBox2D>> {
    g.objects
        .iter()
        .enumerate()
        .map(|(i, o)| {
            spec.camera
                .project_object_bbox(o)
                .map_err(|_| Error::ObjectBehindCamera { index: i })
        })
        .collect()
}

/// Paints each object's filled box far-to-near; a pixel belongs to a box
/// when its center lies in `[x0, x1) × [y0, y1)`.
pub fn rasterize_instance_map(g: &ParseGraph, spec: &GrammarSpec) -> Result<InstanceMap> {
    let cam = &spec.camera;
    let mut map = InstanceMap::zeros(cam.image_width, cam.image_height);
    let boxes = project_boxes(g, spec)?;
    let mut items: Vec<(BBox2D, &ObjectInstance)> = boxes.into_iter().zip(&g.objects).collect();
    items.sort_by(paint_order);

    for (b, o) in items {
        let emb = label_embedding(o.label)?;
        let rot = rotation_onehot(o.rotation);
        let mut value = [0f32; CHANNELS];
        for (dst, src) in value.iter_mut().zip(emb.iter().chain(rot.iter())) {
            *dst = *src as f32;
        }
        // Pixel centers at i + 0.5.
        let first = |lo: f64| (lo - 0.5).ceil().max(0.0) as u32;
        let end = |hi: f64, limit: u32| ((hi - 0.5).ceil().max(0.0) as u32).min(limit);
        for y in first(b.y0)..end(b.y1, map.height) {
            for x in first(b.x0)..end(b.x1, map.width) {
                map.pixel_mut(x, y).copy_from_slice(&value);
            }
        }
    }
    Ok(map)
}

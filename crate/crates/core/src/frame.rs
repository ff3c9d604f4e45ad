//! RGB8 raster frames and their binary PPM / PNG encodings.

use std::io::Cursor;

use base64::Engine as _;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ImageEncoder, ImageFormat, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::geometry::BBox;

pub type Rgb8 = [u8; 3];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    image: RgbImage,
}

/// A frame together with its index in the camera's stream.
#[derive(Debug, Clone)]
pub struct IndexedFrame {
    pub index: u64,
    pub frame: std::sync::Arc<Frame>,
}

impl IndexedFrame {
    pub fn new(index: u64, frame: Frame) -> Self {
        IndexedFrame { index, frame: std::sync::Arc::new(frame) }
    }
}

/// Pixel index range `[x0, x1) x [y0, y1)` whose pixel centers fall inside a box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelRect {
    /// Pixels of a `width x height` grid whose centers lie inside `bbox`.
    pub fn covering(bbox: &BBox, width: u32, height: u32) -> PixelRect {
        let span = |lo: f64, hi: f64, max: u32| -> (u32, u32) {
            let a = (lo - 0.5).ceil().clamp(0.0, max as f64) as u32;
            let b = (hi - 0.5).ceil().clamp(0.0, max as f64) as u32;
            (a, b.max(a))
        };
        let (x0, x1) = span(bbox.x, bbox.right(), width);
        let (y0, y1) = span(bbox.y, bbox.bottom(), height);
        PixelRect { x0, y0, x1, y1 }
    }

    pub fn is_empty(&self) -> bool {
        self.x1 <= self.x0 || self.y1 <= self.y0
    }

    pub fn len(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            ((self.x1 - self.x0) * (self.y1 - self.y0)) as usize
        }
    }
}

impl Frame {
    pub fn filled(width: u32, height: u32, color: Rgb8) -> Self {
        Frame { image: RgbImage::from_pixel(width, height, Rgb(color)) }
    }

    pub fn from_image(image: RgbImage) -> Self {
        Frame { image }
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        RgbImage::from_raw(width, height, data)
            .map(Frame::from_image)
            .ok_or_else(|| Error::invalid(format!("buffer does not hold {width}x{height} RGB8 pixels")))
    }

    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }

    pub fn image(&self) -> &RgbImage {
        &self.image
    }

    pub fn as_raw(&self) -> &[u8] {
        self.image.as_raw()
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> Rgb8 {
        self.image.get_pixel(x, y).0
    }

    #[inline]
    pub fn put_pixel(&mut self, x: u32, y: u32, color: Rgb8) {
        self.image.put_pixel(x, y, Rgb(color));
    }

    /// Luma in `[0, 1]` at an integer pixel, with coordinates clamped to the border.
    #[inline]
    pub fn luma_clamped(&self, x: i64, y: i64) -> f64 {
        let xi = x.clamp(0, self.width() as i64 - 1) as u32;
        let yi = y.clamp(0, self.height() as i64 - 1) as u32;
        let [r, g, b] = self.pixel(xi, yi);
        (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0
    }

    /// Bilinearly interpolated luma with border replication.
    pub fn luma_bilinear(&self, x: f64, y: f64) -> f64 {
        let fx = x.floor();
        let fy = y.floor();
        let (tx, ty) = (x - fx, y - fy);
        let (ix, iy) = (fx as i64, fy as i64);
        let top = self.luma_clamped(ix, iy) * (1.0 - tx) + self.luma_clamped(ix + 1, iy) * tx;
        let bot = self.luma_clamped(ix, iy + 1) * (1.0 - tx) + self.luma_clamped(ix + 1, iy + 1) * tx;
        top * (1.0 - ty) + bot * ty
    }

    /// Pixels whose centers lie inside `bbox`, clipped to the frame.
    pub fn pixel_rect(&self, bbox: &BBox) -> PixelRect {
        PixelRect::covering(bbox, self.width(), self.height())
    }

    /// Copies the pixels covered by `bbox`; fails when no pixel is covered.
    pub fn crop(&self, bbox: &BBox) -> Result<Frame> {
        if !bbox.is_valid() {
            return Err(Error::invalid("crop box is not finite"));
        }
        let r = self.pixel_rect(bbox);
        if r.is_empty() {
            return Err(Error::invalid("crop does not intersect the frame"));
        }
        let sub = image::imageops::crop_imm(&self.image, r.x0, r.y0, r.x1 - r.x0, r.y1 - r.y0).to_image();
        Ok(Frame::from_image(sub))
    }

    pub fn fill_rect(&mut self, r: PixelRect, color: Rgb8) {
        for y in r.y0..r.y1 {
            for x in r.x0..r.x1 {
                self.put_pixel(x, y, color);
            }
        }
    }

    /// Binary PPM (P6, maxval 255).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.as_raw().len() + 20);
        PnmEncoder::new(&mut out)
            .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
            .write_image(self.as_raw(), self.width(), self.height(), image::ExtendedColorType::Rgb8)
            .expect("encoding into a Vec cannot fail");
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Frame> {
        if !bytes.starts_with(b"P6") {
            return Err(Error::FrameEncoding("payload is not a binary PPM (P6)".into()));
        }
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Pnm)
            .map_err(|e| Error::FrameEncoding(e.to_string()))?;
        Ok(Frame::from_image(img.to_rgb8()))
    }

    pub fn to_ppm_base64(&self) -> String {
        base64::engine::general_purpose::STANDARD.encode(self.to_ppm())
    }

    pub fn from_ppm_base64(text: &str) -> Result<Frame> {
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(text.trim())
            .map_err(|e| Error::FrameEncoding(format!("base64: {e}")))?;
        Frame::from_ppm(&bytes)
    }

    pub fn to_png(&self) -> Vec<u8> {
        let mut out = Cursor::new(Vec::new());
        self.image
            .write_to(&mut out, ImageFormat::Png)
            .expect("encoding into a Vec cannot fail");
        out.into_inner()
    }
}

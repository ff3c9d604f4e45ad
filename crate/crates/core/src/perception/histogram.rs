use super::{AppearanceVector, Embedder, FrameContext};
use crate::error::{Error, Result};
use crate::geometry::BBox;

const BINS_PER_CHANNEL: usize = 8;

/// 8x8x8 joint RGB histogram of the crop, L2-normalised (512 dimensions).
#[derive(Debug, Clone, Copy, Default)]
pub struct HistogramEmbedder;

impl Embedder for HistogramEmbedder {
    fn embed(&self, ctx: &FrameContext<'_>, bbox: &BBox) -> Result<AppearanceVector> {
        let r = ctx.frame.pixel_rect(bbox);
        if r.is_empty() {
            return Err(Error::invalid("empty crop"));
        }
        let mut hist = vec![0.0; BINS_PER_CHANNEL.pow(3)];
        for y in r.y0..r.y1 {
            for x in r.x0..r.x1 {
                let [cr, cg, cb] = ctx.frame.pixel(x, y);
                let bin = ((cr >> 5) as usize * BINS_PER_CHANNEL + (cg >> 5) as usize) * BINS_PER_CHANNEL + (cb >> 5) as usize;
                hist[bin] += 1.0;
            }
        }
        AppearanceVector::normalized(hist)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::Frame;
    use crate::perception::{embed, similarity};

    #[test]
    fn uniform_red_crop_fills_one_bin() {
        let f = Frame::filled(20, 20, [255, 0, 0]);
        let v = embed(&HistogramEmbedder, &FrameContext::new("c", 0, &f), &BBox::new(2.0, 2.0, 8.0, 8.0)).unwrap();
        assert_eq!(v.dim(), 512);
        assert_eq!(v.values().iter().filter(|x| **x != 0.0).count(), 1);
        assert!((v.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn crop_size_does_not_matter_for_uniform_color() {
        let f = Frame::filled(50, 50, [10, 200, 90]);
        let ctx = FrameContext::new("c", 0, &f);
        let a = embed(&HistogramEmbedder, &ctx, &BBox::new(0.0, 0.0, 5.0, 5.0)).unwrap();
        let b = embed(&HistogramEmbedder, &ctx, &BBox::new(10.0, 10.0, 30.0, 17.0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invariant_to_pixel_permutation() {
        let mut f = Frame::filled(8, 8, [0, 0, 0]);
        let mut g = Frame::filled(8, 8, [0, 0, 0]);
        for i in 0..64u32 {
            let c = [(i * 4) as u8, (255 - i * 3) as u8, (i * 7 % 256) as u8];
            f.put_pixel(i % 8, i / 8, c);
            let j = (i * 29) % 64;
            g.put_pixel(j % 8, j / 8, c);
        }
        let whole = BBox::new(0.0, 0.0, 8.0, 8.0);
        let a = embed(&HistogramEmbedder, &FrameContext::new("c", 0, &f), &whole).unwrap();
        let b = embed(&HistogramEmbedder, &FrameContext::new("c", 0, &g), &whole).unwrap();
        assert!((similarity(&a, &b) - 1.0).abs() < 1e-12);
    }
}

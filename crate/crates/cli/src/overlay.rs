//! Track overlays: red dots at current positions, green segments for the last motion.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat, Rgb, RgbImage};
use imageproc::drawing::{draw_filled_circle_mut, draw_line_segment_mut};
use mbtrack::imaging::GrayImage;
use mbtrack::io::{atomic_write, IoError};

const RED: Rgb<u8> = Rgb([255, 0, 0]);
const GREEN: Rgb<u8> = Rgb([0, 255, 0]);

pub fn render_overlay(frame: &GrayImage, prev: &[[f64; 2]], cur: &[[f64; 2]]) -> RgbImage {
    let gray = frame.to_luma8();
    let mut img = DynamicImage::ImageLuma8(gray).to_rgb8();
    for (p, q) in prev.iter().zip(cur) {
        draw_line_segment_mut(
            &mut img,
            (p[0] as f32, p[1] as f32),
            (q[0] as f32, q[1] as f32),
            GREEN,
        );
    }
    for q in cur {
        draw_filled_circle_mut(&mut img, (q[0].round() as i32, q[1].round() as i32), 1, RED);
    }
    img
}

/// One `overlay_%06d.png` per frame after the first.
pub fn write_overlays(
    dir: &Path,
    frames: &[GrayImage],
    positions: &[Vec<[f64; 2]>],
) -> Result<(), IoError> {
    for f in 1..frames.len().min(positions.len()) {
        let img = render_overlay(&frames[f], &positions[f - 1], &positions[f]);
        let mut bytes = Cursor::new(Vec::new());
        DynamicImage::ImageRgb8(img)
            .write_to(&mut bytes, ImageFormat::Png)
            .expect("PNG encoding into memory");
        atomic_write(dir.join(format!("overlay_{f:06}.png")), &bytes.into_inner())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marks_position_and_motion() {
        let frame = GrayImage::from_fn(20, 20, |_, _| 0.5);
        let img = render_overlay(&frame, &[[2.0, 10.0]], &[[15.0, 10.0]]);
        assert_eq!(*img.get_pixel(15, 10), RED);
        assert_eq!(*img.get_pixel(8, 10), GREEN);
        assert_eq!(*img.get_pixel(8, 3), Rgb([128, 128, 128]));
    }
}

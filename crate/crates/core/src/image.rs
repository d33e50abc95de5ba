//! Grayscale images as 2-D regression tasks: f(pixel coordinates) = pixel
//! brightness. Input is the big-endian IDX container used by the MNIST
//! distribution; completions are written back as binary PGM (P5).

use std::fs;
use std::path::Path;

use rand::seq::index::sample as sample_indices;

use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::task::FunctionTask;
use crate::tensor::Tensor;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pixels: Vec<u8>,
}

impl IdxImages {
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// Raw bytes of one image, row-major.
    pub fn image(&self, index: usize) -> Result<&[u8]> {
        if index >= self.count {
            return Err(Error::domain("idx_images", format!("image {index} out of {}", self.count)));
        }
        let n = self.rows * self.cols;
        Ok(&self.pixels[index * n..(index + 1) * n])
    }
}

fn read_be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    let chunk: [u8; 4] = bytes
        .get(offset..offset + 4)
        .and_then(|s| s.try_into().ok())
        .ok_or_else(|| Error::Format(format!("truncated IDX header while reading {what}")))?;
    Ok(u32::from_be_bytes(chunk))
}

/// Parses an IDX file of unsigned-byte images (magic 0x00000803).
pub fn parse_idx(bytes: &[u8]) -> Result<IdxImages> {
    let magic = read_be_u32(bytes, 0, "magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "IDX magic 0x{magic:08x} is not an unsigned-byte 3-D image file (expected 0x{IDX_IMAGES_MAGIC:08x})"
        )));
    }
    let count = read_be_u32(bytes, 4, "image count")? as usize;
    let rows = read_be_u32(bytes, 8, "rows")? as usize;
    let cols = read_be_u32(bytes, 12, "cols")? as usize;
    let n_pixels = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::Format("IDX dimensions overflow".into()))?;
    let payload = &bytes[16.min(bytes.len())..];
    if payload.len() != n_pixels {
        return Err(Error::Format(format!(
            "IDX payload has {} bytes, header promises {n_pixels}",
            payload.len()
        )));
    }
    Ok(IdxImages { count, rows, cols, pixels: payload.to_vec() })
}

pub fn load_idx(path: &Path) -> Result<IdxImages> {
    parse_idx(&fs::read(path)?)
}

/// Normalized pixel coordinate for (row, col): x = col/(cols−1), y = row/(rows−1).
fn pixel_coord(index: usize, rows: usize, cols: usize) -> (f64, f64) {
    let (r, c) = (index / cols, index % cols);
    let norm = |v: usize, extent: usize| {
        if extent > 1 {
            v as f64 / (extent - 1) as f64
        } else {
            0.0
        }
    };
    (norm(c, cols), norm(r, rows))
}

/// One image as a regression task on `[0,1]²` with intensities in `[0,1]`.
/// Keeps the image geometry so completions can be rendered back.
#[derive(Debug, Clone)]
pub struct PixelTask {
    pub task: FunctionTask,
    pub rows: usize,
    pub cols: usize,
}

/// Builds a pixel task with `n_context` distinct context pixels drawn
/// uniformly; targets are every pixel.
pub fn to_pixel_task(
    images: &IdxImages,
    index: usize,
    n_context: usize,
    rng: &mut Prng,
) -> Result<PixelTask> {
    let img = images.image(index)?;
    let n = images.rows * images.cols;
    if n_context < 1 || n_context > n {
        return Err(Error::domain(
            "to_pixel_task",
            format!("n_context {n_context} outside 1..={n}"),
        ));
    }
    let mut xs = Vec::with_capacity(n * 2);
    let mut ys = Vec::with_capacity(n);
    for (i, &p) in img.iter().enumerate() {
        let (cx, cy) = pixel_coord(i, images.rows, images.cols);
        xs.push(cx);
        xs.push(cy);
        ys.push(p as f64 / 255.0);
    }
    let context_idx = sample_indices(rng, n, n_context).into_vec();
    let task = FunctionTask::new(Tensor::new(vec![n, 2], xs)?, Tensor::new(vec![n, 1], ys)?, context_idx)?;
    Ok(PixelTask { task, rows: images.rows, cols: images.cols })
}

/// Quantizes predictions to bytes: round-half-up of 255·clamp(y, 0, 1).
pub fn quantize(preds: &Tensor) -> Vec<u8> {
    preds
        .data()
        .iter()
        .map(|&y| (255.0 * y.clamp(0.0, 1.0) + 0.5).floor() as u8)
        .collect()
}

/// Binary PGM (P5), maxval 255.
pub fn render_pgm(preds: &Tensor, rows: usize, cols: usize) -> Result<Vec<u8>> {
    if preds.len() != rows * cols {
        return Err(Error::shape(
            "render_pgm",
            format!("{} predictions for {rows}x{cols} image", preds.len()),
        ));
    }
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(quantize(preds));
    Ok(out)
}

pub fn render_pgm_file(preds: &Tensor, rows: usize, cols: usize, path: &Path) -> Result<()> {
    fs::write(path, render_pgm(preds, rows, cols)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    /// Hand-built IDX file: header then raw pixels.
    pub(crate) fn idx_bytes(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend(IDX_IMAGES_MAGIC.to_be_bytes());
        b.extend(count.to_be_bytes());
        b.extend(rows.to_be_bytes());
        b.extend(cols.to_be_bytes());
        b.extend_from_slice(pixels);
        b
    }

    #[test]
    fn parses_hand_built_fixture() {
        let bytes = idx_bytes(1, 2, 2, &[0, 255, 128, 64]);
        let imgs = parse_idx(&bytes).unwrap();
        assert_eq!((imgs.count, imgs.rows, imgs.cols), (1, 2, 2));
        assert_eq!(imgs.image(0).unwrap(), &[0, 255, 128, 64]);
    }

    #[test]
    fn rejects_vector_magic() {
        let mut bytes = idx_bytes(1, 2, 2, &[0, 255, 128, 64]);
        bytes[3] = 0x01; // 0x00000801 is the label-vector magic
        let err = parse_idx(&bytes).unwrap_err();
        assert!(err.to_string().contains("0x00000801"), "{err}");
    }

    #[test]
    fn rejects_truncated_payload() {
        let mut bytes = idx_bytes(1, 2, 2, &[0, 255, 128, 64]);
        bytes.pop();
        assert!(parse_idx(&bytes).is_err());
        // and a header that stops mid-dimension
        assert!(parse_idx(&bytes[..10]).is_err());
    }

    #[test]
    fn rejects_dimension_overflow() {
        let mut b = Vec::new();
        b.extend(IDX_IMAGES_MAGIC.to_be_bytes());
        b.extend(u32::MAX.to_be_bytes());
        b.extend(u32::MAX.to_be_bytes());
        b.extend(u32::MAX.to_be_bytes());
        let err = parse_idx(&b).unwrap_err();
        assert!(err.to_string().contains("overflow") || err.to_string().contains("payload"), "{err}");
    }

    #[test]
    fn full_context_covers_every_pixel() {
        let imgs = parse_idx(&idx_bytes(1, 2, 2, &[0, 255, 128, 64])).unwrap();
        let pt = to_pixel_task(&imgs, 0, 4, &mut rng::seeded(1)).unwrap();
        let mut ctx = pt.task.context_idx().to_vec();
        ctx.sort_unstable();
        assert_eq!(ctx, vec![0, 1, 2, 3]);
    }

    #[test]
    fn all_black_image_has_unit_square_coordinates() {
        let imgs = parse_idx(&idx_bytes(1, 2, 2, &[0, 0, 0, 0])).unwrap();
        let pt = to_pixel_task(&imgs, 0, 1, &mut rng::seeded(2)).unwrap();
        assert!(pt.task.ys().data().iter().all(|&y| y == 0.0));
        let xs = pt.task.xs();
        let rows: Vec<(f64, f64)> = (0..4).map(|i| (xs.at(i, 0), xs.at(i, 1))).collect();
        assert_eq!(rows, vec![(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]);
    }

    #[test]
    fn context_pixels_are_duplicate_free_across_seeds() {
        let imgs = parse_idx(&idx_bytes(1, 4, 4, &[7; 16])).unwrap();
        for seed in 0..1000 {
            let pt = to_pixel_task(&imgs, 0, 9, &mut rng::seeded(seed)).unwrap();
            let mut ctx = pt.task.context_idx().to_vec();
            ctx.sort_unstable();
            ctx.dedup();
            assert_eq!(ctx.len(), 9, "seed {seed}");
        }
    }

    #[test]
    fn n_context_bounds_are_enforced() {
        let imgs = parse_idx(&idx_bytes(1, 2, 2, &[0; 4])).unwrap();
        assert!(to_pixel_task(&imgs, 0, 0, &mut rng::seeded(3)).is_err());
        assert!(to_pixel_task(&imgs, 0, 5, &mut rng::seeded(3)).is_err());
    }

    #[test]
    fn half_grey_renders_as_128() {
        let preds = Tensor::filled(vec![4, 1], 0.5);
        let pgm = render_pgm(&preds, 2, 2).unwrap();
        assert_eq!(&pgm[..11], b"P5\n2 2\n255\n".as_slice());
        assert!(pgm[11..].iter().all(|&b| b == 128));
        assert_eq!(pgm.len(), 11 + 4);
    }

    #[test]
    fn out_of_range_predictions_clamp() {
        let preds = Tensor::matrix(&[vec![-0.3], vec![1.7]]).unwrap();
        assert_eq!(quantize(&preds), vec![0, 255]);
    }

    #[test]
    fn parse_then_identity_render_reproduces_pixels() {
        let pixels: Vec<u8> = (0..=255).collect();
        let imgs = parse_idx(&idx_bytes(1, 16, 16, &pixels)).unwrap();
        let pt = to_pixel_task(&imgs, 0, 256, &mut rng::seeded(4)).unwrap();
        let pgm = render_pgm(pt.task.ys(), 16, 16).unwrap();
        let body_start = pgm.len() - 256;
        assert_eq!(&pgm[body_start..], pixels.as_slice());
    }

    #[test]
    #[ignore = "needs the real MNIST test-image file; set NP_MNIST_IDX to its path"]
    fn real_mnist_test_file_header() {
        let path = std::env::var("NP_MNIST_IDX")
            .expect("set NP_MNIST_IDX to a local t10k-images-idx3-ubyte");
        let imgs = load_idx(Path::new(&path)).unwrap();
        assert_eq!((imgs.count, imgs.rows, imgs.cols), (10_000, 28, 28));
    }

    #[test]
    fn coordinates_biject_with_pixel_indices() {
        let (rows, cols) = (5, 7);
        let imgs = parse_idx(&idx_bytes(1, rows, cols, &vec![1; 35])).unwrap();
        let pt = to_pixel_task(&imgs, 0, 1, &mut rng::seeded(6)).unwrap();
        let xs = pt.task.xs();
        let mut seen = std::collections::BTreeSet::new();
        for i in 0..35 {
            let col = (xs.at(i, 0) * (cols - 1) as f64).round() as usize;
            let row = (xs.at(i, 1) * (rows - 1) as f64).round() as usize;
            assert_eq!(row * cols as usize + col, i);
            seen.insert((row, col));
        }
        assert_eq!(seen.len(), 35);
    }
}

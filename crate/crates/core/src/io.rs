//! PNG and plain-text kernel I/O.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use ndarray::Array2;

use crate::error::{DeblurError, Result};
use crate::image::{Image, Kernel, Plane};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BitDepth {
    #[default]
    Eight,
    Sixteen,
}

fn codec(path: &Path) -> impl FnOnce(image::ImageError) -> DeblurError + '_ {
    move |source| DeblurError::Codec {
        path: path.to_path_buf(),
        source,
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DeblurError + '_ {
    move |source| DeblurError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads an 8- or 16-bit PNG. Gray (and gray+alpha) become one channel,
/// everything else three; alpha is dropped. Intensities map linearly to
/// `[0, 1]`.
pub fn read_image(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(codec(path))?;
    let gray = matches!(
        img,
        DynamicImage::ImageLuma8(_)
            | DynamicImage::ImageLumaA8(_)
            | DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA16(_)
    );
    let (w, h) = (img.width() as usize, img.height() as usize);
    if gray {
        let buf = img.into_luma16();
        let plane = Array2::from_shape_fn((h, w), |(i, j)| {
            buf.get_pixel(j as u32, i as u32)[0] as f64 / 65535.0
        });
        Image::gray(plane)
    } else {
        let buf = img.into_rgb16();
        let planes = (0..3)
            .map(|c| {
                Array2::from_shape_fn((h, w), |(i, j)| {
                    buf.get_pixel(j as u32, i as u32)[c] as f64 / 65535.0
                })
            })
            .collect();
        Image::from_planes(planes)
    }
}

fn quantize8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn quantize16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// Writes an image as PNG, clamping to `[0, 1]` on the way out.
pub fn write_image(path: &Path, img: &Image, depth: BitDepth) -> Result<()> {
    let (h, w) = (img.height() as u32, img.width() as u32);
    let px = |c: usize, x: u32, y: u32| img.plane(c)[[y as usize, x as usize]];
    let dynimg = match (img.channels(), depth) {
        (1, BitDepth::Eight) => DynamicImage::ImageLuma8(ImageBuffer::from_fn(w, h, |x, y| {
            Luma([quantize8(px(0, x, y))])
        })),
        (1, BitDepth::Sixteen) => DynamicImage::ImageLuma16(ImageBuffer::from_fn(w, h, |x, y| {
            Luma([quantize16(px(0, x, y))])
        })),
        (_, BitDepth::Eight) => DynamicImage::ImageRgb8(ImageBuffer::from_fn(w, h, |x, y| {
            Rgb([
                quantize8(px(0, x, y)),
                quantize8(px(1, x, y)),
                quantize8(px(2, x, y)),
            ])
        })),
        (_, BitDepth::Sixteen) => DynamicImage::ImageRgb16(ImageBuffer::from_fn(w, h, |x, y| {
            Rgb([
                quantize16(px(0, x, y)),
                quantize16(px(1, x, y)),
                quantize16(px(2, x, y)),
            ])
        })),
    };
    dynimg.save(path).map_err(codec(path))
}

pub fn write_plane(path: &Path, plane: &Plane, depth: BitDepth) -> Result<()> {
    write_image(path, &Image::gray(plane.clone())?, depth)
}

/// Formats a kernel as rows of whitespace-separated decimals.
///
/// The `{:e}` formatting of `f64` is the shortest round-tripping
/// representation, so the text is an exact and deterministic record.
pub fn kernel_to_text(k: &Kernel) -> String {
    let mut out = String::new();
    for row in k.data().rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

pub fn parse_kernel_text(text: &str, origin: &Path) -> Result<Kernel> {
    let parse_err = |message: String| DeblurError::Parse {
        path: origin.to_path_buf(),
        message,
    };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|e| parse_err(format!("line {}: {e}", lineno + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let kh = rows.len();
    let kw = rows.first().map_or(0, Vec::len);
    if kh == 0 || kw == 0 {
        return Err(parse_err("kernel file is empty".into()));
    }
    if rows.iter().any(|r| r.len() != kw) {
        return Err(parse_err("ragged kernel rows".into()));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let data = Array2::from_shape_vec((kh, kw), flat).expect("shape checked above");
    Kernel::new(data)
}

pub fn read_kernel_text(path: &Path) -> Result<Kernel> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_kernel_text(&text, path)
}

pub fn write_kernel_text(path: &Path, k: &Kernel) -> Result<()> {
    fs::write(path, kernel_to_text(k)).map_err(io_err(path))
}

/// Writes the kernel as a grayscale PNG scaled so its peak is white.
pub fn write_kernel_png(path: &Path, k: &Kernel) -> Result<()> {
    let peak = k.data().fold(0.0f64, |a, &b| a.max(b));
    let scaled = if peak > 0.0 {
        k.data().mapv(|v| v.max(0.0) / peak)
    } else {
        k.data().clone()
    };
    write_plane(path, &scaled, BitDepth::Sixteen)
}

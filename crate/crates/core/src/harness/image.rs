use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, IoContext, Result};
use crate::math::Rgb;
use crate::policy::luminance;

/// Ceiling reported by [`psnr`] for identical images.
pub const PSNR_CAP: f64 = 99.0;

/// A linear HDR image stored row-major, top row first.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Rgb>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<Rgb>) -> Self {
        assert_eq!(pixels.len(), width * height, "pixel count does not match dimensions");
        Self { width, height, pixels }
    }

    pub fn filled(width: usize, height: usize, v: Rgb) -> Self {
        Self::new(width, height, vec![v; width * height])
    }

    pub fn mean_luminance(&self) -> f64 {
        self.pixels.iter().map(|&p| luminance(p)).sum::<f64>() / self.pixels.len().max(1) as f64
    }

    fn check_dims(&self, other: &Image) -> Result<()> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::InvalidImage(format!(
                "dimension mismatch: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

/// Little-endian PFM, bottom row first as the format requires.
pub fn write_pfm(path: &Path, img: &Image) -> Result<()> {
    let mut out = Vec::with_capacity(32 + img.pixels.len() * 12);
    write!(out, "PF\n{} {}\n-1.0\n", img.width, img.height).expect("writing to a Vec cannot fail");
    for y in (0..img.height).rev() {
        for p in &img.pixels[y * img.width..(y + 1) * img.width] {
            for c in p.to_array() {
                out.extend_from_slice(&(c as f32).to_le_bytes());
            }
        }
    }
    std::fs::write(path, out).at(path)
}

pub fn read_pfm(path: &Path) -> Result<Image> {
    let file = std::fs::File::open(path).at(path)?;
    let mut r = BufReader::new(file);
    let mut line = String::new();
    let mut header = Vec::new();
    while header.len() < 3 {
        line.clear();
        if r.read_line(&mut line).at(path)? == 0 {
            return Err(Error::InvalidImage(format!("{}: truncated header", path.display())));
        }
        header.extend(line.split_whitespace().map(str::to_owned));
    }
    let bad = |m: &str| Error::InvalidImage(format!("{}: {m}", path.display()));
    let channels = match header[0].as_str() {
        "PF" => 3,
        "Pf" => 1,
        _ => return Err(bad("not a PFM file")),
    };
    let width: usize = header[1].parse().map_err(|_| bad("bad width"))?;
    let height: usize = header[2].parse().map_err(|_| bad("bad height"))?;
    if header.len() < 4 {
        line.clear();
        r.read_line(&mut line).at(path)?;
        header.push(line.trim().to_owned());
    }
    let scale: f64 = header[3].parse().map_err(|_| bad("bad scale"))?;
    let mut data = Vec::new();
    r.read_to_end(&mut data).at(path)?;
    if data.len() != width * height * channels * 4 {
        return Err(bad("payload size does not match header"));
    }
    let floats: Vec<f64> = data
        .chunks_exact(4)
        .map(|c| {
            let b = [c[0], c[1], c[2], c[3]];
            (if scale < 0.0 { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) }) as f64
        })
        .collect();
    let mut pixels = vec![Rgb::ZERO; width * height];
    for (row, y) in (0..height).rev().enumerate() {
        for x in 0..width {
            let i = (row * width + x) * channels;
            pixels[y * width + x] = if channels == 3 {
                Rgb::new(floats[i], floats[i + 1], floats[i + 2])
            } else {
                Rgb::splat(floats[i])
            };
        }
    }
    Ok(Image::new(width, height, pixels))
}

/// Reinhard `x / (1 + x)` followed by the sRGB transfer curve.
pub fn tonemap(c: f64) -> f64 {
    let x = c.max(0.0);
    let x = x / (1.0 + x);
    if x <= 0.003_130_8 {
        12.92 * x
    } else {
        1.055 * x.powf(1.0 / 2.4) - 0.055
    }
}

pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    let bytes: Vec<u8> = img
        .pixels
        .iter()
        .flat_map(|p| p.to_array())
        .map(|c| (tonemap(c) * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    image::save_buffer(path, &bytes, img.width as u32, img.height as u32, image::ColorType::Rgb8)?;
    Ok(())
}

pub fn psnr(img: &Image, reference: &Image) -> Result<f64> {
    img.check_dims(reference)?;
    let peak = reference.pixels.iter().map(|p| p.max_component()).fold(1.0, f64::max);
    let mse = img
        .pixels
        .iter()
        .zip(&reference.pixels)
        .map(|(a, b)| (*a - *b).length_squared())
        .sum::<f64>()
        / (3 * img.pixels.len()) as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

/// Relative MSE with a per-channel `1e-2` stabilizer.
pub fn rmse(img: &Image, reference: &Image) -> Result<f64> {
    img.check_dims(reference)?;
    let mut sum = 0.0;
    for (a, b) in img.pixels.iter().zip(&reference.pixels) {
        for c in 0..3 {
            sum += (a[c] - b[c]).powi(2) / (b[c] * b[c] + 1e-2);
        }
    }
    Ok(sum / (3 * img.pixels.len()) as f64)
}

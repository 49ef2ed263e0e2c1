//! On-disk formats: PNG frames, raw arrays and raw waveforms.
//!
//! Raw arrays are a one-line text header `AVARR shape=AxBxC\n` followed by
//! little-endian `f32` values. Waveforms use `AVWAV sample_rate=R length=N\n`.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use avatarkit_tensor::{Array, Scalar};

use crate::error::{invalid, io_err, Error, Result};

/// Frame file name for index `t`.
pub fn frame_name(t: usize) -> String {
    format!("frame_{t:06}.png")
}

/// Writes one `[3, H, W]` or `[1, 3, H, W]` image in `[0, 1]` as 8-bit RGB.
pub fn write_png<T: Scalar>(path: &Path, image: &Array<T>) -> Result<()> {
    let (h, w) = image_hw(image)?;
    let data = image.data();
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = std::array::from_fn(|c| to_u8(data[c * h * w + y * w + x].f64()));
            buf.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })
}

/// Reads an 8-bit PNG as `[1, 3, H, W]` in `[0, 1]`.
pub fn read_png<T: Scalar>(path: &Path) -> Result<Array<T>> {
    let img = image::open(path)
        .map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = vec![T::zero(); 3 * h * w];
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            out[c * h * w + y as usize * w + x as usize] = T::of(p.0[c] as f64 / 255.0);
        }
    }
    Ok(Array::new(&[1, 3, h, w], out))
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn image_hw<T: Scalar>(image: &Array<T>) -> Result<(usize, usize)> {
    match image.shape() {
        [3, h, w] | [1, 3, h, w] => Ok((*h, *w)),
        s => Err(invalid(format!("expected a [3,H,W] image, got shape {s:?}"))),
    }
}

/// Writes `[T, 3, H, W]` frames as numbered PNGs into `dir`.
pub fn write_frames<T: Scalar>(dir: &Path, frames: &Array<T>) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    (0..frames.shape()[0])
        .map(|t| {
            let path = dir.join(frame_name(t));
            write_png(&path, &frames.index_axis0(t))?;
            Ok(path)
        })
        .collect()
}

/// Reads consecutive `frame_%06d.png` files from `dir` as `[T, 3, H, W]`.
pub fn read_frames<T: Scalar>(dir: &Path) -> Result<Array<T>> {
    let mut frames = Vec::new();
    loop {
        let path = dir.join(frame_name(frames.len()));
        if !path.exists() {
            break;
        }
        frames.push(read_png::<T>(&path)?.index_axis0(0));
    }
    if frames.is_empty() {
        return Err(Error::Lookup(format!("no frame_000000.png in {}", dir.display())));
    }
    let shape = frames[0].shape().to_vec();
    if frames.iter().any(|f| f.shape() != shape.as_slice()) {
        return Err(invalid(format!("frames in {} differ in size", dir.display())));
    }
    Ok(Array::stack(&frames))
}

fn write_f32<T: Scalar>(path: &Path, header: &str, data: &[T]) -> Result<()> {
    let mut bytes = Vec::with_capacity(header.len() + 4 * data.len());
    bytes.extend_from_slice(header.as_bytes());
    for &v in data {
        bytes.extend_from_slice(&(v.f64() as f32).to_le_bytes());
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut f = std::fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&bytes).map_err(io_err(path))
}

fn read_f32<T: Scalar>(path: &Path, magic: &str) -> Result<(String, Vec<T>)> {
    let f = std::fs::File::open(path).map_err(io_err(path))?;
    let mut reader = BufReader::new(f);
    let mut header = String::new();
    reader.read_line(&mut header).map_err(io_err(path))?;
    let header = header.trim_end().to_string();
    if !header.starts_with(magic) {
        return Err(invalid(format!("{}: missing `{magic}` header", path.display())));
    }
    let mut body = Vec::new();
    reader.read_to_end(&mut body).map_err(io_err(path))?;
    if body.len() % 4 != 0 {
        return Err(invalid(format!("{}: body is not a whole number of f32 values", path.display())));
    }
    let data = body.chunks_exact(4).map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)).collect();
    Ok((header, data))
}

fn header_field<'a>(header: &'a str, key: &str) -> Option<&'a str> {
    header.split_whitespace().find_map(|kv| kv.strip_prefix(key)?.strip_prefix('='))
}

pub fn write_array<T: Scalar>(path: &Path, array: &Array<T>) -> Result<()> {
    let dims: Vec<String> = array.shape().iter().map(|d| d.to_string()).collect();
    write_f32(path, &format!("AVARR shape={}\n", dims.join("x")), array.data())
}

pub fn read_array<T: Scalar>(path: &Path) -> Result<Array<T>> {
    let (header, data) = read_f32::<T>(path, "AVARR")?;
    let shape: Vec<usize> = header_field(&header, "shape")
        .ok_or_else(|| invalid(format!("{}: header lacks shape", path.display())))?
        .split('x')
        .map(|d| d.parse().map_err(|_| invalid(format!("{}: bad shape `{header}`", path.display()))))
        .collect::<Result<_>>()?;
    if shape.iter().product::<usize>() != data.len() {
        return Err(invalid(format!("{}: shape {shape:?} does not match {} values", path.display(), data.len())));
    }
    Ok(Array::new(&shape, data))
}

pub fn write_waveform<T: Scalar>(path: &Path, samples: &[T], sample_rate: u32) -> Result<()> {
    write_f32(path, &format!("AVWAV sample_rate={sample_rate} length={}\n", samples.len()), samples)
}

/// Returns `(samples, sample_rate)`.
pub fn read_waveform<T: Scalar>(path: &Path) -> Result<(Vec<T>, u32)> {
    let (header, data) = read_f32::<T>(path, "AVWAV")?;
    let rate = header_field(&header, "sample_rate").and_then(|v| v.parse().ok());
    let len: Option<usize> = header_field(&header, "length").and_then(|v| v.parse().ok());
    match (rate, len) {
        (Some(rate), Some(len)) if len == data.len() => Ok((data, rate)),
        _ => Err(invalid(format!("{}: malformed waveform header `{header}`", path.display()))),
    }
}

//! File formats: PNG images in, heatmap PNGs and raw `SMAP` sidecars out.
//!
//! The `SMAP` sidecar is a 16-byte header (`b"SMAP"`, `u32` height, `u32`
//! width, `u32` reserved = 0) followed by `height * width` little-endian
//! `f32` scores in row-major order.

use std::fs;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Rgb};

use crate::error::{validation, Error, Result};
use crate::types::{normalize_saliency, Image, SaliencyMap};

pub const SMAP_MAGIC: &[u8; 4] = b"SMAP";
pub const SMAP_HEADER_LEN: usize = 16;

/// Loads an 8-bit PNG as an image in `[0, 1]`. Greyscale stays single
/// channel; everything else is converted to RGB.
pub fn load_png(path: &Path) -> Result<Image> {
    let decoded = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    from_dynamic(decoded)
}

pub fn from_dynamic(decoded: DynamicImage) -> Result<Image> {
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let (channels, bytes) = match decoded {
        DynamicImage::ImageLuma8(buf) => (1, buf.into_raw()),
        DynamicImage::ImageLumaA8(_) => (1, decoded.into_luma8().into_raw()),
        other => (3, other.into_rgb8().into_raw()),
    };
    let data = bytes.into_iter().map(|b| f32::from(b) / 255.0).collect();
    Image::new(h, w, channels, data)
}

/// Writes an image back to 8-bit PNG (rounding to nearest).
pub fn save_png(image: &Image, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = image.data().iter().map(|v| (v * 255.0).round() as u8).collect();
    let (w, h) = (image.width() as u32, image.height() as u32);
    let dynamic = match image.channels() {
        1 => DynamicImage::ImageLuma8(ImageBuffer::from_raw(w, h, bytes).expect("buffer size matches dims")),
        3 => DynamicImage::ImageRgb8(ImageBuffer::from_raw(w, h, bytes).expect("buffer size matches dims")),
        c => return Err(validation(format!("cannot encode a {c}-channel image as PNG"))),
    };
    write_dynamic(&dynamic, path)
}

fn write_dynamic(img: &DynamicImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Decode {
                path: path.to_path_buf(),
                message: other.to_string(),
            },
        })
}

pub fn encode_smap(map: &SaliencyMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(SMAP_HEADER_LEN + 4 * map.scores().len());
    out.extend_from_slice(SMAP_MAGIC);
    out.extend_from_slice(&(map.height() as u32).to_le_bytes());
    out.extend_from_slice(&(map.width() as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for &s in map.scores() {
        out.extend_from_slice(&(s as f32).to_le_bytes());
    }
    out
}

/// Decodes a sidecar into `(height, width, scores)`.
pub fn decode_smap(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    if bytes.len() < SMAP_HEADER_LEN || &bytes[..4] != SMAP_MAGIC {
        return Err(validation("not an SMAP sidecar"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (h, w) = (word(4), word(8));
    let body = &bytes[SMAP_HEADER_LEN..];
    if body.len() != 4 * h * w {
        return Err(validation(format!(
            "SMAP body has {} bytes, expected {} for {h}x{w}",
            body.len(),
            4 * h * w
        )));
    }
    let scores = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((h, w, scores))
}

pub fn write_smap(map: &SaliencyMap, path: &Path) -> Result<()> {
    fs::write(path, encode_smap(map)).map_err(|e| Error::io(path, e))
}

pub fn read_smap(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_smap(&bytes)
}

/// Colormap stops for heatmaps: normalized score 0 → dark blue, 0.25 → blue,
/// 0.5 → cyan-green, 0.75 → yellow, 1 → red.
pub const HEATMAP_STOPS: [(f64, [u8; 3]); 5] = [
    (0.0, [0, 0, 128]),
    (0.25, [0, 64, 255]),
    (0.5, [0, 224, 160]),
    (0.75, [255, 224, 0]),
    (1.0, [224, 0, 0]),
];

/// Maps a value in `[0, 1]` through [`HEATMAP_STOPS`] by linear interpolation.
pub fn heat_color(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    for pair in HEATMAP_STOPS.windows(2) {
        let (t0, c0) = pair[0];
        let (t1, c1) = pair[1];
        if t <= t1 {
            let u = (t - t0) / (t1 - t0);
            let mut out = [0u8; 3];
            for k in 0..3 {
                out[k] = (f64::from(c0[k]) + u * (f64::from(c1[k]) - f64::from(c0[k]))).round() as u8;
            }
            return out;
        }
    }
    HEATMAP_STOPS[4].1
}

/// Min-max normalizes the map and renders it through the heatmap colormap.
pub fn render_heatmap(map: &SaliencyMap) -> Result<ImageBuffer<Rgb<u8>, Vec<u8>>> {
    let norm = normalize_saliency(map)?;
    let (w, h) = (map.width() as u32, map.height() as u32);
    Ok(ImageBuffer::from_fn(w, h, |x, y| {
        Rgb(heat_color(norm.get(y as usize, x as usize)))
    }))
}

/// Signed rendering: positive scores in green, negative in red, intensity
/// proportional to magnitude relative to the largest absolute score.
pub fn render_signed(map: &SaliencyMap) -> ImageBuffer<Rgb<u8>, Vec<u8>> {
    let peak = map.scores().iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let (w, h) = (map.width() as u32, map.height() as u32);
    ImageBuffer::from_fn(w, h, |x, y| {
        let s = map.get(y as usize, x as usize);
        let level = if peak > 0.0 {
            (s.abs() / peak * 255.0).round() as u8
        } else {
            0
        };
        if s > 0.0 {
            Rgb([0, level, 0])
        } else {
            Rgb([level, 0, 0])
        }
    })
}

pub fn save_heatmap(map: &SaliencyMap, signed: bool, path: &Path) -> Result<()> {
    let rgb = if signed {
        render_signed(map)
    } else {
        render_heatmap(map)?
    };
    write_dynamic(&DynamicImage::ImageRgb8(rgb), path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn smap_header_layout() {
        let map = SaliencyMap::from_scores(2, 3, vec![0.0, 1.0, -2.5, 3.25, 0.5, 7.0]).unwrap();
        let bytes = encode_smap(&map);
        assert_eq!(&bytes[..4], b"SMAP");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &[0, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &0.0f32.to_le_bytes());
        assert_eq!(&bytes[24..28], &(-2.5f32).to_le_bytes());
        assert_eq!(bytes.len(), 16 + 6 * 4);
    }

    #[test]
    fn smap_rejects_garbage() {
        assert!(decode_smap(b"PNG!").is_err());
        let mut bytes = encode_smap(&SaliencyMap::from_scores(1, 2, vec![1.0, 2.0]).unwrap());
        bytes.pop();
        assert!(decode_smap(&bytes).is_err());
    }

    #[test]
    fn colormap_endpoints() {
        assert_eq!(heat_color(0.0), [0, 0, 128]);
        assert_eq!(heat_color(1.0), [224, 0, 0]);
        assert_eq!(heat_color(0.5), [0, 224, 160]);
        assert_eq!(heat_color(-3.0), heat_color(0.0));
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let img = Image::new(2, 2, 3, (0..12).map(|i| i as f32 * 20.0 / 255.0).collect()).unwrap();
        save_png(&img, &path).unwrap();
        let back = load_png(&path).unwrap();
        assert_eq!(back.dims(), (2, 2, 3));
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        let grey = Image::new(1, 3, 1, vec![0.0, 0.5, 1.0]).unwrap();
        save_png(&grey, &path).unwrap();
        assert_eq!(load_png(&path).unwrap().channels(), 1);
    }

    #[test]
    fn signed_render_colors() {
        let map = SaliencyMap::from_scores(1, 3, vec![2.0, -1.0, 0.0]).unwrap();
        let img = render_signed(&map);
        assert_eq!(img.get_pixel(0, 0).0, [0, 255, 0]);
        assert_eq!(img.get_pixel(1, 0).0, [128, 0, 0]);
        assert_eq!(img.get_pixel(2, 0).0, [0, 0, 0]);
    }

    proptest! {
        #[test]
        fn smap_round_trips_f32(scores in proptest::collection::vec(-1e6f32..1e6, 1..64)) {
            let n = scores.len();
            let map = SaliencyMap::from_scores(1, n, scores.iter().map(|&v| f64::from(v)).collect()).unwrap();
            let (h, w, back) = decode_smap(&encode_smap(&map)).unwrap();
            prop_assert_eq!((h, w), (1, n));
            prop_assert_eq!(back, scores);
        }
    }
}

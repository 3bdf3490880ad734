//! 8-bit grayscale image output (PNG and PGM) plus PNG decoding.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: png encode: {message}")]
    Encode { path: PathBuf, message: String },
    #[error("{path}: png decode: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("{path}: expected 8-bit grayscale without alpha, found {found}")]
    Format { path: PathBuf, found: String },
}

/// Writes an 8-bit grayscale PNG. `pixels` is row-major with `width` columns.
/// Encoder settings are pinned so identical pixels produce identical bytes.
pub fn write_gray_png(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<(), ImageError> {
    assert_eq!(width * height, pixels.len());
    encode_png(path, width, height, png::ColorType::Grayscale, pixels)
}

pub fn write_rgb_png(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<(), ImageError> {
    assert_eq!(width * height * 3, rgb.len());
    encode_png(path, width, height, png::ColorType::Rgb, rgb)
}

fn encode_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    bytes: &[u8],
) -> Result<(), ImageError> {
    let file = File::create(path).map_err(|source| ImageError::Io { path: path.into(), source })?;
    let enc_err = |e: png::EncodingError| ImageError::Encode { path: path.into(), message: e.to_string() };
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    encoder.set_compression(png::Compression::Balanced);
    encoder.set_filter(png::Filter::NoFilter);
    let mut writer = encoder.write_header().map_err(enc_err)?;
    writer.write_image_data(bytes).map_err(enc_err)?;
    writer.finish().map_err(enc_err)
}

/// Reads an 8-bit grayscale PNG, returning `(width, height, pixels)`.
pub fn read_gray_png(path: &Path) -> Result<(usize, usize, Vec<u8>), ImageError> {
    let file = File::open(path).map_err(|source| ImageError::Io { path: path.into(), source })?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let dec_err = |e: png::DecodingError| ImageError::Decode { path: path.into(), message: e.to_string() };
    let mut reader = decoder.read_info().map_err(dec_err)?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(dec_err)?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(ImageError::Format {
            path: path.into(),
            found: format!("{:?}/{:?}", info.color_type, info.bit_depth),
        });
    }
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, buf))
}

/// Binary PGM (`P5`), maxval 255.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<(), ImageError> {
    assert_eq!(width * height, pixels.len());
    let io = |source| ImageError::Io { path: path.into(), source };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    write!(w, "P5\n{width} {height}\n255\n").map_err(io)?;
    w.write_all(pixels).map_err(io)?;
    w.flush().map_err(io)
}

/// Fixed five-stop colormap (dark blue, blue, green, yellow, white), linear
/// interpolation between stops at codes 0, 64, 128, 192, 255.
pub fn heat_color(code: u8) -> [u8; 3] {
    const STOPS: [(f64, [f64; 3]); 5] = [
        (0.0, [10.0, 10.0, 60.0]),
        (64.0, [30.0, 80.0, 200.0]),
        (128.0, [40.0, 180.0, 90.0]),
        (192.0, [240.0, 220.0, 40.0]),
        (255.0, [255.0, 255.0, 255.0]),
    ];
    let v = code as f64;
    for w in STOPS.windows(2) {
        let (a, ca) = w[0];
        let (b, cb) = w[1];
        if v <= b {
            let f = (v - a) / (b - a);
            let mut out = [0u8; 3];
            for c in 0..3 {
                out[c] = (ca[c] + f * (cb[c] - ca[c])).round() as u8;
            }
            return out;
        }
    }
    [255, 255, 255]
}

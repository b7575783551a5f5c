use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::raw_io::{CfaLayout, Label, RawImage, RawIoError, RgbImage, Stage};
use crate::scalar::Scalar;

const MAXVAL: u32 = 65535;

/// Metadata stored next to every raw frame as `<stem>.toml`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub cfa: CfaLayout,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<u32>,
    /// Mask file name, relative to the sidecar's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

pub fn sidecar_path(raw_path: &Path) -> PathBuf {
    raw_path.with_extension("toml")
}

fn mask_name(raw_path: &Path) -> String {
    let stem = raw_path.file_stem().and_then(|s| s.to_str()).unwrap_or("raw");
    format!("{stem}_mask.png")
}

/// Write `bytes` to a temporary sibling and rename it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), RawIoError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| RawIoError::io(dir, e))?;
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| RawIoError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| RawIoError::io(path, e))
}

/// Round-half-up quantisation of a `[0, 1]` value to 16 bits; out-of-range values are clipped.
pub fn quantize16<T: Scalar>(v: T) -> u16 {
    let v = v.to_f64_lossy();
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * MAXVAL as f64 + 0.5).floor() as u16
}

pub fn dequantize16<T: Scalar>(q: u16) -> T {
    T::lit(q as f64) / T::lit(MAXVAL as f64)
}

/// Encode a 16-bit binary PGM (`P5`, maxval 65535, big-endian samples).
pub fn encode_pgm16(width: usize, height: usize, samples: &[u16]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n{MAXVAL}\n").into_bytes();
    out.reserve(samples.len() * 2);
    for s in samples {
        out.extend_from_slice(&s.to_be_bytes());
    }
    out
}

/// Decode a 16-bit binary PGM into `(width, height, samples)`.
pub fn decode_pgm16(bytes: &[u8]) -> Result<(usize, usize, Vec<u16>), RawIoError> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(RawIoError::Truncated);
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| RawIoError::NotPgm)?);
    }
    if fields[0] != "P5" {
        return Err(RawIoError::NotPgm);
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| RawIoError::NotPgm);
    let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != MAXVAL as usize {
        return Err(RawIoError::BadMaxval(maxval));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = width * height * 2;
    if bytes.len() < pos + need {
        return Err(RawIoError::Truncated);
    }
    let samples = bytes[pos..pos + need]
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect();
    Ok((width, height, samples))
}

/// Read a raw frame and its sidecar (`<stem>.toml`, plus an optional mask PNG).
pub fn load_raw<T: Scalar>(path: &Path) -> Result<RawImage<T>, RawIoError> {
    let bytes = fs::read(path).map_err(|e| RawIoError::io(path, e))?;
    let (width, height, samples) = decode_pgm16(&bytes)?;
    if width % 2 != 0 || height % 2 != 0 {
        return Err(RawIoError::OddDimensions { height, width });
    }
    let side_path = sidecar_path(path);
    let side_text = fs::read_to_string(&side_path)
        .map_err(|_| RawIoError::MissingSidecar(side_path.clone()))?;
    let side: Sidecar =
        toml::from_str(&side_text).map_err(|e| RawIoError::BadSidecar(e.to_string()))?;
    let data = samples.into_iter().map(dequantize16).collect();
    let label = match (side.class, &side.mask) {
        (Some(_), Some(_)) => {
            return Err(RawIoError::BadSidecar("both class and mask given".into()));
        }
        (Some(c), None) => Some(Label::Class(c)),
        (None, Some(m)) => {
            let mask_path = side_path.parent().unwrap_or(Path::new(".")).join(m);
            let (mw, mh, mask) = read_mask(&mask_path)?;
            if (mw, mh) != (width, height) {
                return Err(RawIoError::MaskShape);
            }
            Some(Label::Mask(mask))
        }
        (None, None) => None,
    };
    Ok(RawImage::new(height, width, data, side.cfa)?.with_label(label))
}

/// Write a raw frame as PGM plus sidecar (and mask PNG when labelled with a mask).
pub fn write_raw<T: Scalar>(image: &RawImage<T>, path: &Path) -> Result<(), RawIoError> {
    write_raw_with_provenance(image, path, None)
}

pub fn write_raw_with_provenance<T: Scalar>(
    image: &RawImage<T>,
    path: &Path,
    provenance: Option<&str>,
) -> Result<(), RawIoError> {
    let samples: Vec<u16> = image.data().iter().map(|&v| quantize16(v)).collect();
    atomic_write(path, &encode_pgm16(image.width(), image.height(), &samples))?;
    let mut side = Sidecar {
        cfa: image.cfa,
        provenance: provenance.map(str::to_owned),
        ..Sidecar::default()
    };
    match &image.label {
        Some(Label::Class(c)) => side.class = Some(*c),
        Some(Label::Mask(m)) => {
            let name = mask_name(path);
            write_mask(m, image.width(), image.height(), &path.with_file_name(&name))?;
            side.mask = Some(name);
        }
        None => {}
    }
    let text = toml::to_string(&side).map_err(|e| RawIoError::BadSidecar(e.to_string()))?;
    atomic_write(&sidecar_path(path), text.as_bytes())
}

fn png_error(e: png::EncodingError) -> RawIoError {
    RawIoError::Png(e.to_string())
}

fn encode_png(width: usize, height: usize, color: png::ColorType, depth: png::BitDepth, raster: &[u8]) -> Result<Vec<u8>, RawIoError> {
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(BufWriter::new(&mut buf), width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut writer = enc.write_header().map_err(png_error)?;
        writer.write_image_data(raster).map_err(png_error)?;
        writer.finish().map_err(png_error)?;
    }
    Ok(buf)
}

/// Encode an RGB image as a 16-bit, three-channel PNG. Values are clipped to
/// `[0, 1]` and quantised with round-half-up.
pub fn encode_rgb_png<T: Scalar>(image: &RgbImage<T>) -> Result<Vec<u8>, RawIoError> {
    let (h, w) = (image.height(), image.width());
    let mut raster = Vec::with_capacity(h * w * 6);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                raster.extend_from_slice(&quantize16(image.get(c, y, x)).to_be_bytes());
            }
        }
    }
    encode_png(w, h, png::ColorType::Rgb, png::BitDepth::Sixteen, &raster)
}

pub fn write_rgb<T: Scalar>(image: &RgbImage<T>, path: &Path) -> Result<(), RawIoError> {
    atomic_write(path, &encode_rgb_png(image)?)
}

fn decode_png(path: &Path) -> Result<(png::OutputInfo, Vec<u8>), RawIoError> {
    let file = fs::File::open(path).map_err(|e| RawIoError::io(path, e))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| RawIoError::Png(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| RawIoError::Png("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| RawIoError::Png(e.to_string()))?;
    buf.truncate(info.buffer_size());
    Ok((info, buf))
}

/// Read a 16-bit RGB PNG back into `[0, 1]` values.
pub fn read_rgb<T: Scalar>(path: &Path) -> Result<RgbImage<T>, RawIoError> {
    let (info, buf) = decode_png(path)?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Sixteen {
        return Err(RawIoError::Png(format!(
            "expected 16-bit RGB, found {:?} {:?}",
            info.color_type, info.bit_depth
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut data = vec![T::zero(); 3 * h * w];
    for (i, px) in buf.chunks_exact(6).enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = dequantize16(u16::from_be_bytes([px[2 * c], px[2 * c + 1]]));
        }
    }
    RgbImage::new(h, w, data, Stage::Other)
}

/// Write a binary mask as an 8-bit greyscale PNG with values 0 / 255.
pub fn write_mask(mask: &[u8], width: usize, height: usize, path: &Path) -> Result<(), RawIoError> {
    if mask.len() != width * height {
        return Err(RawIoError::MaskShape);
    }
    let raster: Vec<u8> = mask.iter().map(|&m| if m > 0 { 255 } else { 0 }).collect();
    let bytes = encode_png(width, height, png::ColorType::Grayscale, png::BitDepth::Eight, &raster)?;
    atomic_write(path, &bytes)
}

/// Read an 8-bit mask PNG; any non-zero value is foreground.
pub fn read_mask(path: &Path) -> Result<(usize, usize, Vec<u8>), RawIoError> {
    let (info, buf) = decode_png(path)?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(RawIoError::Png("mask must be 8-bit greyscale".into()));
    }
    let mask = buf.iter().map(|&v| u8::from(v > 0)).collect();
    Ok((info.width as usize, info.height as usize, mask))
}

/// Convenience for callers writing text artefacts next to images.
pub fn write_text(path: &Path, text: &str) -> Result<(), RawIoError> {
    atomic_write(path, text.as_bytes())
}

pub fn append_line(path: &Path, line: &str) -> Result<(), RawIoError> {
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| RawIoError::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| RawIoError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantisation_rounds_half_up_and_clips() {
        assert_eq!(quantize16(1.0f64), 65535);
        assert_eq!(quantize16(0.5f64), 32768);
        assert_eq!(quantize16(-0.2f64), 0);
        assert_eq!(quantize16(3.0f32), 65535);
        assert_eq!(dequantize16::<f64>(32768), 32768.0 / 65535.0);
    }

    #[test]
    fn pgm_header_errors_have_distinct_codes() {
        let mut bad = encode_pgm16(2, 2, &[1, 2, 3, 4]);
        bad[1] = b'2';
        let e1 = decode_pgm16(&bad).unwrap_err();
        let e2 = decode_pgm16(b"P5\n2 2\n255\n\0\0\0\0").unwrap_err();
        let e3 = decode_pgm16(b"P5\n2 2\n65535\n\0").unwrap_err();
        assert_eq!(e2, RawIoError::BadMaxval(255));
        let codes = [e1.code(), e2.code(), e3.code()];
        assert!(codes[0] != codes[1] && codes[1] != codes[2] && codes[0] != codes[2]);
    }

    #[test]
    fn pgm_comments_are_skipped() {
        let bytes = b"P5\n# made by hand\n2 2\n65535\n\xff\xff\x00\x01\x80\x00\x00\x00";
        let (w, h, s) = decode_pgm16(bytes).unwrap();
        assert_eq!((w, h), (2, 2));
        assert_eq!(s, vec![65535, 1, 32768, 0]);
    }
}

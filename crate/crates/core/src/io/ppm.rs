//! Binary PPM (`P6`, maxval 255) images as `[1, 3, H, W]` tensors in `[0, 1]`.

use std::fs;
use std::path::Path;

use crate::error::{bail, Result};
use crate::tensor::Tensor;

/// Maps a `[0, 1]` value to a byte with round-half-up; values outside the
/// range saturate.
pub fn quantize(v: f32) -> u8 {
    let scaled = (v as f64 * 255.0 + 0.5).floor();
    scaled.clamp(0.0, 255.0) as u8
}

pub fn encode_ppm(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let (n, c, h, w) = image.dims4()?;
    if n != 1 || c != 3 {
        bail!(Dimension, "PPM needs a [1, 3, H, W] tensor, got {:?}", image.shape());
    }
    image.check_finite("image")?;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    let d = image.data();
    out.reserve(3 * plane);
    for i in 0..plane {
        for ch in 0..3 {
            out.push(quantize(d[ch * plane + i]));
        }
    }
    Ok(out)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut pos = 0;
    let magic = header_token(bytes, &mut pos)?;
    if magic != b"P6" {
        bail!(Format, "not a binary PPM (magic {:?})", String::from_utf8_lossy(magic));
    }
    let w = header_number(bytes, &mut pos)?;
    let h = header_number(bytes, &mut pos)?;
    let maxval = header_number(bytes, &mut pos)?;
    if maxval != 255 {
        bail!(Format, "unsupported maxval {maxval}");
    }
    if w == 0 || h == 0 {
        bail!(Format, "empty image {w}x{h}");
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => bail!(Format, "missing separator after PPM header"),
    }
    let plane = w.checked_mul(h).ok_or_else(|| crate::Error::Format("image too large".into()))?;
    let raster = &bytes[pos..];
    if raster.len() < 3 * plane {
        bail!(Format, "truncated PPM raster: {} of {} bytes", raster.len(), 3 * plane);
    }
    let mut data = vec![0.0f32; 3 * plane];
    for (i, px) in raster[..3 * plane].chunks_exact(3).enumerate() {
        for ch in 0..3 {
            data[ch * plane + i] = px[ch] as f32 / 255.0;
        }
    }
    Tensor::new(&[1, 3, h, w], data)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    decode_ppm(&fs::read(path)?)
}

pub fn write_image(image: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_ppm(image)?)?;
    Ok(())
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        match bytes.get(*pos) {
            None => bail!(Format, "truncated PPM header"),
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#') {
        *pos += 1;
    }
    Ok(&bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    let tok = header_token(bytes, pos)?;
    let s = std::str::from_utf8(tok).unwrap_or("");
    match s.parse::<usize>() {
        Ok(v) if !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()) => Ok(v),
        _ => bail!(Format, "bad PPM header field {s:?}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_built_file_decodes() {
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 255, 0, 0, 0, 255, 255, 255, 255]);
        let t = decode_ppm(&bytes).unwrap();
        assert_eq!(t.shape(), &[1, 3, 2, 2]);
        assert_eq!(t.data(), &[1., 0., 0., 1., 0., 1., 0., 1., 0., 0., 1., 1.]);
        assert_eq!(encode_ppm(&t).unwrap(), bytes);
    }

    #[test]
    fn zeros_encode_to_zero_bytes() {
        let bytes = encode_ppm(&Tensor::zeros(&[1, 3, 2, 3])).unwrap();
        assert_eq!(&bytes[..11], b"P6\n3 2\n255\n");
        assert!(bytes[11..].iter().all(|&b| b == 0));
        assert_eq!(bytes.len(), 11 + 18);
    }

    #[test]
    fn comments_in_header_are_skipped() {
        let mut bytes = b"P6 # made by hand\n1 1\n# another\n255\n".to_vec();
        bytes.extend_from_slice(&[10, 20, 30]);
        assert_eq!(decode_ppm(&bytes).unwrap().data()[2], 30.0 / 255.0);
    }

    #[test]
    fn malformed_inputs_are_format_errors() {
        for bad in [
            &b"P3\n1 1\n255\n\x00\x00\x00"[..],
            b"P6\n1 1\n65535\n\x00\x00\x00",
            b"P6\n2 2\n255\n\x00\x00\x00",
            b"P6\n1",
            b"P6\nx 1\n255\n\x00\x00\x00",
        ] {
            assert!(matches!(decode_ppm(bad), Err(crate::Error::Format(_))), "{bad:?}");
        }
    }

    #[test]
    fn quantize_rounds_half_up() {
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(0.25), 64);
        assert_eq!(quantize(-1.0), 0);
        assert_eq!(quantize(2.0), 255);
    }
}

//! Binary netpbm: P6 colour images and P5 grey masks, maxval 255 only.
//!
//! Images map to `[1, 3, H, W]` tensors in `[0, 1]` (byte / 255). Masks are
//! thresholded: a byte above 127 is foreground.

use crate::error::{Error, Result};
use crate::eval::BinaryMask;
use crate::tensor::Tensor;

struct Header {
    width: usize,
    height: usize,
    /// Offset of the first raster byte.
    start: usize,
}

fn is_space(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r' | b'\x0b' | b'\x0c')
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if is_space(b) {
                self.pos += 1;
            } else if b == b'#' {
                while self
                    .bytes
                    .get(self.pos)
                    .is_some_and(|&c| c != b'\n' && c != b'\r')
                {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(format!("netpbm header: missing {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(format!("netpbm header: {what} out of range")))
    }
}

fn parse_header(bytes: &[u8], magic: &[u8; 2], channels: usize) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::format(format!(
            "expected netpbm magic {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let mut c = Cursor { bytes, pos: 2 };
    if !c.bytes.get(2).is_some_and(|&b| is_space(b) || b == b'#') {
        return Err(Error::format("netpbm header: no separator after magic"));
    }
    let width = c.number("width")?;
    let height = c.number("height")?;
    let maxval = c.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::format(format!(
            "netpbm image has empty size {width}x{height}"
        )));
    }
    if maxval != 255 {
        return Err(Error::format(format!(
            "netpbm maxval {maxval} unsupported (only 255)"
        )));
    }
    if !c.bytes.get(c.pos).is_some_and(|&b| is_space(b)) {
        return Err(Error::format("netpbm header: no whitespace before raster"));
    }
    let start = c.pos + 1;
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::format("netpbm dimensions overflow"))?;
    let have = bytes.len() - start;
    if have != expected {
        return Err(Error::format(format!(
            "netpbm raster holds {have} bytes, {width}x{height}x{channels} needs {expected}"
        )));
    }
    Ok(Header {
        width,
        height,
        start,
    })
}

/// Decodes a P6 image into `[1, 3, H, W]`.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let h = parse_header(bytes, b"P6", 3)?;
    let raster = &bytes[h.start..];
    let plane = h.width * h.height;
    let mut data = vec![0.0; 3 * plane];
    for (i, px) in raster.chunks_exact(3).enumerate() {
        for (ch, &b) in px.iter().enumerate() {
            data[ch * plane + i] = f64::from(b) / 255.0;
        }
    }
    Tensor::new(vec![1, 3, h.height, h.width], data)
}

/// Encodes `[1, 3, H, W]` or `[3, H, W]` in `[0, 1]`; values are clamped
/// and rounded to the nearest byte.
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let (height, width) = match *image.shape() {
        [1, 3, h, w] | [3, h, w] => (h, w),
        _ => {
            return Err(Error::shape(format!(
                "expected a [1, 3, H, W] image, got {:?}",
                image.shape()
            )))
        }
    };
    if !image.is_finite() {
        return Err(Error::Numeric {
            context: "encode_ppm".into(),
        });
    }
    let plane = width * height;
    let d = image.data();
    let bytes: Vec<u8> = (0..plane)
        .flat_map(|i| (0..3).map(move |ch| to_byte(d[ch * plane + i])))
        .collect();
    Ok(encode_rgb(width, height, &bytes))
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Wraps interleaved RGB bytes in a P6 header.
pub fn encode_rgb(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    debug_assert_eq!(rgb.len(), width * height * 3);
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

/// Decodes a P5 graymap into raw bytes and its `(height, width)`.
pub fn decode_pgm_bytes(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let h = parse_header(bytes, b"P5", 1)?;
    Ok((h.height, h.width, bytes[h.start..].to_vec()))
}

/// Decodes a P5 mask; bytes above 127 are set.
pub fn decode_pgm(bytes: &[u8]) -> Result<BinaryMask> {
    let (h, w, raw) = decode_pgm_bytes(bytes)?;
    BinaryMask::new(h, w, raw.iter().map(|&b| b > 127).collect())
}

/// Writes set bits as 255 and clear bits as 0.
pub fn encode_pgm(mask: &BinaryMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.bits().iter().map(|&b| if b { 255u8 } else { 0 }));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_with_comments() {
        let mut f = b"P6 # a comment\n2 1\n# another\n255\n".to_vec();
        f.extend([255, 0, 0, 0, 0, 255]);
        let t = decode_ppm(&f).unwrap();
        assert_eq!(t.shape(), &[1, 3, 1, 2]);
        assert_eq!(t.data(), &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn byte_roundtrip_is_exact() {
        let rgb: Vec<u8> = (0..=255u8)
            .chain(0..=255)
            .chain(0..=255)
            .take(4 * 8 * 3)
            .collect();
        let f = encode_rgb(4, 8, &rgb);
        assert_eq!(encode_ppm(&decode_ppm(&f).unwrap()).unwrap(), f);
    }

    #[test]
    fn rejects_malformed_headers() {
        let cases: [&[u8]; 8] = [
            b"",
            b"P5\n1 1\n255\n\0",
            b"P6\n1 1\n65535\n\0\0\0\0\0\0",
            b"P6\n1 1\n255\n\0\0",
            b"P6\n1 1\n255\n\0\0\0\0",
            b"P6\n0 1\n255\n",
            b"P6\n1\n",
            b"P61 1 255 \0\0\0",
        ];
        for c in cases {
            assert!(decode_ppm(c).is_err(), "{:?}", String::from_utf8_lossy(c));
        }
        assert!(decode_ppm(b"P6\n99999999999999999999 1\n255\n").is_err());
        assert!(decode_ppm(b"P6\n4294967296 4294967296\n255\n").is_err());
    }

    #[test]
    fn mask_threshold() {
        let mut f = b"P5\n4 1\n255\n".to_vec();
        f.extend([0, 127, 128, 255]);
        let m = decode_pgm(&f).unwrap();
        assert_eq!(m.bits(), &[false, false, true, true]);
        assert_eq!(decode_pgm(&encode_pgm(&m)).unwrap(), m);
    }
}

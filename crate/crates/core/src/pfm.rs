//! Portable float map (PFM) reader/writer.
//!
//! `PF` = 3-channel, `Pf` = 1-channel. A negative scale field marks
//! little-endian payloads; we always write `-1.0`. Raster rows are stored
//! bottom-to-top per the PFM convention, so round-trips through this module
//! are bit-exact while staying readable by external tools.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

fn pfm_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Pfm { offset: offset as u64, msg: msg.into() }
}

struct Tokenizer<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Tokenizer<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Tokenizer { bytes, pos: 0 }
    }

    /// Next whitespace-delimited ASCII token.
    fn token(&mut self) -> Result<(usize, &'a str)> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(pfm_err(start, "unexpected end of header"));
        }
        let s = std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| pfm_err(start, "non-ascii header token"))?;
        Ok((start, s))
    }

    /// Consume the single whitespace byte that terminates the scale field.
    fn end_header(&mut self) -> Result<usize> {
        if self.pos >= self.bytes.len() || !self.bytes[self.pos].is_ascii_whitespace() {
            return Err(pfm_err(self.pos, "missing whitespace after scale"));
        }
        self.pos += 1;
        Ok(self.pos)
    }
}

pub fn read_pfm(path: &Path) -> Result<ImageBuffer> {
    let bytes = fs::read(path)?;
    let mut tok = Tokenizer::new(&bytes);

    let (off, magic) = tok.token()?;
    let channels = match magic {
        "PF" => 3usize,
        "Pf" => 1usize,
        other => return Err(pfm_err(off, format!("bad magic {other:?}, expected PF or Pf"))),
    };
    let (off_w, w_str) = tok.token()?;
    let width: usize = w_str
        .parse()
        .map_err(|_| pfm_err(off_w, format!("bad width {w_str:?}")))?;
    let (off_h, h_str) = tok.token()?;
    let height: usize = h_str
        .parse()
        .map_err(|_| pfm_err(off_h, format!("bad height {h_str:?}")))?;
    if width == 0 || height == 0 {
        return Err(pfm_err(off_w, "zero image dimension"));
    }
    let (off_s, s_str) = tok.token()?;
    let scale: f64 = s_str
        .parse()
        .map_err(|_| pfm_err(off_s, format!("bad scale {s_str:?}")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(pfm_err(off_s, "scale must be a nonzero finite number"));
    }
    let little_endian = scale < 0.0;
    let payload_start = tok.end_header()?;

    let n_floats = width * height * channels;
    let expected = n_floats * 4;
    let payload = &bytes[payload_start..];
    if payload.len() < expected {
        return Err(pfm_err(
            payload_start + payload.len(),
            format!("truncated payload: expected {expected} bytes, got {}", payload.len()),
        ));
    }
    if payload.len() > expected {
        return Err(pfm_err(
            payload_start + expected,
            format!("{} trailing bytes after payload", payload.len() - expected),
        ));
    }

    // File rows run bottom-to-top; flip into top-left-origin order.
    let mut data = vec![0.0f32; n_floats];
    let row_len = width * channels;
    for file_row in 0..height {
        let img_row = height - 1 - file_row;
        for i in 0..row_len {
            let src = (file_row * row_len + i) * 4;
            let b: [u8; 4] = payload[src..src + 4].try_into().unwrap();
            let v = if little_endian {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            };
            if v.is_nan() {
                return Err(pfm_err(payload_start + src, "NaN in payload"));
            }
            data[img_row * row_len + i] = v;
        }
    }
    ImageBuffer::from_data(width, height, channels, data)
}

pub fn write_pfm(path: &Path, img: &ImageBuffer) -> Result<()> {
    let magic = if img.channels() == 3 { "PF" } else { "Pf" };
    let mut out = Vec::with_capacity(32 + img.data().len() * 4);
    write!(out, "{magic}\n{} {}\n-1.0\n", img.width(), img.height())?;
    let row_len = img.width() * img.channels();
    for img_row in (0..img.height()).rev() {
        let row = &img.data()[img_row * row_len..(img_row + 1) * row_len];
        for &v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn roundtrip(img: &ImageBuffer) -> ImageBuffer {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.pfm");
        write_pfm(&p, img).unwrap();
        read_pfm(&p).unwrap()
    }

    #[test]
    fn constant_image_roundtrips_bit_exact() {
        let img = ImageBuffer::from_data(2, 2, 1, vec![0.5; 4]).unwrap();
        assert_eq!(roundtrip(&img), img);
    }

    #[test]
    fn channel_size_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.pfm");
        // header says 1-channel but payload holds 3 channels worth of data
        let mut bytes = b"Pf\n2 2\n-1.0\n".to_vec();
        bytes.extend(std::iter::repeat(0u8).take(2 * 2 * 3 * 4));
        fs::write(&p, &bytes).unwrap();
        match read_pfm(&p) {
            Err(Error::Pfm { msg, .. }) => assert!(msg.contains("trailing"), "{msg}"),
            other => panic!("expected pfm error, got {other:?}"),
        }
    }

    #[test]
    fn truncation_and_nan_report_offsets() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.pfm");
        fs::write(&p, b"Pf\n2 1\n-1.0\n\x00\x00\x80\x3f").unwrap();
        assert!(matches!(read_pfm(&p), Err(Error::Pfm { .. })));

        let mut bytes = b"Pf\n1 1\n-1.0\n".to_vec();
        bytes.extend_from_slice(&f32::NAN.to_le_bytes());
        fs::write(&p, &bytes).unwrap();
        match read_pfm(&p) {
            Err(Error::Pfm { offset, msg }) => {
                assert!(msg.contains("NaN"));
                assert_eq!(offset, 12);
            }
            other => panic!("expected NaN error, got {other:?}"),
        }
    }

    #[test]
    fn big_endian_payloads_are_readable() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("be.pfm");
        let mut bytes = b"Pf\n1 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&0.25f32.to_be_bytes());
        fs::write(&p, &bytes).unwrap();
        let img = read_pfm(&p).unwrap();
        assert_eq!(img.data()[0], 0.25);
    }

    proptest! {
        #[test]
        fn random_images_roundtrip_bit_exact(
            w in 1usize..9,
            h in 1usize..9,
            three in proptest::bool::ANY,
            seed in proptest::num::u64::ANY,
        ) {
            use rand::Rng;
            let c = if three { 3 } else { 1 };
            let mut rng = crate::math::stream_rng(&[seed]);
            let data: Vec<f32> = (0..w * h * c)
                .map(|_| f32::from_bits(rng.gen::<u32>()))
                .map(|v| if v.is_finite() { v } else { 0.0 })
                .collect();
            let img = ImageBuffer::from_data(w, h, c, data).unwrap();
            prop_assert_eq!(
                roundtrip(&img).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                img.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }
}

//! Binary PPM (P6) and PGM (P5) reading and writing, maxval 255.
//!
//! Images store `round(v * 255)` per channel; label maps store the class
//! index directly with 255 reserved for void, so label round-trips are exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

fn write_header(w: &mut impl Write, magic: &str, width: usize, height: usize) -> Result<()> {
    write!(w, "{magic}\n{width} {height}\n255\n")?;
    Ok(())
}

/// Write an interleaved-RGB image with values in [0, 1].
pub fn write_ppm(path: impl AsRef<Path>, width: usize, height: usize, rgb: &[f32]) -> Result<()> {
    if rgb.len() != width * height * 3 {
        return Err(Error::Dim(format!(
            "ppm payload length {} != {width}x{height}x3",
            rgb.len()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, "P6", width, height)?;
    let bytes: Vec<u8> = rgb
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

/// Write a one-byte-per-pixel grayscale map.
pub fn write_pgm(path: impl AsRef<Path>, width: usize, height: usize, gray: &[u8]) -> Result<()> {
    if gray.len() != width * height {
        return Err(Error::Dim(format!(
            "pgm payload length {} != {width}x{height}",
            gray.len()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, "P5", width, height)?;
    w.write_all(gray)?;
    w.flush()?;
    Ok(())
}

struct HeaderReader<R: Read> {
    inner: R,
    peeked: Option<u8>,
}

impl<R: Read> HeaderReader<R> {
    fn next_byte(&mut self) -> Result<u8> {
        if let Some(b) = self.peeked.take() {
            return Ok(b);
        }
        let mut b = [0u8; 1];
        self.inner
            .read_exact(&mut b)
            .map_err(|_| Error::Format("truncated netpbm header".into()))?;
        Ok(b[0])
    }

    /// Next whitespace-separated token, skipping `#` comments.
    fn token(&mut self) -> Result<String> {
        let mut b = self.next_byte()?;
        loop {
            if b == b'#' {
                while b != b'\n' {
                    b = self.next_byte()?;
                }
            } else if b.is_ascii_whitespace() {
                b = self.next_byte()?;
            } else {
                break;
            }
        }
        let mut tok = Vec::new();
        while !b.is_ascii_whitespace() {
            tok.push(b);
            match self.next_byte() {
                Ok(nb) => b = nb,
                Err(_) => break,
            }
        }
        String::from_utf8(tok).map_err(|_| Error::Format("non-UTF-8 netpbm header".into()))
    }

    fn number(&mut self) -> Result<usize> {
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| Error::Format(format!("bad netpbm header number {tok:?}")))
    }
}

fn read_header(r: &mut HeaderReader<impl Read>, magic: &str) -> Result<(usize, usize)> {
    let m = r.token()?;
    if m != magic {
        return Err(Error::Format(format!(
            "expected {magic} magic, found {m:?}"
        )));
    }
    let width = r.number()?;
    let height = r.number()?;
    let maxval = r.number()?;
    if maxval != 255 {
        return Err(Error::Format(format!(
            "only maxval 255 is supported, found {maxval}"
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::Format("zero netpbm dimensions".into()));
    }
    Ok((width, height))
}

/// Read a P6 image into interleaved RGB in [0, 1].
pub fn read_ppm(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<f32>)> {
    let mut r = HeaderReader {
        inner: BufReader::new(File::open(path)?),
        peeked: None,
    };
    let (width, height) = read_header(&mut r, "P6")?;
    let mut bytes = vec![0u8; width * height * 3];
    r.inner
        .read_exact(&mut bytes)
        .map_err(|_| Error::Format("truncated ppm payload".into()))?;
    Ok((
        width,
        height,
        bytes.iter().map(|&b| b as f32 / 255.0).collect(),
    ))
}

/// Read a P5 grayscale map as raw bytes.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>)> {
    let mut r = HeaderReader {
        inner: BufReader::new(File::open(path)?),
        peeked: None,
    };
    let (width, height) = read_header(&mut r, "P5")?;
    let mut bytes = vec![0u8; width * height];
    r.inner
        .read_exact(&mut bytes)
        .map_err(|_| Error::Format("truncated pgm payload".into()))?;
    Ok((width, height, bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_written_pgm_fixture_parses_exactly() {
        let dir = std::env::temp_dir().join(format!("uce_netpbm_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("fixture.pgm");
        // 2x2 map with values {0, 1, 1, 255}, comment in header
        let mut f = File::create(&path).unwrap();
        f.write_all(b"P5\n# fixture\n2 2\n255\n").unwrap();
        f.write_all(&[0u8, 1, 1, 255]).unwrap();
        drop(f);
        let (w, h, data) = read_pgm(&path).unwrap();
        assert_eq!((w, h), (2, 2));
        assert_eq!(data, vec![0, 1, 1, 255]);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let dir = std::env::temp_dir().join(format!("uce_netpbm_bad_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.pgm");
        std::fs::write(&path, b"P3\n2 2\n255\n0123").unwrap();
        assert!(matches!(read_pgm(&path), Err(Error::Format(_))));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn maxval_other_than_255_rejected() {
        let dir = std::env::temp_dir().join(format!("uce_netpbm_mv_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("mv.pgm");
        std::fs::write(&path, b"P5\n1 1\n65535\n\x00\x00").unwrap();
        assert!(matches!(read_pgm(&path), Err(Error::Format(_))));
        std::fs::remove_dir_all(&dir).ok();
    }
}

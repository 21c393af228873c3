//! Binary (P5) PGM ingestion for silhouette sequences. Frames are stacked in
//! lexicographic filename order into a (1, 1, T, H, W) tensor with values
//! in [0, 1].

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::fs;
use std::path::Path;

/// Parses an 8-bit binary PGM; returns (width, height, pixels).
pub fn parse_pgm(bytes: &[u8], source: &str) -> Result<(usize, usize, Vec<u8>)> {
    let mut pos = 0usize;
    let err = |msg: String| Error::Format(format!("{source}: {msg}"));

    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(err("not a binary PGM (P5) file".into()));
    }
    pos += 2;

    // header tokens may be separated by whitespace and '#' comments
    let next_token = |pos: &mut usize| -> Result<usize> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
            *pos += 1;
        }
        if start == *pos {
            return Err(err("malformed PGM header".into()));
        }
        std::str::from_utf8(&bytes[start..*pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err("malformed PGM header".into()))
    };

    let width = next_token(&mut pos)?;
    let height = next_token(&mut pos)?;
    let maxval = next_token(&mut pos)?;
    if maxval != 255 {
        return Err(err(format!("unsupported PGM maxval {maxval}, expected 255")));
    }
    // exactly one whitespace byte before the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(err("malformed PGM header".into()));
    }
    pos += 1;
    let n = width * height;
    if bytes.len() < pos + n {
        return Err(err(format!(
            "raster truncated: need {n} bytes, found {}",
            bytes.len() - pos
        )));
    }
    Ok((width, height, bytes[pos..pos + n].to_vec()))
}

/// Loads a directory of equally sized P5 frames as (1, 1, T, H, W); each
/// frame must be exactly `expected` = (H, W). With `binarize`, values are
/// thresholded at 0.5 after the /255 mapping.
pub fn load_sequence(dir: &Path, binarize: bool, expected: (usize, usize)) -> Result<Tensor> {
    let (h, w) = expected;
    let mut names: Vec<_> = fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|e| e.path().is_file())
        .map(|e| e.path())
        .collect();
    names.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    if names.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "no frames in {}",
            dir.display()
        )));
    }
    let t = names.len();
    let mut data = Vec::with_capacity(t * h * w);
    for path in &names {
        let display = path.display().to_string();
        let bytes = fs::read(path)?;
        let (fw, fh, pixels) = parse_pgm(&bytes, &display)?;
        if (fh, fw) != (h, w) {
            return Err(Error::Format(format!(
                "{display}: frame is {fw}x{fh} (WxH), expected {w}x{h}"
            )));
        }
        data.extend(pixels.iter().map(|&p| {
            let v = p as f32 / 255.0;
            if binarize {
                if v >= 0.5 {
                    1.0
                } else {
                    0.0
                }
            } else {
                v
            }
        }));
    }
    Tensor::new(&[1, 1, t, h, w], data)
}

/// Writes one frame as binary PGM.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::InvalidParameter(format!(
            "{} pixels for {width}x{height} frame",
            pixels.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    #[test]
    fn black_frame_loads_as_zeros() {
        let dir = TempDir::new().unwrap();
        write_pgm(&dir.path().join("000.pgm"), 44, 64, &vec![0u8; 64 * 44]).unwrap();
        let t = load_sequence(dir.path(), false, (64, 44)).unwrap();
        assert_eq!(t.dims(), &[1, 1, 1, 64, 44]);
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn thirty_frames_stack_in_name_order() {
        let dir = TempDir::new().unwrap();
        for i in 0..30 {
            write_pgm(
                &dir.path().join(format!("{i:03}.pgm")),
                44,
                64,
                &vec![i as u8; 64 * 44],
            )
            .unwrap();
        }
        let t = load_sequence(dir.path(), false, (64, 44)).unwrap();
        assert_eq!(t.dims()[2], 30);
        for i in 0..30 {
            let v = t.data()[i * 64 * 44];
            assert!((v - i as f32 / 255.0).abs() < 1e-6);
        }
    }

    #[test]
    fn wrong_size_names_file() {
        let dir = TempDir::new().unwrap();
        write_pgm(&dir.path().join("bad.pgm"), 10, 10, &vec![0u8; 100]).unwrap();
        let err = load_sequence(dir.path(), false, (64, 44))
            .unwrap_err()
            .to_string();
        assert!(err.contains("bad.pgm"), "{err}");
    }

    #[test]
    fn non_pgm_file_rejected() {
        let dir = TempDir::new().unwrap();
        std::fs::write(dir.path().join("notes.txt"), b"hello").unwrap();
        assert!(load_sequence(dir.path(), false, (64, 44)).is_err());
    }

    #[test]
    fn empty_dir_rejected() {
        let dir = TempDir::new().unwrap();
        assert!(load_sequence(dir.path(), false, (64, 44)).is_err());
    }

    #[test]
    fn binarize_thresholds_at_half() {
        let dir = TempDir::new().unwrap();
        let mut px = vec![0u8; 64 * 44];
        px[0] = 200;
        px[1] = 100;
        write_pgm(&dir.path().join("f.pgm"), 44, 64, &px).unwrap();
        let t = load_sequence(dir.path(), true, (64, 44)).unwrap();
        assert_eq!(t.data()[0], 1.0);
        assert_eq!(t.data()[1], 0.0);
    }

    #[test]
    fn comments_in_header_are_skipped() {
        let mut bytes = b"P5\n# a comment\n3 2\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        let (w, h, px) = parse_pgm(&bytes, "mem").unwrap();
        assert_eq!((w, h), (3, 2));
        assert_eq!(px, vec![1, 2, 3, 4, 5, 6]);
    }
}

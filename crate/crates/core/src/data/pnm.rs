use std::path::Path;

use super::{ImageDataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Binary netpbm flavours.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PnmKind {
    /// P5 grayscale.
    Pgm,
    /// P6 RGB.
    Ppm,
}

impl PnmKind {
    fn extension(self) -> &'static str {
        match self {
            PnmKind::Pgm => "pgm",
            PnmKind::Ppm => "ppm",
        }
    }
}

/// Loads every `*.pgm` / `*.ppm` file (by `kind`) in `dir`, sorted by file name.
pub fn load_image_dir(dir: impl AsRef<Path>, kind: PnmKind) -> Result<ImageDataset> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case(kind.extension()))
        })
        .collect();
    paths.sort();
    let images = paths
        .iter()
        .map(|p| parse_pnm(&std::fs::read(p)?))
        .collect::<Result<Vec<_>>>()?;
    ImageDataset::new(images, Split::Train)
}

/// Parses a binary P5/P6 image with maxval 255 into a `C×H×W` tensor.
pub fn parse_pnm(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0;
    let mut token = || -> Result<&[u8]> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("pnm", "truncated header"));
        }
        Ok(&bytes[start..pos])
    };
    let channels = match token()? {
        b"P5" => 1,
        b"P6" => 3,
        other => {
            return Err(Error::format(
                "pnm",
                format!("unsupported magic {:?}", String::from_utf8_lossy(other)),
            ))
        }
    };
    let mut number = |name: &str| -> Result<usize> {
        std::str::from_utf8(token()?)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format("pnm", format!("bad {name}")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if maxval != 255 {
        return Err(Error::format("pnm", format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let n = channels * width * height;
    let raster = bytes
        .get(start..start + n)
        .ok_or_else(|| Error::format("pnm", "truncated raster"))?;
    // interleaved RGB → planar C×H×W
    let mut data = vec![0.0; n];
    for (i, &b) in raster.iter().enumerate() {
        let (pixel, c) = (i / channels, i % channels);
        data[c * width * height + pixel] = b as f64 / 255.0;
    }
    Tensor::new(vec![channels, height, width], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_fixture() {
        let mut bytes = b"P5\n# fixture\n2 2\n255\n".to_vec();
        bytes.extend([0, 255, 51, 204]);
        let t = parse_pnm(&bytes).unwrap();
        assert_eq!(t.shape(), &[1, 2, 2]);
        assert_eq!(t.data(), &[0.0, 1.0, 0.2, 0.8]);
    }

    #[test]
    fn rgb_fixture() {
        let mut bytes = b"P6 1 1 255\n".to_vec();
        bytes.extend([255, 0, 0]);
        let t = parse_pnm(&bytes).unwrap();
        assert_eq!(t.shape(), &[3, 1, 1]);
        assert_eq!(t.data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_maxval_and_truncation() {
        let mut bytes = b"P5 2 1 65535\n".to_vec();
        bytes.extend([0, 0, 0, 0]);
        assert!(parse_pnm(&bytes).is_err());
        assert!(parse_pnm(b"P5 2 2 255\n\x00").is_err());
        assert!(parse_pnm(b"P3 1 1 255\n0 0 0").is_err());
    }

    #[test]
    fn directory_loading() {
        let dir = tempfile::tempdir().unwrap();
        let write = |name: &str, w: usize| {
            let mut b = format!("P5 {w} 2 255\n").into_bytes();
            b.extend(vec![128u8; w * 2]);
            std::fs::write(dir.path().join(name), b).unwrap();
        };
        write("b.pgm", 2);
        write("a.pgm", 2);
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let ds = load_image_dir(dir.path(), PnmKind::Pgm).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.shape().unwrap(), &[1, 2, 2]);
        write("c.pgm", 3);
        assert!(matches!(load_image_dir(dir.path(), PnmKind::Pgm), Err(Error::Data(_))));
    }
}

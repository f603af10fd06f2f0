//! Binary PGM (P5) output for heatmaps and masks.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Maps a value in [0,1] to a byte: `floor(v·255 + 0.5)`, clamped.
pub fn to_byte(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Encodes an H×W map with values in [0,1] as a P5 image.
pub fn encode_pgm(map: &Tensor) -> Result<Vec<u8>> {
    let &[h, w] = map.shape() else {
        return Err(Error::InvalidArgument(format!(
            "PGM needs a 2-D map, got shape {:?}",
            map.shape()
        )));
    };
    let mut out = format!("P5 {w} {h} 255\n").into_bytes();
    out.extend(map.data().iter().map(|&v| to_byte(v)));
    Ok(out)
}

pub fn write_pgm(path: &Path, map: &Tensor) -> Result<()> {
    std::fs::write(path, encode_pgm(map)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_half() {
        let bytes = encode_pgm(&Tensor::filled(&[16, 16], 0.5)).unwrap();
        assert!(bytes.starts_with(b"P5 16 16 255\n"));
        let px = &bytes[13..];
        assert_eq!(px.len(), 256);
        assert!(px.iter().all(|&p| p == 128));
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(to_byte(0.0), 0);
        assert_eq!(to_byte(1.0), 255);
        assert_eq!(to_byte(0.5 / 255.0), 1);
        assert_eq!(to_byte(0.49 / 255.0), 0);
        assert_eq!(to_byte(2.0), 255);
        assert_eq!(to_byte(-1.0), 0);
    }

    #[test]
    fn row_major_layout() {
        let t = Tensor::new(&[2, 3], vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
        let bytes = encode_pgm(&t).unwrap();
        assert!(bytes.starts_with(b"P5 3 2 255\n"));
        assert_eq!(&bytes[11..], &[0, 0, 255, 0, 0, 0]);
    }

    #[test]
    fn rejects_vectors() {
        assert!(encode_pgm(&Tensor::zeros(&[4])).is_err());
    }
}

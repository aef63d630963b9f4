use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Binary 8-bit PGM of one channel of an `H×W×C` tensor with values in `[0, 1]`.
pub fn pgm_bytes<T: Real>(masks: &Tensor<T>, channel: usize) -> Result<Vec<u8>> {
    let [h, w, c] = masks.shape() else {
        return Err(Error::dim("pgm input", "rank 3", masks.shape().len()));
    };
    if channel >= *c {
        return Err(Error::dim("pgm channel", format!("< {c}"), channel));
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(masks.data().chunks_exact(*c).map(|px| {
        let v = px[channel].f64().clamp(0.0, 1.0);
        (v * 255.0).round() as u8
    }));
    Ok(out)
}

/// Writes `<stem>_<channel>.pgm` for every channel; returns the paths written.
pub fn write_channels<T: Real>(dir: &Path, stem: &str, masks: &Tensor<T>) -> Result<Vec<PathBuf>> {
    let channels = masks.shape().get(2).copied().unwrap_or(0);
    (0..channels)
        .map(|ch| {
            let path = dir.join(format!("{stem}_{ch}.pgm"));
            std::fs::write(&path, pgm_bytes(masks, ch)?)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_quantization() {
        let t = Tensor::from_vec(&[1, 2, 2], vec![0.0f64, 1.0, 1.0, 0.5]).unwrap();
        let bytes = pgm_bytes(&t, 1).unwrap();
        assert!(bytes.starts_with(b"P5\n2 1\n255\n"));
        assert_eq!(&bytes[bytes.len() - 2..], &[255, 128]);
        assert!(pgm_bytes(&t, 2).is_err());
    }
}

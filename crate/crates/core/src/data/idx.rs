//! IDX image/label files (big-endian header, `u8` payload).

use std::path::Path;

use super::Dataset;
use crate::{Error, Result};

/// Dimensions and payload of an unsigned-byte IDX file.
pub fn parse_idx(bytes: &[u8]) -> std::result::Result<(Vec<usize>, &[u8]), String> {
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err("bad IDX magic".into());
    }
    if bytes[2] != 0x08 {
        return Err(format!("unsupported IDX element type 0x{:02x}", bytes[2]));
    }
    let rank = bytes[3] as usize;
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err("truncated IDX header".into());
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let n: usize = dims.iter().product();
    if bytes.len() != header + n {
        return Err(format!(
            "IDX payload has {} bytes, header declares {n}",
            bytes.len() - header
        ));
    }
    Ok((dims, &bytes[header..]))
}

/// Loads an image file (`[N, H, W]` or `[N, D]`) and its label file,
/// scaling pixels to `[0, 1]`. Images become `[1, H, W]` samples.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images.as_ref(), labels.as_ref());
    let ibytes = std::fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let lbytes = std::fs::read(lp).map_err(|e| Error::io(lp, e))?;
    let (idims, ipix) = parse_idx(&ibytes).map_err(|r| Error::format(ip, r))?;
    let (ldims, lvals) = parse_idx(&lbytes).map_err(|r| Error::format(lp, r))?;
    if ldims.len() != 1 {
        return Err(Error::format(lp, "label file must be one-dimensional"));
    }
    let sample_shape = match idims.as_slice() {
        [_, h, w] => vec![1, *h, *w],
        [_, d] => vec![*d],
        _ => return Err(Error::format(ip, "image file must have rank 2 or 3")),
    };
    if idims[0] != ldims[0] {
        return Err(Error::format(
            ip,
            format!("{} images but {} labels", idims[0], ldims[0]),
        ));
    }
    let labels: Vec<usize> = lvals.iter().map(|&l| l as usize).collect();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let inputs = ipix.iter().map(|&p| p as f32 / 255.0).collect();
    Dataset::new(inputs, sample_shape, labels, num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx(dims: &[u32], payload: &[u8]) -> Vec<u8> {
        let mut b = vec![0, 0, 0x08, dims.len() as u8];
        for d in dims {
            b.extend_from_slice(&d.to_be_bytes());
        }
        b.extend_from_slice(payload);
        b
    }

    #[test]
    fn loads_images_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lbl");
        std::fs::write(&ip, idx(&[2, 2, 2], &[0, 255, 51, 0, 255, 255, 255, 255])).unwrap();
        std::fs::write(&lp, idx(&[2], &[1, 0])).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.sample_shape, vec![1, 2, 2]);
        assert_eq!(ds.labels, vec![1, 0]);
        assert_eq!(ds.num_classes, 2);
        assert_eq!(ds.sample(0), &[0.0, 1.0, 0.2, 0.0]);
    }

    #[test]
    fn rejects_malformed_files() {
        assert!(parse_idx(&[0, 0, 0x0d, 1, 0, 0, 0, 0]).is_err());
        assert!(parse_idx(&idx(&[3], &[1, 2])).is_err());
        assert!(parse_idx(&[1, 0, 8, 0]).is_err());
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lbl");
        std::fs::write(&ip, idx(&[2, 1, 1], &[0, 1])).unwrap();
        std::fs::write(&lp, idx(&[3], &[1, 0, 1])).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Format { .. })));
        assert!(matches!(
            load_idx(dir.path().join("missing"), &lp),
            Err(Error::Io { .. })
        ));
    }
}

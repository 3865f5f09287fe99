//! Head checkpoints: `D, H, K` as u32 and the step as u64, then `W1, b1, W2,
//! b2` as little-endian f32, all row-major.

use std::fs;
use std::path::Path;

use super::head::ClusterHead;
use crate::error::{Result, TacError};

const HEADER_LEN: usize = 20;

pub fn encode_checkpoint(head: &ClusterHead, step: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + head.num_params() * 4);
    for dim in [head.input_dim, head.hidden, head.k] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    out.extend_from_slice(&step.to_le_bytes());
    for t in head.tensors() {
        for &x in t {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ClusterHead, u64)> {
    if bytes.len() < HEADER_LEN {
        return Err(TacError::Format(
            "checkpoint shorter than its header".into(),
        ));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (d, h, k) = (u32_at(0), u32_at(4), u32_at(8));
    let step = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let mut head = ClusterHead::zeros(d, h, k);
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != head.num_params() * 4 {
        return Err(TacError::Format(format!(
            "checkpoint for {d}x{h}x{k} head needs {} payload bytes, found {}",
            head.num_params() * 4,
            payload.len()
        )));
    }
    let mut values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
    for t in head.tensors_mut() {
        for x in t.iter_mut() {
            *x = values.next().unwrap();
        }
    }
    if head
        .tensors()
        .iter()
        .any(|t| t.iter().any(|x| !x.is_finite()))
    {
        return Err(TacError::Data(
            "checkpoint contains non-finite parameters".into(),
        ));
    }
    Ok((head, step))
}

pub fn write_checkpoint(path: impl AsRef<Path>, head: &ClusterHead, step: u64) -> Result<()> {
    fs::write(path, encode_checkpoint(head, step))?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(ClusterHead, u64)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| TacError::Format(format!("{}: {e}", path.display())))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::RngState;

    #[test]
    fn roundtrip_at_f32_precision() {
        let head = ClusterHead::init(5, 4, 3, &mut RngState::new(1, 4));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("head.ckpt");
        write_checkpoint(&path, &head, 77).unwrap();
        let (back, step) = read_checkpoint(&path).unwrap();
        assert_eq!(step, 77);
        assert_eq!((back.input_dim, back.hidden, back.k), (5, 4, 3));
        for (a, b) in head.tensors().iter().zip(back.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(*x as f32 as f64, *y);
            }
        }
        assert_eq!(
            fs::metadata(&path).unwrap().len() as usize,
            20 + head.num_params() * 4
        );
    }

    #[test]
    fn header_layout_and_truncation() {
        let head = ClusterHead::zeros(2, 3, 4);
        let bytes = encode_checkpoint(&head, 9);
        assert_eq!(&bytes[..4], &2u32.to_le_bytes());
        assert_eq!(&bytes[4..8], &3u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &4u32.to_le_bytes());
        assert_eq!(&bytes[12..20], &9u64.to_le_bytes());
        assert!(decode_checkpoint(&bytes[..bytes.len() - 4]).is_err());
        assert!(decode_checkpoint(&bytes[..10]).is_err());
    }
}

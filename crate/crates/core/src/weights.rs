//! Weight container shared by both networks: 8-byte magic, a `u32`
//! length-prefixed JSON header, then every parameter as a little-endian
//! `f32` in declaration order.

use serde::{de::DeserializeOwned, Serialize};

use crate::error::{Error, Result};

pub const MAGIC_LEN: usize = 8;

pub fn encode<H: Serialize>(magic: &[u8; MAGIC_LEN], header: &H, params: &[f64]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(MAGIC_LEN + 4 + json.len() + 4 * params.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for &p in params {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    Ok(out)
}

/// Decodes a container, returning the header and the parameters. The header
/// must report its parameter count through `param_count`.
pub fn decode<H: DeserializeOwned>(
    magic: &[u8; MAGIC_LEN],
    bytes: &[u8],
    param_count: impl FnOnce(&H) -> usize,
) -> Result<(H, Vec<f64>)> {
    if bytes.len() < MAGIC_LEN + 4 {
        return Err(Error::format(bytes.len() as u64, "file too short for a weight header"));
    }
    if &bytes[..MAGIC_LEN] != magic {
        return Err(Error::format(
            0,
            format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&bytes[..MAGIC_LEN]),
                String::from_utf8_lossy(magic)
            ),
        ));
    }
    let hlen = u32::from_le_bytes(bytes[MAGIC_LEN..MAGIC_LEN + 4].try_into().unwrap()) as usize;
    let body = MAGIC_LEN + 4;
    if bytes.len() < body + hlen {
        return Err(Error::format(bytes.len() as u64, format!("header declares {hlen} bytes, file ends early")));
    }
    let header: H = serde_json::from_slice(&bytes[body..body + hlen])
        .map_err(|e| Error::format(body as u64, format!("invalid header JSON: {e}")))?;
    let n = param_count(&header);
    let start = body + hlen;
    let expected = start + 4 * n;
    if bytes.len() != expected {
        return Err(Error::format(
            bytes.len().min(expected) as u64,
            format!("expected {expected} bytes for {n} parameters, found {}", bytes.len()),
        ));
    }
    let params = bytes[start..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok((header, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Serialize, Deserialize, PartialEq)]
    struct Hdr {
        n: usize,
    }

    #[test]
    fn roundtrip_and_errors() {
        let params = vec![0.5, -1.25, 3.0f32 as f64];
        let bytes = encode(b"TESTMAGC", &Hdr { n: 3 }, &params).unwrap();
        let (h, p): (Hdr, _) = decode(b"TESTMAGC", &bytes, |h: &Hdr| h.n).unwrap();
        assert_eq!(h, Hdr { n: 3 });
        assert_eq!(p, params);
        assert!(matches!(decode::<Hdr>(b"OTHERMAG", &bytes, |h| h.n), Err(Error::Format { offset: 0, .. })));
        let truncated = &bytes[..bytes.len() - 2];
        assert!(matches!(decode::<Hdr>(b"TESTMAGC", truncated, |h| h.n), Err(Error::Format { .. })));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode::<Hdr>(b"TESTMAGC", &extra, |h| h.n).is_err());
        assert!(decode::<Hdr>(b"TESTMAGC", &bytes[..5], |h| h.n).is_err());
    }
}

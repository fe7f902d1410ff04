//! Binary PPM (P6) encoding and decoding.
//!
//! This is the frame interchange format: maxval 255, single whitespace
//! separators, no comments. The decoder is strict so that round trips are
//! bit-exact by construction.

use thiserror::Error;

use crate::render::{Frame, RenderError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PpmError {
    #[error("not a binary PPM: bad magic")]
    BadMagic,
    #[error("malformed PPM header: {0}")]
    Malformed(&'static str),
    #[error("unsupported maxval {0}, only 255 is accepted")]
    UnsupportedMaxval(u64),
    #[error("truncated pixel data: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("{0} trailing bytes after pixel data")]
    TrailingData(usize),
    #[error(transparent)]
    Frame(#[from] RenderError),
}

/// Encode as `P6\n{width} {height}\n255\n` followed by raw RGB bytes.
pub fn encode(frame: &Frame) -> Vec<u8> {
    let header = format!("P6\n{} {}\n255\n", frame.width(), frame.height());
    let mut out = Vec::with_capacity(header.len() + frame.as_bytes().len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(frame.as_bytes());
    out
}

pub fn decode(bytes: &[u8]) -> Result<Frame, PpmError> {
    if bytes.len() < 2 || &bytes[0..2] != b"P6" {
        return Err(PpmError::BadMagic);
    }
    let mut at = 2;
    let width = read_token(bytes, &mut at)?;
    let height = read_token(bytes, &mut at)?;
    let maxval = read_token(bytes, &mut at)?;
    if maxval != 255 {
        return Err(PpmError::UnsupportedMaxval(maxval));
    }
    if width == 0 || height == 0 || width > 1 << 15 || height > 1 << 15 {
        return Err(PpmError::Malformed("unreasonable dimensions"));
    }
    // Exactly one whitespace byte separates the header from the pixels.
    match bytes.get(at) {
        Some(b) if b.is_ascii_whitespace() => at += 1,
        _ => return Err(PpmError::Malformed("missing separator before pixel data")),
    }
    let expected = width as usize * height as usize * 3;
    let got = bytes.len() - at;
    if got < expected {
        return Err(PpmError::Truncated { expected, got });
    }
    if got > expected {
        return Err(PpmError::TrailingData(got - expected));
    }
    Ok(Frame::new(
        width as u32,
        height as u32,
        bytes[at..].to_vec(),
    )?)
}

/// Skip whitespace, then parse an unsigned decimal token.
fn read_token(bytes: &[u8], at: &mut usize) -> Result<u64, PpmError> {
    let mut seen_ws = false;
    while bytes.get(*at).is_some_and(|b| b.is_ascii_whitespace()) {
        *at += 1;
        seen_ws = true;
    }
    if !seen_ws {
        return Err(PpmError::Malformed("missing whitespace separator"));
    }
    if bytes.get(*at) == Some(&b'#') {
        return Err(PpmError::Malformed("comments are not supported"));
    }
    let start = *at;
    let mut value: u64 = 0;
    while let Some(&b) = bytes.get(*at) {
        if !b.is_ascii_digit() {
            break;
        }
        value = value
            .checked_mul(10)
            .and_then(|v| v.checked_add((b - b'0') as u64))
            .ok_or(PpmError::Malformed("numeric overflow in header"))?;
        *at += 1;
    }
    if *at == start {
        return Err(PpmError::Malformed("expected a decimal value"));
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridPos;
    use crate::render::{render, RenderConfig};

    #[test]
    fn one_by_one_white_is_exact() {
        let f = Frame::filled(1, 1, [255, 255, 255]);
        assert_eq!(encode(&f), b"P6\n1 1\n255\n\xff\xff\xff");
    }

    #[test]
    fn round_trips_rendered_frames() {
        let cfg = RenderConfig::default();
        for (x, y) in [(0, 0), (14, 8), (7, 4)] {
            let f = render(GridPos::new(x, y).unwrap(), &cfg, true);
            assert_eq!(decode(&encode(&f)).unwrap(), f);
        }
    }

    #[test]
    fn rejects_bad_magic() {
        assert_eq!(decode(b"P5\n1 1\n255\n\x00"), Err(PpmError::BadMagic));
        assert_eq!(decode(b""), Err(PpmError::BadMagic));
    }

    #[test]
    fn rejects_wrong_maxval() {
        assert_eq!(
            decode(b"P6\n1 1\n65535\n\xff\xff\xff"),
            Err(PpmError::UnsupportedMaxval(65535))
        );
    }

    #[test]
    fn rejects_truncated_payload() {
        let f = Frame::filled(2, 2, [9, 9, 9]);
        let mut bytes = encode(&f);
        bytes.truncate(bytes.len() - 1);
        assert!(matches!(decode(&bytes), Err(PpmError::Truncated { .. })));
    }

    #[test]
    fn rejects_trailing_bytes() {
        let f = Frame::filled(1, 1, [9, 9, 9]);
        let mut bytes = encode(&f);
        bytes.push(0);
        assert_eq!(decode(&bytes), Err(PpmError::TrailingData(1)));
    }

    #[test]
    fn rejects_comments() {
        assert!(matches!(
            decode(b"P6\n# hi\n1 1\n255\n\xff\xff\xff"),
            Err(PpmError::Malformed(_))
        ));
    }
}

//! Little-endian field readers shared by the GCFT/GCBK/GCWB decoders.
//!
//! Every reader advances `off` and reports truncation with the format name
//! and the field being read, so decode errors point at the exact spot.

use crate::error::{Error, Result};

pub(crate) fn expect_magic(buf: &[u8], magic: &[u8; 4], format: &'static str) -> Result<()> {
    if buf.len() < 4 || &buf[0..4] != magic {
        return Err(Error::BadMagic { format });
    }
    Ok(())
}

pub(crate) fn read_u16(
    buf: &[u8],
    off: &mut usize,
    format: &'static str,
    what: &str,
) -> Result<u16> {
    if *off + 2 > buf.len() {
        return Err(Error::TruncatedPayload {
            format,
            detail: format!("reading {what}"),
        });
    }
    let v = u16::from_le_bytes([buf[*off], buf[*off + 1]]);
    *off += 2;
    Ok(v)
}

pub(crate) fn read_u32(
    buf: &[u8],
    off: &mut usize,
    format: &'static str,
    what: &str,
) -> Result<u32> {
    if *off + 4 > buf.len() {
        return Err(Error::TruncatedPayload {
            format,
            detail: format!("reading {what}"),
        });
    }
    let v = u32::from_le_bytes(buf[*off..*off + 4].try_into().unwrap());
    *off += 4;
    Ok(v)
}

pub(crate) fn read_f32s(
    buf: &[u8],
    off: &mut usize,
    count: usize,
    format: &'static str,
    what: &str,
) -> Result<Vec<f32>> {
    let need = count
        .checked_mul(4)
        .ok_or_else(|| Error::DimensionOverflow {
            format,
            detail: format!("{what}: {count} floats"),
        })?;
    if *off + need > buf.len() {
        return Err(Error::TruncatedPayload {
            format,
            detail: format!(
                "reading {what}: need {need} bytes, have {}",
                buf.len() - *off
            ),
        });
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let p = *off + i * 4;
        out.push(f32::from_le_bytes(buf[p..p + 4].try_into().unwrap()));
    }
    *off += need;
    Ok(out)
}

pub(crate) fn read_bytes<'a>(
    buf: &'a [u8],
    off: &mut usize,
    count: usize,
    format: &'static str,
    what: &str,
) -> Result<&'a [u8]> {
    if *off + count > buf.len() {
        return Err(Error::TruncatedPayload {
            format,
            detail: format!(
                "reading {what}: need {count} bytes, have {}",
                buf.len() - *off
            ),
        });
    }
    let out = &buf[*off..*off + count];
    *off += count;
    Ok(out)
}

pub(crate) fn expect_end(buf: &[u8], off: usize, format: &'static str) -> Result<()> {
    if off < buf.len() {
        return Err(Error::TrailingData {
            format,
            extra: buf.len() - off,
        });
    }
    Ok(())
}

//! Reader and writer for the header of NumPy `.npy` arrays.

use std::io::{Read, Write};

use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Header {
    pub descr: String,
    pub fortran_order: bool,
    pub shape: Vec<usize>,
}

/// Reads the magic, version and header dictionary, leaving `r` at the
/// first data byte.
pub fn read_header<R: Read>(r: &mut R, member: &str) -> Result<Header> {
    let bad = |reason: String| Error::format(member, reason);
    let mut pre = [0u8; 8];
    r.read_exact(&mut pre).map_err(|e| bad(format!("short preamble: {e}")))?;
    if &pre[..6] != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let len = match pre[6] {
        1 => {
            let mut b = [0u8; 2];
            r.read_exact(&mut b).map_err(|e| bad(format!("short header length: {e}")))?;
            u16::from_le_bytes(b) as usize
        }
        2 | 3 => {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|e| bad(format!("short header length: {e}")))?;
            u32::from_le_bytes(b) as usize
        }
        v => return Err(bad(format!("unsupported version {v}.{}", pre[7]))),
    };
    let mut text = vec![0u8; len];
    r.read_exact(&mut text).map_err(|e| bad(format!("truncated header: {e}")))?;
    let text = String::from_utf8(text).map_err(|_| bad("header is not text".into()))?;
    parse_dict(&text).map_err(bad)
}

fn parse_dict(text: &str) -> std::result::Result<Header, String> {
    let body = text
        .trim()
        .strip_prefix('{')
        .and_then(|t| t.trim_end().strip_suffix('}'))
        .ok_or("header is not a dict literal")?;
    let mut descr = None;
    let mut fortran = None;
    let mut shape = None;
    let mut rest = body.trim();
    while !rest.is_empty() {
        let (key, after) = quoted(rest).ok_or_else(|| format!("expected quoted key at {rest:?}"))?;
        let after = after.trim_start().strip_prefix(':').ok_or("expected ':'")?.trim_start();
        let after = match key {
            "descr" => {
                let (v, a) = quoted(after).ok_or("descr must be a string")?;
                descr = Some(v.to_string());
                a
            }
            "fortran_order" => {
                let (v, a) = if let Some(a) = after.strip_prefix("False") {
                    (false, a)
                } else if let Some(a) = after.strip_prefix("True") {
                    (true, a)
                } else {
                    return Err("fortran_order must be True or False".into());
                };
                fortran = Some(v);
                a
            }
            "shape" => {
                let inner = after.strip_prefix('(').ok_or("shape must be a tuple")?;
                let close = inner.find(')').ok_or("unterminated shape tuple")?;
                let dims = inner[..close]
                    .split(',')
                    .map(str::trim)
                    .filter(|d| !d.is_empty())
                    .map(|d| d.parse::<usize>().map_err(|_| format!("bad dimension {d:?}")))
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                shape = Some(dims);
                &inner[close + 1..]
            }
            other => return Err(format!("unexpected key {other:?}")),
        };
        rest = after.trim_start();
        rest = rest.strip_prefix(',').unwrap_or(rest).trim_start();
    }
    Ok(Header {
        descr: descr.ok_or("missing descr")?,
        fortran_order: fortran.ok_or("missing fortran_order")?,
        shape: shape.ok_or("missing shape")?,
    })
}

/// Splits a leading `'…'` or `"…"` literal off `s`.
fn quoted(s: &str) -> Option<(&str, &str)> {
    let q = s.chars().next().filter(|c| *c == '\'' || *c == '"')?;
    let end = s[1..].find(q)? + 1;
    Some((&s[1..end], &s[end + 1..]))
}

/// Writes a version 1.0 header padded so the data starts 64-byte aligned.
pub fn write_header<W: Write>(w: &mut W, header: &Header) -> std::io::Result<()> {
    let dims = match header.shape.len() {
        1 => format!("{},", header.shape[0]),
        _ => header.shape.iter().map(usize::to_string).collect::<Vec<_>>().join(", "),
    };
    let order = if header.fortran_order { "True" } else { "False" };
    let mut dict = format!("{{'descr': '{}', 'fortran_order': {order}, 'shape': ({dims}), }}", header.descr);
    let unpadded = MAGIC.len() + 4 + dict.len() + 1;
    dict.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    dict.push('\n');
    w.write_all(MAGIC)?;
    w.write_all(&[1, 0])?;
    w.write_all(&(dict.len() as u16).to_le_bytes())?;
    w.write_all(dict.as_bytes())
}

/// Checks dtype, memory order and shape against expectations, with `None`
/// entries in `shape` matching any size.
pub fn expect(header: &Header, member: &str, descrs: &[&str], shape: &[Option<usize>]) -> Result<()> {
    if !descrs.contains(&header.descr.as_str()) {
        return Err(Error::format(member, format!("dtype {} is not one of {descrs:?}", header.descr)));
    }
    if header.fortran_order {
        return Err(Error::format(member, "fortran_order arrays are not supported"));
    }
    let ok = header.shape.len() == shape.len() && header.shape.iter().zip(shape).all(|(&d, e)| e.is_none_or(|e| e == d));
    if !ok {
        return Err(Error::format(member, format!("shape {:?} does not match {shape:?}", header.shape)));
    }
    Ok(())
}

//! Binary PPM (P6) and PGM (P5) codecs.

use std::path::Path;

use crate::error::{Error, Result};

/// A decoded image: `channels` is 3 for PPM and 1 for PGM.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pnm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub maxval: u16,
    pub data: Vec<u8>,
}

pub fn encode(img: &Pnm) -> Vec<u8> {
    let magic = if img.channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n{}\n", img.width, img.height, img.maxval).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn decode(bytes: &[u8]) -> Result<Pnm> {
    let bad = |what: &str| Error::input(format!("malformed PNM: {what}"));
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?.to_string());
    }
    pos += 1;
    let channels = match fields[0].as_str() {
        "P6" => 3,
        "P5" => 1,
        m => return Err(bad(&format!("unsupported magic {m}"))),
    };
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad(&format!("bad number {s:?}")));
    let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(bad("only 8-bit maxval is supported"));
    }
    let n = width * height * channels;
    let data = bytes.get(pos..pos + n).ok_or_else(|| bad("pixel data truncated"))?.to_vec();
    if data.iter().any(|&v| v as usize > maxval) {
        return Err(bad("sample exceeds maxval"));
    }
    Ok(Pnm { width, height, channels, maxval: maxval as u16, data })
}

pub fn read(path: &Path) -> Result<Pnm> {
    let bytes = std::fs::read(path).map_err(|e| Error::input(format!("cannot read {}: {e}", path.display())))?;
    decode(&bytes).map_err(|e| Error::input(format!("{}: {e}", path.display())))
}

pub fn write(path: &Path, img: &Pnm) -> Result<()> {
    std::fs::write(path, encode(img))?;
    Ok(())
}

//! Shared pieces of the binary checkpoint formats: a magic line, a
//! length-prefixed `key = value` config echo, then little-endian integers and
//! 32-bit float tensors.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};

pub type ConfigEcho = BTreeMap<String, String>;

fn io_err(e: std::io::Error) -> Error {
    Error::Format(e.to_string())
}

/// Fails unless every key of `expected` is stored with the same value.
pub fn check_echo(what: &str, stored: &ConfigEcho, expected: &ConfigEcho) -> Result<()> {
    for (key, want) in expected {
        match stored.get(key) {
            Some(have) if have == want => {}
            Some(have) => {
                return Err(Error::Mismatch(format!(
                    "{what} was built with {key} = {have}, configuration says {want}"
                )))
            }
            None => return Err(Error::Mismatch(format!("{what} does not record {key}"))),
        }
    }
    Ok(())
}

pub(crate) fn write_header<W: Write>(w: &mut W, magic: &str, echo: &ConfigEcho) -> Result<()> {
    let text: String = echo.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    w.write_all(magic.as_bytes()).map_err(io_err)?;
    w.write_all(b"\n").map_err(io_err)?;
    write_u32(w, text.len() as u32)?;
    w.write_all(text.as_bytes()).map_err(io_err)
}

pub(crate) fn read_header<R: Read>(r: &mut R, magic: &str) -> Result<ConfigEcho> {
    let mut head = vec![0u8; magic.len() + 1];
    r.read_exact(&mut head).map_err(io_err)?;
    if &head[..magic.len()] != magic.as_bytes() || head[magic.len()] != b'\n' {
        return Err(Error::Format(format!("missing {magic:?} header")));
    }
    let len = read_u32(r)? as usize;
    let mut text = vec![0u8; len];
    r.read_exact(&mut text).map_err(io_err)?;
    let text = String::from_utf8(text).map_err(|e| Error::Format(e.to_string()))?;
    text.lines()
        .map(|line| {
            line.split_once(" = ")
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::Format(format!("bad config echo line {line:?}")))
        })
        .collect()
}

pub(crate) fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes()).map_err(io_err)
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn write_f32s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for &v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf).map_err(io_err)
}

pub(crate) fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf).map_err(io_err)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

pub(crate) fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(io_err)?;
    if rest.is_empty() {
        Ok(())
    } else {
        Err(Error::Format(format!("{} trailing bytes", rest.len())))
    }
}

/// Rounds every value to the nearest 32-bit float, the precision checkpoints store.
pub(crate) fn round_f32(values: &mut [f64]) {
    for v in values {
        *v = *v as f32 as f64;
    }
}

pub(crate) fn echo_get<T: std::str::FromStr>(echo: &ConfigEcho, key: &str) -> Result<T> {
    echo.get(key)
        .ok_or_else(|| Error::Format(format!("config echo lacks {key:?}")))?
        .parse()
        .map_err(|_| Error::Format(format!("config echo has bad {key:?}")))
}

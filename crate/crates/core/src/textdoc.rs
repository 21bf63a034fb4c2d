//! Line-oriented text documents used to persist models and detector banks.
//!
//! Every line is `key value...`; reals are written with 17 significant
//! digits so parsing restores the exact `f64`. The final line carries a
//! SHA-256 digest of everything above it so truncated or edited files are
//! rejected on load.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Formats a real so that parsing it back yields the identical bits.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Default)]
pub struct DocWriter {
    buf: String,
}

impl DocWriter {
    pub fn new(format: &str, version: u32) -> Self {
        let mut w = DocWriter::default();
        w.line("format", &[format, &version.to_string()]);
        w
    }

    pub fn line(&mut self, key: &str, values: &[&str]) {
        self.buf.push_str(key);
        for v in values {
            self.buf.push(' ');
            self.buf.push_str(v);
        }
        self.buf.push('\n');
    }

    pub fn int(&mut self, key: &str, v: impl std::fmt::Display) {
        let _ = writeln!(self.buf, "{key} {v}");
    }

    pub fn ints(&mut self, key: &str, vs: &[usize]) {
        self.buf.push_str(key);
        for v in vs {
            let _ = write!(self.buf, " {v}");
        }
        self.buf.push('\n');
    }

    pub fn reals(&mut self, key: &str, vs: &[f64]) {
        self.buf.push_str(key);
        for &v in vs {
            self.buf.push(' ');
            self.buf.push_str(&fmt_real(v));
        }
        self.buf.push('\n');
    }

    /// A JSON-quoted string, so names may contain spaces.
    pub fn text(&mut self, key: &str, s: &str) {
        let quoted = serde_json::to_string(s).expect("string serialization cannot fail");
        let _ = writeln!(self.buf, "{key} {quoted}");
    }

    pub fn finish(mut self) -> String {
        let digest = hex_digest(&self.buf);
        let _ = writeln!(self.buf, "checksum {digest}");
        self.buf
    }
}

pub(crate) fn hex_digest(body: &str) -> String {
    Sha256::digest(body.as_bytes())
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

pub struct DocReader<'a> {
    lines: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> DocReader<'a> {
    /// Verifies the trailing checksum and the format header.
    pub fn open(text: &'a str, format: &str, version: u32) -> Result<Self> {
        let body_end = text
            .trim_end_matches('\n')
            .rfind('\n')
            .map(|i| i + 1)
            .ok_or_else(|| Error::Parse {
                line: 1,
                reason: "document is empty or truncated".into(),
            })?;
        let (body, tail) = text.split_at(body_end);
        let tail = tail.trim_end();
        let expected = tail.strip_prefix("checksum ").ok_or_else(|| Error::Parse {
            line: body.lines().count() + 1,
            reason: "missing checksum line (file truncated?)".into(),
        })?;
        if hex_digest(body) != expected {
            return Err(Error::Parse {
                line: body.lines().count() + 1,
                reason: "checksum mismatch (file corrupt or truncated)".into(),
            });
        }
        let lines = body
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| !l.trim().is_empty())
            .collect();
        let mut r = DocReader { lines, pos: 0 };
        let header = r.expect("format")?;
        let (line, vals) = header;
        if vals.len() != 2 || vals[0] != format || vals[1] != version.to_string() {
            return Err(Error::Parse {
                line,
                reason: format!("expected format `{format} {version}`, found `{}`", vals.join(" ")),
            });
        }
        Ok(r)
    }

    pub fn expect(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let (line, text) = *self.lines.get(self.pos).ok_or_else(|| Error::Parse {
            line: self.lines.last().map_or(1, |l| l.0 + 1),
            reason: format!("unexpected end of document, expected `{key}`"),
        })?;
        let mut parts = text.split_whitespace();
        let found = parts.next().unwrap_or("");
        if found != key {
            return Err(Error::Parse {
                line,
                reason: format!("expected `{key}`, found `{found}`"),
            });
        }
        self.pos += 1;
        Ok((line, parts.collect()))
    }

    pub fn int<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let (line, vals) = self.expect(key)?;
        match vals.as_slice() {
            [v] => v.parse().map_err(|_| Error::Parse {
                line,
                reason: format!("`{key}` is not an integer: {v}"),
            }),
            _ => Err(Error::Parse {
                line,
                reason: format!("`{key}` takes exactly one value"),
            }),
        }
    }

    pub fn ints(&mut self, key: &str) -> Result<Vec<usize>> {
        let (line, vals) = self.expect(key)?;
        vals.iter()
            .map(|v| {
                v.parse().map_err(|_| Error::Parse {
                    line,
                    reason: format!("`{key}` entry is not an integer: {v}"),
                })
            })
            .collect()
    }

    pub fn reals(&mut self, key: &str, len: usize) -> Result<Vec<f64>> {
        let (line, vals) = self.expect(key)?;
        if vals.len() != len {
            return Err(Error::Parse {
                line,
                reason: format!("`{key}` expected {len} values, found {}", vals.len()),
            });
        }
        vals.iter()
            .map(|v| match v.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => Err(Error::Parse {
                    line,
                    reason: format!("`{key}` entry is not a finite real: {v}"),
                }),
            })
            .collect()
    }

    pub fn text(&mut self, key: &str) -> Result<String> {
        let (line, _) = self.expect(key)?;
        let raw = self.lines[self.pos - 1].1[key.len()..].trim();
        serde_json::from_str(raw).map_err(|e| Error::Parse {
            line,
            reason: format!("`{key}` is not a quoted string: {e}"),
        })
    }

    pub fn finish(self) -> Result<()> {
        match self.lines.get(self.pos) {
            None => Ok(()),
            Some(&(line, text)) => Err(Error::Parse {
                line,
                reason: format!("unexpected trailing content: {text}"),
            }),
        }
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Re-labels a parse error as a restore error for `path`.
pub fn restore_err(path: &Path, err: Error) -> Error {
    match err {
        Error::Io { .. } => err,
        other => Error::Restore {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    }
}

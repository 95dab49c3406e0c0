//! Model files.
//!
//! A short text header (dimensions, toggles, hyperparameters) is followed by
//! the raw little-endian `f64` blocks and the user/item id maps. Floats in the
//! header use the shortest round-trip representation, so saving a loaded
//! model reproduces the original bytes.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::model::{Factors, Hyperparams, ModelState, Toggles};

const MAGIC: &str = "rme-model v1";
const END: &str = "end";

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("not a model file (bad magic line)")]
    BadMagic,
    #[error("malformed header line {line}: {reason}")]
    Header { line: usize, reason: String },
    #[error("truncated model file")]
    Truncated,
    #[error("invalid id string: {0}")]
    InvalidId(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Everything needed to reuse a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub state: ModelState,
    pub hyperparams: Hyperparams,
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
}

fn flag(b: bool) -> u8 {
    b as u8
}

fn write_header<W: Write>(w: &mut W, f: &ModelFile) -> io::Result<()> {
    let s = &f.state;
    let h = &f.hyperparams;
    let t = s.toggles;
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "m {}", s.n_users())?;
    writeln!(w, "n {}", s.n_items())?;
    writeln!(w, "k {}", s.k())?;
    writeln!(
        w,
        "toggles {} {} {}",
        flag(t.liked_items),
        flag(t.disliked_items),
        flag(t.users)
    )?;
    writeln!(w, "lambda_factor {:?}", h.lambda_factor)?;
    writeln!(w, "lambda_context {:?}", h.lambda_context)?;
    writeln!(w, "scale {:?}", h.scale)?;
    writeln!(w, "confidence {:?}", h.confidence)?;
    writeln!(w, "w_liked_cooccur {:?}", h.w_liked_cooccur)?;
    writeln!(w, "w_disliked_cooccur {:?}", h.w_disliked_cooccur)?;
    writeln!(w, "w_user_cooccur {:?}", h.w_user_cooccur)?;
    writeln!(w, "shift {:?}", h.shift)?;
    writeln!(w, "max_sweeps {}", h.max_sweeps)?;
    writeln!(w, "patience {}", h.patience)?;
    writeln!(w, "seed {}", h.seed)?;
    writeln!(w, "{END}")
}

fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn write_ids<W: Write>(w: &mut W, ids: &[String]) -> io::Result<()> {
    w.write_all(&(ids.len() as u64).to_le_bytes())?;
    for id in ids {
        w.write_all(&(id.len() as u32).to_le_bytes())?;
        w.write_all(id.as_bytes())?;
    }
    Ok(())
}

pub fn save<W: Write>(mut w: W, f: &ModelFile) -> io::Result<()> {
    write_header(&mut w, f)?;
    let s = &f.state;
    for block in [&s.users, &s.items, &s.liked_contexts, &s.disliked_contexts, &s.user_contexts] {
        write_f64s(&mut w, block.as_slice())?;
    }
    for bias in [
        &s.liked_item_bias,
        &s.liked_context_bias,
        &s.disliked_item_bias,
        &s.disliked_context_bias,
        &s.user_bias,
        &s.user_context_bias,
    ] {
        write_f64s(&mut w, bias)?;
    }
    write_ids(&mut w, &f.user_ids)?;
    write_ids(&mut w, &f.item_ids)?;
    w.flush()
}

pub fn save_path(path: &Path, f: &ModelFile) -> io::Result<()> {
    save(BufWriter::new(File::create(path)?), f)
}

struct Header {
    lines: Vec<String>,
    pos: usize,
}

impl Header {
    fn next(&mut self, key: &str) -> Result<String, PersistError> {
        let line = self.pos + 1;
        let raw = self.lines.get(self.pos).ok_or(PersistError::Truncated)?;
        self.pos += 1;
        match raw.split_once(' ') {
            Some((k, v)) if k == key => Ok(v.to_string()),
            _ => Err(PersistError::Header {
                line,
                reason: format!("expected `{key}`, found `{raw}`"),
            }),
        }
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, PersistError> {
        let line = self.pos + 1;
        let v = self.next(key)?;
        v.parse().map_err(|_| PersistError::Header {
            line,
            reason: format!("bad value `{v}` for `{key}`"),
        })
    }
}

fn read_line<R: BufRead>(r: &mut R) -> Result<String, PersistError> {
    let mut s = String::new();
    if r.read_line(&mut s)? == 0 {
        return Err(PersistError::Truncated);
    }
    Ok(s.trim_end_matches('\n').to_string())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), PersistError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => PersistError::Truncated,
        _ => PersistError::Io(e),
    })
}

fn read_f64s<R: Read>(r: &mut R, len: usize) -> Result<Vec<f64>, PersistError> {
    let mut out = Vec::with_capacity(len);
    let mut b = [0u8; 8];
    for _ in 0..len {
        read_exact(r, &mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

fn read_ids<R: Read>(r: &mut R) -> Result<Vec<String>, PersistError> {
    let mut b8 = [0u8; 8];
    read_exact(r, &mut b8)?;
    let count = u64::from_le_bytes(b8) as usize;
    let mut ids = Vec::with_capacity(count.min(1 << 20));
    let mut b4 = [0u8; 4];
    for _ in 0..count {
        read_exact(r, &mut b4)?;
        let mut s = vec![0u8; u32::from_le_bytes(b4) as usize];
        read_exact(r, &mut s)?;
        ids.push(String::from_utf8(s).map_err(|e| PersistError::InvalidId(e.to_string()))?);
    }
    Ok(ids)
}

pub fn load<R: Read>(r: R) -> Result<ModelFile, PersistError> {
    let mut r = BufReader::new(r);
    if read_line(&mut r)? != MAGIC {
        return Err(PersistError::BadMagic);
    }
    let mut lines = Vec::new();
    loop {
        let line = read_line(&mut r)?;
        if line == END {
            break;
        }
        lines.push(line);
    }
    let mut h = Header { lines, pos: 0 };
    let m: usize = h.parse("m")?;
    let n: usize = h.parse("n")?;
    let k: usize = h.parse("k")?;
    let flags: Vec<String> = h.next("toggles")?.split(' ').map(str::to_string).collect();
    let bit = |i: usize| -> Result<bool, PersistError> {
        match flags.get(i).map(String::as_str) {
            Some("0") => Ok(false),
            Some("1") => Ok(true),
            _ => Err(PersistError::Header {
                line: 5,
                reason: "toggles must be three 0/1 flags".into(),
            }),
        }
    };
    let toggles = Toggles {
        liked_items: bit(0)?,
        disliked_items: bit(1)?,
        users: bit(2)?,
    };
    let hyperparams = Hyperparams {
        k,
        lambda_factor: h.parse("lambda_factor")?,
        lambda_context: h.parse("lambda_context")?,
        scale: h.parse("scale")?,
        confidence: h.parse("confidence")?,
        w_liked_cooccur: h.parse("w_liked_cooccur")?,
        w_disliked_cooccur: h.parse("w_disliked_cooccur")?,
        w_user_cooccur: h.parse("w_user_cooccur")?,
        shift: h.parse("shift")?,
        max_sweeps: h.parse("max_sweeps")?,
        patience: h.parse("patience")?,
        seed: h.parse("seed")?,
        toggles,
    };
    if h.pos != h.lines.len() {
        return Err(PersistError::Header {
            line: h.pos + 1,
            reason: "unexpected extra header line".into(),
        });
    }

    let mut factors = |rows: usize| read_f64s(&mut r, rows * k).map(|d| Factors::from_vec(rows, k, d));
    let users = factors(m)?;
    let items = factors(n)?;
    let liked_contexts = factors(n)?;
    let disliked_contexts = factors(n)?;
    let user_contexts = factors(m)?;
    let state = ModelState {
        users,
        items,
        liked_contexts,
        disliked_contexts,
        user_contexts,
        liked_item_bias: read_f64s(&mut r, n)?,
        liked_context_bias: read_f64s(&mut r, n)?,
        disliked_item_bias: read_f64s(&mut r, n)?,
        disliked_context_bias: read_f64s(&mut r, n)?,
        user_bias: read_f64s(&mut r, m)?,
        user_context_bias: read_f64s(&mut r, m)?,
        toggles,
    };
    let user_ids = read_ids(&mut r)?;
    let item_ids = read_ids(&mut r)?;
    if user_ids.len() != m || item_ids.len() != n {
        return Err(PersistError::InvalidId(format!(
            "expected {m} user and {n} item ids, found {} and {}",
            user_ids.len(),
            item_ids.len()
        )));
    }
    Ok(ModelFile {
        state,
        hyperparams,
        user_ids,
        item_ids,
    })
}

pub fn load_path(path: &Path) -> Result<ModelFile, PersistError> {
    load(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ModelFile {
        let hp = Hyperparams {
            k: 3,
            lambda_factor: 0.1,
            seed: 42,
            ..Hyperparams::default()
        };
        ModelFile {
            state: ModelState::init(4, 5, 3, Toggles::ALL, 9),
            hyperparams: hp,
            user_ids: (0..4).map(|u| format!("user {u}")).collect(),
            item_ids: (0..5).map(|p| format!("ítem{p}")).collect(),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let f = sample();
        let mut a = Vec::new();
        save(&mut a, &f).unwrap();
        let g = load(a.as_slice()).unwrap();
        assert_eq!(f, g);
        let mut b = Vec::new();
        save(&mut b, &g).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn truncation_and_bad_magic_are_errors() {
        let mut a = Vec::new();
        save(&mut a, &sample()).unwrap();
        assert!(matches!(load(&a[..a.len() - 3]), Err(PersistError::Truncated)));
        assert!(matches!(load(&b"garbage\n"[..]), Err(PersistError::BadMagic)));
    }
}

//! Weight files: a text manifest followed by little-endian `f32` payloads.
//!
//! ```text
//! cliffsynth-weights 1
//! h=64
//! rounds=2
//! tensors=41
//! embed 32 64
//! node.w1 331 128
//! ...
//! end
//! <payloads in manifest order>
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::params::{Layout, PolicyWeights, NUM_KEYS};

const MAGIC: &str = "cliffsynth-weights 1";

pub fn write_weights<W: Write>(w: &PolicyWeights<f32>, mut out: W) -> Result<()> {
    let layout = w.layout();
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "h={}", layout.h)?;
    writeln!(out, "rounds={}", layout.rounds)?;
    writeln!(out, "tensors={}", layout.tensors.len())?;
    for t in &layout.tensors {
        let dims: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
        writeln!(out, "{} {}", t.name, dims.join(" "))?;
    }
    writeln!(out, "end")?;
    let mut buf = Vec::with_capacity(w.num_params() * 4);
    for v in w.params() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

fn header_line<R: BufRead>(r: &mut R) -> Result<String> {
    let mut line = String::new();
    if r.read_line(&mut line)? == 0 {
        return Err(Error::Format("truncated weight manifest".into()));
    }
    Ok(line.trim_end_matches(['\n', '\r']).to_string())
}

fn header_value<R: BufRead>(r: &mut R, key: &str) -> Result<usize> {
    let line = header_line(r)?;
    line.strip_prefix(key)
        .and_then(|s| s.strip_prefix('='))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format(format!("expected `{key}=<int>`, found `{line}`")))
}

pub fn read_weights<R: Read>(input: R) -> Result<PolicyWeights<f32>> {
    let mut r = BufReader::new(input);
    if header_line(&mut r)? != MAGIC {
        return Err(Error::Format("not a weight file".into()));
    }
    let h = header_value(&mut r, "h")?;
    let rounds = header_value(&mut r, "rounds")?;
    let count = header_value(&mut r, "tensors")?;
    if h == 0 {
        return Err(Error::Format("hidden width must be positive".into()));
    }
    let layout = Layout::new(h, rounds);
    if count != layout.tensors.len() {
        return Err(Error::Format(format!(
            "expected {} tensors for h={h} rounds={rounds}, manifest lists {count}",
            layout.tensors.len()
        )));
    }
    for spec in &layout.tensors {
        let line = header_line(&mut r)?;
        let mut parts = line.split_whitespace();
        let name = parts.next().unwrap_or("");
        if name != spec.name {
            return Err(Error::Format(format!("expected tensor `{}`, found `{name}`", spec.name)));
        }
        let shape: Vec<usize> = parts
            .map(|p| p.parse().map_err(|_| Error::Format(format!("bad dimension `{p}` in `{name}`"))))
            .collect::<Result<_>>()?;
        if name == "embed" && shape.first() != Some(&NUM_KEYS) {
            return Err(Error::Format(format!(
                "embedding table must have {NUM_KEYS} rows, found {:?}",
                shape.first()
            )));
        }
        if shape != spec.shape {
            return Err(Error::Format(format!(
                "tensor `{name}` has shape {shape:?}, expected {:?}",
                spec.shape
            )));
        }
    }
    if header_line(&mut r)? != "end" {
        return Err(Error::Format("manifest missing `end`".into()));
    }
    let mut bytes = vec![0u8; layout.total * 4];
    r.read_exact(&mut bytes).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("truncated weight payload".into()),
        _ => Error::Io(e),
    })?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after weight payload".into()));
    }
    let params: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(PolicyWeights::from_parts(layout, params))
}

/// Writes through a temporary sibling and renames into place.
pub fn save_weights(w: &PolicyWeights<f32>, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let f = fs::File::create(&tmp)?;
        write_weights(w, std::io::BufWriter::new(f))?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<PolicyWeights<f32>> {
    read_weights(fs::File::open(path)?)
}

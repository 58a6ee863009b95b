//! Text formats for tableaus and circuits.
//!
//! ```text
//! # family=walk n=2 d=4 seed=7 count=2
//! TABLEAU n=2
//! 1001
//! 0110
//! 0010
//! 0001
//!
//! TABLEAU n=2
//! ...
//! ```
//!
//! ```text
//! CIRCUIT n=2
//! h 0
//! cz 0 1
//! ```

use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::f2linalg::BitMatrix;
use crate::search::ImportedGate;
use crate::tableau::{Circuit, Gate, Tableau};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Walk,
    Uniform,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Walk => "walk",
            Family::Uniform => "uniform",
        })
    }
}

/// The `# family=... n=... d=... seed=... count=...` comment of a target batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchHeader {
    pub family: Family,
    pub n: usize,
    /// Walk difficulty; absent for uniform batches.
    pub d: Option<f64>,
    pub seed: u64,
    pub count: usize,
}

impl fmt::Display for BatchHeader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = self.d.map(|d| d.to_string()).unwrap_or_else(|| "-".into());
        write!(
            f,
            "# family={} n={} d={} seed={} count={}",
            self.family, self.n, d, self.seed, self.count
        )
    }
}

fn format_err(line: usize, msg: impl fmt::Display) -> Error {
    Error::Format(format!("line {line}: {msg}"))
}

impl BatchHeader {
    fn parse(line: &str, lineno: usize) -> Result<Self> {
        let body = line.trim_start_matches('#').trim();
        let (mut family, mut n, mut d, mut seed, mut count) = (None, None, None, None, None);
        for field in body.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| format_err(lineno, format!("bad header field `{field}`")))?;
            let bad = || format_err(lineno, format!("bad value `{v}` for `{k}`"));
            match k {
                "family" => {
                    family = Some(match v {
                        "walk" => Family::Walk,
                        "uniform" => Family::Uniform,
                        _ => return Err(bad()),
                    })
                }
                "n" => n = Some(v.parse().map_err(|_| bad())?),
                "d" => d = if v == "-" { None } else { Some(v.parse().map_err(|_| bad())?) },
                "seed" => seed = Some(v.parse().map_err(|_| bad())?),
                "count" => count = Some(v.parse().map_err(|_| bad())?),
                _ => return Err(format_err(lineno, format!("unknown header field `{k}`"))),
            }
        }
        let missing = |k: &str| format_err(lineno, format!("header lacks `{k}`"));
        Ok(Self {
            family: family.ok_or_else(|| missing("family"))?,
            n: n.ok_or_else(|| missing("n"))?,
            d,
            seed: seed.ok_or_else(|| missing("seed"))?,
            count: count.ok_or_else(|| missing("count"))?,
        })
    }
}

fn parse_size(line: &str, tag: &str, lineno: usize) -> Result<usize> {
    let rest = line
        .strip_prefix(tag)
        .and_then(|s| s.trim().strip_prefix("n="))
        .ok_or_else(|| format_err(lineno, format!("expected `{tag} n=<n>`, found `{line}`")))?;
    let n: usize = rest
        .trim()
        .parse()
        .map_err(|_| format_err(lineno, format!("bad qubit count `{rest}`")))?;
    if n == 0 {
        return Err(format_err(lineno, "qubit count must be positive"));
    }
    Ok(n)
}

pub fn format_tableau(t: &Tableau) -> String {
    let d = 2 * t.n();
    let mut s = format!("TABLEAU n={}\n", t.n());
    for r in 0..d {
        for c in 0..d {
            s.push(if t.matrix().get(r, c) { '1' } else { '0' });
        }
        s.push('\n');
    }
    s
}

/// Records separated by one blank line, optionally preceded by a header.
pub fn format_tableaus(header: Option<&BatchHeader>, ts: &[Tableau]) -> String {
    let mut s = String::new();
    if let Some(h) = header {
        let _ = writeln!(s, "{h}");
    }
    for (k, t) in ts.iter().enumerate() {
        if k > 0 {
            s.push('\n');
        }
        s.push_str(&format_tableau(t));
    }
    s
}

/// Parses a tableau file. Comment lines other than the batch header are
/// ignored. Matrices that are not symplectic are rejected as format errors.
pub fn parse_tableaus(text: &str) -> Result<(Option<BatchHeader>, Vec<Tableau>)> {
    let mut header = None;
    let mut out = Vec::new();
    let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l.trim_end()));
    while let Some((lineno, line)) = lines.next() {
        if line.trim().is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if line.contains("family=") {
                if header.is_some() {
                    return Err(format_err(lineno, "duplicate batch header"));
                }
                header = Some(BatchHeader::parse(line, lineno)?);
            }
            continue;
        }
        let n = parse_size(line, "TABLEAU", lineno)?;
        let d = 2 * n;
        let mut rows = Vec::with_capacity(d);
        for _ in 0..d {
            let (ln, row) = lines
                .next()
                .ok_or_else(|| format_err(lineno, format!("tableau needs {d} rows")))?;
            if row.len() != d {
                return Err(format_err(ln, format!("row must have {d} characters, has {}", row.len())));
            }
            let bits = row
                .bytes()
                .map(|b| match b {
                    b'0' => Ok(0u8),
                    b'1' => Ok(1u8),
                    _ => Err(format_err(ln, format!("unexpected character `{}`", b as char))),
                })
                .collect::<Result<Vec<u8>>>()?;
            rows.push(bits);
        }
        let m = BitMatrix::from_rows(&rows)?;
        let t = Tableau::from_matrix(m)
            .map_err(|_| format_err(lineno, "matrix is not symplectic"))?;
        out.push(t);
    }
    if let Some(h) = &header {
        if h.count != out.len() {
            return Err(Error::Format(format!(
                "header announces {} tableaus, file has {}",
                h.count,
                out.len()
            )));
        }
        if out.iter().any(|t| t.n() != h.n) {
            return Err(Error::Format(format!("header says n={}, a record differs", h.n)));
        }
    }
    Ok((header, out))
}

pub fn format_circuit(c: &Circuit) -> String {
    let mut s = format!("CIRCUIT n={}\n", c.n());
    for g in c.gates() {
        let _ = writeln!(s, "{g}");
    }
    s
}

fn parse_index(tok: Option<&str>, n: usize, lineno: usize) -> Result<usize> {
    let tok = tok.ok_or_else(|| format_err(lineno, "missing qubit index"))?;
    let i: usize = tok
        .parse()
        .map_err(|_| format_err(lineno, format!("bad qubit index `{tok}`")))?;
    if i >= n {
        return Err(format_err(lineno, format!("qubit {i} out of range for n={n}")));
    }
    Ok(i)
}

fn parse_gate_lines(text: &str) -> Result<(usize, Vec<(usize, ImportedGate)>)> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let (lineno, first) = lines.next().ok_or_else(|| Error::Format("empty circuit file".into()))?;
    let n = parse_size(first, "CIRCUIT", lineno)?;
    let mut gates = Vec::new();
    for (lineno, line) in lines {
        let mut toks = line.split_whitespace();
        let name = toks.next().unwrap_or("");
        let one = |toks: &mut std::str::SplitWhitespace<'_>| parse_index(toks.next(), n, lineno);
        let two = |toks: &mut std::str::SplitWhitespace<'_>| -> Result<(usize, usize)> {
            let i = parse_index(toks.next(), n, lineno)?;
            let j = parse_index(toks.next(), n, lineno)?;
            if i == j {
                return Err(format_err(lineno, "two-qubit gate needs distinct qubits"));
            }
            Ok((i, j))
        };
        let g = match name {
            "h" => ImportedGate::H(one(&mut toks)?),
            "s" => ImportedGate::S(one(&mut toks)?),
            "sdg" => ImportedGate::Sdg(one(&mut toks)?),
            "x" => ImportedGate::X(one(&mut toks)?),
            "y" => ImportedGate::Y(one(&mut toks)?),
            "z" => ImportedGate::Z(one(&mut toks)?),
            "cz" => {
                let (i, j) = two(&mut toks)?;
                ImportedGate::Cz(i, j)
            }
            "cx" => {
                let (i, j) = two(&mut toks)?;
                ImportedGate::Cx(i, j)
            }
            "swap" => {
                let (i, j) = two(&mut toks)?;
                ImportedGate::Swap(i, j)
            }
            _ => return Err(format_err(lineno, format!("unknown gate `{name}`"))),
        };
        if toks.next().is_some() {
            return Err(format_err(lineno, "trailing tokens"));
        }
        gates.push((lineno, g));
    }
    Ok((n, gates))
}

/// Parses a native circuit: only `h`, `s` and `cz` are allowed.
pub fn parse_circuit(text: &str) -> Result<Circuit> {
    let (n, gates) = parse_gate_lines(text)?;
    let native = gates
        .into_iter()
        .map(|(lineno, g)| match g {
            ImportedGate::H(i) => Ok(Gate::H(i)),
            ImportedGate::S(i) => Ok(Gate::S(i)),
            ImportedGate::Cz(i, j) => Gate::cz(i, j),
            other => Err(format_err(
                lineno,
                format!("{other:?} is accepted only for cost accounting"),
            )),
        })
        .collect::<Result<Vec<_>>>()?;
    Circuit::from_gates(n, native)
}

/// Parses a circuit that may also use `cx`, `swap`, `x`, `y`, `z`, `sdg`.
pub fn parse_imported_circuit(text: &str) -> Result<(usize, Vec<ImportedGate>)> {
    let (n, gates) = parse_gate_lines(text)?;
    Ok((n, gates.into_iter().map(|(_, g)| g).collect()))
}

/// Writes through a temporary sibling and renames into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_tableau_file(path: &Path) -> Result<(Option<BatchHeader>, Vec<Tableau>)> {
    parse_tableaus(&fs::read_to_string(path)?)
}

pub fn read_circuit_file(path: &Path) -> Result<Circuit> {
    parse_circuit(&fs::read_to_string(path)?)
}

//! Text checkpoint format.
//!
//! ```text
//! kdlnet-v1
//! arch (2,4)|(8,8)|(1,1)
//! activations tanh tanh linear
//! combine activate-each
//! seed 42
//! W_L 0 0 4 8
//! <rows·cols entries, column-major, 17 significant digits>
//! ...
//! ```
//!
//! Every parameter matrix appears as a tag line `<name> <layer> <indices...>
//! <rows> <cols>` followed by one line of entries, in the order produced by
//! [`Layer::visit`](crate::net::Layer::visit).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matlin::Matrix;
use crate::net::{Activations, ArchSpec, Network};

pub const MAGIC: &str = "kdlnet-v1";

/// Serializes a network to the checkpoint text format.
pub fn to_string(net: &Network) -> String {
    let mut out = String::new();
    let a = net.acts;
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "arch {}", net.spec);
    let _ = writeln!(out, "activations {} {} {}", a.phi1, a.phi2, a.phi_out);
    let _ = writeln!(out, "combine {}", net.combine);
    let _ = writeln!(out, "seed {}", net.seed);
    for (l, layer) in net.layers.iter().enumerate() {
        layer.visit(|tag, _, m| {
            let _ = write!(out, "{} {l}", tag.name);
            for i in &tag.index {
                let _ = write!(out, " {i}");
            }
            let _ = writeln!(out, " {} {}", m.rows(), m.cols());
            let mut first = true;
            for v in m.as_slice() {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{v:.16e}");
            }
            out.push('\n');
        });
    }
    out
}

struct Lines<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<(u64, &'a str)> {
        if self.pos >= self.text.len() {
            return Err(Error::Format {
                offset: self.pos as u64,
                detail: format!("unexpected end of checkpoint, expected {what}"),
            });
        }
        let start = self.pos;
        let rest = &self.text[start..];
        let end = rest.find('\n').map_or(rest.len(), |i| i);
        self.pos = start + end + 1;
        Ok((start as u64, rest[..end].trim_end_matches('\r')))
    }

    fn keyed(&mut self, key: &str) -> Result<(u64, &'a str)> {
        let (off, line) = self.next(key)?;
        match line.strip_prefix(key).and_then(|r| r.strip_prefix(' ')) {
            Some(v) => Ok((off, v.trim())),
            None => Err(Error::Format {
                offset: off,
                detail: format!("expected '{key} ...' line"),
            }),
        }
    }
}

fn format_err(offset: u64, detail: impl Into<String>) -> Error {
    Error::Format {
        offset,
        detail: detail.into(),
    }
}

/// Parses the checkpoint text format.
pub fn from_str(text: &str) -> Result<Network> {
    let mut lines = Lines { text, pos: 0 };
    let (off, magic) = lines.next("header")?;
    if magic.trim() != MAGIC {
        return Err(format_err(off, format!("expected header '{MAGIC}'")));
    }
    let (off, arch) = lines.keyed("arch")?;
    let spec = ArchSpec::parse(arch).map_err(|e| format_err(off, format!("bad architecture: {e}")))?;
    let (off, acts) = lines.keyed("activations")?;
    let names: Vec<&str> = acts.split_whitespace().collect();
    if names.len() != 3 {
        return Err(format_err(off, "expected three activation names"));
    }
    let parse_act = |s: &str| s.parse().map_err(|e| format_err(off, format!("{e}")));
    let acts = Activations {
        phi1: parse_act(names[0])?,
        phi2: parse_act(names[1])?,
        phi_out: parse_act(names[2])?,
    };
    let (off, combine) = lines.keyed("combine")?;
    let combine = combine.parse().map_err(|e| format_err(off, format!("{e}")))?;
    let (off, seed) = lines.keyed("seed")?;
    let seed = seed
        .parse::<u64>()
        .map_err(|_| format_err(off, "seed must be an unsigned integer"))?;

    let mut net = Network::zeros(&spec, acts, combine)?;
    net.seed = seed;
    for (l, layer) in net.layers.iter_mut().enumerate() {
        let mut tags = Vec::new();
        layer.visit(|tag, _, m| tags.push((tag, m.shape())));
        for ((tag, (rows, cols)), dst) in tags.into_iter().zip(layer.params_mut()) {
            let mut expect = format!("{} {l}", tag.name);
            for i in &tag.index {
                let _ = write!(expect, " {i}");
            }
            let _ = write!(expect, " {rows} {cols}");
            let (off, line) = lines.next(&expect)?;
            if line.split_whitespace().ne(expect.split_whitespace()) {
                return Err(format_err(off, format!("expected tag line '{expect}', found '{line}'")));
            }
            let (off, values) = lines.next("matrix entries")?;
            let data = values
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| format_err(off, format!("bad number: {e}")))?;
            if data.len() != rows * cols {
                return Err(format_err(
                    off,
                    format!("expected {} entries, found {}", rows * cols, data.len()),
                ));
            }
            *dst = Matrix::from_col_major(rows, cols, data).map_err(|_| format_err(off, "non-finite entry"))?;
        }
    }
    if let Ok((off, line)) = lines.next("end") {
        if !line.trim().is_empty() {
            return Err(format_err(off, "trailing content after last matrix"));
        }
    }
    Ok(net)
}

pub fn save(net: &Network, path: &Path) -> Result<()> {
    fs::write(path, to_string(net)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Network> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str(&text)
}

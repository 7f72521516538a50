//! Text formats for symbol correspondences.
//!
//! Discovered tables carry one line per source symbol:
//!
//! ```text
//! # source_digest <hex>
//! # target_digest <hex>
//! # threshold 0.4
//! s00	t03	0.91
//! s01	NONE
//! ```
//!
//! Handcrafted tables are `src<TAB>tgt` lines with `#` comments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inventory::SymbolInventory;

pub const NONE_MARKER: &str = "NONE";

/// One `src -> tgt` line of a pair file, with its 1-based line number.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairLine {
    pub source: usize,
    pub target: usize,
    pub line: usize,
}

fn lookup(inv: &SymbolInventory, symbol: &str, side: &str, line: usize) -> Result<usize> {
    inv.index_of(symbol).ok_or_else(|| Error::Parse {
        line,
        message: format!("unknown {side} symbol `{symbol}`"),
    })
}

/// Non-comment, non-empty lines with their 1-based numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
}

/// Parses `src<TAB>tgt` lines. Does not check for conflicts.
pub fn parse_pairs(text: &str, source: &SymbolInventory, target: &SymbolInventory) -> Result<Vec<PairLine>> {
    let mut out = Vec::new();
    for (line, content) in content_lines(text) {
        let fields: Vec<&str> = content.split('\t').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected `source<TAB>target`, found {} field(s)", fields.len()),
            });
        }
        out.push(PairLine {
            source: lookup(source, fields[0], "source", line)?,
            target: lookup(target, fields[1], "target", line)?,
            line,
        });
    }
    Ok(out)
}

pub fn write_pairs(pairs: &[(usize, usize)], source: &SymbolInventory, target: &SymbolInventory) -> String {
    let mut out = String::new();
    for &(i, j) in pairs {
        out.push_str(&source.symbols()[i]);
        out.push('\t');
        out.push_str(&target.symbols()[j]);
        out.push('\n');
    }
    out
}

/// A user-supplied correspondence; must be one-to-one.
#[derive(Clone, Debug, PartialEq)]
pub struct HandcraftedTable {
    pairs: Vec<(usize, usize)>,
    source_digest: String,
    target_digest: String,
}

impl HandcraftedTable {
    pub fn new(mut pairs: Vec<(usize, usize)>, source: &SymbolInventory, target: &SymbolInventory) -> Result<Self> {
        let mut by_source = vec![None; source.len()];
        let mut by_target = vec![None; target.len()];
        for &(i, j) in &pairs {
            if i >= source.len() || j >= target.len() {
                return Err(Error::invalid(format!("pair ({i}, {j}) outside the inventories")));
            }
            if let Some(prev) = by_target[j].replace(i) {
                return Err(Error::invalid(format!(
                    "target `{}` is claimed by both `{}` and `{}`",
                    target.symbols()[j],
                    source.symbols()[prev],
                    source.symbols()[i]
                )));
            }
            if by_source[i].replace(j).is_some() {
                return Err(Error::invalid(format!(
                    "source `{}` is listed more than once",
                    source.symbols()[i]
                )));
            }
        }
        pairs.sort_unstable();
        Ok(Self {
            pairs,
            source_digest: source.digest(),
            target_digest: target.digest(),
        })
    }

    pub fn parse(text: &str, source: &SymbolInventory, target: &SymbolInventory) -> Result<Self> {
        let lines = parse_pairs(text, source, target)?;
        // Re-run the conflict checks line by line so the error can point at the file.
        let mut seen_src = vec![0usize; source.len()];
        let mut seen_tgt = vec![0usize; target.len()];
        for p in &lines {
            if seen_tgt[p.target] != 0 {
                return Err(Error::invalid(format!(
                    "line {}: target `{}` already mapped on line {}",
                    p.line,
                    target.symbols()[p.target],
                    seen_tgt[p.target]
                )));
            }
            if seen_src[p.source] != 0 {
                return Err(Error::invalid(format!(
                    "line {}: source `{}` already mapped on line {}",
                    p.line,
                    source.symbols()[p.source],
                    seen_src[p.source]
                )));
            }
            seen_tgt[p.target] = p.line;
            seen_src[p.source] = p.line;
        }
        Self::new(lines.iter().map(|p| (p.source, p.target)).collect(), source, target)
    }

    pub fn load(path: impl AsRef<std::path::Path>, source: &SymbolInventory, target: &SymbolInventory) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, source, target)
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn source_digest(&self) -> &str {
        &self.source_digest
    }

    pub fn target_digest(&self) -> &str {
        &self.target_digest
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MappingEntry {
    pub target: usize,
    pub confidence: f64,
}

/// Result of probing: for each source symbol, a target and its probability,
/// or nothing when the best target did not clear the threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct MappingTable {
    entries: Vec<Option<MappingEntry>>,
    threshold: f64,
    source_digest: String,
    target_digest: String,
}

impl MappingTable {
    pub fn new(
        entries: Vec<Option<MappingEntry>>,
        threshold: f64,
        source: &SymbolInventory,
        target: &SymbolInventory,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&threshold) {
            return Err(Error::invalid(format!("threshold must be in [0, 1), got {threshold}")));
        }
        if entries.len() != source.len() {
            return Err(Error::invalid(format!(
                "{} entries for {} source symbols",
                entries.len(),
                source.len()
            )));
        }
        for (i, e) in entries.iter().enumerate() {
            if let Some(e) = e {
                if e.target >= target.len() {
                    return Err(Error::invalid(format!("entry {i} points outside the target inventory")));
                }
                if !(e.confidence > threshold && e.confidence <= 1.0) {
                    return Err(Error::invalid(format!(
                        "entry {i} has confidence {} outside ({threshold}, 1]",
                        e.confidence
                    )));
                }
            }
        }
        Ok(Self {
            entries,
            threshold,
            source_digest: source.digest(),
            target_digest: target.digest(),
        })
    }

    pub fn entries(&self) -> &[Option<MappingEntry>] {
        &self.entries
    }

    pub fn get(&self, source: usize) -> Option<MappingEntry> {
        self.entries.get(source).copied().flatten()
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn source_digest(&self) -> &str {
        &self.source_digest
    }

    pub fn target_digest(&self) -> &str {
        &self.target_digest
    }

    /// Present entries as `(source, target)`.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.entries
            .iter()
            .enumerate()
            .filter_map(|(i, e)| e.map(|e| (i, e.target)))
            .collect()
    }

    pub fn n_predicted(&self) -> usize {
        self.entries.iter().flatten().count()
    }

    /// The table a higher threshold would have produced.
    pub fn with_threshold(&self, threshold: f64) -> Result<Self> {
        if !(self.threshold..1.0).contains(&threshold) {
            return Err(Error::invalid(format!(
                "can only raise the threshold from {} (asked for {threshold})",
                self.threshold
            )));
        }
        Ok(Self {
            entries: self
                .entries
                .iter()
                .map(|e| e.filter(|e| e.confidence > threshold))
                .collect(),
            threshold,
            source_digest: self.source_digest.clone(),
            target_digest: self.target_digest.clone(),
        })
    }

    pub fn check_inventories(&self, source: &SymbolInventory, target: &SymbolInventory) -> Result<()> {
        if self.source_digest != source.digest() || self.target_digest != target.digest() {
            return Err(Error::Integrity(
                "mapping table was produced for different inventories".into(),
            ));
        }
        Ok(())
    }

    /// Text form; `extra_headers` become additional `# key value` lines.
    pub fn to_text(&self, source: &SymbolInventory, target: &SymbolInventory, extra_headers: &[(&str, &str)]) -> Result<String> {
        self.check_inventories(source, target)?;
        let mut out = format!(
            "# source_digest {}\n# target_digest {}\n# threshold {}\n",
            self.source_digest, self.target_digest, self.threshold
        );
        for (k, v) in extra_headers {
            out.push_str(&format!("# {k} {v}\n"));
        }
        for (i, e) in self.entries.iter().enumerate() {
            let src = &source.symbols()[i];
            match e {
                Some(e) => out.push_str(&format!("{src}\t{}\t{}\n", target.symbols()[e.target], e.confidence)),
                None => out.push_str(&format!("{src}\t{NONE_MARKER}\n")),
            }
        }
        Ok(out)
    }

    /// Parses the text form. Digest headers, when present, must match; a
    /// missing confidence reads as 1 and a missing source line as unmapped.
    pub fn from_text(text: &str, source: &SymbolInventory, target: &SymbolInventory) -> Result<Self> {
        let mut threshold = 0.0;
        for (k, raw) in text.lines().enumerate() {
            let Some(header) = raw.strip_prefix('#') else { continue };
            let mut parts = header.split_whitespace();
            let (Some(key), Some(value)) = (parts.next(), parts.next()) else { continue };
            match key {
                "source_digest" if value != source.digest() => {
                    return Err(Error::Integrity("mapping table source inventory digest mismatch".into()))
                }
                "target_digest" if value != target.digest() => {
                    return Err(Error::Integrity("mapping table target inventory digest mismatch".into()))
                }
                "threshold" => {
                    threshold = value.parse().map_err(|_| Error::Parse {
                        line: k + 1,
                        message: format!("bad threshold `{value}`"),
                    })?
                }
                _ => {}
            }
        }

        let mut entries: Vec<Option<Option<MappingEntry>>> = vec![None; source.len()];
        for (line, content) in content_lines(text) {
            let fields: Vec<&str> = content.split('\t').collect();
            let i = lookup(source, fields[0].trim(), "source", line)?;
            let entry = match fields.as_slice() {
                [_, none] if none.trim() == NONE_MARKER => None,
                [_, tgt] => Some(MappingEntry {
                    target: lookup(target, tgt.trim(), "target", line)?,
                    confidence: 1.0,
                }),
                [_, tgt, conf] => {
                    let confidence: f64 = conf.trim().parse().map_err(|_| Error::Parse {
                        line,
                        message: format!("bad confidence `{conf}`"),
                    })?;
                    Some(MappingEntry {
                        target: lookup(target, tgt.trim(), "target", line)?,
                        confidence,
                    })
                }
                _ => {
                    return Err(Error::Parse {
                        line,
                        message: "expected `src<TAB>tgt[<TAB>confidence]` or `src<TAB>NONE`".into(),
                    })
                }
            };
            if entries[i].replace(entry).is_some() {
                return Err(Error::Parse {
                    line,
                    message: format!("source `{}` appears twice", source.symbols()[i]),
                });
            }
        }
        // A source symbol without a line is unmapped.
        let entries = entries.into_iter().map(Option::flatten).collect();
        Self::new(entries, threshold, source, target)
    }

    pub fn load(path: impl AsRef<std::path::Path>, source: &SymbolInventory, target: &SymbolInventory) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, source, target)
    }
}

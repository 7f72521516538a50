//! Ordered linguistic symbol sets with an implicit trailing CTC blank.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use crate::digest::sha256_hex;
use crate::error::{Error, Result};

/// Reserved name of the blank; never a linguistic symbol.
pub const BLANK: &str = "<blank>";

#[derive(Clone, PartialEq, Eq)]
pub struct SymbolInventory {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl SymbolInventory {
    pub fn new<S: Into<String>>(symbols: impl IntoIterator<Item = S>) -> Result<Self> {
        let symbols: Vec<String> = symbols.into_iter().map(Into::into).collect();
        if symbols.is_empty() {
            return Err(Error::invalid("symbol inventory is empty"));
        }
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() || s.chars().any(char::is_whitespace) {
                return Err(Error::invalid(format!(
                    "symbol {i} ({s:?}) is empty or contains whitespace"
                )));
            }
            if s == BLANK {
                return Err(Error::invalid(format!("{BLANK} is reserved for the CTC blank")));
            }
            if index.insert(s.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate symbol {s:?}")));
            }
        }
        Ok(Self { symbols, index })
    }

    /// Number of linguistic symbols (blank excluded).
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Index of the blank, one past the last linguistic symbol.
    pub fn blank(&self) -> usize {
        self.symbols.len()
    }

    /// Width of a distribution over the inventory plus blank.
    pub fn width(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn symbol(&self, i: usize) -> Option<&str> {
        if i == self.blank() {
            Some(BLANK)
        } else {
            self.symbols.get(i).map(String::as_str)
        }
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    /// Content hash of the ordered symbol list.
    pub fn digest(&self) -> String {
        sha256_hex(self.to_text().as_bytes())
    }

    /// One symbol per line; the line number is the index.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.symbols {
            out.push_str(s);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::new(text.lines().filter(|l| !l.is_empty()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

impl fmt::Debug for SymbolInventory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("SymbolInventory").field(&self.symbols).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blank_is_last() {
        let inv = SymbolInventory::new(["a", "b", "c"]).unwrap();
        assert_eq!(inv.blank(), 3);
        assert_eq!(inv.width(), 4);
        assert_eq!(inv.symbol(3), Some(BLANK));
        assert_eq!(inv.index_of("b"), Some(1));
    }

    #[test]
    fn rejects_bad_inventories() {
        assert!(SymbolInventory::new(["a", "a"]).is_err());
        assert!(SymbolInventory::new(["a", BLANK]).is_err());
        assert!(SymbolInventory::new(["a", ""]).is_err());
        assert!(SymbolInventory::new(Vec::<String>::new()).is_err());
    }

    #[test]
    fn text_round_trip() {
        let inv = SymbolInventory::new(["sh", "a", "ng"]).unwrap();
        let back = SymbolInventory::from_text(&inv.to_text()).unwrap();
        assert_eq!(inv, back);
        assert_eq!(inv.digest(), back.digest());
    }
}

//! Mapping discovery by probing a trained transformation network, and the
//! embedding initializations built on top of it.

pub mod embedding;
pub mod table;

pub use embedding::{
    separate_init, transfer_embeddings, unified_transfer, EmbeddingMatrix, RowOrigin, TransferReport, INIT_STD,
};
pub use table::{HandcraftedTable, MappingEntry, MappingTable};

use crate::error::{Error, Result};
use crate::inventory::SymbolInventory;
use crate::models::Ptn;
use crate::nn::{softmax_rows, Tensor};

/// Target distribution (blank included) for source symbol `i`.
///
/// With `smoothing > 0` the probe is `(1 - s) * one_hot + s * uniform`.
pub fn probe(ptn: &Ptn, i: usize, smoothing: f64) -> Result<Vec<f64>> {
    let n = ptn.config().n_source;
    if i >= n {
        return Err(Error::invalid(format!(
            "cannot probe index {i}: source symbols are 0..{n} and {n} is the blank"
        )));
    }
    if !(0.0..1.0).contains(&smoothing) {
        return Err(Error::invalid(format!("probe smoothing must be in [0, 1), got {smoothing}")));
    }
    let width = n + 1;
    let mut row = vec![smoothing / width as f64; width];
    row[i] += 1.0 - smoothing;
    let input = Tensor::matrix(1, width, row)?;
    Ok(softmax_rows(&ptn.infer_logits(&input)?).into_data())
}

/// Thresholded argmax over the non-blank part of each probe distribution.
/// Ties go to the lowest target index.
pub fn table_from_probes(
    probes: &[Vec<f64>],
    xi: f64,
    source: &SymbolInventory,
    target: &SymbolInventory,
) -> Result<MappingTable> {
    if probes.len() != source.len() {
        return Err(Error::invalid("one probe per source symbol is required"));
    }
    let mut entries = Vec::with_capacity(probes.len());
    for p in probes {
        if p.len() != target.width() {
            return Err(Error::invalid(format!(
                "probe of width {} for a target inventory of width {}",
                p.len(),
                target.width()
            )));
        }
        let j = crate::posteriorgram::argmax(&p[..target.len()]);
        let confidence = p[j];
        entries.push((confidence > xi).then_some(MappingEntry { target: j, confidence }));
    }
    MappingTable::new(entries, xi, source, target)
}

pub fn discover_mapping(
    ptn: &Ptn,
    source: &SymbolInventory,
    target: &SymbolInventory,
    xi: f64,
    smoothing: f64,
) -> Result<MappingTable> {
    if !(0.0..1.0).contains(&xi) {
        return Err(Error::invalid(format!("xi must be in [0, 1), got {xi}")));
    }
    let cfg = ptn.config();
    if cfg.n_source != source.len() || cfg.n_target != target.len() {
        return Err(Error::invalid(format!(
            "PTN maps {} -> {} symbols but the inventories have {} and {}",
            cfg.n_source,
            cfg.n_target,
            source.len(),
            target.len()
        )));
    }
    let probes = (0..source.len())
        .map(|i| probe(ptn, i, smoothing))
        .collect::<Result<Vec<_>>>()?;
    table_from_probes(&probes, xi, source, target)
}

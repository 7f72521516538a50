//! Target symbol embeddings: from scratch, through a handcrafted table, or
//! through a discovered mapping.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::table::{HandcraftedTable, MappingTable};
use crate::checkpoint::{Checkpoint, ModelKind, TrainingMetadata};
use crate::error::{CheckpointError, Error, Result};
use crate::inventory::SymbolInventory;
use crate::nn::Tensor;

/// Standard deviation of freshly initialized rows.
pub const INIT_STD: f64 = 0.3;

/// One row per inventory symbol (the blank has no embedding).
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    weights: Tensor,
    inventory_digest: String,
}

impl EmbeddingMatrix {
    pub fn new(weights: Tensor, inventory: &SymbolInventory) -> Result<Self> {
        let (rows, dim) = weights.expect_matrix("embedding")?;
        if rows != inventory.len() || dim == 0 {
            return Err(Error::invalid(format!(
                "embedding of shape {rows}x{dim} for {} symbols",
                inventory.len()
            )));
        }
        if !weights.is_finite() {
            return Err(Error::invalid("embedding has non-finite entries"));
        }
        Ok(Self {
            weights,
            inventory_digest: inventory.digest(),
        })
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn rows(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.weights.row(i)
    }

    pub fn inventory_digest(&self) -> &str {
        &self.inventory_digest
    }

    pub fn check_inventory(&self, inventory: &SymbolInventory) -> Result<()> {
        if self.inventory_digest != inventory.digest() {
            return Err(Error::Integrity("embedding matrix belongs to a different inventory".into()));
        }
        Ok(())
    }

    pub fn to_checkpoint(&self, inventory: &SymbolInventory, metadata: TrainingMetadata) -> Result<Checkpoint> {
        self.check_inventory(inventory)?;
        let mut ckpt = Checkpoint::new(
            ModelKind::Embedding,
            serde_json::json!({ "dim": self.dim() }),
            metadata,
        )
        .with_inventory("symbols", inventory);
        ckpt.push("weights", self.weights.clone());
        Ok(ckpt)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Self, SymbolInventory)> {
        ckpt.expect_kind(ModelKind::Embedding)?;
        let inventory = ckpt.inventory("symbols")?.clone();
        let dim = ckpt
            .model_config
            .get("dim")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| CheckpointError::Manifest("embedding config lacks `dim`".into()))? as usize;
        let mut reader = ckpt.reader();
        let weights = reader.take("weights", &[inventory.len(), dim])?;
        reader.finish()?;
        Ok((Self::new(weights, &inventory)?, inventory))
    }
}

/// Where a target row came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "origin")]
pub enum RowOrigin {
    Copied { source: usize },
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub rows: Vec<RowOrigin>,
}

impl TransferReport {
    pub fn copied(&self) -> usize {
        self.rows.iter().filter(|r| matches!(r, RowOrigin::Copied { .. })).count()
    }

    pub fn random(&self) -> usize {
        self.rows.len() - self.copied()
    }
}

/// Copies chosen rows from `w_src` and fills the others with N(0, INIT_STD²),
/// drawn in target index order.
fn assemble<R: Rng + ?Sized>(
    w_src: Option<&EmbeddingMatrix>,
    chosen: &[Option<usize>],
    dim: usize,
    target: &SymbolInventory,
    rng: &mut R,
) -> Result<(EmbeddingMatrix, TransferReport)> {
    let normal = Normal::new(0.0, INIT_STD).expect("positive std");
    let mut data = Vec::with_capacity(chosen.len() * dim);
    let mut rows = Vec::with_capacity(chosen.len());
    for choice in chosen {
        match (choice, w_src) {
            (Some(i), Some(w)) => {
                data.extend_from_slice(w.row(*i));
                rows.push(RowOrigin::Copied { source: *i });
            }
            _ => {
                data.extend((0..dim).map(|_| normal.sample(rng)));
                rows.push(RowOrigin::Random);
            }
        }
    }
    let weights = Tensor::matrix(chosen.len(), dim, data)?;
    Ok((EmbeddingMatrix::new(weights, target)?, TransferReport { rows }))
}

/// Every row drawn i.i.d. from N(0, INIT_STD²).
pub fn separate_init<R: Rng + ?Sized>(target: &SymbolInventory, dim: usize, rng: &mut R) -> Result<EmbeddingMatrix> {
    if dim == 0 {
        return Err(Error::invalid("embedding width must be at least 1"));
    }
    Ok(assemble(None, &vec![None; target.len()], dim, target, rng)?.0)
}

fn check_source(w_src: &EmbeddingMatrix, source: &SymbolInventory) -> Result<()> {
    w_src.check_inventory(source)?;
    if w_src.rows() != source.len() {
        return Err(Error::invalid("source embedding rows do not match the source inventory"));
    }
    Ok(())
}

/// Copies each mapped target's row from its most confident source (lowest
/// source index on ties); the remaining targets start from scratch.
pub fn transfer_embeddings<R: Rng + ?Sized>(
    w_src: &EmbeddingMatrix,
    source: &SymbolInventory,
    table: &MappingTable,
    target: &SymbolInventory,
    rng: &mut R,
) -> Result<(EmbeddingMatrix, TransferReport)> {
    check_source(w_src, source)?;
    table.check_inventories(source, target)?;
    let mut best: Vec<Option<(usize, f64)>> = vec![None; target.len()];
    for (i, entry) in table.entries().iter().enumerate() {
        let Some(e) = entry else { continue };
        match best[e.target] {
            Some((_, c)) if c >= e.confidence => {}
            _ => best[e.target] = Some((i, e.confidence)),
        }
    }
    let chosen: Vec<Option<usize>> = best.iter().map(|b| b.map(|(i, _)| i)).collect();
    assemble(Some(w_src), &chosen, w_src.dim(), target, rng)
}

/// Like [`transfer_embeddings`] for a handcrafted one-to-one table.
pub fn unified_transfer<R: Rng + ?Sized>(
    w_src: &EmbeddingMatrix,
    source: &SymbolInventory,
    table: &HandcraftedTable,
    target: &SymbolInventory,
    rng: &mut R,
) -> Result<(EmbeddingMatrix, TransferReport)> {
    check_source(w_src, source)?;
    if table.source_digest() != source.digest() || table.target_digest() != target.digest() {
        return Err(Error::Integrity("handcrafted table was parsed against other inventories".into()));
    }
    let mut chosen = vec![None; target.len()];
    for &(i, j) in table.pairs() {
        if chosen[j].replace(i).is_some() {
            return Err(Error::invalid(format!("target `{}` mapped twice", target.symbols()[j])));
        }
    }
    assemble(Some(w_src), &chosen, w_src.dim(), target, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::table::MappingEntry;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn inv(prefix: &str, n: usize) -> SymbolInventory {
        SymbolInventory::new((0..n).map(|i| format!("{prefix}{i}"))).unwrap()
    }

    fn mean_std(values: &[f64]) -> (f64, f64) {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var.sqrt())
    }

    #[test]
    fn separate_init_statistics_and_determinism() {
        let t = inv("t", 100);
        let a = separate_init(&t, 100, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = separate_init(&t, 100, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let c = separate_init(&t, 100, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let (mean, std) = mean_std(a.weights().data());
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((std - INIT_STD).abs() < 0.02, "std {std}");
    }

    fn table(entries: Vec<Option<MappingEntry>>, s: &SymbolInventory, t: &SymbolInventory) -> MappingTable {
        MappingTable::new(entries, 0.4, s, t).unwrap()
    }

    #[test]
    fn conflicts_go_to_the_most_confident_source() {
        let (s, t) = (inv("s", 6), inv("t", 5));
        let w = separate_init(&s, 4, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mut entries = vec![None; 6];
        entries[2] = Some(MappingEntry { target: 3, confidence: 0.8 });
        entries[5] = Some(MappingEntry { target: 3, confidence: 0.6 });
        let (out, report) =
            transfer_embeddings(&w, &s, &table(entries, &s, &t), &t, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(out.row(3), w.row(2));
        assert_eq!(report.rows[3], RowOrigin::Copied { source: 2 });
        assert_eq!(report.copied(), 1);
        assert_eq!(report.random(), 4);
    }

    #[test]
    fn bijection_consumes_no_randomness() {
        let (s, t) = (inv("s", 4), inv("t", 4));
        let w = separate_init(&s, 3, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let entries = (0..4)
            .map(|i| Some(MappingEntry { target: 3 - i, confidence: 0.9 }))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (out, _) = transfer_embeddings(&w, &s, &table(entries, &s, &t), &t, &mut rng).unwrap();
        for i in 0..4 {
            assert_eq!(out.row(3 - i), w.row(i));
        }
        assert_eq!(rng.random::<u64>(), ChaCha8Rng::seed_from_u64(6).random::<u64>());
    }

    #[test]
    fn empty_tables_match_separate_init() {
        let (s, t) = (inv("s", 3), inv("t", 50));
        let w = separate_init(&s, 200, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let fresh = separate_init(&t, 200, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let (learned, _) =
            transfer_embeddings(&w, &s, &table(vec![None; 3], &s, &t), &t, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let hand = HandcraftedTable::parse("", &s, &t).unwrap();
        let (unified, _) = unified_transfer(&w, &s, &hand, &t, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(learned, fresh);
        assert_eq!(unified, fresh);
        let (mean, std) = mean_std(learned.weights().data());
        assert!(mean.abs() < 0.02 && (std - INIT_STD).abs() < 0.02);
    }

    #[test]
    fn unified_copies_listed_rows() {
        let (s, t) = (inv("s", 3), inv("t", 3));
        let w = separate_init(&s, 2, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let hand = HandcraftedTable::parse("s0\tt2\ns1\tt0\n", &s, &t).unwrap();
        let (out, report) = unified_transfer(&w, &s, &hand, &t, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(out.row(2), w.row(0));
        assert_eq!(out.row(0), w.row(1));
        assert_eq!(report.rows[1], RowOrigin::Random);
    }

    #[test]
    fn source_relabeling_does_not_change_output() {
        let (s, t) = (inv("s", 4), inv("t", 4));
        let w = separate_init(&s, 3, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let mut entries = vec![None; 4];
        entries[0] = Some(MappingEntry { target: 2, confidence: 0.7 });
        entries[3] = Some(MappingEntry { target: 0, confidence: 0.5 });
        let (a, _) = transfer_embeddings(&w, &s, &table(entries.clone(), &s, &t), &t, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();

        let perm = [2usize, 0, 3, 1]; // old index -> new index
        let s2 = SymbolInventory::new((0..4).map(|new| {
            let old = perm.iter().position(|&p| p == new).unwrap();
            s.symbols()[old].clone()
        }))
        .unwrap();
        let mut data = vec![0.0; 12];
        let mut entries2 = vec![None; 4];
        for old in 0..4 {
            data[perm[old] * 3..perm[old] * 3 + 3].copy_from_slice(w.row(old));
            entries2[perm[old]] = entries[old];
        }
        let w2 = EmbeddingMatrix::new(Tensor::matrix(4, 3, data).unwrap(), &s2).unwrap();
        let (b, _) = transfer_embeddings(&w2, &s2, &table(entries2, &s2, &t), &t, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_round_trip_and_digest_checks() {
        let t = inv("t", 5);
        let e = separate_init(&t, 4, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let ckpt = e.to_checkpoint(&t, TrainingMetadata::default()).unwrap();
        let bytes = ckpt.to_bytes().unwrap();
        let (back, inv_back) = EmbeddingMatrix::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, e);
        assert_eq!(inv_back, t);
        assert!(matches!(e.check_inventory(&inv("u", 5)), Err(Error::Integrity(_))));
    }
}

//! Relation decoder: object tokens attend to each other, then to the image
//! patch features, with no causal mask and no positional embedding over the
//! object list — the order of objects carries no meaning, and the stack stays
//! permutation-equivariant because of it. A pairwise MLP head scores every
//! (circuit, table) combination.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::nn::{FeedForward, LayerNorm, Linear, MultiHeadAttention};
use crate::object::InstanceType;
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tape::{Tape, Var};

/// One candidate (circuit, table) pair by object-token index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairIndex {
    pub circuit_idx: usize,
    pub table_idx: usize,
}

/// Scored relation candidate.
#[derive(Debug, Clone, Copy)]
pub struct RelationPrediction {
    pub pair: PairIndex,
    pub logits: [f32; 2],
    /// softmax(logits)[1]: probability that the table describes the circuit.
    pub probability: f32,
}

/// All (circuit, table) index pairs in circuit-major order. Same-type pairs,
/// self-pairs, and table-first orderings are never produced, so the result
/// always has exactly N_c·N_t entries.
pub fn enumerate_pairs(types: &[InstanceType]) -> Vec<PairIndex> {
    let mut pairs = Vec::new();
    for (i, &ti) in types.iter().enumerate() {
        if ti != InstanceType::Circuit {
            continue;
        }
        for (j, &tj) in types.iter().enumerate() {
            if tj == InstanceType::Table {
                pairs.push(PairIndex { circuit_idx: i, table_idx: j });
            }
        }
    }
    pairs
}

struct DecoderLayer {
    ln1: LayerNorm,
    self_attn: MultiHeadAttention,
    ln2: LayerNorm,
    cross_attn: MultiHeadAttention,
    ln3: LayerNorm,
    ffn: FeedForward,
    dropout: f32,
}

impl DecoderLayer {
    fn new(store: &mut ParamStore, prefix: &str, cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        Ok(DecoderLayer {
            ln1: LayerNorm::new(store, &format!("{prefix}.ln1"), cfg.dim),
            self_attn: MultiHeadAttention::new(
                store,
                &format!("{prefix}.self_attn"),
                cfg.dim,
                cfg.decoder_heads,
                rng,
            )?,
            ln2: LayerNorm::new(store, &format!("{prefix}.ln2"), cfg.dim),
            cross_attn: MultiHeadAttention::new(
                store,
                &format!("{prefix}.cross_attn"),
                cfg.dim,
                cfg.decoder_heads,
                rng,
            )?,
            ln3: LayerNorm::new(store, &format!("{prefix}.ln3"), cfg.dim),
            ffn: FeedForward::new(store, &format!("{prefix}.ffn"), cfg.dim, rng),
            dropout: cfg.dropout,
        })
    }

    fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        memory: Var,
        rng: &mut Rng,
    ) -> Result<Var> {
        let h = self.ln1.forward(tape, store, x)?;
        let sa = self.self_attn.forward(tape, store, h, h)?;
        let x = tape.add(x, sa)?;
        let h = self.ln2.forward(tape, store, x)?;
        let ca = self.cross_attn.forward(tape, store, h, memory)?;
        let x = tape.add(x, ca)?;
        let h = self.ln3.forward(tape, store, x)?;
        let f = self.ffn.forward(tape, store, h)?;
        let f = tape.dropout(f, self.dropout, rng)?;
        tape.add(x, f)
    }
}

/// Stack of decoder layers applied in sequence.
pub struct Decoder {
    layers: Vec<DecoderLayer>,
}

impl Decoder {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        let mut layers = Vec::with_capacity(cfg.decoder_layers);
        for l in 0..cfg.decoder_layers {
            layers.push(DecoderLayer::new(store, &format!("decoder.layer{l}"), cfg, rng)?);
        }
        Ok(Decoder { layers })
    }

    /// Fuse `[N, D]` object tokens with `[M, D]` image features.
    pub fn fuse(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        objects: Var,
        image_feats: Var,
        rng: &mut Rng,
    ) -> Result<Var> {
        let mut x = objects;
        for layer in &self.layers {
            x = layer.forward(tape, store, x, image_feats, rng)?;
        }
        Ok(x)
    }
}

/// Pairwise scorer: concatenated (circuit, table) token → three ReLU layers
/// narrowing 2D→D→D→D/2 → two logits.
pub struct RelationHead {
    fc1: Linear,
    fc2: Linear,
    fc3: Linear,
    out: Linear,
}

impl RelationHead {
    pub fn new(store: &mut ParamStore, dim: usize, rng: &mut Rng) -> Self {
        RelationHead {
            fc1: Linear::new(store, "rel_head.fc1", 2 * dim, dim, rng),
            fc2: Linear::new(store, "rel_head.fc2", dim, dim, rng),
            fc3: Linear::new(store, "rel_head.fc3", dim, dim / 2, rng),
            out: Linear::new(store, "rel_head.out", dim / 2, 2, rng),
        }
    }

    /// `[P, 2]` logits for the given pairs over fused tokens. The circuit
    /// token always occupies the first half of each combination row.
    pub fn logits(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        fused: Var,
        pairs: &[PairIndex],
    ) -> Result<Var> {
        let index_pairs: Vec<(usize, usize)> =
            pairs.iter().map(|p| (p.circuit_idx, p.table_idx)).collect();
        let combos = tape.pair_concat(fused, &index_pairs)?;
        let h = self.fc1.forward(tape, store, combos)?;
        let h = tape.relu(h)?;
        let h = self.fc2.forward(tape, store, h)?;
        let h = tape.relu(h)?;
        let h = self.fc3.forward(tape, store, h)?;
        let h = tape.relu(h)?;
        self.out.forward(tape, store, h)
    }
}

/// Turn a `[P, 2]` logit tensor into per-pair predictions with softmax
/// probabilities.
pub fn predictions_from_logits(
    logits: &crate::tensor::Tensor,
    pairs: &[PairIndex],
) -> Result<Vec<RelationPrediction>> {
    let (p, two) = logits.dims2()?;
    if two != 2 || p != pairs.len() {
        return Err(Error::Dim(format!(
            "logits {:?} vs {} pairs",
            logits.shape(),
            pairs.len()
        )));
    }
    let mut out = Vec::with_capacity(p);
    for (row, pair) in logits.data().chunks_exact(2).zip(pairs) {
        let m = row[0].max(row[1]);
        let e0 = ((row[0] - m) as f64).exp();
        let e1 = ((row[1] - m) as f64).exp();
        out.push(RelationPrediction {
            pair: *pair,
            logits: [row[0], row[1]],
            probability: (e1 / (e0 + e1)) as f32,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::tensor::Tensor;
    use InstanceType::{Circuit, Table};

    /// The filter semantics spelled out pair-by-pair over the full N² grid.
    fn brute_force_pairs(types: &[InstanceType]) -> Vec<PairIndex> {
        let n = types.len();
        let mut keep = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue; // self-pair
                }
                if types[i] == types[j] {
                    continue; // same-type combination
                }
                if types[i] != Circuit {
                    continue; // table-first ordering
                }
                keep.push(PairIndex { circuit_idx: i, table_idx: j });
            }
        }
        keep
    }

    #[test]
    fn two_circuits_three_tables_give_six_pairs() {
        let types = [Circuit, Table, Circuit, Table, Table];
        let pairs = enumerate_pairs(&types);
        assert_eq!(pairs.len(), 6);
        assert_eq!(pairs, brute_force_pairs(&types));
    }

    #[test]
    fn single_type_lists_give_no_pairs() {
        assert!(enumerate_pairs(&[Circuit, Circuit, Circuit]).is_empty());
        assert!(enumerate_pairs(&[Table]).is_empty());
        assert!(enumerate_pairs(&[]).is_empty());
    }

    #[test]
    fn exhaustive_small_multisets_match_brute_force() {
        // Every type assignment up to 8 objects, encoded by bitmask.
        for n in 1..=8usize {
            for bits in 0u32..(1 << n) {
                let types: Vec<InstanceType> = (0..n)
                    .map(|i| if bits >> i & 1 == 0 { Circuit } else { Table })
                    .collect();
                let n_c = types.iter().filter(|&&t| t == Circuit).count();
                let n_t = n - n_c;
                let got = enumerate_pairs(&types);
                assert_eq!(got.len(), n_c * n_t, "types {types:?}");
                assert_eq!(got, brute_force_pairs(&types), "types {types:?}");
            }
        }
    }

    fn tiny_cfg() -> ModelConfig {
        let mut cfg = ModelConfig::desk();
        cfg.dim = 16;
        cfg.vision_heads = 2;
        cfg.decoder_heads = 2;
        cfg.decoder_layers = 2;
        cfg
    }

    #[test]
    fn fuse_is_permutation_equivariant() {
        let mut store = ParamStore::new();
        let mut rng = Rng::from_seed(31);
        let cfg = tiny_cfg();
        let dec = Decoder::new(&mut store, &cfg, &mut rng).unwrap();
        let d = cfg.dim;
        let n = 5;
        let obj_data: Vec<f32> = (0..n * d).map(|i| ((i * 31 % 17) as f32 - 8.0) * 0.1).collect();
        let mem = Tensor::from_fn(vec![7, d], |i| ((i * 13 % 23) as f32 - 11.0) * 0.05);
        let perm = [3usize, 0, 4, 1, 2];

        let fused = |data: &[f32]| {
            let mut tape = Tape::new(false);
            let mut drng = Rng::from_seed(0);
            let o = tape.leaf(Tensor::new(vec![n, d], data.to_vec()).unwrap());
            let m = tape.leaf(mem.clone());
            let y = dec.fuse(&mut tape, &store, o, m, &mut drng).unwrap();
            tape.value(y).data().to_vec()
        };

        let base = fused(&obj_data);
        let mut permuted = vec![0.0; n * d];
        for (dst, &src) in perm.iter().enumerate() {
            permuted[dst * d..(dst + 1) * d].copy_from_slice(&obj_data[src * d..(src + 1) * d]);
        }
        let out_perm = fused(&permuted);
        for (dst, &src) in perm.iter().enumerate() {
            for c in 0..d {
                let a = out_perm[dst * d + c];
                let b = base[src * d + c];
                assert!((a - b).abs() < 1e-5, "row {dst} col {c}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn single_object_fuse_is_well_defined() {
        let mut store = ParamStore::new();
        let mut rng = Rng::from_seed(32);
        let cfg = tiny_cfg();
        let dec = Decoder::new(&mut store, &cfg, &mut rng).unwrap();
        let mut tape = Tape::new(false);
        let mut drng = Rng::from_seed(0);
        let o = tape.leaf(Tensor::from_fn(vec![1, cfg.dim], |i| i as f32 * 0.1));
        let m = tape.leaf(Tensor::from_fn(vec![4, cfg.dim], |i| (i as f32).cos()));
        let y = dec.fuse(&mut tape, &store, o, m, &mut drng).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, cfg.dim]);
        assert!(tape.value(y).is_finite());
    }

    #[test]
    fn head_is_order_sensitive_and_local() {
        let mut store = ParamStore::new();
        let mut rng = Rng::from_seed(33);
        let head = RelationHead::new(&mut store, 16, &mut rng);
        let fused = Tensor::from_fn(vec![4, 16], |i| ((i * 7 % 13) as f32 - 6.0) * 0.2);

        let run = |data: &Tensor, pairs: &[PairIndex]| {
            let mut tape = Tape::new(false);
            let f = tape.leaf(data.clone());
            let l = head.logits(&mut tape, &store, f, pairs).unwrap();
            tape.value(l).data().to_vec()
        };

        // Swapped halves give different logits in general.
        let fwd = run(&fused, &[PairIndex { circuit_idx: 0, table_idx: 1 }]);
        let rev = run(&fused, &[PairIndex { circuit_idx: 1, table_idx: 0 }]);
        assert!(
            (fwd[0] - rev[0]).abs() > 1e-6 || (fwd[1] - rev[1]).abs() > 1e-6,
            "head ignored concatenation order"
        );

        // Perturbing an unrelated row leaves the pair's logits unchanged.
        let mut perturbed = fused.clone();
        for c in 0..16 {
            perturbed.data_mut()[3 * 16 + c] += 5.0;
        }
        let same = run(&perturbed, &[PairIndex { circuit_idx: 0, table_idx: 1 }]);
        assert_eq!(fwd, same);
    }

    #[test]
    fn zeroed_output_layer_yields_bias_logits() {
        let mut store = ParamStore::new();
        let mut rng = Rng::from_seed(34);
        let head = RelationHead::new(&mut store, 16, &mut rng);
        let w = store.id_by_name("rel_head.out.weight").unwrap();
        let b = store.id_by_name("rel_head.out.bias").unwrap();
        store.get_mut(w).value = Tensor::zeros(vec![8, 2]);
        store.get_mut(b).value = Tensor::new(vec![2], vec![0.3, -0.7]).unwrap();
        let fused = Tensor::from_fn(vec![3, 16], |i| (i as f32).sin());
        let mut tape = Tape::new(false);
        let f = tape.leaf(fused);
        let pairs = [
            PairIndex { circuit_idx: 0, table_idx: 1 },
            PairIndex { circuit_idx: 2, table_idx: 1 },
        ];
        let l = head.logits(&mut tape, &store, f, &pairs).unwrap();
        for row in tape.value(l).data().chunks_exact(2) {
            assert_eq!(row, &[0.3, -0.7]);
        }
        let preds = predictions_from_logits(tape.value(l), &pairs).unwrap();
        let expect = (1.0f64 / (1.0 + (0.3f64 - -0.7).exp())) as f32;
        for p in &preds {
            assert!((p.probability - expect).abs() < 1e-6);
            assert!((0.0..=1.0).contains(&p.probability));
        }
    }
}

//! Parameter arrays for the network and their initialization.
//!
//! Array order is fixed (embedding, then LSTM layers fwd/bwd with input,
//! recurrent, bias per direction, then place dense, main dense, output) and
//! shared by the flattening helpers, the optimizer and the checkpoint blob.
//! LSTM gate order within the stacked 4H axis is input, forget, cell, output.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::embeddings::EmbeddingTable;
use crate::vocab::Vocabulary;

use super::{ModelConfig, NeuralError};

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// (out, in)
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    fn zeros(out: usize, input: usize) -> Dense {
        Dense {
            w: Array2::zeros((out, input)),
            b: Array1::zeros(out),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmDirParams {
    /// (4H, in)
    pub w_in: Array2<f64>,
    /// (4H, H)
    pub w_rec: Array2<f64>,
    /// (4H)
    pub bias: Array1<f64>,
}

impl LstmDirParams {
    fn zeros(cells: usize, input: usize) -> LstmDirParams {
        LstmDirParams {
            w_in: Array2::zeros((4 * cells, input)),
            w_rec: Array2::zeros((4 * cells, cells)),
            bias: Array1::zeros(4 * cells),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmLayer {
    pub fwd: LstmDirParams,
    pub bwd: LstmDirParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    /// (num_classes, embed_dim)
    pub embedding: Array2<f64>,
    /// rows copied from the pretrained table; zero gradient when frozen
    pub frozen_rows: Vec<bool>,
    pub layers: Vec<BiLstmLayer>,
    /// setup 3 only
    pub place_dense: Option<Dense>,
    pub dense_main: Dense,
    pub output: Dense,
}

impl NetworkParams {
    /// All-zero parameter set with the shapes the config dictates.
    pub fn zeros(config: &ModelConfig) -> NetworkParams {
        let h = config.lstm_cells;
        let mut layers = Vec::with_capacity(config.lstm_layers);
        let mut input = config.embed_dim;
        for _ in 0..config.lstm_layers {
            layers.push(BiLstmLayer {
                fwd: LstmDirParams::zeros(h, input),
                bwd: LstmDirParams::zeros(h, input),
            });
            input = 2 * h;
        }
        NetworkParams {
            embedding: Array2::zeros((config.num_classes, config.embed_dim)),
            frozen_rows: vec![false; config.num_classes],
            layers,
            place_dense: config
                .place_dense_units
                .map(|u| Dense::zeros(u, config.place_input_dim)),
            dense_main: Dense::zeros(config.dense_units, config.dense_input_dim()),
            output: Dense::zeros(config.num_classes, config.dense_units),
        }
    }

    /// Named arrays in canonical order: (name, shape, flat data).
    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = vec![(
            "embedding".to_string(),
            self.embedding.shape().to_vec(),
        )];
        for (i, layer) in self.layers.iter().enumerate() {
            for (dir, p) in [("fwd", &layer.fwd), ("bwd", &layer.bwd)] {
                out.push((format!("lstm{i}.{dir}.w_in"), p.w_in.shape().to_vec()));
                out.push((format!("lstm{i}.{dir}.w_rec"), p.w_rec.shape().to_vec()));
                out.push((format!("lstm{i}.{dir}.bias"), p.bias.shape().to_vec()));
            }
        }
        if let Some(d) = &self.place_dense {
            out.push(("place_dense.w".to_string(), d.w.shape().to_vec()));
            out.push(("place_dense.b".to_string(), d.b.shape().to_vec()));
        }
        out.push(("dense_main.w".to_string(), self.dense_main.w.shape().to_vec()));
        out.push(("dense_main.b".to_string(), self.dense_main.b.shape().to_vec()));
        out.push(("output.w".to_string(), self.output.w.shape().to_vec()));
        out.push(("output.b".to_string(), self.output.b.shape().to_vec()));
        out
    }

    fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![self.embedding.as_slice().unwrap()];
        for layer in &self.layers {
            for p in [&layer.fwd, &layer.bwd] {
                out.push(p.w_in.as_slice().unwrap());
                out.push(p.w_rec.as_slice().unwrap());
                out.push(p.bias.as_slice().unwrap());
            }
        }
        if let Some(d) = &self.place_dense {
            out.push(d.w.as_slice().unwrap());
            out.push(d.b.as_slice().unwrap());
        }
        out.push(self.dense_main.w.as_slice().unwrap());
        out.push(self.dense_main.b.as_slice().unwrap());
        out.push(self.output.w.as_slice().unwrap());
        out.push(self.output.b.as_slice().unwrap());
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.embedding.as_slice_mut().unwrap()];
        for layer in &mut self.layers {
            for p in [&mut layer.fwd, &mut layer.bwd] {
                out.push(p.w_in.as_slice_mut().unwrap());
                out.push(p.w_rec.as_slice_mut().unwrap());
                out.push(p.bias.as_slice_mut().unwrap());
            }
        }
        if let Some(d) = &mut self.place_dense {
            out.push(d.w.as_slice_mut().unwrap());
            out.push(d.b.as_slice_mut().unwrap());
        }
        out.push(self.dense_main.w.as_slice_mut().unwrap());
        out.push(self.dense_main.b.as_slice_mut().unwrap());
        out.push(self.output.w.as_slice_mut().unwrap());
        out.push(self.output.b.as_slice_mut().unwrap());
        out
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_params());
        for s in self.slices() {
            flat.extend_from_slice(s);
        }
        flat
    }

    pub fn assign_from_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for s in self.slices_mut() {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        }
        debug_assert_eq!(offset, flat.len());
    }

    /// 1.0 for parameters the optimizer may move, 0.0 for frozen embedding
    /// rows. Same layout as `flatten`.
    pub fn trainable_mask(&self, embeddings_frozen: bool) -> Vec<f64> {
        let mut mask = vec![1.0; self.num_params()];
        if embeddings_frozen {
            let dim = self.embedding.ncols();
            for (row, frozen) in self.frozen_rows.iter().enumerate() {
                if *frozen {
                    for x in &mut mask[row * dim..(row + 1) * dim] {
                        *x = 0.0;
                    }
                }
            }
        }
        mask
    }

    /// Rounds every parameter to f32 precision so the checkpoint blob
    /// (little-endian f32) round-trips without loss.
    pub fn quantize_f32(&mut self) {
        for s in self.slices_mut() {
            for x in s.iter_mut() {
                *x = *x as f32 as f64;
            }
        }
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn fill_uniform_fan_in(a: &mut Array2<f64>, rng: &mut ChaCha8Rng) {
    let limit = 1.0 / (a.ncols() as f64).sqrt();
    for x in a.iter_mut() {
        *x = rng.gen_range(-limit..limit);
    }
}

fn fill_normal(a: &mut Array2<f64>, mean: f64, std: f64, rng: &mut ChaCha8Rng) {
    if std <= 0.0 {
        a.fill(mean);
        return;
    }
    let dist = Normal::new(mean, std).unwrap();
    for x in a.iter_mut() {
        *x = dist.sample(rng);
    }
}

fn init_lstm_dir(p: &mut LstmDirParams, cells: usize, rng: &mut ChaCha8Rng) {
    fill_uniform_fan_in(&mut p.w_in, rng);
    fill_uniform_fan_in(&mut p.w_rec, rng);
    // forget-gate bias starts at 1.0 (gate order: input, forget, cell, output)
    for j in cells..2 * cells {
        p.bias[j] = 1.0;
    }
}

/// Builds a parameter set: embedding rows copied from the table when the
/// word has a vector (and marked frozen), otherwise drawn from a zero-mean
/// normal with the table's empirical per-dimension std. With `pretrained`
/// given, the shared (non-place) subnetwork is copied and the place-branch
/// weights are drawn from a normal matching the pretrained main dense layer.
pub fn init_params(
    config: &ModelConfig,
    embeddings: &EmbeddingTable,
    vocab: &Vocabulary,
    pretrained: Option<&NetworkParams>,
    seed: u64,
) -> Result<NetworkParams, NeuralError> {
    config.validate()?;
    if embeddings.dimension != config.embed_dim {
        return Err(NeuralError::ShapeMismatch(format!(
            "embedding table dimension {} != config embed_dim {}",
            embeddings.dimension, config.embed_dim
        )));
    }
    if vocab.num_classes() != config.num_classes {
        return Err(NeuralError::ShapeMismatch(format!(
            "vocabulary has {} classes, config expects {}",
            vocab.num_classes(),
            config.num_classes
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = NetworkParams::zeros(config);

    if let Some(pre) = pretrained {
        check_shared_shapes(config, pre)?;
        params.embedding.assign(&pre.embedding);
        params.frozen_rows = pre.frozen_rows.clone();
        params.layers = pre.layers.clone();
        params.output = pre.output.clone();
        // shared columns of the main dense layer, then place columns drawn
        // from a normal matching the pretrained layer's statistics
        let shared = pre.dense_main.w.ncols();
        let (w_mean, w_std) = mean_std(pre.dense_main.w.iter().copied());
        params
            .dense_main
            .w
            .slice_mut(ndarray::s![.., ..shared])
            .assign(&pre.dense_main.w);
        params.dense_main.b.assign(&pre.dense_main.b);
        if params.dense_main.w.ncols() > shared {
            let mut extra = params.dense_main.w.slice_mut(ndarray::s![.., shared..]);
            if w_std > 0.0 {
                let dist = Normal::new(w_mean, w_std).unwrap();
                for x in extra.iter_mut() {
                    *x = dist.sample(&mut rng);
                }
            } else {
                extra.fill(w_mean);
            }
        }
        if let Some(pd) = &mut params.place_dense {
            fill_normal(&mut pd.w, w_mean, w_std, &mut rng);
            let (b_mean, b_std) = mean_std(pre.dense_main.b.iter().copied());
            let dist = Normal::new(b_mean, b_std.max(0.0));
            match dist {
                Ok(d) if b_std > 0.0 => {
                    for x in pd.b.iter_mut() {
                        *x = d.sample(&mut rng);
                    }
                }
                _ => pd.b.fill(b_mean),
            }
        }
    } else {
        let cells = config.lstm_cells;
        // split borrows: init layers first, then dense layers
        for layer in &mut params.layers {
            init_lstm_dir(&mut layer.fwd, cells, &mut rng);
            init_lstm_dir(&mut layer.bwd, cells, &mut rng);
        }
        if let Some(pd) = &mut params.place_dense {
            fill_uniform_fan_in(&mut pd.w, &mut rng);
        }
        fill_uniform_fan_in(&mut params.dense_main.w, &mut rng);
        fill_uniform_fan_in(&mut params.output.w, &mut rng);
    }

    // embedding rows, regardless of pretraining: copy vectors for in-vocab
    // words present in the table; draw the rest (including unk and pad)
    let per_dim_std = embeddings.per_dimension_std();
    for class in 0..config.num_classes {
        let word = if class < vocab.k() {
            Some(vocab.decode(class).to_string())
        } else {
            None
        };
        match word.as_deref().and_then(|w| embeddings.get(w)) {
            Some(vec) => {
                for (j, v) in vec.iter().enumerate() {
                    params.embedding[[class, j]] = *v;
                }
                params.frozen_rows[class] = true;
            }
            None => {
                if pretrained.is_none() {
                    for j in 0..config.embed_dim {
                        let std = per_dim_std[j];
                        if std > 0.0 {
                            let dist = Normal::new(0.0, std).unwrap();
                            params.embedding[[class, j]] = dist.sample(&mut rng);
                        }
                    }
                    params.frozen_rows[class] = false;
                }
            }
        }
    }

    params.quantize_f32();
    Ok(params)
}

fn check_shared_shapes(config: &ModelConfig, pre: &NetworkParams) -> Result<(), NeuralError> {
    let expect = NetworkParams::zeros(config);
    if pre.embedding.shape() != expect.embedding.shape() {
        return Err(NeuralError::ShapeMismatch("embedding".into()));
    }
    if pre.layers.len() != expect.layers.len() {
        return Err(NeuralError::ShapeMismatch("lstm layer count".into()));
    }
    for (i, (a, b)) in pre.layers.iter().zip(&expect.layers).enumerate() {
        for (dir, pa, pb) in [("fwd", &a.fwd, &b.fwd), ("bwd", &a.bwd, &b.bwd)] {
            if pa.w_in.shape() != pb.w_in.shape()
                || pa.w_rec.shape() != pb.w_rec.shape()
                || pa.bias.shape() != pb.bias.shape()
            {
                return Err(NeuralError::ShapeMismatch(format!("lstm{i}.{dir}")));
            }
        }
    }
    if pre.dense_main.w.nrows() != expect.dense_main.w.nrows()
        || pre.dense_main.w.ncols() > expect.dense_main.w.ncols()
        || pre.dense_main.w.ncols() != 2 * config.lstm_cells
    {
        return Err(NeuralError::ShapeMismatch("dense_main".into()));
    }
    if pre.output.w.shape() != expect.output.w.shape() {
        return Err(NeuralError::ShapeMismatch("output".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Post;
    use crate::neural::Variant;
    use std::collections::{BTreeMap, BTreeSet};

    pub fn tiny_config(variant: Variant) -> ModelConfig {
        ModelConfig {
            variant,
            num_classes: 8,
            embed_dim: 4,
            lstm_cells: 3,
            lstm_layers: 2,
            dense_units: 5,
            place_input_dim: if variant.uses_place() { 3 } else { 0 },
            place_dense_units: if variant == Variant::Setup3 { Some(2) } else { None },
            window: 4,
            embeddings_frozen: false,
        }
    }

    fn tiny_vocab() -> Vocabulary {
        let posts = vec![Post {
            id: "v".to_string(),
            tokens: ["a", "a", "a", "b", "b", "c", "d", "e", "f"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            place_types: BTreeSet::from(["x".to_string()]),
        }];
        Vocabulary::build(&posts, 6).unwrap()
    }

    fn tiny_table() -> EmbeddingTable {
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), vec![0.1, 0.2, 0.3, 0.4]);
        m.insert("b".to_string(), vec![-0.1, 0.0, 0.1, 0.2]);
        EmbeddingTable::from_map(m, 4)
    }

    #[test]
    fn shapes_allocated_and_rows_copied() {
        let cfg = tiny_config(Variant::Baseline);
        let vocab = tiny_vocab();
        let table = tiny_table();
        let p = init_params(&cfg, &table, &vocab, None, 1).unwrap();
        assert_eq!(p.embedding.shape(), &[8, 4]);
        assert_eq!(p.layers.len(), 2);
        assert_eq!(p.layers[0].fwd.w_in.shape(), &[12, 4]);
        assert_eq!(p.layers[1].fwd.w_in.shape(), &[12, 6]);
        assert_eq!(p.dense_main.w.shape(), &[5, 6]);
        assert_eq!(p.output.w.shape(), &[8, 5]);
        let a_id = vocab.encode("a");
        for j in 0..4 {
            assert_eq!(p.embedding[[a_id, j]], [0.1, 0.2, 0.3, 0.4][j] as f32 as f64);
        }
        assert!(p.frozen_rows[a_id]);
        assert!(!p.frozen_rows[vocab.unk_id()]);
        assert!(!p.frozen_rows[vocab.pad_id()]);
    }

    #[test]
    fn same_seed_bit_identical() {
        let cfg = tiny_config(Variant::Setup3);
        let vocab = tiny_vocab();
        let table = tiny_table();
        let p1 = init_params(&cfg, &table, &vocab, None, 42).unwrap();
        let p2 = init_params(&cfg, &table, &vocab, None, 42).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn pretrained_shared_weights_copied() {
        let vocab = tiny_vocab();
        let table = tiny_table();
        let base = tiny_config(Variant::Baseline);
        let pre = init_params(&base, &table, &vocab, None, 7).unwrap();
        let s1 = tiny_config(Variant::Setup1);
        let p = init_params(&s1, &table, &vocab, Some(&pre), 8).unwrap();
        assert_eq!(p.layers, pre.layers);
        assert_eq!(p.output, pre.output);
        assert_eq!(p.embedding, pre.embedding);
        let shared = pre.dense_main.w.ncols();
        assert_eq!(
            p.dense_main.w.slice(ndarray::s![.., ..shared]),
            pre.dense_main.w
        );
        assert_eq!(p.dense_main.w.ncols(), shared + 3);
    }

    #[test]
    fn pretrained_shape_mismatch_rejected() {
        let vocab = tiny_vocab();
        let table = tiny_table();
        let mut other = tiny_config(Variant::Baseline);
        other.lstm_cells = 4;
        let pre = init_params(&other, &table, &vocab, None, 7).unwrap();
        let s1 = tiny_config(Variant::Setup1);
        assert!(init_params(&s1, &table, &vocab, Some(&pre), 8).is_err());
    }

    #[test]
    fn flatten_round_trip() {
        let cfg = tiny_config(Variant::Setup3);
        let vocab = tiny_vocab();
        let table = tiny_table();
        let p = init_params(&cfg, &table, &vocab, None, 3).unwrap();
        let flat = p.flatten();
        assert_eq!(flat.len(), p.num_params());
        let mut q = NetworkParams::zeros(&cfg);
        q.frozen_rows = p.frozen_rows.clone();
        q.assign_from_flat(&flat);
        assert_eq!(p, q);
    }

    #[test]
    fn trainable_mask_zeroes_frozen_rows() {
        let cfg = tiny_config(Variant::Baseline);
        let vocab = tiny_vocab();
        let table = tiny_table();
        let p = init_params(&cfg, &table, &vocab, None, 3).unwrap();
        let mask = p.trainable_mask(true);
        let a_id = vocab.encode("a");
        let dim = cfg.embed_dim;
        assert!(mask[a_id * dim..(a_id + 1) * dim].iter().all(|&x| x == 0.0));
        let unk = vocab.unk_id();
        assert!(mask[unk * dim..(unk + 1) * dim].iter().all(|&x| x == 1.0));
        let unmasked = p.trainable_mask(false);
        assert!(unmasked.iter().all(|&x| x == 1.0));
    }
}

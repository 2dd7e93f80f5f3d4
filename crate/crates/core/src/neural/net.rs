//! Forward evaluation and exact reverse-mode gradients.
//!
//! The pipeline: embed the 4 context tokens, run the stacked bidirectional
//! LSTM over the 4-step sequence, concatenate the final forward state with
//! the final backward state, append the place features (identity for setups
//! 1-2, a tanh projection for setup 3, nothing for the baseline), then a
//! tanh dense layer, a linear output layer and a softmax.

use ndarray::{s, Array1, Array2, Axis};

use crate::sampler::TrainingExample;

use super::{ModelConfig, NetworkParams, NeuralError, Variant};

/// Gradients use the same shapes as the parameters themselves.
pub type Gradients = NetworkParams;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One direction's stored activations for every step, in processing order.
struct DirCache {
    /// (B, in) inputs per step
    xs: Vec<Array2<f64>>,
    h_prev: Vec<Array2<f64>>,
    c_prev: Vec<Array2<f64>>,
    i: Vec<Array2<f64>>,
    f: Vec<Array2<f64>>,
    g: Vec<Array2<f64>>,
    o: Vec<Array2<f64>>,
    tanh_c: Vec<Array2<f64>>,
    h: Vec<Array2<f64>>,
}

struct LayerCache {
    fwd: DirCache,
    bwd: DirCache,
}

pub(super) struct ForwardCache {
    layers: Vec<LayerCache>,
    /// token ids per step, (B) each
    tokens: Vec<Vec<usize>>,
    /// (B, P) raw place input, when the variant uses it
    place_input: Option<Array2<f64>>,
    /// (B, place_dense_units) tanh activations, setup 3 only
    place_act: Option<Array2<f64>>,
    /// (B, dense_in) concatenated features
    features: Array2<f64>,
    /// (B, dense_units) tanh activations
    hidden: Array2<f64>,
    pub probs: Array2<f64>,
}

fn lstm_dir_forward(
    p: &super::LstmDirParams,
    inputs: &[Array2<f64>],
    order: impl Iterator<Item = usize>,
) -> DirCache {
    let batch = inputs[0].nrows();
    let cells = p.w_rec.ncols();
    let mut cache = DirCache {
        xs: Vec::new(),
        h_prev: Vec::new(),
        c_prev: Vec::new(),
        i: Vec::new(),
        f: Vec::new(),
        g: Vec::new(),
        o: Vec::new(),
        tanh_c: Vec::new(),
        h: Vec::new(),
    };
    let mut h = Array2::zeros((batch, cells));
    let mut c: Array2<f64> = Array2::zeros((batch, cells));
    for t in order {
        let x = inputs[t].clone();
        // (B, 4H)
        let mut z = x.dot(&p.w_in.t()) + h.dot(&p.w_rec.t());
        z += &p.bias;
        let i_gate = z.slice(s![.., 0..cells]).mapv(sigmoid);
        let f_gate = z.slice(s![.., cells..2 * cells]).mapv(sigmoid);
        let g_gate = z.slice(s![.., 2 * cells..3 * cells]).mapv(f64::tanh);
        let o_gate = z.slice(s![.., 3 * cells..4 * cells]).mapv(sigmoid);
        let c_new = &f_gate * &c + &i_gate * &g_gate;
        let tanh_c = c_new.mapv(f64::tanh);
        let h_new = &o_gate * &tanh_c;
        cache.xs.push(x);
        cache.h_prev.push(h);
        cache.c_prev.push(c);
        cache.i.push(i_gate);
        cache.f.push(f_gate);
        cache.g.push(g_gate);
        cache.o.push(o_gate);
        cache.tanh_c.push(tanh_c);
        cache.h.push(h_new.clone());
        h = h_new;
        c = c_new;
    }
    cache
}

fn hconcat(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[a.view(), b.view()]).expect("concat")
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut probs = logits.clone();
    for mut row in probs.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
    probs
}

fn place_matrix(
    config: &ModelConfig,
    batch: &[TrainingExample],
) -> Result<Option<Array2<f64>>, NeuralError> {
    if !config.variant.uses_place() {
        return Ok(None);
    }
    let p = config.place_input_dim;
    let mut m = Array2::zeros((batch.len(), p));
    for (b, e) in batch.iter().enumerate() {
        if e.place_vector.len() != p {
            return Err(NeuralError::PlaceWidth {
                got: e.place_vector.len(),
                expected: p,
            });
        }
        for (j, v) in e.place_vector.iter().enumerate() {
            m[[b, j]] = *v;
        }
    }
    Ok(Some(m))
}

pub(super) fn forward_cached(
    params: &NetworkParams,
    config: &ModelConfig,
    batch: &[TrainingExample],
) -> Result<ForwardCache, NeuralError> {
    let w = config.window;
    let bsz = batch.len();
    let tokens: Vec<Vec<usize>> = (0..w)
        .map(|t| batch.iter().map(|e| e.context[t]).collect())
        .collect();
    // embed each step
    let mut seq: Vec<Array2<f64>> = Vec::with_capacity(w);
    for ids in &tokens {
        let mut x = Array2::zeros((bsz, config.embed_dim));
        for (b, &id) in ids.iter().enumerate() {
            if id >= config.num_classes {
                return Err(NeuralError::ShapeMismatch(format!(
                    "class id {id} out of range"
                )));
            }
            x.row_mut(b).assign(&params.embedding.row(id));
        }
        seq.push(x);
    }

    let mut layer_caches = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let fwd = lstm_dir_forward(&layer.fwd, &seq, 0..w);
        let bwd = lstm_dir_forward(&layer.bwd, &seq, (0..w).rev());
        // aligned output per original step t: concat(h_fwd[t], h_bwd at the
        // processing step that consumed input t, i.e. index w-1-t)
        let mut next_seq = Vec::with_capacity(w);
        for t in 0..w {
            next_seq.push(hconcat(&fwd.h[t], &bwd.h[w - 1 - t]));
        }
        layer_caches.push(LayerCache { fwd, bwd });
        seq = next_seq;
    }

    // sequence-to-one readout: each direction's final state
    let last = layer_caches.last().unwrap();
    let readout = hconcat(&last.fwd.h[w - 1], &last.bwd.h[w - 1]);

    let place_input = place_matrix(config, batch)?;
    let (features, place_act) = match (&place_input, config.variant) {
        (None, _) => (readout, None),
        (Some(p), Variant::Setup3) => {
            let d = params.place_dense.as_ref().ok_or_else(|| {
                NeuralError::ShapeMismatch("setup3 params missing place_dense".into())
            })?;
            let mut a = p.dot(&d.w.t());
            a += &d.b;
            let a = a.mapv(f64::tanh);
            (hconcat(&readout, &a), Some(a))
        }
        (Some(p), _) => (hconcat(&readout, p), None),
    };

    if features.ncols() != params.dense_main.w.ncols() {
        return Err(NeuralError::ShapeMismatch(format!(
            "dense_main expects {} inputs, got {}",
            params.dense_main.w.ncols(),
            features.ncols()
        )));
    }
    let mut pre = features.dot(&params.dense_main.w.t());
    pre += &params.dense_main.b;
    let hidden = pre.mapv(f64::tanh);
    let mut logits = hidden.dot(&params.output.w.t());
    logits += &params.output.b;
    let probs = softmax_rows(&logits);
    Ok(ForwardCache {
        layers: layer_caches,
        tokens,
        place_input,
        place_act,
        features,
        hidden,
        probs,
    })
}

/// Softmax probabilities, one row per example.
pub fn forward(
    params: &NetworkParams,
    config: &ModelConfig,
    batch: &[TrainingExample],
) -> Result<Array2<f64>, NeuralError> {
    Ok(forward_cached(params, config, batch)?.probs)
}

/// BPTT through one direction. `dh_ext[s]` is the gradient arriving at the
/// hidden output of processing step s from outside consumers.
fn lstm_dir_backward(
    p: &super::LstmDirParams,
    cache: &DirCache,
    dh_ext: &[Array2<f64>],
    grads: &mut super::LstmDirParams,
) -> Vec<Array2<f64>> {
    let steps = cache.xs.len();
    let cells = p.w_rec.ncols();
    let batch = cache.xs[0].nrows();
    let mut dh_next: Array2<f64> = Array2::zeros((batch, cells));
    let mut dc_next: Array2<f64> = Array2::zeros((batch, cells));
    let mut dx: Vec<Array2<f64>> = vec![Array2::zeros((0, 0)); steps];
    for s_idx in (0..steps).rev() {
        let dh = &dh_ext[s_idx] + &dh_next;
        let o = &cache.o[s_idx];
        let i = &cache.i[s_idx];
        let f = &cache.f[s_idx];
        let g = &cache.g[s_idx];
        let tanh_c = &cache.tanh_c[s_idx];
        let dc = &dc_next + &(&dh * o * &tanh_c.mapv(|x| 1.0 - x * x));
        let do_ = &dh * tanh_c;
        let dz_o = &do_ * o * &o.mapv(|x| 1.0 - x);
        let df = &dc * &cache.c_prev[s_idx];
        let dz_f = &df * f * &f.mapv(|x| 1.0 - x);
        let di = &dc * g;
        let dz_i = &di * i * &i.mapv(|x| 1.0 - x);
        let dg = &dc * i;
        let dz_g = &dg * &g.mapv(|x| 1.0 - x * x);
        let mut dz = Array2::zeros((batch, 4 * cells));
        dz.slice_mut(s![.., 0..cells]).assign(&dz_i);
        dz.slice_mut(s![.., cells..2 * cells]).assign(&dz_f);
        dz.slice_mut(s![.., 2 * cells..3 * cells]).assign(&dz_g);
        dz.slice_mut(s![.., 3 * cells..4 * cells]).assign(&dz_o);
        grads.w_in += &dz.t().dot(&cache.xs[s_idx]);
        grads.w_rec += &dz.t().dot(&cache.h_prev[s_idx]);
        grads.bias += &dz.sum_axis(Axis(0));
        dx[s_idx] = dz.dot(&p.w_in);
        dh_next = dz.dot(&p.w_rec);
        dc_next = &dc * f;
    }
    dx
}

/// Mean cross-entropy over the batch plus gradients shaped like the
/// parameters. Frozen embedding rows get zero gradient.
pub fn loss_and_gradients(
    params: &NetworkParams,
    config: &ModelConfig,
    batch: &[TrainingExample],
) -> Result<(f64, Gradients), NeuralError> {
    assert!(!batch.is_empty(), "batch must be nonempty");
    let cache = forward_cached(params, config, batch)?;
    let bsz = batch.len();
    let w = config.window;
    let cells = config.lstm_cells;

    let mut loss = 0.0;
    for (b, e) in batch.iter().enumerate() {
        let p = cache.probs[[b, e.target]];
        let l = -p.ln();
        if !l.is_finite() {
            return Err(NeuralError::NonFiniteLoss(b));
        }
        loss += l;
    }
    loss /= bsz as f64;

    let mut grads = Gradients::zeros(config);
    grads.frozen_rows = params.frozen_rows.clone();

    // d loss / d logits = (probs - onehot) / B
    let mut dlogits = cache.probs.clone();
    for (b, e) in batch.iter().enumerate() {
        dlogits[[b, e.target]] -= 1.0;
    }
    dlogits /= bsz as f64;

    grads.output.w += &dlogits.t().dot(&cache.hidden);
    grads.output.b += &dlogits.sum_axis(Axis(0));
    let dhidden = dlogits.dot(&params.output.w);
    let dpre = &dhidden * &cache.hidden.mapv(|x| 1.0 - x * x);
    grads.dense_main.w += &dpre.t().dot(&cache.features);
    grads.dense_main.b += &dpre.sum_axis(Axis(0));
    let dfeatures = dpre.dot(&params.dense_main.w);

    let dreadout = dfeatures.slice(s![.., 0..2 * cells]).to_owned();
    // place branch
    if let (Some(place_input), Variant::Setup3) = (&cache.place_input, config.variant) {
        let act = cache.place_act.as_ref().unwrap();
        let dact = dfeatures.slice(s![.., 2 * cells..]).to_owned();
        let dz = &dact * &act.mapv(|x| 1.0 - x * x);
        let gp = grads.place_dense.as_mut().unwrap();
        gp.w += &dz.t().dot(place_input);
        gp.b += &dz.sum_axis(Axis(0));
        // place input itself is data, not a parameter
    }

    // gradient flowing into each layer's aligned output sequence
    let zero = Array2::zeros((bsz, cells));
    // top layer: only the readout consumes it (final step of each direction)
    let mut dh_fwd_ext: Vec<Array2<f64>> = vec![zero.clone(); w];
    let mut dh_bwd_ext: Vec<Array2<f64>> = vec![zero.clone(); w];
    dh_fwd_ext[w - 1] = dreadout.slice(s![.., 0..cells]).to_owned();
    dh_bwd_ext[w - 1] = dreadout.slice(s![.., cells..2 * cells]).to_owned();

    for (li, layer_cache) in cache.layers.iter().enumerate().rev() {
        let layer_params = &params.layers[li];
        let layer_grads = &mut grads.layers[li];
        let dx_fwd = lstm_dir_backward(
            &layer_params.fwd,
            &layer_cache.fwd,
            &dh_fwd_ext,
            &mut layer_grads.fwd,
        );
        let dx_bwd = lstm_dir_backward(
            &layer_params.bwd,
            &layer_cache.bwd,
            &dh_bwd_ext,
            &mut layer_grads.bwd,
        );
        // combine: forward processed t in order, backward in reverse
        let mut dinput: Vec<Array2<f64>> = Vec::with_capacity(w);
        for t in 0..w {
            dinput.push(&dx_fwd[t] + &dx_bwd[w - 1 - t]);
        }
        if li > 0 {
            // split each step's gradient back into the lower layer's aligned
            // output halves: columns 0..H to fwd.h[t], H..2H to bwd at w-1-t
            dh_fwd_ext = vec![zero.clone(); w];
            dh_bwd_ext = vec![zero.clone(); w];
            for t in 0..w {
                dh_fwd_ext[t] = dinput[t].slice(s![.., 0..cells]).to_owned();
                dh_bwd_ext[w - 1 - t] = dinput[t].slice(s![.., cells..2 * cells]).to_owned();
            }
        } else {
            // scatter into embedding rows
            let frozen = config.embeddings_frozen;
            for t in 0..w {
                for (b, &id) in cache.tokens[t].iter().enumerate() {
                    if frozen && params.frozen_rows[id] {
                        continue;
                    }
                    let mut row = grads.embedding.row_mut(id);
                    row += &dinput[t].row(b);
                }
            }
        }
    }

    Ok((loss, grads))
}

/// Classes by descending probability, pad excluded, ties by ascending id.
pub fn predict_topk(
    params: &NetworkParams,
    config: &ModelConfig,
    example: &TrainingExample,
    k_best: usize,
) -> Result<Vec<usize>, NeuralError> {
    let probs = forward(params, config, std::slice::from_ref(example))?;
    Ok(rank_row(&probs.row(0).to_owned(), config.pad_id(), k_best))
}

pub(super) fn rank_row(row: &Array1<f64>, pad_id: usize, k_best: usize) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = row
        .iter()
        .enumerate()
        .filter(|(c, _)| *c != pad_id)
        .map(|(c, &p)| (p, c))
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1)));
    scored.into_iter().take(k_best).map(|(_, c)| c).collect()
}

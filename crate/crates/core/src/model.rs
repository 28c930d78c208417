//! The neural waveform coding (NWC) module: a compact 1-D convolutional
//! autoencoder with gated linear unit (GLU) blocks, a soft-to-hard quantizer
//! between encoder and decoder, and the combined training loss.
//!
//! Encoder: 55-tap channel expansion (1->100), two GLU blocks, 9-tap stride-2
//! downsampling, two GLU blocks, 9-tap channel reduction to one tanh-bounded
//! code channel (512 samples -> 256 codes). Decoder mirrors it with a
//! depthwise-separable subpixel upsampling stage (256 -> 512 samples).

use std::sync::Arc;

use ndarray::Array2;
use rand::prelude::*;

use crate::diffgraph::{sc, Graph, GraphMelBank, NodeId, ParamId, ParamStore, Scalar};
use crate::dsp::{MelFilterbank, FRAME_LEN};
use crate::error::{CodecError, Result};
use crate::quant;

/// Codes per 512-sample frame after the stride-2 encoder.
pub const CODES_PER_FRAME: usize = FRAME_LEN / 2;
/// Quantizer codebook size for NWC codes.
pub const NUM_CODES: usize = 32;
/// Initial softmax sharpness.
pub const ALPHA_INIT: f64 = 300.0;
/// Leaky rectifier slope used throughout.
pub const LEAKY_SLOPE: f64 = 0.2;

const GLU_BOTTLENECK: usize = 20;

/// Loss term weights.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub mse: f64,
    pub mel: f64,
    pub quant: f64,
    pub entropy: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        // waveform-to-mel blend 10:1; quantization penalty 0.5; the entropy
        // weight starts at 0 and is adapted by the training controller
        LossWeights { mse: 1.0, mel: 0.1, quant: 0.5, entropy: 0.0 }
    }
}

#[derive(Debug, Clone, Copy)]
struct GluIds {
    bottleneck_w: ParamId,
    bottleneck_b: ParamId,
    dilated1_w: ParamId,
    dilated1_b: ParamId,
    dilated2_w: ParamId,
    dilated2_b: ParamId,
    expand_w: ParamId,
    expand_b: ParamId,
    gate_w: ParamId,
    gate_b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct ConvIds {
    w: ParamId,
    b: ParamId,
}

/// Parameter handles for one NWC module inside a shared [`ParamStore`].
#[derive(Debug, Clone)]
pub struct NwcModel {
    prefix: String,
    enc_expand: ConvIds,
    enc_glu: [GluIds; 4],
    enc_down: ConvIds,
    enc_reduce: ConvIds,
    dec_expand: ConvIds,
    dec_glu: [GluIds; 4],
    up_depthwise: ConvIds,
    up_pointwise: ConvIds,
    dec_reduce: ConvIds,
    quant_beta: ParamId,
    quant_alpha: ParamId,
}

fn register_conv<S: Scalar>(
    store: &mut ParamStore<S>,
    name: &str,
    k: usize,
    c_in: usize,
    c_out: usize,
    rng: &mut StdRng,
) -> ConvIds {
    ConvIds {
        w: store.add_conv_weight(&format!("{}.w", name), k * c_in, c_out, rng),
        b: store.add_zeros(&format!("{}.b", name), 1, c_out),
    }
}

fn register_glu<S: Scalar>(
    store: &mut ParamStore<S>,
    name: &str,
    channels: usize,
    rng: &mut StdRng,
) -> GluIds {
    let bn = register_conv(store, &format!("{}.bottleneck", name), 1, channels, GLU_BOTTLENECK, rng);
    let d1 = register_conv(store, &format!("{}.dilated1", name), 15, GLU_BOTTLENECK, GLU_BOTTLENECK, rng);
    let d2 = register_conv(store, &format!("{}.dilated2", name), 15, GLU_BOTTLENECK, GLU_BOTTLENECK, rng);
    let ex = register_conv(store, &format!("{}.expand", name), 9, GLU_BOTTLENECK, channels, rng);
    let gt = register_conv(store, &format!("{}.gate", name), 1, GLU_BOTTLENECK, channels, rng);
    GluIds {
        bottleneck_w: bn.w,
        bottleneck_b: bn.b,
        dilated1_w: d1.w,
        dilated1_b: d1.b,
        dilated2_w: d2.w,
        dilated2_b: d2.b,
        expand_w: ex.w,
        expand_b: ex.b,
        gate_w: gt.w,
        gate_b: gt.b,
    }
}

/// Outputs of the quantizer sub-graph.
pub struct QuantNodes {
    /// Soft assignment matrix (N, K).
    pub soft_assign: NodeId,
    /// Soft-quantized code values (N, 1).
    pub recon: NodeId,
    /// Scalar sqrt-sparsity penalty, in [1, sqrt(K)].
    pub penalty: NodeId,
    /// Scalar entropy of the mean code distribution, bits.
    pub entropy: NodeId,
}

/// Everything the trainer needs from one train-mode forward pass.
pub struct TrainForward {
    pub code: NodeId,
    pub quant: QuantNodes,
    pub recon: NodeId,
    pub loss: NodeId,
    pub mse: NodeId,
    pub mel: NodeId,
}

impl NwcModel {
    /// Register all parameters under `prefix` in `store`.
    pub fn register<S: Scalar>(store: &mut ParamStore<S>, prefix: &str, rng: &mut StdRng) -> Self {
        let p = |s: &str| format!("{}.{}", prefix, s);
        let enc_expand = register_conv(store, &p("enc.expand"), 55, 1, 100, rng);
        let enc_glu = [
            register_glu(store, &p("enc.glu1"), 100, rng),
            register_glu(store, &p("enc.glu2"), 100, rng),
            register_glu(store, &p("enc.glu3"), 100, rng),
            register_glu(store, &p("enc.glu4"), 100, rng),
        ];
        let enc_down = register_conv(store, &p("enc.down"), 9, 100, 100, rng);
        let enc_reduce = register_conv(store, &p("enc.reduce"), 9, 100, 1, rng);
        let dec_expand = register_conv(store, &p("dec.expand"), 9, 1, 100, rng);
        let dec_glu = [
            register_glu(store, &p("dec.glu1"), 100, rng),
            register_glu(store, &p("dec.glu2"), 100, rng),
            register_glu(store, &p("dec.glu3"), 50, rng),
            register_glu(store, &p("dec.glu4"), 50, rng),
        ];
        // upsampling pair: depthwise 9-tap per channel, then 1x1 pointwise mix
        let up_depthwise = ConvIds {
            w: store.add_conv_weight(&p("dec.up.depthwise.w"), 9, 100, rng),
            b: store.add_zeros(&p("dec.up.depthwise.b"), 1, 100),
        };
        let up_pointwise = register_conv(store, &p("dec.up.pointwise"), 1, 100, 100, rng);
        let dec_reduce = register_conv(store, &p("dec.reduce"), 55, 50, 1, rng);
        let centroids = quant::QuantizerState::uniform(NUM_CODES, -1.0, 1.0, ALPHA_INIT)
            .expect("static quantizer geometry");
        let quant_beta = store.add(
            &p("quant.beta"),
            Array2::from_shape_fn((NUM_CODES, 1), |(k, _)| sc::<S>(centroids.centroids[k])),
        );
        let quant_alpha = store.add(&p("quant.alpha"), Array2::from_elem((1, 1), sc::<S>(ALPHA_INIT)));
        NwcModel {
            prefix: prefix.to_string(),
            enc_expand,
            enc_glu,
            enc_down,
            enc_reduce,
            dec_expand,
            dec_glu,
            up_depthwise,
            up_pointwise,
            dec_reduce,
            quant_beta,
            quant_alpha,
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn quant_param_ids(&self) -> [ParamId; 2] {
        [self.quant_beta, self.quant_alpha]
    }

    /// All parameter ids belonging to this module.
    pub fn param_ids<S: Scalar>(&self, store: &ParamStore<S>) -> Vec<ParamId> {
        (0..store.len())
            .map(ParamId)
            .filter(|&id| store.name(id).starts_with(&format!("{}.", self.prefix)))
            .collect()
    }

    pub fn param_count<S: Scalar>(&self, store: &ParamStore<S>) -> usize {
        store.param_count_prefixed(&format!("{}.", self.prefix))
    }

    fn glu<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        x: NodeId,
        ids: &GluIds,
    ) -> Result<NodeId> {
        let bw = g.param(store, ids.bottleneck_w);
        let bb = g.param(store, ids.bottleneck_b);
        let bottleneck = g.conv1d(x, bw, bb, 1, 1)?;
        let bottleneck = g.leaky_relu(bottleneck, LEAKY_SLOPE);
        let d1w = g.param(store, ids.dilated1_w);
        let d1b = g.param(store, ids.dilated1_b);
        let d1 = g.conv1d(bottleneck, d1w, d1b, 1, 1)?;
        let d1 = g.leaky_relu(d1, LEAKY_SLOPE);
        let d2w = g.param(store, ids.dilated2_w);
        let d2b = g.param(store, ids.dilated2_b);
        let d2 = g.conv1d(d1, d2w, d2b, 1, 2)?;
        let d2 = g.leaky_relu(d2, LEAKY_SLOPE);
        let ew = g.param(store, ids.expand_w);
        let eb = g.param(store, ids.expand_b);
        let main = g.conv1d(d2, ew, eb, 1, 1)?;
        let gw = g.param(store, ids.gate_w);
        let gb = g.param(store, ids.gate_b);
        let gate = g.conv1d(bottleneck, gw, gb, 1, 1)?;
        let gate = g.sigmoid(gate);
        let gated = g.mul(main, gate);
        Ok(g.add(x, gated))
    }

    /// Encoder sub-graph: (512, 1) input node -> (256, 1) tanh-bounded codes.
    pub fn encode_graph<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        x: NodeId,
    ) -> Result<NodeId> {
        if g.value(x).dim() != (FRAME_LEN, 1) {
            return Err(CodecError::InvalidInput(format!(
                "encode: expects ({}, 1) frame, got {:?}",
                FRAME_LEN,
                g.value(x).dim()
            )));
        }
        let w = g.param(store, self.enc_expand.w);
        let b = g.param(store, self.enc_expand.b);
        let h = g.conv1d(x, w, b, 1, 1)?;
        let mut h = g.leaky_relu(h, LEAKY_SLOPE);
        for ids in &self.enc_glu[..2] {
            h = self.glu(g, store, h, ids)?;
        }
        let w = g.param(store, self.enc_down.w);
        let b = g.param(store, self.enc_down.b);
        let h = g.conv1d(h, w, b, 2, 1)?;
        let mut h = g.leaky_relu(h, LEAKY_SLOPE);
        for ids in &self.enc_glu[2..] {
            h = self.glu(g, store, h, ids)?;
        }
        let w = g.param(store, self.enc_reduce.w);
        let b = g.param(store, self.enc_reduce.b);
        let h = g.conv1d(h, w, b, 1, 1)?;
        Ok(g.tanh(h))
    }

    /// Decoder sub-graph: (256, 1) codes -> (512, 1) samples.
    pub fn decode_graph<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        code: NodeId,
    ) -> Result<NodeId> {
        if g.value(code).dim() != (CODES_PER_FRAME, 1) {
            return Err(CodecError::InvalidInput(format!(
                "decode: expects ({}, 1) codes, got {:?}",
                CODES_PER_FRAME,
                g.value(code).dim()
            )));
        }
        let w = g.param(store, self.dec_expand.w);
        let b = g.param(store, self.dec_expand.b);
        let h = g.conv1d(code, w, b, 1, 1)?;
        let mut h = g.leaky_relu(h, LEAKY_SLOPE);
        for ids in &self.dec_glu[..2] {
            h = self.glu(g, store, h, ids)?;
        }
        let dw = g.param(store, self.up_depthwise.w);
        let db = g.param(store, self.up_depthwise.b);
        let h = g.depthwise_conv1d(h, dw, db)?;
        let pw = g.param(store, self.up_pointwise.w);
        let pb = g.param(store, self.up_pointwise.b);
        let h = g.conv1d(h, pw, pb, 1, 1)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE);
        let mut h = g.subpixel_shuffle(h)?; // (512, 50)
        for ids in &self.dec_glu[2..] {
            h = self.glu(g, store, h, ids)?;
        }
        let w = g.param(store, self.dec_reduce.w);
        let b = g.param(store, self.dec_reduce.b);
        g.conv1d(h, w, b, 1, 1)
    }

    /// Soft quantization sub-graph on a (N, 1) code node.
    pub fn quantize_graph<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        code: NodeId,
    ) -> Result<QuantNodes> {
        let beta = g.param(store, self.quant_beta);
        let alpha = g.param(store, self.quant_alpha);
        let dist = g.pairwise_absdiff(code, beta)?;
        let logits = g.neg_scale(dist, alpha);
        let soft = g.row_softmax(logits);
        let rooted = g.sqrt(soft);
        let total = g.sum_all(rooted);
        let penalty = g.scale(total, 1.0 / g.value(soft).nrows() as f64);
        let probs = g.col_mean(soft);
        let entropy = g.entropy_bits(probs);
        let recon = g.matmul(soft, beta)?;
        Ok(QuantNodes { soft_assign: soft, recon, penalty, entropy })
    }

    /// Full train-mode pass: encode, soft-quantize, decode, loss against
    /// `target` (usually the same node as `x`; a different target lets a
    /// cascade stage be scored in the signal domain).
    pub fn forward_train<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        x: NodeId,
        target: NodeId,
        banks: &[Arc<GraphMelBank<S>>],
        weights: &LossWeights,
    ) -> Result<TrainForward> {
        let code = self.encode_graph(g, store, x)?;
        let quant = self.quantize_graph(g, store, code)?;
        let recon = self.decode_graph(g, store, quant.recon)?;
        let (loss, mse, mel) = build_loss(
            g,
            target,
            recon,
            &[(quant.penalty, quant.entropy)],
            banks,
            weights,
        )?;
        Ok(TrainForward { code, quant, recon, loss, mse, mel })
    }

    /// Inference encode: frame samples -> hard code indices.
    pub fn encode_indices<S: Scalar>(&self, store: &ParamStore<S>, frame: &[f64]) -> Result<Vec<u16>> {
        let mut g = Graph::<S>::new();
        let x = g.input(Array2::from_shape_fn((frame.len(), 1), |(t, _)| sc::<S>(frame[t])));
        let code = self.encode_graph(&mut g, store, x)?;
        let values: Vec<f64> = g.value(code).iter().map(|&v| Scalar::to_f64(v)).collect();
        let centroids = self.centroids(store);
        Ok(quant::hard_assign(&quant::distance_matrix(&values, &centroids)))
    }

    /// Inference decode: hard code indices -> 512 reconstructed samples.
    pub fn decode_indices<S: Scalar>(&self, store: &ParamStore<S>, indices: &[u16]) -> Result<Vec<f64>> {
        let centroids = self.centroids(store);
        let state = quant::QuantizerState {
            centroids,
            alpha: Scalar::to_f64(store.value(self.quant_alpha)[[0, 0]]),
        };
        let values = state.decode(indices)?;
        let mut g = Graph::<S>::new();
        let code = g.input(Array2::from_shape_fn((values.len(), 1), |(t, _)| sc::<S>(values[t])));
        let out = self.decode_graph(&mut g, store, code)?;
        Ok(g.value(out).iter().map(|&v| Scalar::to_f64(v)).collect())
    }

    pub fn centroids<S: Scalar>(&self, store: &ParamStore<S>) -> Vec<f64> {
        store.value(self.quant_beta).iter().map(|&v| Scalar::to_f64(v)).collect()
    }

    pub fn alpha<S: Scalar>(&self, store: &ParamStore<S>) -> f64 {
        Scalar::to_f64(store.value(self.quant_alpha)[[0, 0]])
    }
}

/// Combined loss: weights.mse * sum((target - recon)^2)
/// + weights.mel * sum over banks of sum((mel(target) - mel(recon))^2)
/// + weights.quant * sum of penalties + weights.entropy * sum of entropies.
///
/// Returns (loss, mse term node, mel term node) for logging.
pub fn build_loss<S: Scalar>(
    g: &mut Graph<S>,
    target: NodeId,
    recon: NodeId,
    regularizers: &[(NodeId, NodeId)],
    banks: &[Arc<GraphMelBank<S>>],
    weights: &LossWeights,
) -> Result<(NodeId, NodeId, NodeId)> {
    let diff = g.sub(target, recon);
    let sq = g.mul(diff, diff);
    let mse = g.sum_all(sq);
    let mut mel = g.input(Array2::zeros((1, 1)));
    for bank in banks {
        let yt = g.mel_spectrum(target, bank)?;
        let yr = g.mel_spectrum(recon, bank)?;
        let d = g.sub(yt, yr);
        let d2 = g.mul(d, d);
        let term = g.sum_all(d2);
        mel = g.add(mel, term);
    }
    let mut loss = g.scale(mse, weights.mse);
    let mel_w = g.scale(mel, weights.mel);
    loss = g.add(loss, mel_w);
    for &(penalty, entropy) in regularizers {
        let p = g.scale(penalty, weights.quant);
        loss = g.add(loss, p);
        let e = g.scale(entropy, weights.entropy);
        loss = g.add(loss, e);
    }
    Ok((loss, mse, mel))
}

/// The four mel filterbanks (8, 16, 32, 128 bands) used by the training loss.
pub fn training_mel_banks<S: Scalar>() -> Result<Vec<Arc<GraphMelBank<S>>>> {
    [8usize, 16, 32, 128]
        .iter()
        .map(|&b| Ok(GraphMelBank::from_filterbank(&MelFilterbank::new(b)?)))
        .collect()
}

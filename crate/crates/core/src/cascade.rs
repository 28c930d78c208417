//! The residual-coding cascade: LPC front end plus a chain of residual coder
//! stages, where stage i+1 codes what stage i failed to reconstruct.
//!
//! Residual coders are strategy objects behind [`ResidualCoder`], registered
//! by name in a [`CoderRegistry`] and selected at runtime from the cascade
//! configuration. The shipped strategies are `"nwc"` (the neural waveform
//! coder) and `"identity"` (a lossless pass-through used for pipeline tests
//! and as an upper-bound reference).

use ndarray::Array2;
use rand::prelude::*;

use crate::bitstream::{
    BitReader, BitWriter, Container, HuffmanCodebook, ModuleDescriptor, ModuleKind, NormDescriptor,
};
use crate::diffgraph::{sc, Graph, NodeId, ParamId, ParamStore, Scalar};
use crate::dsp::{
    deemphasis, denormalize, frame_signal, highpass, normalize, overlap_add, preemphasis,
    BiquadState, Frame, GainMeta, FRAME_LEN, HOP, OVERLAP, SAMPLE_RATE,
};
use crate::error::{CodecError, Result};
use crate::lpc::{
    analyze_frame, compute_residual, lsp_to_lpc, repair_lsp, synthesize, ANALYSIS_LEN, ORDER,
    SPAN_START,
};
use crate::model::{NwcModel, CODES_PER_FRAME, NUM_CODES};
use crate::quant::QuantizerState;

/// Centroid count of the LSP quantizer.
pub const LSP_NUM_CODES: usize = 256;
/// Initial softness of the LSP quantizer.
pub const LSP_ALPHA_INIT: f64 = 300.0;

/// Graph nodes produced by a stage's differentiable forward pass.
pub struct StageForward {
    /// Soft reconstruction of the stage input, (512, 1).
    pub recon: NodeId,
    /// Scalar quantization sparsity penalty.
    pub penalty: NodeId,
    /// Scalar soft entropy estimate in bits per code.
    pub entropy: NodeId,
    /// Soft assignment matrix (codes, alphabet), when the stage quantizes.
    pub soft_assign: Option<NodeId>,
}

/// One residual-coding strategy. Implementations own parameter ids into the
/// shared store but not the parameters themselves.
pub trait ResidualCoder<S: Scalar>: Send + Sync {
    /// Registry name this coder was created under.
    fn strategy_name(&self) -> &'static str;
    /// Container module kind for streams produced by this coder.
    fn kind(&self) -> ModuleKind;
    /// Symbols emitted per 512-sample frame.
    fn codes_per_frame(&self) -> usize;
    /// Alphabet size; 0 means raw 16-bit symbols with no quantizer table.
    fn num_codes(&self) -> usize;
    /// Quantizer centroid table for the container header.
    fn centroids(&self, store: &ParamStore<S>) -> Vec<f32>;
    /// Hard-encode one frame of residual samples.
    fn encode_frame(&self, store: &ParamStore<S>, frame: &[f64]) -> Result<Vec<u16>>;
    /// Reconstruct a frame from its symbols.
    fn decode_frame(&self, store: &ParamStore<S>, indices: &[u16]) -> Result<Vec<f64>>;
    /// Differentiable soft forward pass for joint training.
    fn soft_forward(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        x: NodeId,
    ) -> Result<StageForward>;
    /// Trainable parameter ids of this stage.
    fn param_ids(&self, store: &ParamStore<S>) -> Vec<ParamId>;
    /// Gain applied to the stage input before encoding; reconstructions are
    /// divided by it. Residual energy shrinks stage over stage, so later
    /// stages re-scale their input to the level the coder was designed for.
    fn input_gain(&self, _store: &ParamStore<S>) -> f64 {
        1.0
    }
    /// Set the input gain. No-op for stages without one.
    fn set_input_gain(&self, _store: &mut ParamStore<S>, _gain: f64) {}
    /// Downcast hook for trainers that need the underlying neural model.
    fn as_nwc(&self) -> Option<&NwcModel> {
        None
    }
}

/// Neural waveform coder stage.
pub struct NwcStage {
    model: NwcModel,
    /// Name of this stage's input-gain parameter in the store.
    gain_name: String,
}

impl NwcStage {
    fn gain<S: Scalar>(&self, store: &ParamStore<S>) -> f64 {
        store
            .id_of(&self.gain_name)
            .map(|id| Scalar::to_f64(store.value(id)[[0, 0]]))
            .unwrap_or(1.0)
    }
}

impl<S: Scalar> ResidualCoder<S> for NwcStage {
    fn strategy_name(&self) -> &'static str {
        "nwc"
    }

    fn kind(&self) -> ModuleKind {
        ModuleKind::Nwc
    }

    fn codes_per_frame(&self) -> usize {
        CODES_PER_FRAME
    }

    fn num_codes(&self) -> usize {
        NUM_CODES
    }

    fn centroids(&self, store: &ParamStore<S>) -> Vec<f32> {
        self.model.centroids(store).iter().map(|&v| v as f32).collect()
    }

    fn encode_frame(&self, store: &ParamStore<S>, frame: &[f64]) -> Result<Vec<u16>> {
        let g0 = self.gain(store);
        if g0 == 1.0 {
            return self.model.encode_indices(store, frame);
        }
        let scaled: Vec<f64> = frame.iter().map(|v| v * g0).collect();
        self.model.encode_indices(store, &scaled)
    }

    fn decode_frame(&self, store: &ParamStore<S>, indices: &[u16]) -> Result<Vec<f64>> {
        let mut out = self.model.decode_indices(store, indices)?;
        let g0 = self.gain(store);
        if g0 != 1.0 {
            for v in &mut out {
                *v /= g0;
            }
        }
        Ok(out)
    }

    fn soft_forward(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        x: NodeId,
    ) -> Result<StageForward> {
        let g0 = self.gain(store);
        let x = if g0 == 1.0 { x } else { g.scale(x, g0) };
        let code = self.model.encode_graph(g, store, x)?;
        let quant = self.model.quantize_graph(g, store, code)?;
        let recon = self.model.decode_graph(g, store, quant.recon)?;
        let recon = if g0 == 1.0 { recon } else { g.scale(recon, 1.0 / g0) };
        Ok(StageForward {
            recon,
            penalty: quant.penalty,
            entropy: quant.entropy,
            soft_assign: Some(quant.soft_assign),
        })
    }

    fn param_ids(&self, store: &ParamStore<S>) -> Vec<ParamId> {
        self.model.param_ids(store)
    }

    fn input_gain(&self, store: &ParamStore<S>) -> f64 {
        self.gain(store)
    }

    fn set_input_gain(&self, store: &mut ParamStore<S>, gain: f64) {
        if let Some(id) = store.id_of(&self.gain_name) {
            store.value_mut(id)[[0, 0]] = sc::<S>(gain);
        }
    }

    fn as_nwc(&self) -> Option<&NwcModel> {
        Some(&self.model)
    }
}

/// Lossless pass-through stage: every sample is stored as the two 16-bit
/// halves of its `f32` bit pattern. No parameters, no quantizer table.
pub struct IdentityStage;

impl<S: Scalar> ResidualCoder<S> for IdentityStage {
    fn strategy_name(&self) -> &'static str {
        "identity"
    }

    fn kind(&self) -> ModuleKind {
        ModuleKind::Identity
    }

    fn codes_per_frame(&self) -> usize {
        2 * FRAME_LEN
    }

    fn num_codes(&self) -> usize {
        0
    }

    fn centroids(&self, _store: &ParamStore<S>) -> Vec<f32> {
        Vec::new()
    }

    fn encode_frame(&self, _store: &ParamStore<S>, frame: &[f64]) -> Result<Vec<u16>> {
        if frame.len() != FRAME_LEN {
            return Err(CodecError::InvalidInput(format!(
                "identity stage: frame of {} samples, expected {}",
                frame.len(),
                FRAME_LEN
            )));
        }
        let mut out = Vec::with_capacity(2 * FRAME_LEN);
        for &v in frame {
            let bits = (v as f32).to_bits();
            out.push((bits >> 16) as u16);
            out.push((bits & 0xffff) as u16);
        }
        Ok(out)
    }

    fn decode_frame(&self, _store: &ParamStore<S>, indices: &[u16]) -> Result<Vec<f64>> {
        if indices.len() != 2 * FRAME_LEN {
            return Err(CodecError::Bitstream(format!(
                "identity stage: {} symbols, expected {}",
                indices.len(),
                2 * FRAME_LEN
            )));
        }
        Ok(indices
            .chunks_exact(2)
            .map(|p| f32::from_bits(((p[0] as u32) << 16) | p[1] as u32) as f64)
            .collect())
    }

    fn soft_forward(
        &self,
        g: &mut Graph<S>,
        _store: &ParamStore<S>,
        x: NodeId,
    ) -> Result<StageForward> {
        let penalty = g.input(Array2::zeros((1, 1)));
        let entropy = g.input(Array2::zeros((1, 1)));
        Ok(StageForward { recon: x, penalty, entropy, soft_assign: None })
    }

    fn param_ids(&self, _store: &ParamStore<S>) -> Vec<ParamId> {
        Vec::new()
    }
}

/// Builds one stage, registering its parameters under `prefix`.
pub type CoderFactory<S> =
    fn(&mut ParamStore<S>, &str, &mut StdRng) -> Box<dyn ResidualCoder<S>>;

/// Name-keyed registry of residual-coder strategies.
pub struct CoderRegistry<S: Scalar> {
    factories: Vec<(String, CoderFactory<S>)>,
}

impl<S: Scalar> CoderRegistry<S> {
    pub fn new() -> Self {
        CoderRegistry { factories: Vec::new() }
    }

    /// Registry with the shipped strategies.
    pub fn with_defaults() -> Self {
        let mut r = Self::new();
        r.register("nwc", |store, prefix, rng| {
            let model = NwcModel::register(store, prefix, rng);
            let gain_name = format!("{}.gain", prefix);
            store.add(&gain_name, Array2::from_elem((1, 1), sc::<S>(1.0)));
            Box::new(NwcStage { model, gain_name })
        });
        r.register("identity", |_store, _prefix, _rng| Box::new(IdentityStage));
        r
    }

    pub fn register(&mut self, name: &str, factory: CoderFactory<S>) {
        self.factories.retain(|(n, _)| n != name);
        self.factories.push((name.to_string(), factory));
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn create(
        &self,
        name: &str,
        store: &mut ParamStore<S>,
        prefix: &str,
        rng: &mut StdRng,
    ) -> Result<Box<dyn ResidualCoder<S>>> {
        let (_, factory) = self
            .factories
            .iter()
            .find(|(n, _)| n == name)
            .ok_or_else(|| {
                CodecError::Config(format!(
                    "unknown residual coder '{}' (have: {})",
                    name,
                    self.names().join(", ")
                ))
            })?;
        Ok(factory(store, prefix, rng))
    }
}

impl<S: Scalar> Default for CoderRegistry<S> {
    fn default() -> Self {
        Self::with_defaults()
    }
}

/// Cascade layout and rate target.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeConfig {
    /// Run the LPC front end and transmit quantized LSP indices.
    pub use_lpc: bool,
    /// Residual coder strategy names, applied in order.
    pub stage_kinds: Vec<String>,
    /// Bitrate the entropy controller steers toward.
    pub target_bitrate_bps: f64,
}

impl CascadeConfig {
    /// Preset operating points.
    pub fn from_mode(mode: &str) -> Result<Self> {
        let (stages, target) = match mode {
            "low" => (1, 12_000.0),
            "mid" => (1, 19_200.0),
            "high" => (2, 32_000.0),
            other => {
                return Err(CodecError::Config(format!(
                    "unknown mode '{}' (expected low, mid, or high)",
                    other
                )))
            }
        };
        Ok(CascadeConfig {
            use_lpc: true,
            stage_kinds: vec!["nwc".to_string(); stages],
            target_bitrate_bps: target,
        })
    }

    /// Rate target expressed per frame: bitrate * hop / sample rate.
    pub fn target_bits_per_frame(&self) -> f64 {
        self.target_bitrate_bps * HOP as f64 / SAMPLE_RATE as f64
    }

    /// Container module count: the LSP stream plus one per stage.
    pub fn num_modules(&self) -> usize {
        self.stage_kinds.len() + usize::from(self.use_lpc)
    }
}

/// Per-frame analysis output cached for coding and training.
#[derive(Debug, Clone)]
pub struct PreparedFrame {
    pub start_index: usize,
    pub padded: bool,
    /// Unquantized LSP angles (empty when the LPC front end is off).
    pub lsp: Vec<f64>,
    pub lsp_indices: Vec<u16>,
    /// Synthesis coefficients recovered from the quantized LSP values.
    pub coeffs: Vec<f64>,
    /// First-stage coding target x^(1): the LPC residual, or the plain
    /// normalized frame when the front end is off.
    pub residual: Vec<f64>,
}

/// A preprocessed utterance with per-frame analysis.
pub struct PreparedSignal {
    pub norm: GainMeta,
    pub original_len: usize,
    pub frames: Vec<PreparedFrame>,
}

/// Symbol streams for one frame, in container module order minus the LSP slot.
struct FrameCodes {
    lsp_indices: Vec<u16>,
    stage_indices: Vec<Vec<u16>>,
}

/// The full codec: shared parameter store, LSP quantizer, and stage chain.
pub struct Cascade<S: Scalar> {
    pub store: ParamStore<S>,
    pub config: CascadeConfig,
    lsp_beta: ParamId,
    lsp_alpha: ParamId,
    stages: Vec<Box<dyn ResidualCoder<S>>>,
    /// Per-module Huffman codebooks (container order), filled in by training.
    /// Missing books are rebuilt per utterance from symbol histograms.
    pub codebooks: Vec<Option<HuffmanCodebook>>,
}

fn meta_to_norm(m: &GainMeta) -> NormDescriptor {
    NormDescriptor { std: m.std, peak: m.peak, degenerate: m.degenerate }
}

fn norm_to_meta(n: &NormDescriptor) -> GainMeta {
    GainMeta { std: n.std, peak: n.peak, degenerate: n.degenerate }
}

/// Slice `len` samples starting at signed offset `start`, zero-padding
/// anything outside the signal.
fn slice_padded(signal: &[f64], start: isize, len: usize) -> Vec<f64> {
    (0..len)
        .map(|j| {
            let t = start + j as isize;
            if t < 0 || t as usize >= signal.len() {
                0.0
            } else {
                signal[t as usize]
            }
        })
        .collect()
}

/// High-pass, pre-emphasize, and normalize an utterance.
pub fn preprocess(signal: &[f64]) -> Result<(Vec<f64>, GainMeta)> {
    let (hp, _) = highpass(signal, BiquadState::default());
    let (pe, _) = preemphasis(&hp, 0.0);
    normalize(&pe)
}

fn read_u16_raw(reader: &mut BitReader) -> Result<u16> {
    let mut v = 0u32;
    for _ in 0..16 {
        v = (v << 1) | reader.read_bit()?;
    }
    Ok(v as u16)
}

impl<S: Scalar> Cascade<S> {
    pub fn new(config: CascadeConfig, seed: u64, registry: &CoderRegistry<S>) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = StdRng::seed_from_u64(seed);
        // LSP centroids: uniform over the open interval (0, pi)
        let step = std::f64::consts::PI / (LSP_NUM_CODES + 1) as f64;
        let lsp_beta = store.add(
            "lsp.quant.beta",
            Array2::from_shape_fn((LSP_NUM_CODES, 1), |(k, _)| sc::<S>((k + 1) as f64 * step)),
        );
        let lsp_alpha = store.add(
            "lsp.quant.alpha",
            Array2::from_elem((1, 1), sc::<S>(LSP_ALPHA_INIT)),
        );
        let mut stages = Vec::new();
        for (i, kind) in config.stage_kinds.iter().enumerate() {
            stages.push(registry.create(kind, &mut store, &format!("m{}", i), &mut rng)?);
        }
        let codebooks = vec![None; config.num_modules()];
        Ok(Cascade { store, config, lsp_beta, lsp_alpha, stages, codebooks })
    }

    pub fn stages(&self) -> &[Box<dyn ResidualCoder<S>>] {
        &self.stages
    }

    /// Set stage `idx`'s input gain (no-op for stages without one).
    pub fn set_stage_gain(&mut self, idx: usize, gain: f64) {
        self.stages[idx].set_input_gain(&mut self.store, gain);
    }

    pub fn lsp_param_ids(&self) -> [ParamId; 2] {
        [self.lsp_beta, self.lsp_alpha]
    }

    /// Current hard LSP quantizer.
    pub fn lsp_quantizer(&self) -> QuantizerState {
        QuantizerState {
            centroids: self
                .store
                .value(self.lsp_beta)
                .iter()
                .map(|&v| Scalar::to_f64(v))
                .collect(),
            alpha: Scalar::to_f64(self.store.value(self.lsp_alpha)[[0, 0]]),
        }
    }

    /// Soft LSP quantization sub-graph on an (N, 1) node of LSP angles;
    /// used when the quantizer is trained jointly with the stages.
    pub fn lsp_soft_forward(&self, g: &mut Graph<S>, values: NodeId) -> Result<StageForward> {
        let beta = g.param(&self.store, self.lsp_beta);
        let alpha = g.param(&self.store, self.lsp_alpha);
        let dist = g.pairwise_absdiff(values, beta)?;
        let logits = g.neg_scale(dist, alpha);
        let soft = g.row_softmax(logits);
        let rooted = g.sqrt(soft);
        let total = g.sum_all(rooted);
        let penalty = g.scale(total, 1.0 / g.value(soft).nrows() as f64);
        let probs = g.col_mean(soft);
        let entropy = g.entropy_bits(probs);
        let recon = g.matmul(soft, beta)?;
        Ok(StageForward { recon, penalty, entropy, soft_assign: Some(soft) })
    }

    /// Quantize-decode-repair one frame's LSP angles into synthesis
    /// coefficients. The residual computed against these absorbs the
    /// quantization error.
    fn quantized_coeffs(&self, lsp: &[f64]) -> Result<(Vec<u16>, Vec<f64>)> {
        let qs = self.lsp_quantizer();
        let indices = qs.encode(lsp);
        let mut lsp_q = qs.decode(&indices)?;
        repair_lsp(&mut lsp_q);
        let coeffs = lsp_to_lpc(&lsp_q)?;
        Ok((indices, coeffs))
    }

    /// Preprocess and analyze an utterance into per-frame coding targets.
    pub fn prepare(&self, signal: &[f64]) -> Result<PreparedSignal> {
        let (norm_sig, norm) = preprocess(signal)?;
        let frames = frame_signal(&norm_sig)?;
        let mut prepared = Vec::with_capacity(frames.len());
        for f in &frames {
            if self.config.use_lpc {
                let analysis = slice_padded(
                    &norm_sig,
                    f.start_index as isize - SPAN_START as isize,
                    ANALYSIS_LEN,
                );
                let (_, lsp) = analyze_frame(&analysis)?;
                let (lsp_indices, coeffs) = self.quantized_coeffs(&lsp)?;
                let residual = compute_residual(&analysis, &coeffs)?;
                prepared.push(PreparedFrame {
                    start_index: f.start_index,
                    padded: f.padded,
                    lsp,
                    lsp_indices,
                    coeffs,
                    residual,
                });
            } else {
                prepared.push(PreparedFrame {
                    start_index: f.start_index,
                    padded: f.padded,
                    lsp: Vec::new(),
                    lsp_indices: Vec::new(),
                    coeffs: vec![0.0; ORDER],
                    residual: f.samples.clone(),
                });
            }
        }
        Ok(PreparedSignal { norm, original_len: signal.len(), frames: prepared })
    }

    /// Run the residual chain on one frame: stage i codes x^(i) and the next
    /// stage receives x^(i+1) = x^(i) - decode(encode(x^(i))).
    ///
    /// Returns per-stage symbol streams and the summed reconstruction.
    pub fn code_frame(&self, residual: &[f64]) -> Result<(Vec<Vec<u16>>, Vec<f64>)> {
        let mut x = residual.to_vec();
        let mut sum = vec![0.0f64; FRAME_LEN];
        let mut all = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let indices = stage.encode_frame(&self.store, &x)?;
            let recon = stage.decode_frame(&self.store, &indices)?;
            for t in 0..FRAME_LEN {
                x[t] -= recon[t];
                sum[t] += recon[t];
            }
            all.push(indices);
        }
        Ok((all, sum))
    }

    /// Like [`code_frame`](Self::code_frame) but for the send side only: the
    /// last stage's reconstruction is never consumed, so its decode is
    /// skipped.
    fn code_frame_indices(&self, residual: &[f64]) -> Result<Vec<Vec<u16>>> {
        let mut x = residual.to_vec();
        let mut all = Vec::with_capacity(self.stages.len());
        for (i, stage) in self.stages.iter().enumerate() {
            let indices = stage.encode_frame(&self.store, &x)?;
            if i + 1 < self.stages.len() {
                let recon = stage.decode_frame(&self.store, &indices)?;
                for t in 0..FRAME_LEN {
                    x[t] -= recon[t];
                }
            }
            all.push(indices);
        }
        Ok(all)
    }

    /// Container module slot of stage `i` (the LSP stream takes slot 0).
    fn stage_slot(&self, i: usize) -> usize {
        i + usize::from(self.config.use_lpc)
    }

    /// Codebooks to pack with: trained ones when present, per-utterance
    /// histogram books otherwise. Raw-symbol modules get no book.
    fn effective_codebooks(&self, frames: &[FrameCodes]) -> Result<Vec<Option<HuffmanCodebook>>> {
        let mut books = Vec::with_capacity(self.config.num_modules());
        if self.config.use_lpc {
            books.push(Some(match &self.codebooks[0] {
                Some(cb) => cb.clone(),
                None => histogram_codebook(LSP_NUM_CODES, frames.iter().map(|f| &f.lsp_indices))?,
            }));
        }
        for (i, stage) in self.stages.iter().enumerate() {
            if stage.num_codes() == 0 {
                books.push(None);
                continue;
            }
            let slot = self.stage_slot(i);
            books.push(Some(match &self.codebooks[slot] {
                Some(cb) => cb.clone(),
                None => histogram_codebook(
                    stage.num_codes(),
                    frames.iter().map(|f| &f.stage_indices[i]),
                )?,
            }));
        }
        Ok(books)
    }

    /// Encode an utterance into a self-contained container.
    pub fn encode_signal(&self, signal: &[f64]) -> Result<Container> {
        let prep = self.prepare(signal)?;
        let mut frames = Vec::with_capacity(prep.frames.len());
        for pf in &prep.frames {
            let stage_indices = self.code_frame_indices(&pf.residual)?;
            frames.push(FrameCodes { lsp_indices: pf.lsp_indices.clone(), stage_indices });
        }
        let books = self.effective_codebooks(&frames)?;

        let mut writer = BitWriter::new();
        for f in &frames {
            if self.config.use_lpc {
                books[0]
                    .as_ref()
                    .expect("lsp module always has a codebook")
                    .encode_into(&mut writer, &f.lsp_indices)?;
            }
            for (i, indices) in f.stage_indices.iter().enumerate() {
                match &books[self.stage_slot(i)] {
                    Some(cb) => cb.encode_into(&mut writer, indices)?,
                    None => {
                        for &v in indices {
                            writer.write_bits(v as u32, 16);
                        }
                    }
                }
            }
        }
        let (payload, payload_bits) = writer.finish();

        let mut modules = Vec::with_capacity(self.config.num_modules());
        if self.config.use_lpc {
            let qs = self.lsp_quantizer();
            modules.push(ModuleDescriptor {
                kind: ModuleKind::Lpc,
                codes_per_frame: ORDER as u16,
                centroids: qs.centroids.iter().map(|&v| v as f32).collect(),
                code_lengths: books[0].as_ref().unwrap().lengths().to_vec(),
            });
        }
        for (i, stage) in self.stages.iter().enumerate() {
            modules.push(ModuleDescriptor {
                kind: stage.kind(),
                codes_per_frame: stage.codes_per_frame() as u16,
                centroids: stage.centroids(&self.store),
                code_lengths: books[self.stage_slot(i)]
                    .as_ref()
                    .map(|cb| cb.lengths().to_vec())
                    .unwrap_or_default(),
            });
        }

        Ok(Container {
            sample_rate: SAMPLE_RATE as u32,
            frame_len: FRAME_LEN as u16,
            overlap: OVERLAP as u16,
            original_len: prep.original_len as u64,
            norm: meta_to_norm(&prep.norm),
            modules,
            num_frames: frames.len() as u32,
            payload_bits,
            payload,
        })
    }

    /// Check that a container was produced by a cascade shaped like this one.
    fn validate_container(&self, c: &Container) -> Result<()> {
        if c.sample_rate != SAMPLE_RATE as u32
            || c.frame_len != FRAME_LEN as u16
            || c.overlap != OVERLAP as u16
        {
            return Err(CodecError::Bitstream(format!(
                "container geometry {}/{}/{} does not match codec {}/{}/{}",
                c.sample_rate, c.frame_len, c.overlap, SAMPLE_RATE, FRAME_LEN, OVERLAP
            )));
        }
        if c.modules.len() != self.config.num_modules() {
            return Err(CodecError::Config(format!(
                "container has {} modules, codec is configured for {}",
                c.modules.len(),
                self.config.num_modules()
            )));
        }
        let mut slot = 0;
        if self.config.use_lpc {
            let m = &c.modules[0];
            if m.kind != ModuleKind::Lpc || m.codes_per_frame as usize != ORDER {
                return Err(CodecError::Config(
                    "container module 0 is not the expected LSP stream".into(),
                ));
            }
            slot = 1;
        }
        for (i, stage) in self.stages.iter().enumerate() {
            let m = &c.modules[slot + i];
            if m.kind != stage.kind() || m.codes_per_frame as usize != stage.codes_per_frame() {
                return Err(CodecError::Config(format!(
                    "container module {} ({:?}, {} codes/frame) does not match stage '{}'",
                    slot + i,
                    m.kind,
                    m.codes_per_frame,
                    stage.strategy_name()
                )));
            }
        }
        Ok(())
    }

    /// Decode a container back to a waveform.
    pub fn decode_container(&self, c: &Container) -> Result<Vec<f64>> {
        self.validate_container(c)?;
        let mut books: Vec<Option<HuffmanCodebook>> = Vec::with_capacity(c.modules.len());
        for m in &c.modules {
            books.push(if m.code_lengths.is_empty() {
                None
            } else {
                Some(HuffmanCodebook::from_lengths(&m.code_lengths)?)
            });
        }
        let mut reader = BitReader::new(&c.payload, c.payload_bits)?;
        let mut frames = Vec::with_capacity(c.num_frames as usize);
        for _ in 0..c.num_frames {
            let lsp_indices = if self.config.use_lpc {
                books[0]
                    .as_ref()
                    .ok_or_else(|| CodecError::Bitstream("LSP module has no codebook".into()))?
                    .decode_from(&mut reader, ORDER)?
            } else {
                Vec::new()
            };
            let mut stage_indices = Vec::with_capacity(self.stages.len());
            for (i, stage) in self.stages.iter().enumerate() {
                let n = stage.codes_per_frame();
                let indices = match &books[self.stage_slot(i)] {
                    Some(cb) => cb.decode_from(&mut reader, n)?,
                    None => (0..n)
                        .map(|_| read_u16_raw(&mut reader))
                        .collect::<Result<Vec<u16>>>()?,
                };
                stage_indices.push(indices);
            }
            frames.push(FrameCodes { lsp_indices, stage_indices });
        }
        if reader.remaining() != 0 {
            return Err(CodecError::Bitstream(format!(
                "{} unread payload bits after the last frame",
                reader.remaining()
            )));
        }
        self.synthesize_frames(&frames, &norm_to_meta(&c.norm), c.original_len as usize)
    }

    /// Receiver-side reconstruction from per-frame symbols. Also used by the
    /// encoder to verify its internal residual stream matches the receiver.
    fn synthesize_frames(
        &self,
        frames: &[FrameCodes],
        norm: &GainMeta,
        original_len: usize,
    ) -> Result<Vec<f64>> {
        let qs = self.lsp_quantizer();
        let mut decoded = Vec::with_capacity(frames.len());
        let mut prev: Option<Vec<f64>> = None;
        for (fi, f) in frames.iter().enumerate() {
            let mut e_hat = vec![0.0f64; FRAME_LEN];
            for (i, stage) in self.stages.iter().enumerate() {
                let recon = stage.decode_frame(&self.store, &f.stage_indices[i])?;
                for t in 0..FRAME_LEN {
                    e_hat[t] += recon[t];
                }
            }
            let samples = if self.config.use_lpc {
                let mut lsp_q = qs.decode(&f.lsp_indices)?;
                repair_lsp(&mut lsp_q);
                let coeffs = lsp_to_lpc(&lsp_q)?;
                // prime the synthesis filter with the last samples the
                // previous frame synthesized before this frame's start
                let history = match &prev {
                    Some(p) => p[HOP - ORDER..HOP].to_vec(),
                    None => vec![0.0; ORDER],
                };
                synthesize(&e_hat, &coeffs, &history)?
            } else {
                e_hat
            };
            prev = Some(samples.clone());
            decoded.push(Frame { samples, start_index: fi * HOP, padded: false });
        }
        let mut out = overlap_add(&decoded)?;
        out.truncate(original_len);
        let out = denormalize(&out, norm);
        let (out, _) = deemphasis(&out, 0.0);
        Ok(out)
    }

    /// Encoder-side reconstruction: analyze, run the residual chain, and
    /// synthesize exactly as a receiver would.
    pub fn round_trip(&self, signal: &[f64]) -> Result<Vec<f64>> {
        let prep = self.prepare(signal)?;
        let mut frames = Vec::with_capacity(prep.frames.len());
        for pf in &prep.frames {
            let (stage_indices, _) = self.code_frame(&pf.residual)?;
            frames.push(FrameCodes { lsp_indices: pf.lsp_indices.clone(), stage_indices });
        }
        self.synthesize_frames(&frames, &prep.norm, prep.original_len)
    }
}

/// Canonical Huffman book from observed symbol streams, add-one smoothed so
/// every symbol stays encodable.
pub fn histogram_codebook<'a>(
    num_codes: usize,
    streams: impl Iterator<Item = &'a Vec<u16>>,
) -> Result<HuffmanCodebook> {
    let mut freq = vec![1.0f64; num_codes];
    for s in streams {
        for &i in s {
            if (i as usize) < num_codes {
                freq[i as usize] += 1.0;
            }
        }
    }
    HuffmanCodebook::from_frequencies(&freq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::speech_like;

    fn identity_cascade() -> Cascade<f64> {
        let config = CascadeConfig {
            use_lpc: true,
            stage_kinds: vec!["identity".to_string()],
            target_bitrate_bps: 0.0,
        };
        Cascade::new(config, 11, &CoderRegistry::with_defaults()).unwrap()
    }

    fn nwc_cascade(stages: usize) -> Cascade<f64> {
        let config = CascadeConfig {
            use_lpc: true,
            stage_kinds: vec!["nwc".to_string(); stages],
            target_bitrate_bps: 32_000.0,
        };
        Cascade::new(config, 11, &CoderRegistry::with_defaults()).unwrap()
    }

    #[test]
    fn mode_presets() {
        let low = CascadeConfig::from_mode("low").unwrap();
        assert!(low.use_lpc && low.stage_kinds == vec!["nwc"]);
        assert_eq!(low.target_bitrate_bps, 12_000.0);
        assert!((low.target_bits_per_frame() - 360.0).abs() < 1e-12);
        let high = CascadeConfig::from_mode("high").unwrap();
        assert_eq!(high.stage_kinds.len(), 2);
        assert_eq!(high.num_modules(), 3);
        assert!(CascadeConfig::from_mode("ultra").is_err());
    }

    #[test]
    fn registry_rejects_unknown_names() {
        let reg = CoderRegistry::<f64>::with_defaults();
        assert!(reg.names().contains(&"nwc") && reg.names().contains(&"identity"));
        let config = CascadeConfig {
            use_lpc: false,
            stage_kinds: vec!["wavelet".to_string()],
            target_bitrate_bps: 0.0,
        };
        match Cascade::<f64>::new(config, 1, &reg) {
            Err(CodecError::Config(_)) => {}
            other => panic!("expected config error, got {:?}", other.err()),
        }
    }

    #[test]
    fn identity_codes_round_trip() {
        let stage = IdentityStage;
        let store = ParamStore::<f64>::new();
        let frame: Vec<f64> = (0..FRAME_LEN).map(|t| ((t * 37) % 101) as f64 / 101.0 - 0.5).collect();
        let codes = ResidualCoder::<f64>::encode_frame(&stage, &store, &frame).unwrap();
        let back = ResidualCoder::<f64>::decode_frame(&stage, &store, &codes).unwrap();
        for (a, b) in frame.iter().zip(&back) {
            assert_eq!(*a as f32, *b as f32);
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn residual_chain_is_additive() {
        // x^(1) = sum of stage reconstructions + final residual, by construction;
        // verify the bookkeeping agrees to machine precision
        let cascade = nwc_cascade(2);
        let x = speech_like(5, 0.2);
        let prep = cascade.prepare(&x).unwrap();
        let pf = &prep.frames[1];
        let (indices, sum) = cascade.code_frame(&pf.residual).unwrap();
        let mut remaining = pf.residual.clone();
        for (i, stage) in cascade.stages().iter().enumerate() {
            let recon = stage.decode_frame(&cascade.store, &indices[i]).unwrap();
            for t in 0..FRAME_LEN {
                remaining[t] -= recon[t];
            }
        }
        for t in 0..FRAME_LEN {
            let rebuilt = sum[t] + remaining[t];
            assert!(
                (rebuilt - pf.residual[t]).abs() <= 1e-12 * pf.residual[t].abs().max(1.0),
                "t={}",
                t
            );
        }
    }

    #[test]
    fn encode_is_deterministic() {
        let x = speech_like(9, 0.3);
        let a = nwc_cascade(1).encode_signal(&x).unwrap();
        let b = nwc_cascade(1).encode_signal(&x).unwrap();
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
    }

    #[test]
    fn encoder_and_receiver_reconstructions_are_bit_exact() {
        let cascade = nwc_cascade(1);
        let x = speech_like(2, 0.4);
        let container = cascade.encode_signal(&x).unwrap();
        let received = cascade.decode_container(&container).unwrap();
        let internal = cascade.round_trip(&x).unwrap();
        assert_eq!(received.len(), x.len());
        assert_eq!(received, internal);
    }

    #[test]
    fn identity_stage_matches_lpc_round_trip() {
        // with the lossless pass-through stage, decoding should reproduce the
        // LPC analysis-synthesis round trip up to f32 rounding of the residual
        let cascade = identity_cascade();
        let x = speech_like(4, 0.5);
        let container = cascade.encode_signal(&x).unwrap();
        let decoded = cascade.decode_container(&container).unwrap();

        // oracle: same pipeline with the exact residual passed through
        let prep = cascade.prepare(&x).unwrap();
        let mut prev: Option<Vec<f64>> = None;
        let mut frames = Vec::new();
        for pf in &prep.frames {
            let history = match &prev {
                Some(p) => p[HOP - ORDER..HOP].to_vec(),
                None => vec![0.0; ORDER],
            };
            let samples = synthesize(&pf.residual, &pf.coeffs, &history).unwrap();
            prev = Some(samples.clone());
            frames.push(Frame { samples, start_index: pf.start_index, padded: pf.padded });
        }
        let mut oracle = overlap_add(&frames).unwrap();
        oracle.truncate(prep.original_len);
        let oracle = denormalize(&oracle, &prep.norm);
        let (oracle, _) = deemphasis(&oracle, 0.0);

        assert_eq!(decoded.len(), oracle.len());
        for (t, (a, b)) in decoded.iter().zip(&oracle).enumerate() {
            assert!((a - b).abs() < 1e-4, "t={} {} vs {}", t, a, b);
        }
    }

    #[test]
    fn container_mismatches_rejected() {
        let x = speech_like(6, 0.2);
        let one = nwc_cascade(1);
        let two = nwc_cascade(2);
        let container = one.encode_signal(&x).unwrap();
        // wrong module count
        assert!(two.decode_container(&container).is_err());
        // wrong stage kind
        let identity = identity_cascade();
        assert!(identity.decode_container(&container).is_err());
        // truncated payload
        let mut cut = container.clone();
        cut.num_frames += 1;
        assert!(one.decode_container(&cut).is_err());
    }

    #[test]
    fn lsp_soft_forward_connects_gradients() {
        let cascade = nwc_cascade(1);
        let mut g = Graph::<f64>::new();
        let lsp = g.input(Array2::from_shape_fn((ORDER, 1), |(k, _)| {
            (k + 1) as f64 * std::f64::consts::PI / (ORDER + 1) as f64
        }));
        let fwd = cascade.lsp_soft_forward(&mut g, lsp).unwrap();
        assert_eq!(g.value(fwd.recon).dim(), (ORDER, 1));
        let p = g.value(fwd.penalty)[[0, 0]];
        assert!((1.0..=(LSP_NUM_CODES as f64).sqrt() + 1e-9).contains(&p));
        let h = g.value(fwd.entropy)[[0, 0]];
        assert!(h >= 0.0 && h <= (LSP_NUM_CODES as f64).log2() + 1e-9);
    }
}

//! Two-phase cascade training.
//!
//! Phase I trains the stages sequentially: each module fits the residual
//! stream left behind by its frozen predecessors. Phase II finetunes every
//! parameter jointly — including the LSP quantizer — against the global
//! reconstruction loss. An entropy controller nudges the entropy-loss weight
//! after every epoch to steer the soft bitrate estimate toward the mode
//! target.
//!
//! An epoch is one full pass over the training frame set, shuffled with a
//! seeded generator; batches of 128 frames are averaged before each
//! optimizer step. Quantization and entropy terms are held at zero for the
//! first four epochs of each phase so the autoencoder settles first.

use std::sync::Arc;

use ndarray::Array2;
use rand::prelude::*;

use crate::cascade::{Cascade, PreparedFrame, LSP_NUM_CODES};
use crate::diffgraph::{sc, Graph, GraphMelBank, NodeId, ParamId, Scalar};
use crate::dsp::{FRAME_LEN, OVERLAP, SAMPLE_RATE};
use crate::error::{CodecError, Result};
use crate::lpc::ORDER;
use crate::model::{build_loss, training_mel_banks, LossWeights};
use crate::quant::frame_bits_to_bps;

/// Per-epoch additive update applied to the entropy-loss weight.
pub const CONTROLLER_STEP: f64 = 0.015;

/// Steers the entropy regularizer weight toward a bits-per-frame target:
/// too many bits raises the weight by a fixed step, too few lowers it,
/// clamped at zero.
#[derive(Debug, Clone)]
pub struct EntropyController {
    pub lambda: f64,
    pub step: f64,
    pub target_bits_per_frame: f64,
}

impl EntropyController {
    pub fn new(target_bits_per_frame: f64) -> Self {
        EntropyController { lambda: 0.0, step: CONTROLLER_STEP, target_bits_per_frame }
    }

    /// One per-epoch update; returns the new weight.
    pub fn update(&mut self, measured_bits_per_frame: f64) -> f64 {
        if measured_bits_per_frame > self.target_bits_per_frame {
            self.lambda += self.step;
        } else {
            self.lambda = (self.lambda - self.step).max(0.0);
        }
        self.lambda
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    /// Per-module Phase-I epoch cap.
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    /// Stop a Phase-I module after this many epochs without validation
    /// improvement.
    pub patience: usize,
    /// Epochs at the start of each phase with quantization/entropy terms
    /// held at zero (4 means they first apply in the fifth epoch).
    pub reg_delay: usize,
    /// Learning rate for the first cascaded module.
    pub lr_first: f64,
    /// Learning rate for subsequent modules.
    pub lr_rest: f64,
    /// Joint finetuning learning rate.
    pub lr_joint: f64,
    pub val_fraction: f64,
    /// Cap on the training frame set sampled from the corpus (0 = all).
    pub max_train_frames: usize,
    /// Cap on the validation frame set (0 = all).
    pub max_val_frames: usize,
    /// Print key=value progress lines.
    pub verbose: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 17,
            batch_size: 128,
            phase1_epochs: 60,
            phase2_epochs: 20,
            patience: 10,
            reg_delay: 4,
            lr_first: 2e-3,
            lr_rest: 2e-4,
            lr_joint: 2e-5,
            val_fraction: 0.1,
            max_train_frames: 0,
            max_val_frames: 0,
            verbose: false,
        }
    }
}

/// One cached training example: the first-stage coding target plus the LSP
/// angles the joint phase needs for the quantizer terms.
#[derive(Debug, Clone)]
pub struct FrameSample {
    pub residual: Vec<f64>,
    pub lsp: Vec<f64>,
    pub lsp_indices: Vec<u16>,
}

/// Per-epoch record, also the unit of progress logging.
#[derive(Debug, Clone)]
pub struct EpochStats {
    pub phase: usize,
    pub module: usize,
    pub epoch: usize,
    /// Mean per-frame training objective.
    pub train_loss: f64,
    /// Mean per-frame reconstruction part (waveform + mel terms).
    pub train_recon: f64,
    /// Mean per-frame reconstruction part on held-out frames.
    pub val_recon: f64,
    /// Soft bitrate estimate, bits per frame, all modules.
    pub soft_bits_per_frame: f64,
    pub bitrate_bps: f64,
    pub lambda_ent: f64,
}

impl EpochStats {
    pub fn log_line(&self) -> String {
        format!(
            "phase={} module={} epoch={} loss={:.6} recon={:.6} val_recon={:.6} bits_per_frame={:.2} bitrate_bps={:.1} lambda_ent={:.3}",
            self.phase,
            self.module,
            self.epoch,
            self.train_loss,
            self.train_recon,
            self.val_recon,
            self.soft_bits_per_frame,
            self.bitrate_bps,
            self.lambda_ent
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub phase1: Vec<EpochStats>,
    pub phase2: Vec<EpochStats>,
}

/// Loss weights in effect at `epoch` of a phase.
pub fn phase_weights(epoch: usize, reg_delay: usize, lambda_ent: f64) -> LossWeights {
    if epoch < reg_delay {
        LossWeights { quant: 0.0, entropy: 0.0, ..LossWeights::default() }
    } else {
        LossWeights { entropy: lambda_ent, ..LossWeights::default() }
    }
}

fn entropy_bits_of(probs: &[f64]) -> f64 {
    probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.log2()).sum()
}

/// Shannon entropy (bits/symbol) of an index stream histogram.
fn stream_entropy(streams: &[Vec<u16>], num_codes: usize) -> f64 {
    let mut hist = vec![0.0f64; num_codes];
    let mut total = 0.0f64;
    for s in streams {
        for &i in s {
            hist[i as usize] += 1.0;
            total += 1.0;
        }
    }
    if total == 0.0 {
        return 0.0;
    }
    for h in &mut hist {
        *h /= total;
    }
    entropy_bits_of(&hist)
}

fn frame_node<S: Scalar>(g: &mut Graph<S>, samples: &[f64]) -> NodeId {
    g.input(Array2::from_shape_fn((samples.len(), 1), |(t, _)| sc::<S>(samples[t])))
}

fn frame_node_scaled<S: Scalar>(g: &mut Graph<S>, samples: &[f64], gain: f64) -> NodeId {
    g.input(Array2::from_shape_fn((samples.len(), 1), |(t, _)| sc::<S>(samples[t] * gain)))
}

/// RMS over every sample of a frame stream.
fn stream_rms(stream: &[Vec<f64>]) -> f64 {
    let n: usize = stream.iter().map(|x| x.len()).sum();
    if n == 0 {
        return 0.0;
    }
    let energy: f64 = stream.iter().flat_map(|x| x.iter()).map(|v| v * v).sum();
    (energy / n as f64).sqrt()
}

/// Accumulates soft assignment column masses across an epoch so the
/// controller sees the entropy of the aggregate code distribution.
struct ProbAccum {
    sums: Vec<f64>,
    rows: f64,
}

impl ProbAccum {
    fn new(num_codes: usize) -> Self {
        ProbAccum { sums: vec![0.0; num_codes], rows: 0.0 }
    }

    fn add<S: Scalar>(&mut self, assign: &Array2<S>) {
        for row in assign.rows() {
            for (k, &v) in row.iter().enumerate() {
                self.sums[k] += Scalar::to_f64(v);
            }
        }
        self.rows += assign.nrows() as f64;
    }

    fn entropy(&self) -> f64 {
        if self.rows == 0.0 {
            return 0.0;
        }
        let probs: Vec<f64> = self.sums.iter().map(|&s| s / self.rows).collect();
        entropy_bits_of(&probs)
    }
}

pub struct Trainer<S: Scalar> {
    pub cfg: TrainConfig,
    banks: Vec<Arc<GraphMelBank<S>>>,
    train: Vec<FrameSample>,
    val: Vec<FrameSample>,
    /// Residual stream feeding the next untrained stage (starts at x^(1)).
    train_stream: Vec<Vec<f64>>,
    val_stream: Vec<Vec<f64>>,
    /// Index of the next stage to train in Phase I.
    front: usize,
    /// Hard-entropy estimate of the LSP stream, bits per frame.
    lsp_hard_bits: f64,
    /// Hard bits per frame already committed by frozen stages.
    frozen_bits: f64,
    /// RMS of the first module's input stream; later modules are gain-scaled
    /// back to this level before coding.
    ref_rms: f64,
    rng: StdRng,
}

fn sample_of(pf: &PreparedFrame) -> FrameSample {
    FrameSample {
        residual: pf.residual.clone(),
        lsp: pf.lsp.clone(),
        lsp_indices: pf.lsp_indices.clone(),
    }
}

impl<S: Scalar> Trainer<S> {
    /// Analyze the corpus and split it into training and validation frame
    /// sets (seeded shuffle, so the split is reproducible).
    pub fn new(cascade: &Cascade<S>, utterances: &[Vec<f64>], cfg: TrainConfig) -> Result<Self> {
        if utterances.is_empty() {
            return Err(CodecError::InvalidInput("empty training corpus".into()));
        }
        let mut frames = Vec::new();
        for u in utterances {
            let prep = cascade.prepare(u)?;
            frames.extend(prep.frames.iter().map(sample_of));
        }
        if frames.len() < 2 {
            return Err(CodecError::InvalidInput("corpus yields fewer than 2 frames".into()));
        }
        let mut rng = StdRng::seed_from_u64(cfg.seed);
        frames.shuffle(&mut rng);
        let val_len = ((frames.len() as f64 * cfg.val_fraction) as usize).max(1);
        let mut val: Vec<FrameSample> = frames.split_off(frames.len() - val_len);
        if cfg.max_val_frames > 0 && val.len() > cfg.max_val_frames {
            val.truncate(cfg.max_val_frames);
        }
        if cfg.max_train_frames > 0 && frames.len() > cfg.max_train_frames {
            frames.truncate(cfg.max_train_frames);
        }
        let lsp_hard_bits = if cascade.config.use_lpc {
            let streams: Vec<Vec<u16>> = frames.iter().map(|f| f.lsp_indices.clone()).collect();
            stream_entropy(&streams, LSP_NUM_CODES) * ORDER as f64
        } else {
            0.0
        };
        let train_stream: Vec<Vec<f64>> = frames.iter().map(|f| f.residual.clone()).collect();
        let val_stream = val.iter().map(|f| f.residual.clone()).collect();
        let ref_rms = stream_rms(&train_stream);
        Ok(Trainer {
            cfg,
            banks: training_mel_banks()?,
            train: frames,
            val,
            train_stream,
            val_stream,
            front: 0,
            lsp_hard_bits,
            frozen_bits: 0.0,
            ref_rms,
            rng,
        })
    }

    pub fn train_frames(&self) -> usize {
        self.train.len()
    }

    pub fn train_samples(&self) -> &[FrameSample] {
        &self.train
    }

    pub fn val_frames(&self) -> usize {
        self.val.len()
    }

    /// Training-mode (soft) reconstruction of one frame by one stage.
    fn soft_recon_frame(
        &self,
        cascade: &Cascade<S>,
        stage_idx: usize,
        x: &[f64],
    ) -> Result<Vec<f64>> {
        let mut g = Graph::<S>::new();
        let input = frame_node(&mut g, x);
        let fwd = cascade.stages()[stage_idx].soft_forward(&mut g, &cascade.store, input)?;
        Ok(g.value(fwd.recon).iter().map(|&v| Scalar::to_f64(v)).collect())
    }

    /// Replace both residual streams with the residual left after `stage`
    /// codes them in training (soft) mode — the signal the next module's
    /// objective actually sees — and account for the hard bits the frozen
    /// stage now consumes in the shipped stream.
    fn advance_streams(&mut self, cascade: &Cascade<S>, stage_idx: usize) -> Result<()> {
        let stage = &cascade.stages()[stage_idx];
        let mut emitted = Vec::with_capacity(self.train_stream.len());
        let mut train_next = Vec::with_capacity(self.train_stream.len());
        for x in &self.train_stream {
            emitted.push(stage.encode_frame(&cascade.store, x)?);
            let recon = self.soft_recon_frame(cascade, stage_idx, x)?;
            train_next.push(x.iter().zip(&recon).map(|(a, b)| a - b).collect());
        }
        self.train_stream = train_next;
        let mut val_next = Vec::with_capacity(self.val_stream.len());
        for x in &self.val_stream {
            let recon = self.soft_recon_frame(cascade, stage_idx, x)?;
            val_next.push(x.iter().zip(&recon).map(|(a, b)| a - b).collect());
        }
        self.val_stream = val_next;
        if stage.num_codes() > 0 {
            self.frozen_bits +=
                stream_entropy(&emitted, stage.num_codes()) * stage.codes_per_frame() as f64;
        } else {
            self.frozen_bits += 16.0 * stage.codes_per_frame() as f64;
        }
        Ok(())
    }

    /// Reconstruction part of the validation loss (MSE + weighted mel) for
    /// one neural stage against its current input stream.
    pub fn val_recon_module(&self, cascade: &Cascade<S>, stage_idx: usize) -> Result<f64> {
        let nwc = cascade.stages()[stage_idx]
            .as_nwc()
            .expect("validated by caller");
        let gain = cascade.stages()[stage_idx].input_gain(&cascade.store);
        let weights = LossWeights::default();
        let mut total = 0.0;
        for x in &self.val_stream {
            let mut g = Graph::<S>::new();
            let input = frame_node_scaled(&mut g, x, gain);
            let fwd = nwc.forward_train(&mut g, &cascade.store, input, input, &self.banks, &weights)?;
            total += Scalar::to_f64(g.value(fwd.mse)[[0, 0]]) * weights.mse
                + Scalar::to_f64(g.value(fwd.mel)[[0, 0]]) * weights.mel;
        }
        Ok(total / self.val_stream.len() as f64)
    }

    /// Sequential Phase-I training of every neural stage, in cascade order.
    /// `on_epoch` sees each epoch record; returning true stops the current
    /// module early.
    pub fn phase1(
        &mut self,
        cascade: &mut Cascade<S>,
        mut on_epoch: impl FnMut(&EpochStats) -> bool,
    ) -> Result<Vec<EpochStats>> {
        let mut stats = Vec::new();
        let num_stages = cascade.stages().len();
        let mut trained_nwc = 0usize;
        for s in self.front..num_stages {
            if cascade.stages()[s].as_nwc().is_some() {
                // re-scale this module's input back to the reference level
                let rms = stream_rms(&self.train_stream);
                let gain = if rms > 1e-9 * self.ref_rms.max(f64::MIN_POSITIVE) {
                    (self.ref_rms / rms).clamp(1e-6, 1e6)
                } else {
                    1.0
                };
                cascade.set_stage_gain(s, gain);
                let lr = if trained_nwc == 0 { self.cfg.lr_first } else { self.cfg.lr_rest };
                self.phase1_module(cascade, s, lr, &mut stats, &mut on_epoch)?;
                trained_nwc += 1;
            }
            self.advance_streams(cascade, s)?;
            self.front = s + 1;
        }
        Ok(stats)
    }

    fn phase1_module(
        &mut self,
        cascade: &mut Cascade<S>,
        stage_idx: usize,
        lr: f64,
        stats: &mut Vec<EpochStats>,
        on_epoch: &mut impl FnMut(&EpochStats) -> bool,
    ) -> Result<()> {
        let remaining_nwc = cascade.stages()[stage_idx..]
            .iter()
            .filter(|st| st.as_nwc().is_some())
            .count() as f64;
        // this module's share of the frame bit budget
        let budget = ((cascade.config.target_bits_per_frame()
            - self.lsp_hard_bits
            - self.frozen_bits)
            / remaining_nwc)
            .max(1.0);
        let mut controller = EntropyController::new(budget);
        let stage_ids: Vec<ParamId> = cascade.stages()[stage_idx].param_ids(&cascade.store);
        let num_codes = cascade.stages()[stage_idx].num_codes();
        let codes_per_frame = cascade.stages()[stage_idx].codes_per_frame() as f64;
        // train in the gain-scaled domain the stage codes in
        let gain = cascade.stages()[stage_idx].input_gain(&cascade.store);

        let mut best_val = f64::INFINITY;
        let mut since_best = 0usize;
        for epoch in 0..self.cfg.phase1_epochs {
            let weights = phase_weights(epoch, self.cfg.reg_delay, controller.lambda);
            let mut order: Vec<usize> = (0..self.train_stream.len()).collect();
            order.shuffle(&mut self.rng);
            let mut accum = ProbAccum::new(num_codes);
            let mut loss_sum = 0.0;
            let mut recon_sum = 0.0;
            for batch in order.chunks(self.cfg.batch_size) {
                cascade.store.zero_grads();
                for &fi in batch {
                    let x = &self.train_stream[fi];
                    let mut g = Graph::<S>::new();
                    let input = frame_node_scaled(&mut g, x, gain);
                    let nwc = cascade.stages()[stage_idx].as_nwc().expect("neural stage");
                    let fwd = nwc.forward_train(
                        &mut g,
                        &cascade.store,
                        input,
                        input,
                        &self.banks,
                        &weights,
                    )?;
                    loss_sum += Scalar::to_f64(g.value(fwd.loss)[[0, 0]]);
                    recon_sum += Scalar::to_f64(g.value(fwd.mse)[[0, 0]]) * weights.mse
                        + Scalar::to_f64(g.value(fwd.mel)[[0, 0]]) * weights.mel;
                    accum.add(g.value(fwd.quant.soft_assign));
                    g.backward(fwd.loss, &mut cascade.store)?;
                }
                cascade.store.scale_grads(1.0 / batch.len() as f64);
                cascade.store.adam_step(lr, Some(&stage_ids));
            }

            let module_bits = accum.entropy() * codes_per_frame;
            let total_bits = self.lsp_hard_bits + self.frozen_bits + module_bits;
            if epoch >= self.cfg.reg_delay {
                controller.update(module_bits);
            }
            let val_recon = self.val_recon_module(cascade, stage_idx)?;
            let record = EpochStats {
                phase: 1,
                module: stage_idx,
                epoch,
                train_loss: loss_sum / self.train_stream.len() as f64,
                train_recon: recon_sum / self.train_stream.len() as f64,
                val_recon,
                soft_bits_per_frame: total_bits,
                bitrate_bps: frame_bits_to_bps(total_bits, SAMPLE_RATE, FRAME_LEN, OVERLAP),
                lambda_ent: controller.lambda,
            };
            if self.cfg.verbose {
                println!("{}", record.log_line());
            }
            let stop = on_epoch(&record);
            stats.push(record);
            if stop {
                break;
            }
            if val_recon < best_val - 1e-12 {
                best_val = val_recon;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= self.cfg.patience {
                    break;
                }
            }
        }
        Ok(())
    }

    /// Joint Phase-II finetuning of all stages plus the LSP quantizer
    /// against the global residual-domain reconstruction loss.
    pub fn phase2(
        &mut self,
        cascade: &mut Cascade<S>,
        mut on_epoch: impl FnMut(&EpochStats) -> bool,
    ) -> Result<Vec<EpochStats>> {
        if self.front < cascade.stages().len() {
            return Err(CodecError::Config(
                "phase2 requires phase1 to have covered every stage".into(),
            ));
        }
        let mut all_ids: Vec<ParamId> = Vec::new();
        for stage in cascade.stages() {
            all_ids.extend(stage.param_ids(&cascade.store));
        }
        if cascade.config.use_lpc {
            all_ids.extend(cascade.lsp_param_ids());
        }
        let stage_codes: Vec<(usize, f64)> = cascade
            .stages()
            .iter()
            .map(|st| (st.num_codes(), st.codes_per_frame() as f64))
            .collect();

        let mut controller = EntropyController::new(cascade.config.target_bits_per_frame());
        let mut stats = Vec::new();
        for epoch in 0..self.cfg.phase2_epochs {
            let weights = phase_weights(epoch, self.cfg.reg_delay, controller.lambda);
            let mut order: Vec<usize> = (0..self.train.len()).collect();
            order.shuffle(&mut self.rng);
            let mut accums: Vec<ProbAccum> = stage_codes
                .iter()
                .map(|&(n, _)| ProbAccum::new(n.max(1)))
                .collect();
            let mut lsp_accum = ProbAccum::new(LSP_NUM_CODES);
            let mut loss_sum = 0.0;
            let mut recon_sum = 0.0;
            for batch in order.chunks(self.cfg.batch_size) {
                cascade.store.zero_grads();
                for &fi in batch {
                    let mut g = Graph::<S>::new();
                    let (loss, recon_part) = self.phase2_frame(
                        cascade,
                        &mut g,
                        fi,
                        &weights,
                        &mut accums,
                        &mut lsp_accum,
                    )?;
                    loss_sum += Scalar::to_f64(g.value(loss)[[0, 0]]);
                    recon_sum += recon_part;
                    g.backward(loss, &mut cascade.store)?;
                }
                cascade.store.scale_grads(1.0 / batch.len() as f64);
                cascade.store.adam_step(self.cfg.lr_joint, Some(&all_ids));
            }

            let mut total_bits = 0.0;
            for (accum, &(n, cpf)) in accums.iter().zip(&stage_codes) {
                total_bits += if n > 0 { accum.entropy() * cpf } else { 16.0 * cpf };
            }
            if cascade.config.use_lpc {
                total_bits += lsp_accum.entropy() * ORDER as f64;
            }
            if epoch >= self.cfg.reg_delay {
                controller.update(total_bits);
            }
            let val_recon = self.val_recon_joint(cascade)?;
            let record = EpochStats {
                phase: 2,
                module: 0,
                epoch,
                train_loss: loss_sum / self.train.len() as f64,
                train_recon: recon_sum / self.train.len() as f64,
                val_recon,
                soft_bits_per_frame: total_bits,
                bitrate_bps: frame_bits_to_bps(total_bits, SAMPLE_RATE, FRAME_LEN, OVERLAP),
                lambda_ent: controller.lambda,
            };
            if self.cfg.verbose {
                println!("{}", record.log_line());
            }
            let stop = on_epoch(&record);
            stats.push(record);
            if stop {
                break;
            }
        }
        Ok(stats)
    }

    /// Build one frame's joint graph: soft-chain every stage on the cached
    /// x^(1), add the LSP quantizer terms, and score the summed
    /// reconstruction against x^(1).
    fn phase2_frame(
        &self,
        cascade: &Cascade<S>,
        g: &mut Graph<S>,
        fi: usize,
        weights: &LossWeights,
        accums: &mut [ProbAccum],
        lsp_accum: &mut ProbAccum,
    ) -> Result<(NodeId, f64)> {
        let sample = &self.train[fi];
        let x1 = frame_node(g, &sample.residual);
        let mut x = x1;
        let mut recon_sum: Option<NodeId> = None;
        let mut regs = Vec::new();
        for (i, stage) in cascade.stages().iter().enumerate() {
            let fwd = stage.soft_forward(g, &cascade.store, x)?;
            if let Some(soft) = fwd.soft_assign {
                accums[i].add(g.value(soft));
            }
            regs.push((fwd.penalty, fwd.entropy));
            recon_sum = Some(match recon_sum {
                Some(r) => g.add(r, fwd.recon),
                None => fwd.recon,
            });
            x = g.sub(x, fwd.recon);
        }
        if cascade.config.use_lpc {
            let lsp = frame_node(g, &sample.lsp);
            let fwd = cascade.lsp_soft_forward(g, lsp)?;
            if let Some(soft) = fwd.soft_assign {
                lsp_accum.add(g.value(soft));
            }
            regs.push((fwd.penalty, fwd.entropy));
        }
        let recon = recon_sum.expect("at least one stage");
        let (loss, mse, mel) = build_loss(g, x1, recon, &regs, &self.banks, weights)?;
        let recon_part = Scalar::to_f64(g.value(mse)[[0, 0]]) * weights.mse
            + Scalar::to_f64(g.value(mel)[[0, 0]]) * weights.mel;
        Ok((loss, recon_part))
    }

    /// Global reconstruction metric on the validation frames: hard-coded
    /// cascade reconstruction error against x^(1).
    pub fn val_recon_joint(&self, cascade: &Cascade<S>) -> Result<f64> {
        let mut total = 0.0;
        for sample in &self.val {
            let (_, sum) = cascade.code_frame(&sample.residual)?;
            let mut g = Graph::<S>::new();
            let target = frame_node(&mut g, &sample.residual);
            let recon = frame_node(&mut g, &sum);
            let weights = LossWeights::default();
            let (_, mse, mel) = build_loss(&mut g, target, recon, &[], &self.banks, &weights)?;
            total += Scalar::to_f64(g.value(mse)[[0, 0]]) * weights.mse
                + Scalar::to_f64(g.value(mel)[[0, 0]]) * weights.mel;
        }
        Ok(total / self.val.len() as f64)
    }

    /// Mean per-frame training reconstruction loss (MSE + weighted mel) of
    /// the soft-coded cascade against x^(1): the reconstruction part of the
    /// objective the training actually optimizes. Used to compare cascade
    /// depths.
    pub fn train_recon_soft(&self, cascade: &Cascade<S>) -> Result<f64> {
        let weights = LossWeights::default();
        let mut accums: Vec<ProbAccum> = cascade
            .stages()
            .iter()
            .map(|st| ProbAccum::new(st.num_codes().max(1)))
            .collect();
        let mut lsp_accum = ProbAccum::new(LSP_NUM_CODES);
        let mut total = 0.0;
        for fi in 0..self.train.len() {
            let mut g = Graph::<S>::new();
            let (_, recon_part) =
                self.phase2_frame(cascade, &mut g, fi, &weights, &mut accums, &mut lsp_accum)?;
            total += recon_part;
        }
        Ok(total / self.train.len() as f64)
    }

    /// Mean per-frame training reconstruction loss of the hard-coded
    /// cascade on x^(1); used to compare cascade depths.
    pub fn train_recon_hard(&self, cascade: &Cascade<S>) -> Result<f64> {
        let mut total = 0.0;
        for sample in &self.train {
            let (_, sum) = cascade.code_frame(&sample.residual)?;
            let err: f64 = sample
                .residual
                .iter()
                .zip(&sum)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            total += err;
        }
        Ok(total / self.train.len() as f64)
    }

    /// Build per-module Huffman codebooks from hard index histograms over
    /// the training frames and install them on the cascade.
    pub fn build_codebooks(&self, cascade: &mut Cascade<S>) -> Result<Vec<ModuleBits>> {
        let mut lsp_streams: Vec<Vec<u16>> = Vec::new();
        let mut stage_streams: Vec<Vec<Vec<u16>>> =
            (0..cascade.stages().len()).map(|_| Vec::new()).collect();
        let qs = cascade.lsp_quantizer();
        for sample in &self.train {
            if cascade.config.use_lpc {
                lsp_streams.push(qs.encode(&sample.lsp));
            }
            let (indices, _) = cascade.code_frame(&sample.residual)?;
            for (i, stream) in indices.into_iter().enumerate() {
                stage_streams[i].push(stream);
            }
        }
        let mut report = Vec::new();
        let mut slot = 0;
        if cascade.config.use_lpc {
            let cb = crate::cascade::histogram_codebook(LSP_NUM_CODES, lsp_streams.iter())?;
            let bits = mean_bits_per_frame(&cb, &lsp_streams);
            cascade.codebooks[0] = Some(cb);
            report.push(ModuleBits {
                name: "lsp".to_string(),
                codes_per_frame: ORDER,
                bits_per_frame: bits,
            });
            slot = 1;
        }
        for (i, streams) in stage_streams.iter().enumerate() {
            let stage = &cascade.stages()[i];
            let name = stage.strategy_name().to_string();
            let codes_per_frame = stage.codes_per_frame();
            let num_codes = stage.num_codes();
            if num_codes == 0 {
                cascade.codebooks[slot + i] = None;
                report.push(ModuleBits {
                    name,
                    codes_per_frame,
                    bits_per_frame: 16.0 * codes_per_frame as f64,
                });
                continue;
            }
            let cb = crate::cascade::histogram_codebook(num_codes, streams.iter())?;
            let bits = mean_bits_per_frame(&cb, streams);
            cascade.codebooks[slot + i] = Some(cb);
            report.push(ModuleBits { name, codes_per_frame, bits_per_frame: bits });
        }
        Ok(report)
    }
}

/// One row of the bit-allocation report.
#[derive(Debug, Clone)]
pub struct ModuleBits {
    pub name: String,
    pub codes_per_frame: usize,
    pub bits_per_frame: f64,
}

impl ModuleBits {
    pub fn log_line(&self) -> String {
        format!(
            "module={} codes_per_frame={} bits_per_frame={:.2} bitrate_bps={:.1}",
            self.name,
            self.codes_per_frame,
            self.bits_per_frame,
            frame_bits_to_bps(self.bits_per_frame, SAMPLE_RATE, FRAME_LEN, OVERLAP)
        )
    }
}

/// Mean Huffman-coded bits per frame of `streams` under `cb`.
fn mean_bits_per_frame(cb: &crate::bitstream::HuffmanCodebook, streams: &[Vec<u16>]) -> f64 {
    if streams.is_empty() {
        return 0.0;
    }
    let total: u64 = streams
        .iter()
        .flat_map(|s| s.iter())
        .map(|&i| cb.lengths()[i as usize] as u64)
        .sum();
    total as f64 / streams.len() as f64
}

/// Full training run: Phase I then Phase II with default stopping.
pub fn train_cascade<S: Scalar>(
    cascade: &mut Cascade<S>,
    utterances: &[Vec<f64>],
    cfg: TrainConfig,
) -> Result<(TrainReport, Vec<ModuleBits>)> {
    let mut trainer = Trainer::new(cascade, utterances, cfg)?;
    let phase1 = trainer.phase1(cascade, |_| false)?;
    let phase2 = trainer.phase2(cascade, |_| false)?;
    let allocation = trainer.build_codebooks(cascade)?;
    Ok((TrainReport { phase1, phase2 }, allocation))
}

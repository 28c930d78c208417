use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nwcodec_core::bitstream::Container;
use nwcodec_core::cascade::{Cascade, CascadeConfig, CoderRegistry};
use nwcodec_core::dsp::{frame_signal, mel_spectrum, MelFilterbank, SAMPLE_RATE};
use nwcodec_core::train::{train_cascade, TrainConfig};
use nwcodec_core::wav::{read_wav, write_wav};
use nwcodec_core::{CodecError, Result};

use crate::config::FileConfig;
use crate::session::{load_cascade, save_cascade};

/// Collect WAV files from a path (file or directory), sorted for
/// reproducibility.
fn collect_wavs(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        return Err(CodecError::InvalidInput(format!(
            "corpus path {} is neither file nor directory",
            path.display()
        )));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|x| x == "wav").unwrap_or(false))
        .collect();
    files.sort();
    Ok(files)
}

pub struct TrainOptions {
    pub corpus: Option<PathBuf>,
    pub mode: String,
    pub checkpoint: PathBuf,
    pub seed: u64,
    pub epochs: usize,
    pub config: Option<PathBuf>,
    pub threads: usize,
}

pub fn cmd_train(opts: &TrainOptions) -> Result<()> {
    let file_cfg = match &opts.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let mut cascade_cfg = CascadeConfig::from_mode(&opts.mode)?;
    if let Some(n) = file_cfg.get_usize("num_nwc")? {
        if n == 0 {
            return Err(CodecError::Config("num_nwc must be at least 1".into()));
        }
        cascade_cfg.stage_kinds = vec!["nwc".to_string(); n];
    }
    if let Some(v) = file_cfg.get_bool("use_lpc")? {
        cascade_cfg.use_lpc = v;
    }
    if let Some(v) = file_cfg.get_f64("target_bitrate")? {
        cascade_cfg.target_bitrate_bps = v;
    }
    let seed = file_cfg.get_u64("seed")?.unwrap_or(opts.seed);

    let mut sources: Vec<PathBuf> = Vec::new();
    if let Some(c) = &opts.corpus {
        sources.push(c.clone());
    }
    sources.extend(file_cfg.corpus.iter().cloned());
    if sources.is_empty() {
        return Err(CodecError::Config("no corpus given (use --corpus or a config file)".into()));
    }
    let mut files = Vec::new();
    for s in &sources {
        files.extend(collect_wavs(s)?);
    }
    if files.is_empty() {
        return Err(CodecError::InvalidInput(format!(
            "no .wav files under: {}",
            sources.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ")
        )));
    }
    let mut utterances = Vec::new();
    let mut unreadable = Vec::new();
    for f in &files {
        match read_wav(f) {
            Ok(x) => utterances.push(x),
            Err(e) => unreadable.push(format!("{}: {}", f.display(), e)),
        }
    }
    if !unreadable.is_empty() {
        return Err(CodecError::InvalidInput(format!(
            "unreadable corpus files:\n{}",
            unreadable.join("\n")
        )));
    }

    println!(
        "event=config mode={} use_lpc={} stage_kinds={} target_bitrate={} seed={} files={} threads={}",
        opts.mode,
        cascade_cfg.use_lpc,
        cascade_cfg.stage_kinds.join(","),
        cascade_cfg.target_bitrate_bps,
        seed,
        files.len(),
        opts.threads
    );

    let mut cascade = Cascade::<f32>::new(cascade_cfg, seed, &CoderRegistry::with_defaults())?;
    let train_cfg = TrainConfig {
        seed,
        phase1_epochs: file_cfg.get_usize("epochs")?.unwrap_or(opts.epochs),
        phase2_epochs: file_cfg.get_usize("phase2_epochs")?.unwrap_or(20),
        batch_size: file_cfg.get_usize("batch_size")?.unwrap_or(128),
        max_train_frames: file_cfg.get_usize("max_train_frames")?.unwrap_or(0),
        max_val_frames: file_cfg.get_usize("max_val_frames")?.unwrap_or(0),
        verbose: true,
        ..TrainConfig::default()
    };
    let (_, allocation) = train_cascade(&mut cascade, &utterances, train_cfg)?;
    let mut total_bits = 0.0;
    for row in &allocation {
        println!("event=bit_allocation {}", row.log_line());
        total_bits += row.bits_per_frame;
    }
    println!("event=bit_allocation_total bits_per_frame={:.2}", total_bits);

    let mut meta = BTreeMap::new();
    meta.insert("mode".to_string(), opts.mode.clone());
    meta.insert("seed".to_string(), seed.to_string());
    save_cascade(&opts.checkpoint, &cascade, meta)?;
    println!("event=checkpoint path={}", opts.checkpoint.display());
    Ok(())
}

pub fn cmd_encode(checkpoint: &Path, input: &Path, output: &Path) -> Result<()> {
    let cascade = load_cascade(checkpoint)?;
    let x = read_wav(input)?;
    let container = cascade.encode_signal(&x)?;
    std::fs::write(output, container.to_bytes()?)?;
    println!(
        "event=encode frames={} payload_bits={} bits_per_frame={:.2} bitrate_bps={:.1} out={}",
        container.num_frames,
        container.payload_bits,
        container.bits_per_frame(),
        container.bitrate_bps(),
        output.display()
    );
    Ok(())
}

pub fn cmd_decode(checkpoint: &Path, input: &Path, output: &Path) -> Result<()> {
    let cascade = load_cascade(checkpoint)?;
    let bytes = std::fs::read(input)?;
    let container = Container::from_bytes(&bytes)?;
    let x = cascade.decode_container(&container)?;
    write_wav(output, &x)?;
    println!("event=decode samples={} out={}", x.len(), output.display());
    Ok(())
}

/// SNR in dB; `None` means the signals are identical (infinite SNR).
fn snr_db(reference: &[f64], degraded: &[f64]) -> Option<f64> {
    let sig: f64 = reference.iter().map(|v| v * v).sum();
    let err: f64 = reference.iter().zip(degraded).map(|(a, b)| (a - b) * (a - b)).sum();
    if err == 0.0 {
        return None;
    }
    Some(10.0 * (sig / err).log10())
}

pub fn cmd_eval(reference: &Path, degraded: &Path, bitstream: Option<&Path>) -> Result<()> {
    let x = read_wav(reference)?;
    let y = read_wav(degraded)?;
    if x.len() != y.len() {
        return Err(CodecError::InvalidInput(format!(
            "length mismatch: reference {} vs degraded {} samples",
            x.len(),
            y.len()
        )));
    }
    let snr = snr_db(&x, &y);
    let mut line = format!(
        "event=eval snr_db={}",
        match snr {
            None => "inf".to_string(),
            Some(v) => format!("{:.3}", v),
        }
    );
    // per-bank mel distortion: mean over frames of the squared mel difference
    let frames_x = frame_signal(&x)?;
    let frames_y = frame_signal(&y)?;
    for bank_size in [8usize, 16, 32, 128] {
        let bank = MelFilterbank::new(bank_size)?;
        let mut total = 0.0;
        for (fx, fy) in frames_x.iter().zip(&frames_y) {
            let mx = mel_spectrum(&fx.samples, &bank)?;
            let my = mel_spectrum(&fy.samples, &bank)?;
            total += mx.iter().zip(&my).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        line.push_str(&format!(" mel_d{}={:.6}", bank_size, total / frames_x.len() as f64));
    }
    if let Some(bs) = bitstream {
        let container = Container::from_bytes(&std::fs::read(bs)?)?;
        line.push_str(&format!(" bitrate_bps={:.1}", container.bitrate_bps()));
    }
    println!("{}", line);
    Ok(())
}

fn bench_pass(cascade: &Cascade<f32>, signals: &[Vec<f64>]) -> Result<f64> {
    let start = Instant::now();
    for x in signals {
        let container = cascade.encode_signal(x)?;
        let _ = cascade.decode_container(&container)?;
    }
    Ok(start.elapsed().as_secs_f64())
}

pub fn cmd_bench(checkpoint: &Path, input: &Path, threads: usize) -> Result<()> {
    let files = collect_wavs(input)?;
    if files.is_empty() {
        return Err(CodecError::InvalidInput(format!("no .wav files under {}", input.display())));
    }
    let signals: Vec<Vec<f64>> = files.iter().map(|f| read_wav(f)).collect::<Result<_>>()?;
    let duration: f64 = signals.iter().map(|s| s.len() as f64 / SAMPLE_RATE as f64).sum();
    let cascade = load_cascade(checkpoint)?;
    let mut ratios = Vec::with_capacity(5);
    for run in 0..5 {
        let elapsed = if threads > 1 {
            // utterance-parallel: each worker gets its own cascade instance
            let chunks: Vec<&[Vec<f64>]> =
                signals.chunks(signals.len().div_ceil(threads)).collect();
            let start = Instant::now();
            std::thread::scope(|scope| -> Result<()> {
                let mut handles = Vec::new();
                for chunk in &chunks {
                    let c = load_cascade(checkpoint)?;
                    handles.push(scope.spawn(move || bench_pass(&c, chunk)));
                }
                for h in handles {
                    h.join().map_err(|_| {
                        CodecError::Numerical("bench worker panicked".into())
                    })??;
                }
                Ok(())
            })?;
            start.elapsed().as_secs_f64()
        } else {
            bench_pass(&cascade, &signals)?
        };
        let rtf = 100.0 * elapsed / duration;
        println!("event=bench run={} rtf_percent={:.2}", run, rtf);
        ratios.push(rtf);
    }
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    println!(
        "event=bench_result rtf_percent_median={:.2} files={} duration_s={:.2} threads={}",
        ratios[2],
        files.len(),
        duration,
        threads
    );
    Ok(())
}

//! Checkpoint glue: a cascade plus its Huffman codebooks stored as one
//! checkpoint file, with the cascade layout in the metadata block.

use std::collections::BTreeMap;
use std::path::Path;

use nwcodec_core::bitstream::HuffmanCodebook;
use nwcodec_core::cascade::{Cascade, CascadeConfig, CoderRegistry};
use nwcodec_core::checkpoint::Checkpoint;
use nwcodec_core::{CodecError, Result};

/// Default seed so every subcommand is reproducible without flags.
pub const DEFAULT_SEED: u64 = 17;

pub fn save_cascade(
    path: &Path,
    cascade: &Cascade<f32>,
    mut extra_meta: BTreeMap<String, String>,
) -> Result<()> {
    extra_meta.insert("use_lpc".into(), cascade.config.use_lpc.to_string());
    extra_meta.insert("stage_kinds".into(), cascade.config.stage_kinds.join(","));
    extra_meta.insert(
        "target_bitrate".into(),
        format!("{}", cascade.config.target_bitrate_bps),
    );
    for (slot, book) in cascade.codebooks.iter().enumerate() {
        if let Some(cb) = book {
            let csv: Vec<String> = cb.lengths().iter().map(|l| l.to_string()).collect();
            extra_meta.insert(format!("codebook.{}", slot), csv.join(","));
        }
    }
    Checkpoint::from_store(&cascade.store, extra_meta).save(path)
}

pub fn load_cascade(path: &Path) -> Result<Cascade<f32>> {
    let ck = Checkpoint::load(path)?;
    let meta = &ck.meta;
    let bad = |key: &str| CodecError::Config(format!("checkpoint metadata missing/bad '{}'", key));
    let use_lpc = meta
        .get("use_lpc")
        .and_then(|v| v.parse::<bool>().ok())
        .ok_or_else(|| bad("use_lpc"))?;
    let stage_kinds: Vec<String> = meta
        .get("stage_kinds")
        .map(|v| v.split(',').map(str::to_string).collect())
        .ok_or_else(|| bad("stage_kinds"))?;
    let target_bitrate_bps = meta
        .get("target_bitrate")
        .and_then(|v| v.parse::<f64>().ok())
        .ok_or_else(|| bad("target_bitrate"))?;
    let seed = meta
        .get("seed")
        .and_then(|v| v.parse::<u64>().ok())
        .unwrap_or(DEFAULT_SEED);
    let config = CascadeConfig { use_lpc, stage_kinds, target_bitrate_bps };
    let mut cascade = Cascade::<f32>::new(config, seed, &CoderRegistry::with_defaults())?;
    ck.apply_to_store(&mut cascade.store)?;
    for slot in 0..cascade.codebooks.len() {
        if let Some(csv) = meta.get(&format!("codebook.{}", slot)) {
            let lengths: Vec<u8> = csv
                .split(',')
                .map(|t| t.parse::<u8>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("codebook lengths"))?;
            cascade.codebooks[slot] = Some(HuffmanCodebook::from_lengths(&lengths)?);
        }
    }
    Ok(cascade)
}

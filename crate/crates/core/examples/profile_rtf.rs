use std::time::Instant;

use nwcodec_core::cascade::{Cascade, CascadeConfig, CoderRegistry};
use nwcodec_core::synth::speech_like;

fn main() {
    let config = CascadeConfig {
        use_lpc: true,
        stage_kinds: vec!["nwc".to_string()],
        target_bitrate_bps: 12_000.0,
    };
    let cascade = Cascade::<f32>::new(config, 7, &CoderRegistry::with_defaults()).unwrap();
    let x = speech_like(1, 4.0);

    let t0 = Instant::now();
    let prep = cascade.prepare(&x).unwrap();
    println!("prepare (lpc analysis): {:.3}s", t0.elapsed().as_secs_f64());

    let nwc = cascade.stages()[0].as_nwc().unwrap();
    let mut enc = 0.0;
    let mut dec = 0.0;
    let mut all_idx = Vec::new();
    for pf in &prep.frames {
        let t = Instant::now();
        let idx = nwc.encode_indices(&cascade.store, &pf.residual).unwrap();
        enc += t.elapsed().as_secs_f64();
        let t = Instant::now();
        let _ = nwc.decode_indices(&cascade.store, &idx).unwrap();
        dec += t.elapsed().as_secs_f64();
        all_idx.push(idx);
    }
    println!("encoder forwards: {:.3}s  decoder forwards: {:.3}s  ({} frames)", enc, dec, prep.frames.len());

    let t0 = Instant::now();
    let c = cascade.encode_signal(&x).unwrap();
    println!("full encode_signal: {:.3}s", t0.elapsed().as_secs_f64());
    let t0 = Instant::now();
    let _ = cascade.decode_container(&c).unwrap();
    println!("full decode_container: {:.3}s", t0.elapsed().as_secs_f64());
    println!("signal duration: 4.0s");
}

//! Release acceptance suite: every gate runs serially in one test so the
//! timing-sensitive checks don't fight each other for the core, with one
//! PASS/FAIL line per criterion.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to watch progress.
//! The training-behavior gate dominates the runtime (up to ~1 h on one core).

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use ndarray::Array2;
use rand::prelude::*;

use nwcodec_core::bitstream::{BitReader, BitWriter, HuffmanCodebook};
use nwcodec_core::cascade::{Cascade, CascadeConfig, CoderRegistry};
use nwcodec_core::diffgraph::{
    finite_difference_check, Graph, GraphMelBank, NodeId, ParamId, ParamStore,
};
use nwcodec_core::dsp::{
    deemphasis, denormalize, frame_signal, normalize, overlap_add, preemphasis, MelFilterbank,
    FRAME_LEN, HOP, SAMPLE_RATE,
};
use nwcodec_core::lpc::{
    autocorrelation, compute_residual, levinson_durbin, lpc_to_lsp, lsp_to_lpc, synthesize,
    ANALYSIS_LEN, ORDER, SPAN_START,
};
use nwcodec_core::model::{LossWeights, NwcModel};
use nwcodec_core::quant;
use nwcodec_core::synth::speech_like;
use nwcodec_core::train::{TrainConfig, Trainer};
use nwcodec_core::wav::write_wav;

#[test]
fn acceptance_criteria() {
    // dev convenience: ACCEPTANCE_FILTER=06 runs only matching criteria;
    // unset (the normal case) runs the full suite
    let filter = std::env::var("ACCEPTANCE_FILTER").ok();
    let mut gates: Vec<(&'static str, bool)> = Vec::new();
    let mut run = |label: &'static str, f: Box<dyn FnOnce()>| {
        if let Some(pat) = &filter {
            if !label.contains(pat.as_str()) {
                return;
            }
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f));
        if let Err(payload) = &outcome {
            let msg = payload
                .downcast_ref::<String>()
                .map(String::as_str)
                .or_else(|| payload.downcast_ref::<&str>().copied())
                .unwrap_or("non-string panic");
            println!("  failure detail: {}", msg);
        }
        println!(
            "criterion {}: {} ({:.1}s)",
            label,
            if outcome.is_ok() { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64()
        );
        gates.push((label, outcome.is_ok()));
    };

    run("01 bitrate-arithmetic", Box::new(bitrate_arithmetic));
    run("02 operating-point-rates", Box::new(operating_point_rates));
    run("03 quantizer-penalty-bounds", Box::new(quantizer_penalty_bounds));
    run("04 soft-hard-convergence", Box::new(soft_hard_convergence));
    run("05 entropy-bounds", Box::new(entropy_bounds));
    run("06 gradient-checks", Box::new(gradient_checks));
    run("07 lpc-round-trip", Box::new(lpc_round_trip));
    run("08 dsp-identities", Box::new(dsp_identities));
    run("09 bitstream-losslessness", Box::new(bitstream_losslessness));
    run("11 real-time-factor", Box::new(real_time_factor));
    run("12 parameter-count", Box::new(parameter_count));
    run("10 training-behavior", Box::new(training_behavior));

    let failed: Vec<&str> = gates.iter().filter(|(_, ok)| !ok).map(|(l, _)| *l).collect();
    assert!(failed.is_empty(), "failed criteria: {}", failed.join(", "));
}

// --- 1. fixed-rate bitrate formula ------------------------------------------

fn bitrate_arithmetic() {
    // oracle: assemble bits/frame and frames/second separately
    let frames_per_sec = 16_000.0 / (512.0 - 32.0);
    assert_eq!(3.0 * 256.0 * frames_per_sec, 25_600.0);
    assert_eq!(quant::bitrate(3.0, 256, 16_000, 512, 32), 25_600.0);
    // non-overlapping frames: 16-bit raw at 16 kHz is plain PCM rate
    assert_eq!(quant::bitrate(16.0, 512, 16_000, 512, 0), 256_000.0);
}

// --- 2. reference operating points ------------------------------------------

fn operating_point_rates() {
    let lo = quant::frame_bits_to_bps(353.0, 16_000, 512, 32);
    assert!((lo - 11_766.67).abs() < 0.01, "353 b/f -> {}", lo);
    let hi = quant::frame_bits_to_bps(576.0, 16_000, 512, 32);
    assert!((hi - 19_200.0).abs() < 0.01, "576 b/f -> {}", hi);
}

// --- 3. quantization penalty at its extremes --------------------------------

fn quantizer_penalty_bounds() {
    for k in [4usize, 32, 256] {
        let n = 50;
        let indices: Vec<u16> = (0..n).map(|i| (i * 7 % k) as u16).collect();
        let one_hot = quant::one_hot(&indices, k);
        assert_eq!(quant::penalty_lq(&one_hot), 1.0, "K={}", k);
        let uniform = Array2::from_elem((n, k), 1.0 / k as f64);
        let p = quant::penalty_lq(&uniform);
        assert!((p - (k as f64).sqrt()).abs() < 1e-9, "K={}: {}", k, p);
    }
}

// --- 4. sharp softmax converges to argmax -----------------------------------

fn soft_hard_convergence() {
    let mut rng = StdRng::seed_from_u64(404);
    let centroids: Vec<f64> = (0..32).map(|k| -1.0 + 2.0 * k as f64 / 31.0).collect();
    let mut rows = 0usize;
    let mut worst = 0.0f64;
    while rows < 1000 {
        let v = rng.random_range(-1.2..1.2);
        let d = quant::distance_matrix(&[v], &centroids);
        let mut sorted: Vec<f64> = d.row(0).to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if sorted[1] - sorted[0] < 1e-3 {
            continue; // near-tie: argmax ill-defined, resample
        }
        let soft = quant::soft_assign(&d, 1e6);
        let hard = quant::one_hot(&quant::hard_assign(&d), 32);
        for k in 0..32 {
            worst = worst.max((soft[[0, k]] - hard[[0, k]]).abs());
        }
        rows += 1;
    }
    assert!(worst < 1e-6, "max |soft - hard| = {:e}", worst);
}

// --- 5. entropy estimate bounds and closed forms ----------------------------

fn entropy_bounds() {
    let mut rng = StdRng::seed_from_u64(505);
    for k in [4usize, 32, 256] {
        for _ in 0..20 {
            let mut a = Array2::from_shape_fn((32, k), |_| rng.random_range(0.0..1.0f64));
            for mut row in a.rows_mut() {
                let s: f64 = row.sum();
                row.mapv_inplace(|v| v / s);
            }
            let h = quant::entropy_estimate(&a);
            assert!(h >= 0.0, "K={}: {}", k, h);
            assert!(h <= (k as f64).log2() + 1e-12, "K={}: {}", k, h);
        }
    }
    // dyadic uniform case sums exactly
    let uniform = Array2::from_elem((64, 32), 1.0 / 32.0);
    assert_eq!(quant::entropy_estimate(&uniform), 5.0);
    let degenerate = quant::one_hot(&vec![7u16; 64], 32);
    assert_eq!(quant::entropy_estimate(&degenerate), 0.0);
}

// --- 6. finite-difference gradient checks -----------------------------------

/// Build a graph, backprop a summed loss, then compare every listed parameter
/// against central finite differences. Returns the number of entries probed.
fn fd_check(
    seed: u64,
    max_per_param: usize,
    step: f64,
    abs_tol: f64,
    setup: impl Fn(&mut ParamStore<f64>, &mut StdRng) -> Vec<ParamId>,
    build: impl Fn(&mut Graph<f64>, &ParamStore<f64>, &[ParamId]) -> NodeId,
) -> usize {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut store = ParamStore::<f64>::new();
    let ids = setup(&mut store, &mut rng);
    let mut g = Graph::<f64>::new();
    let out = build(&mut g, &store, &ids);
    let loss = g.sum_all(out);
    store.zero_grads();
    g.backward(loss, &mut store).unwrap();
    let report = finite_difference_check(
        &mut store,
        &ids,
        max_per_param,
        step,
        1e-4,
        abs_tol,
        &mut StdRng::seed_from_u64(seed ^ 0x5eed),
        |s| {
            let mut g = Graph::<f64>::new();
            let out = build(&mut g, s, &ids);
            let loss = g.sum_all(out);
            g.value(loss)[[0, 0]]
        },
    )
    .unwrap();
    report.checked
}

fn rnd(rng: &mut StdRng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

fn gradient_checks() {
    let started = Instant::now();

    // strided/dilated convolutions (one count across the geometries)
    let mut conv_checked = 0usize;
    for (seed, k, c_in, c_out, stride, dil) in
        [(61u64, 3, 2, 4, 1, 1), (62, 5, 3, 2, 2, 1), (63, 15, 2, 2, 1, 2), (64, 9, 1, 3, 2, 1)]
    {
        conv_checked += fd_check(
            seed,
            100,
            1e-3,
            5e-7,
            |s, rng| {
                vec![
                    s.add("x", rnd(rng, 16, c_in)),
                    s.add("w", rnd(rng, k * c_in, c_out)),
                    s.add("b", rnd(rng, 1, c_out)),
                ]
            },
            |g, s, ids| {
                let x = g.param(s, ids[0]);
                let w = g.param(s, ids[1]);
                let b = g.param(s, ids[2]);
                let y = g.conv1d(x, w, b, stride, dil).unwrap();
                g.tanh(y)
            },
        );
    }
    assert!(conv_checked >= 100, "conv1d sampled {}", conv_checked);

    let dw_checked = fd_check(
        65,
        100,
        1e-3,
        5e-7,
        |s, rng| {
            vec![s.add("x", rnd(rng, 25, 4)), s.add("w", rnd(rng, 5, 4)), s.add("b", rnd(rng, 1, 4))]
        },
        |g, s, ids| {
            let x = g.param(s, ids[0]);
            let w = g.param(s, ids[1]);
            let b = g.param(s, ids[2]);
            let y = g.depthwise_conv1d(x, w, b).unwrap();
            let y = g.subpixel_shuffle(y).unwrap();
            g.sigmoid(y)
        },
    );
    assert!(dw_checked >= 100, "depthwise/shuffle sampled {}", dw_checked);

    let ew_checked = fd_check(
        66,
        100,
        1e-3,
        5e-7,
        |s, rng| vec![s.add("a", rnd(rng, 17, 3)), s.add("b", rnd(rng, 17, 3))],
        |g, s, ids| {
            let a = g.param(s, ids[0]);
            let b = g.param(s, ids[1]);
            let sum = g.add(a, b);
            let dif = g.sub(a, b);
            let prod = g.mul(sum, dif);
            let sc1 = g.scale(prod, 0.37);
            let t = g.tanh(sc1);
            let sg = g.sigmoid(t);
            // offset keeps leaky-relu inputs away from the kink at 0
            let off = g.input(Array2::from_elem((17, 3), 0.31));
            let shifted = g.add(sg, off);
            g.leaky_relu(shifted, 0.2)
        },
    );
    assert!(ew_checked >= 100, "elementwise sampled {}", ew_checked);

    let mm_checked = fd_check(
        67,
        100,
        1e-3,
        5e-7,
        |s, rng| vec![s.add("a", rnd(rng, 12, 6)), s.add("b", rnd(rng, 6, 9))],
        |g, s, ids| {
            let a = g.param(s, ids[0]);
            let b = g.param(s, ids[1]);
            let m = g.matmul(a, b).unwrap();
            let sm = g.row_softmax(m);
            let p = g.col_mean(sm);
            let h = g.entropy_bits(p);
            let rooted = g.sqrt(sm);
            let tot = g.sum_all(rooted);
            g.add(h, tot)
        },
    );
    assert!(mm_checked >= 100, "matmul/softmax/entropy sampled {}", mm_checked);

    let mel_checked = fd_check(
        68,
        100,
        1e-3,
        5e-7,
        {
            |s, rng| vec![s.add("x", rnd(rng, FRAME_LEN, 1))]
        },
        {
            let bank = GraphMelBank::<f64>::from_filterbank(&MelFilterbank::new(32).unwrap());
            move |g, s, ids| {
                let x = g.param(s, ids[0]);
                let m = g.mel_spectrum(x, &bank).unwrap();
                g.mul(m, m)
            }
        },
    );
    assert!(mel_checked >= 100, "mel sampled {}", mel_checked);

    // soft quantizer chain, values kept clear of the |.| kink at the centroids
    let centroids = [-0.9f64, -0.5, 0.25, 0.6];
    let quant_checked = fd_check(
        69,
        100,
        1e-4,
        5e-7,
        |s, rng| {
            let mut vals = Vec::new();
            while vals.len() < 120 {
                let v: f64 = rng.random_range(-1.0..1.0);
                if centroids.iter().all(|c| (v - c).abs() > 1e-2) {
                    vals.push(v);
                }
            }
            let values = Array2::from_shape_fn((120, 1), |(i, _)| vals[i]);
            let cents = Array2::from_shape_fn((4, 1), |(i, _)| centroids[i]);
            vec![
                s.add("h", values),
                s.add("beta", cents),
                s.add("alpha", Array2::from_elem((1, 1), 3.0)),
            ]
        },
        |g, s, ids| {
            let h = g.param(s, ids[0]);
            let beta = g.param(s, ids[1]);
            let alpha = g.param(s, ids[2]);
            let d = g.pairwise_absdiff(h, beta).unwrap();
            let l = g.neg_scale(d, alpha);
            let sm = g.row_softmax(l);
            let q = g.matmul(sm, beta).unwrap();
            let e = g.mul(q, q);
            let p = g.col_mean(sm);
            let hh = g.entropy_bits(p);
            let tot = g.sum_all(e);
            g.add(tot, hh)
        },
    );
    assert!(quant_checked >= 100, "quantizer chain sampled {}", quant_checked);

    // full train-mode graph: two entries from every parameter tensor; the
    // quantizer is softened so the probe stays within the linear regime
    let mut rng = StdRng::seed_from_u64(70);
    let mut store = ParamStore::<f64>::new();
    let model = NwcModel::register(&mut store, "m0", &mut rng);
    let alpha_id = store.id_of("m0.quant.alpha").unwrap();
    store.value_mut(alpha_id).fill(5.0);
    let banks = nwcodec_core::model::training_mel_banks::<f64>().unwrap();
    let frame = Array2::from_shape_fn((FRAME_LEN, 1), |_| rng.random_range(-0.5..0.5));
    let weights = LossWeights { mse: 1.0, mel: 0.1, quant: 0.5, entropy: 0.01 };
    let build = |s: &ParamStore<f64>, g: &mut Graph<f64>| -> NodeId {
        let x = g.input(frame.clone());
        model.forward_train(g, s, x, x, &banks, &weights).unwrap().loss
    };
    let mut g = Graph::<f64>::new();
    let loss = build(&store, &mut g);
    store.zero_grads();
    g.backward(loss, &mut store).unwrap();
    let all_ids: Vec<ParamId> = model.param_ids(&store);
    // step 1e-6 keeps probes below the log-mel curvature scale; the additive
    // floor covers central-difference roundoff of this loss at the best step
    // of the harness ladder (loss evaluation noise ~2e-11)
    let report = finite_difference_check(
        &mut store,
        &all_ids,
        2,
        1e-6,
        1e-4,
        5e-6,
        &mut StdRng::seed_from_u64(71),
        |s| {
            let mut g = Graph::<f64>::new();
            let loss = build(s, &mut g);
            g.value(loss)[[0, 0]]
        },
    )
    .unwrap();
    assert!(report.checked >= 100, "full model sampled {}", report.checked);

    let elapsed = started.elapsed().as_secs_f64();
    println!("  gradient checks took {:.1}s", elapsed);
    assert!(elapsed < 120.0, "gradient checks took {:.1}s", elapsed);
}

// --- 7. LPC analysis inverts exactly ----------------------------------------

/// Random stable filter from bounded reflection coefficients (step-up).
fn random_stable(rng: &mut StdRng) -> Vec<f64> {
    let refl: Vec<f64> = (0..ORDER).map(|_| rng.random_range(-0.8..0.8)).collect();
    let mut a: Vec<f64> = Vec::new();
    for (i, &k) in refl.iter().enumerate() {
        let mut next = vec![0.0f64; i + 1];
        next[i] = k;
        for j in 0..i {
            next[j] = a[j] - k * a[i - 1 - j];
        }
        a = next;
    }
    a
}

/// Dense Gaussian-elimination oracle for the Toeplitz normal equations.
fn toeplitz_dense_solve(r: &[f64]) -> Vec<f64> {
    let p = r.len() - 1;
    let mut m = vec![vec![0.0f64; p + 1]; p];
    for i in 0..p {
        for j in 0..p {
            m[i][j] = r[(i as isize - j as isize).unsigned_abs()];
        }
        m[i][p] = r[i + 1];
    }
    for col in 0..p {
        let piv = (col..p)
            .max_by(|&a, &b| m[a][col].abs().partial_cmp(&m[b][col].abs()).unwrap())
            .unwrap();
        m.swap(col, piv);
        for row in 0..p {
            if row != col {
                let f = m[row][col] / m[col][col];
                for j in col..=p {
                    m[row][j] -= f * m[col][j];
                }
            }
        }
    }
    (0..p).map(|i| m[i][p] / m[i][i]).collect()
}

fn lpc_round_trip() {
    let mut rng = StdRng::seed_from_u64(707);
    for trial in 0..500 {
        let coeffs = random_stable(&mut rng);
        let buffer: Vec<f64> = (0..ANALYSIS_LEN).map(|_| rng.random_range(-1.0..1.0)).collect();

        // residual extraction then synthesis is an exact inverse pair
        let residual = compute_residual(&buffer, &coeffs).unwrap();
        let history = &buffer[SPAN_START - ORDER..SPAN_START];
        let recon = synthesize(&residual, &coeffs, history).unwrap();
        let span = &buffer[SPAN_START..SPAN_START + FRAME_LEN];
        let peak = span.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        for (a, b) in recon.iter().zip(span) {
            assert!((a - b).abs() / peak < 1e-6, "trial {}: {} vs {}", trial, a, b);
        }

        // Levinson-Durbin against a dense solve of the same system
        let x: Vec<f64> = (0..256).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut r = autocorrelation(&x, ORDER);
        r[0] *= 1.0001; // keep the system comfortably positive definite
        let fast = levinson_durbin(&r).unwrap();
        let dense = toeplitz_dense_solve(&r);
        for (u, v) in fast.iter().zip(&dense) {
            assert!((u - v).abs() < 1e-8, "trial {}: levinson {} vs dense {}", trial, u, v);
        }

        // LSP representation round trip
        let lsp = lpc_to_lsp(&coeffs).unwrap();
        let back = lsp_to_lpc(&lsp).unwrap();
        for (u, v) in coeffs.iter().zip(&back) {
            assert!((u - v).abs() < 1e-6, "trial {}: lpc {} vs {}", trial, u, v);
        }
    }
}

// --- 8. windowing and filter identities -------------------------------------

fn dsp_identities() {
    // constant overlap-add: a constant signal survives framing + crossfades
    let len = 4 * HOP + FRAME_LEN;
    let ones = vec![1.0f64; len];
    let frames = frame_signal(&ones).unwrap();
    let recon = overlap_add(&frames).unwrap();
    for (i, v) in recon[..len].iter().enumerate() {
        assert!((v - 1.0).abs() <= 1e-12, "sample {}: {}", i, v);
    }

    let mut rng = StdRng::seed_from_u64(808);
    let x: Vec<f64> = (0..2000).map(|_| rng.random_range(-1.0..1.0)).collect();

    let (pre, _) = preemphasis(&x, 0.0);
    let (de, _) = deemphasis(&pre, 0.0);
    for (a, b) in de.iter().zip(&x) {
        assert!((a - b).abs() < 1e-9, "pre/de-emphasis: {} vs {}", a, b);
    }

    let (norm, meta) = normalize(&x).unwrap();
    let denorm = denormalize(&norm, &meta);
    for (a, b) in denorm.iter().zip(&x) {
        assert!((a - b).abs() < 1e-9, "normalize: {} vs {}", a, b);
    }
}

// --- 9. entropy coding and container are lossless ---------------------------

fn bitstream_losslessness() {
    let mut rng = StdRng::seed_from_u64(909);

    // 1e5 skewed random symbols through one codebook
    let freqs: Vec<f64> = (0..32).map(|k| 1.0 / (k as f64 + 1.0)).collect();
    let book = HuffmanCodebook::from_frequencies(&freqs).unwrap();
    let indices: Vec<u16> = (0..100_000)
        .map(|_| {
            let r: f64 = rng.random_range(0.0..1.0);
            (r * r * 32.0) as u16 // quadratic skew toward low symbols
        })
        .collect();
    let mut writer = BitWriter::new();
    book.encode_into(&mut writer, &indices).unwrap();
    let (bytes, bit_len) = writer.finish();
    let mut reader = BitReader::new(&bytes, bit_len).unwrap();
    let decoded = book.decode_from(&mut reader, indices.len()).unwrap();
    assert_eq!(decoded, indices);

    // a codebook rebuilt from transmitted lengths decodes the same stream
    let rebuilt = HuffmanCodebook::from_lengths(book.lengths()).unwrap();
    let mut reader = BitReader::new(&bytes, bit_len).unwrap();
    assert_eq!(rebuilt.decode_from(&mut reader, indices.len()).unwrap(), indices);

    // real encoder output: serialize, reparse, reserialize, decode
    let registry = CoderRegistry::with_defaults();
    let config = CascadeConfig::from_mode("low").unwrap();
    let cascade = Cascade::<f32>::new(config, 99, &registry).unwrap();
    let x = speech_like(909, 2.0);
    let container = cascade.encode_signal(&x).unwrap();
    let bytes = container.to_bytes().unwrap();
    let reparsed = nwcodec_core::bitstream::Container::from_bytes(&bytes).unwrap();
    assert_eq!(reparsed.to_bytes().unwrap(), bytes);
    let direct = cascade.decode_container(&container).unwrap();
    let via_bytes = cascade.decode_container(&reparsed).unwrap();
    assert_eq!(direct, via_bytes);

    // mean code length within one bit of the entropy, 100 random distributions
    for trial in 0..100 {
        let mut p: Vec<f64> = (0..48).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= total);
        let entropy: f64 = p.iter().map(|&q| -q * q.log2()).sum();
        let book = HuffmanCodebook::from_frequencies(&p).unwrap();
        let mean = book.mean_length(&p);
        assert!(mean >= entropy - 1e-9, "trial {}: {} < H {}", trial, mean, entropy);
        assert!(mean < entropy + 1.0, "trial {}: {} >= H+1 {}", trial, mean, entropy + 1.0);
    }
}

// --- 10. training behavior at desk scale ------------------------------------

fn training_behavior() {
    let started = Instant::now();

    // fixed-seed synthetic speech corpus, ten-plus minutes at 16 kHz
    let utterances: Vec<Vec<f64>> = (0..20).map(|i| speech_like(1000 + i, 31.0)).collect();
    let secs: f64 = utterances.iter().map(|u| u.len() as f64 / SAMPLE_RATE as f64).sum();
    assert!(secs >= 600.0, "corpus is {:.0}s", secs);

    let registry = CoderRegistry::with_defaults();
    let config = CascadeConfig::from_mode("mid").unwrap();
    let target_bps = config.target_bitrate_bps;
    let mut cascade = Cascade::<f32>::new(config, 17, &registry).unwrap();
    let cfg = TrainConfig {
        seed: 17,
        phase1_epochs: 60,
        phase2_epochs: 5,
        patience: 10_000, // keep the controller's full observation window
        max_train_frames: 384,
        max_val_frames: 64,
        verbose: true,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(&cascade, &utterances, cfg.clone()).unwrap();
    let baseline = trainer.val_recon_module(&cascade, 0).unwrap();

    // (a) validation loss -30% within 20 epochs; (b) bitrate within +-10% of
    // the mode target within 60 epochs; stop as soon as both are observed
    let mut a_pass = false;
    let mut b_pass = false;
    let phase1 = {
        let (a, b) = (&mut a_pass, &mut b_pass);
        trainer
            .phase1(&mut cascade, |st| {
                if st.epoch < 20 && st.val_recon <= 0.7 * baseline {
                    *a = true;
                }
                if (st.bitrate_bps - target_bps).abs() <= 0.1 * target_bps {
                    *b = true;
                }
                *a && *b
            })
            .unwrap()
    };
    assert!(a_pass, "validation loss never dropped 30% below {:.4} within 20 epochs", baseline);
    assert!(b_pass, "bitrate never reached {:.0} +-10% within 60 epochs", target_bps);

    // final training recon loss of the single-coder cascade (its only module)
    let one_module_recon = phase1.last().unwrap().train_recon;
    let one_module_hard = trainer.train_recon_hard(&cascade).unwrap();

    // (d) adding a second coder must improve on the single-coder cascade:
    // seed its first module with the trained weights, then train only the new
    // module (the first sees one epoch at a vanishing rate). The new module
    // codes the first one's residual at the same reference scale, so its
    // training reconstruction loss must land at or below the plateau the
    // one-module cascade reached. Each extra coder carries its own bit
    // budget, so the two-module operating point doubles the neural share of
    // the target.
    let config2 = CascadeConfig {
        use_lpc: true,
        stage_kinds: vec!["nwc".to_string(), "nwc".to_string()],
        target_bitrate_bps: 2.0 * target_bps,
    };
    let mut cascade2 = Cascade::<f32>::new(config2, 17, &registry).unwrap();
    for i in 0..cascade.store.len() {
        let name = cascade.store.name(ParamId(i)).to_string();
        if name.starts_with("m0.") {
            let id2 = cascade2.store.id_of(&name).unwrap();
            *cascade2.store.value_mut(id2) = cascade.store.value(ParamId(i)).clone();
        }
    }
    let cfg2 = TrainConfig { phase1_epochs: 30, lr_first: 1e-7, ..cfg.clone() };
    let mut trainer2 = Trainer::new(&cascade2, &utterances, cfg2).unwrap();
    let stats2 = trainer2.phase1(&mut cascade2, |st| st.module == 0).unwrap();
    let two_module_recon = stats2
        .iter()
        .filter(|st| st.module == 1)
        .last()
        .expect("second module trained")
        .train_recon;
    println!(
        "  training recon loss: one module {:.6}, two modules {:.6} (hard: {:.6}, {:.6})",
        one_module_recon,
        two_module_recon,
        one_module_hard,
        trainer2.train_recon_hard(&cascade2).unwrap()
    );
    assert!(
        two_module_recon <= one_module_recon,
        "two-module cascade {} worse than one-module {}",
        two_module_recon,
        one_module_recon
    );

    // (c) joint fine-tuning must not regress the training objective
    let phase2 = trainer.phase2(&mut cascade, |_| false).unwrap();
    let p1_final = phase1.last().unwrap().train_loss;
    let p2_final = phase2.last().unwrap().train_loss;
    println!("  train loss: phase-1 final {:.6}, phase-2 final {:.6}", p1_final, p2_final);
    assert!(
        p2_final <= p1_final * 1.02,
        "phase-2 final {} exceeds phase-1 final {} by more than 2%",
        p2_final,
        p1_final
    );

    let elapsed = started.elapsed().as_secs_f64();
    println!("  training behavior wall time {:.0}s", elapsed);
    assert!(elapsed <= 7200.0, "ran {:.0}s, budget 7200s", elapsed);
}

// --- 11. faster than real time on one core ----------------------------------

fn run_bin(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_nwcodec"))
        .args(args)
        .output()
        .expect("spawn nwcodec");
    assert!(
        out.status.success(),
        "nwcodec {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn real_time_factor() {
    let dir = tempfile::tempdir().unwrap();
    let path = |n: &str| -> PathBuf { dir.path().join(n) };
    let corpus = path("corpus");
    std::fs::create_dir(&corpus).unwrap();
    write_wav(&corpus.join("a.wav"), &speech_like(77, 2.0)).unwrap();
    let cfg = path("t.cfg");
    std::fs::write(
        &cfg,
        "epochs = 0\nphase2_epochs = 0\nmax_train_frames = 8\nmax_val_frames = 2\nbatch_size = 8\n",
    )
    .unwrap();
    let ckpt = path("low.ckpt");
    run_bin(&[
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--mode",
        "low",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    let input = path("input.wav");
    write_wav(&input, &speech_like(78, 6.0)).unwrap();
    let out = run_bin(&[
        "bench",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--in",
        input.to_str().unwrap(),
    ]);
    let median: f64 = out
        .lines()
        .find_map(|l| {
            l.split_whitespace()
                .find_map(|t| t.strip_prefix("rtf_percent_median="))
                .map(|v| v.parse().unwrap())
        })
        .expect("bench_result line");
    println!("  rtf_percent_median={:.2}", median);
    assert!(median < 100.0, "median real-time factor {:.2}% is not below 100%", median);
}

// --- 12. model size ----------------------------------------------------------

fn parameter_count() {
    let mut rng = StdRng::seed_from_u64(12);
    let mut store = ParamStore::<f32>::new();
    let model = NwcModel::register(&mut store, "m0", &mut rng);
    let total = model.param_count(&store);
    println!("  param_count={}", total);

    // per-layer breakdown: tensors grouped by layer (name minus .w/.b leaf)
    let mut layers: std::collections::BTreeMap<String, usize> = std::collections::BTreeMap::new();
    for (name, arr) in store.names_prefixed("m0.") {
        let layer = name.rsplit_once('.').map(|(head, _)| head).unwrap_or(name);
        *layers.entry(layer.to_string()).or_insert(0) += arr.len();
    }
    let mut layer_total = 0usize;
    for (layer, count) in &layers {
        println!("    {} {}", layer, count);
        layer_total += count;
    }
    assert_eq!(layer_total, total);
    assert_eq!(total, store.param_count());
    assert!(
        (300_000..=400_000).contains(&total),
        "param count {} outside [300000, 400000]",
        total
    );
}

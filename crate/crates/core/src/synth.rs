//! Deterministic speech-like signal synthesis for tests and self-contained
//! training runs when no recorded corpus is available.
//!
//! Utterances alternate voiced segments (glottal-style pulse trains through
//! drifting two-pole formant resonators), unvoiced segments (shaped noise),
//! and short pauses. The statistics are speech-like enough to exercise LPC
//! analysis and the neural coder; no claim of naturalness is made.

use rand::prelude::*;

use crate::dsp::SAMPLE_RATE;

struct Resonator {
    b0: f64,
    a1: f64,
    a2: f64,
    z1: f64,
    z2: f64,
}

impl Resonator {
    fn new(freq_hz: f64, bandwidth_hz: f64) -> Self {
        let sr = SAMPLE_RATE as f64;
        let r = (-std::f64::consts::PI * bandwidth_hz / sr).exp();
        let theta = 2.0 * std::f64::consts::PI * freq_hz / sr;
        Resonator {
            b0: (1.0 - r * r) * theta.sin().max(0.1),
            a1: 2.0 * r * theta.cos(),
            a2: -r * r,
            z1: 0.0,
            z2: 0.0,
        }
    }

    fn tick(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.a1 * self.z1 + self.a2 * self.z2;
        self.z2 = self.z1;
        self.z1 = y;
        y
    }
}

/// Generate `duration_secs` of 16 kHz speech-like audio, deterministically
/// from `seed`. Peak amplitude is kept near 0.6.
pub fn speech_like(seed: u64, duration_secs: f64) -> Vec<f64> {
    let total = (duration_secs * SAMPLE_RATE as f64) as usize;
    let mut rng = StdRng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(total);
    while out.len() < total {
        let kind: f64 = rng.random_range(0.0..1.0);
        let seg_len = rng.random_range(0.08..0.35);
        let seg_samples = ((seg_len * SAMPLE_RATE as f64) as usize).min(total - out.len());
        if kind < 0.12 {
            // pause
            for _ in 0..seg_samples {
                out.push(rng.random_range(-1e-4..1e-4));
            }
        } else if kind < 0.35 {
            // unvoiced: noise through one broad resonator
            let mut res = Resonator::new(rng.random_range(1500.0..5000.0), 1200.0);
            let gain = rng.random_range(0.05..0.18);
            for _ in 0..seg_samples {
                out.push(gain * res.tick(rng.random_range(-1.0..1.0)));
            }
        } else {
            // voiced: pulse train through three drifting formants
            let f0_start: f64 = rng.random_range(80.0..240.0);
            let f0_end = (f0_start * rng.random_range(0.8..1.25)).clamp(70.0, 280.0);
            let formant_start = [
                rng.random_range(300.0..900.0),
                rng.random_range(900.0..2200.0),
                rng.random_range(2200.0..3800.0),
            ];
            let formant_end: Vec<f64> = formant_start
                .iter()
                .map(|&f: &f64| (f * rng.random_range(0.85..1.18)).clamp(250.0, 4200.0))
                .collect();
            let bandwidths = [80.0, 120.0, 200.0];
            let mut resonators: Vec<Resonator> = formant_start
                .iter()
                .zip(&bandwidths)
                .map(|(&f, &b)| Resonator::new(f, b))
                .collect();
            let gain = rng.random_range(0.25..0.6);
            let mut phase = 0.0f64;
            for n in 0..seg_samples {
                let t = n as f64 / seg_samples as f64;
                let f0 = f0_start + (f0_end - f0_start) * t;
                phase += f0 / SAMPLE_RATE as f64;
                let mut excitation = 0.0;
                if phase >= 1.0 {
                    phase -= 1.0;
                    excitation = 1.0;
                }
                excitation += 0.02 * rng.random_range(-1.0..1.0);
                // refresh filter coefficients occasionally as formants glide
                if n % 160 == 0 {
                    for (i, r) in resonators.iter_mut().enumerate() {
                        let f = formant_start[i] + (formant_end[i] - formant_start[i]) * t;
                        let (z1, z2) = (r.z1, r.z2);
                        *r = Resonator::new(f, bandwidths[i]);
                        r.z1 = z1;
                        r.z2 = z2;
                    }
                }
                let mut s = 0.0;
                for r in resonators.iter_mut() {
                    s += r.tick(excitation);
                }
                // soft attack/release envelope
                let env = (t * 20.0).min(1.0) * ((1.0 - t) * 20.0).min(1.0);
                out.push(gain * env * s / 3.0);
            }
        }
    }
    // keep the peak in a sane range
    let peak = out.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if peak > 1e-9 {
        let scale = 0.6 / peak;
        for v in &mut out {
            *v *= scale;
        }
    }
    out
}

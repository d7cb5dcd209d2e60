//! Synthetic two-lead, ECG-like waveforms with per-step wave labels.
//!
//! Each beat is the segment sequence P, baseline, QR, RS, baseline, T,
//! baseline. Durations (in steps) are drawn uniformly from the inclusive
//! ranges in [`EcgSynthSpec`], amplitudes uniformly from the listed ranges.
//! P and T are both smooth positive bumps of the same amplitude range and
//! sit near the noise floor, so telling them apart and finding their edges
//! leans on timing relative to the QRS complex. Lead 2 scales each
//! wave type by a per-record gain in `[0.3, 1.0]`. Both leads get a slow
//! baseline wander and i.i.d. Gaussian noise. Records have a random valid
//! length and are zero-padded (label Normal) to `length`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{SequenceBatch, Target};
use crate::error::{Error, Result};
use crate::numerics::{SeededRng, Vector};

pub const ECG_CLASSES: [&str; 5] = ["Normal", "P", "QR", "RS", "T"];

const NORMAL: usize = 0;
const P_WAVE: usize = 1;
const QR: usize = 2;
const RS: usize = 3;
const T_WAVE: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EcgSynthSpec {
    /// Padded sequence length.
    pub length: usize,
    /// Shortest valid (unpadded) length.
    pub min_length: usize,
    pub p_steps: (usize, usize),
    pub pr_steps: (usize, usize),
    pub qr_steps: (usize, usize),
    pub rs_steps: (usize, usize),
    pub st_steps: (usize, usize),
    pub t_steps: (usize, usize),
    pub tp_steps: (usize, usize),
    pub p_amplitude: (f64, f64),
    pub r_amplitude: (f64, f64),
    pub s_amplitude: (f64, f64),
    pub t_amplitude: (f64, f64),
    pub wander: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for EcgSynthSpec {
    fn default() -> Self {
        Self {
            length: 300,
            min_length: 240,
            p_steps: (8, 14),
            pr_steps: (3, 8),
            qr_steps: (3, 5),
            rs_steps: (3, 5),
            st_steps: (6, 7),
            t_steps: (10, 12),
            tp_steps: (8, 30),
            p_amplitude: (0.3, 0.6),
            r_amplitude: (3.0, 4.8),
            s_amplitude: (0.6, 1.2),
            t_amplitude: (0.3, 0.6),
            wander: 0.15,
            noise_std: 0.3,
            seed: 0,
        }
    }
}

impl EcgSynthSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn num_classes(&self) -> usize {
        ECG_CLASSES.len()
    }

    fn beat_steps(&self) -> [(usize, usize); 7] {
        [
            self.p_steps,
            self.pr_steps,
            self.qr_steps,
            self.rs_steps,
            self.st_steps,
            self.t_steps,
            self.tp_steps,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = self.beat_steps();
        if ranges.iter().any(|&(lo, hi)| lo == 0 || lo > hi) {
            return Err(Error::InvalidConfig("segment durations need 1 <= lo <= hi".into()));
        }
        let amps = [self.p_amplitude, self.r_amplitude, self.s_amplitude, self.t_amplitude];
        if amps
            .iter()
            .any(|&(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo <= hi))
        {
            return Err(Error::InvalidConfig("amplitude ranges need lo <= hi".into()));
        }
        if !(self.noise_std >= 0.0 && self.wander >= 0.0) {
            return Err(Error::InvalidConfig("noise and wander must be non-negative".into()));
        }
        // Longest lead-in baseline plus one longest beat must fit, so every
        // record shows all five labels.
        let longest_beat: usize = ranges.iter().map(|r| r.1).sum();
        if self.min_length > self.length || self.min_length < self.tp_steps.1 + longest_beat {
            return Err(Error::InvalidConfig(format!(
                "min_length {} must be in {}..={}",
                self.min_length,
                self.tp_steps.1 + longest_beat,
                self.length
            )));
        }
        Ok(())
    }
}

/// Half-open step range `[start, end)` carrying one label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EcgSegment {
    pub start: usize,
    pub end: usize,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EcgRecord {
    /// `length` steps of two leads; zero after `valid`.
    pub signal: Vec<[f64; 2]>,
    pub labels: Vec<usize>,
    pub segments: Vec<EcgSegment>,
    pub valid: usize,
}

fn shape(label: usize, u: f64, amp: f64, s: f64) -> f64 {
    match label {
        P_WAVE | T_WAVE => amp * (PI * u).sin(),
        QR => amp * u,
        RS => {
            if u < 0.6 {
                amp - (amp + s) * u / 0.6
            } else {
                -s * (1.0 - (u - 0.6) / 0.4)
            }
        }
        _ => 0.0,
    }
}

fn gen_record(spec: &EcgSynthSpec, rng: &mut SeededRng) -> EcgRecord {
    let valid = rng.between(spec.min_length, spec.length);
    let gains = [
        1.0,
        rng.uniform_range(0.3, 1.0),
        rng.uniform_range(0.3, 1.0),
        0.0,
        rng.uniform_range(0.3, 1.0),
    ];
    let wander_period = rng.uniform_range(80.0, 200.0);
    let wander_phase = rng.uniform_range(0.0, 2.0 * PI);

    let mut segments = Vec::new();
    let lead_in = rng.between(1, spec.tp_steps.1);
    segments.push(EcgSegment {
        start: 0,
        end: lead_in.min(valid),
        label: NORMAL,
    });
    let mut pos = lead_in;
    let beat_labels = [P_WAVE, NORMAL, QR, RS, NORMAL, T_WAVE, NORMAL];
    let mut waves = Vec::new();
    'beats: loop {
        let amps = (
            rng.uniform_range(spec.p_amplitude.0, spec.p_amplitude.1),
            rng.uniform_range(spec.r_amplitude.0, spec.r_amplitude.1),
            rng.uniform_range(spec.s_amplitude.0, spec.s_amplitude.1),
            rng.uniform_range(spec.t_amplitude.0, spec.t_amplitude.1),
        );
        for (&label, &(lo, hi)) in beat_labels.iter().zip(&spec.beat_steps()) {
            if pos >= valid {
                break 'beats;
            }
            let len = rng.between(lo, hi);
            let end = (pos + len).min(valid);
            segments.push(EcgSegment { start: pos, end, label });
            waves.push((len, amps));
            pos += len;
        }
    }
    // The lead-in has no wave parameters; give it the first beat's.
    waves.insert(0, (lead_in, waves.first().map_or((0.0, 0.0, 0.0, 0.0), |w| w.1)));

    let mut signal = vec![[0.0; 2]; spec.length];
    let mut labels = vec![NORMAL; spec.length];
    for (seg, &(len, (p, r, s, t))) in segments.iter().zip(&waves) {
        let amp = match seg.label {
            P_WAVE => p,
            QR | RS => r,
            T_WAVE => t,
            _ => 0.0,
        };
        let gain2 = if seg.label == RS { gains[QR] } else { gains[seg.label] };
        for step in seg.start..seg.end {
            let u = (step - seg.start) as f64 / (len.max(2) - 1) as f64;
            let v = shape(seg.label, u, amp, s);
            let wander = spec.wander * (2.0 * PI * step as f64 / wander_period + wander_phase).sin();
            signal[step] = [
                v + wander + spec.noise_std * rng.normal(),
                gain2 * v + wander + spec.noise_std * rng.normal(),
            ];
            labels[step] = seg.label;
        }
    }
    EcgRecord {
        signal,
        labels,
        segments,
        valid,
    }
}

pub fn gen_ecg_record(spec: &EcgSynthSpec, count: usize) -> Result<Vec<EcgRecord>> {
    spec.validate()?;
    let mut rng = SeededRng::new(spec.seed);
    Ok((0..count).map(|_| gen_record(spec, &mut rng)).collect())
}

/// Per-step labelled batch; `lengths` mark the unpadded part.
pub fn gen_ecg_stream(spec: &EcgSynthSpec, count: usize) -> Result<SequenceBatch> {
    let records = gen_ecg_record(spec, count)?;
    Ok(SequenceBatch {
        inputs: records
            .iter()
            .map(|r| r.signal.iter().map(|s| Vector::from(s.to_vec())).collect())
            .collect(),
        targets: records.iter().map(|r| Target::PerStep(r.labels.clone())).collect(),
        lengths: records.iter().map(|r| r.valid).collect(),
        input_dim: 2,
        num_classes: ECG_CLASSES.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_labels_present_and_padded() {
        let spec = EcgSynthSpec::with_seed(4);
        let batch = gen_ecg_stream(&spec, 200).unwrap();
        batch.validate().unwrap();
        for (b, target) in batch.targets.iter().enumerate() {
            let Target::PerStep(labels) = target else { panic!() };
            let valid = batch.lengths[b];
            assert_eq!(labels.len(), 300);
            for class in 0..5 {
                assert!(labels[..valid].contains(&class), "record {b} lacks class {class}");
            }
            assert!(batch.inputs[b][valid..].iter().all(|x| x[0] == 0.0 && x[1] == 0.0));
            assert!(labels[valid..].iter().all(|&l| l == NORMAL));
        }
    }

    #[test]
    fn deterministic() {
        let spec = EcgSynthSpec::with_seed(9);
        assert_eq!(gen_ecg_stream(&spec, 10).unwrap(), gen_ecg_stream(&spec, 10).unwrap());
    }

    #[test]
    fn segments_tile_and_match_labels() {
        let spec = EcgSynthSpec::with_seed(1);
        for rec in gen_ecg_record(&spec, 100).unwrap() {
            assert_eq!(rec.segments[0].start, 0);
            assert_eq!(rec.segments.last().unwrap().end, rec.valid);
            for pair in rec.segments.windows(2) {
                assert_eq!(pair[0].end, pair[1].start);
            }
            for seg in &rec.segments {
                assert!(rec.labels[seg.start..seg.end].iter().all(|&l| l == seg.label));
            }
            let starts: Vec<usize> = rec.segments.iter().map(|s| s.start).collect();
            for t in 1..rec.valid {
                if rec.labels[t] != rec.labels[t - 1] {
                    assert!(starts.contains(&t), "label change inside a segment at {t}");
                }
            }
        }
    }

    #[test]
    fn rejects_short_min_length() {
        let spec = EcgSynthSpec {
            min_length: 50,
            ..EcgSynthSpec::default()
        };
        assert!(gen_ecg_stream(&spec, 1).is_err());
    }
}

//! Entropy-based variable frame rate: entropy curve over oversampled mel
//! spectra, adaptive thresholds, frame-pick mask, and the conditioning
//! vector fed to the attention layer.

use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};

/// Oversampled frames per entropy buffer (30 ms at a 2.5 ms hop).
pub const BUFFER_FRAMES: usize = 12;
/// Oversampled frames per entropy-curve hop (15 ms at a 2.5 ms hop).
pub const CURVE_HOP_FRAMES: usize = 6;
/// Floor on the covariance trace before the log.
pub const TRACE_FLOOR: f64 = 1e-10;
/// Mask bits summed per conditioning value (2.5 ms grid -> 10 ms grid).
pub const REDUCE: usize = 4;

const OMEGA1: f64 = 0.7;
const OMEGA2: f64 = 0.8;
const OMEGA3: f64 = 0.5;

/// Gaussian differential-entropy approximation per 30 ms buffer,
/// one value every 15 ms.
#[derive(Debug, Clone)]
pub struct EntropyCurve {
    pub values: Vec<f64>,
    pub n_bands: usize,
}

/// Per-utterance picking-rate thresholds.
#[derive(Debug, Clone, Copy)]
pub struct Thresholds {
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub m_max: f64,
    pub m_med: f64,
    pub m_min: f64,
}

/// Binary pick mask over the 2.5 ms grid.
#[derive(Debug, Clone)]
pub struct PickMask {
    pub bits: Vec<u8>,
}

/// Per-frame pick counts on the 10 ms grid, each in 0..=4.
#[derive(Debug, Clone)]
pub struct ConditioningVector {
    pub values: Vec<f64>,
}

impl ConditioningVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// H = K ln sqrt(2*pi) + ln Tr(Sigma), with Tr(Sigma) the sum of the
/// per-band variances over the 12 frames of each centered 30 ms buffer,
/// floored before the log. One point per 6 oversampled frames.
pub fn entropy_curve(mel: &MelSpectrogram) -> Result<EntropyCurve> {
    assert!(
        (mel.hop_ms - 2.5).abs() < 1e-9,
        "entropy curve expects the 2.5 ms oversampled grid"
    );
    let n = mel.n_frames();
    if n < BUFFER_FRAMES {
        return Err(Error::AudioTooShort { need: BUFFER_FRAMES, got: n });
    }
    let k = mel.n_bands();
    let n_points = (n - BUFFER_FRAMES) / CURVE_HOP_FRAMES + 1;
    let base = k as f64 * (2.0 * std::f64::consts::PI).sqrt().ln();
    let mut values = Vec::with_capacity(n_points);
    for p in 0..n_points {
        let start = p * CURVE_HOP_FRAMES;
        let buf = mel.frames.slice(ndarray::s![start..start + BUFFER_FRAMES, ..]);
        let mut trace = 0.0;
        for j in 0..k {
            let col = buf.column(j);
            let mean = col.sum() / BUFFER_FRAMES as f64;
            let var =
                col.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / BUFFER_FRAMES as f64;
            trace += var;
        }
        values.push(base + trace.max(TRACE_FLOOR).ln());
    }
    Ok(EntropyCurve { values, n_bands: k })
}

/// Median as the lower-middle element of the sorted curve.
fn median_lower(sorted: &[f64]) -> f64 {
    sorted[(sorted.len() - 1) / 2]
}

pub fn compute_thresholds(curve: &EntropyCurve) -> Result<Thresholds> {
    if curve.values.is_empty() {
        return Err(Error::EmptyCurve);
    }
    let mut sorted = curve.values.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m_min = sorted[0];
    let m_max = *sorted.last().unwrap();
    let m_med = median_lower(&sorted);
    Ok(Thresholds {
        t1: OMEGA1 * m_max + (1.0 - OMEGA1) * m_med,
        t2: (1.0 - OMEGA2) * m_max + OMEGA2 * m_med,
        t3: (1.0 - OMEGA3) * m_med + OMEGA3 * m_min,
        m_max,
        m_med,
        m_min,
    })
}

/// Local picking rate for one entropy value.
pub fn pick_rate(h: f64, th: &Thresholds) -> usize {
    if h >= th.t1 {
        2
    } else if h >= th.t2 {
        3
    } else if h >= th.t3 {
        4
    } else {
        5
    }
}

/// Entropy value governing oversampled frame `i`: curve points are held
/// constant over the 6-frame span they summarize, the last one extended
/// to the end of the utterance.
pub fn rate_at(curve: &EntropyCurve, th: &Thresholds, i: usize) -> usize {
    let j = (i / CURVE_HOP_FRAMES).min(curve.values.len() - 1);
    pick_rate(curve.values[j], th)
}

/// Left-to-right scan: position 0 is always picked; afterwards a frame is
/// picked once the gap since the last pick reaches the local rate.
pub fn pick_frames(
    curve: &EntropyCurve,
    th: &Thresholds,
    n_oversampled: usize,
) -> Result<PickMask> {
    if curve.values.is_empty() {
        return Err(Error::EmptyCurve);
    }
    assert!(n_oversampled >= 1);
    let mut bits = vec![0u8; n_oversampled];
    bits[0] = 1;
    let mut last_pick = 0usize;
    for i in 1..n_oversampled {
        let r = rate_at(curve, th, i);
        if i - last_pick >= r {
            bits[i] = 1;
            last_pick = i;
        }
    }
    Ok(PickMask { bits })
}

/// Sums the mask over consecutive groups of 4, reducing the 2.5 ms grid
/// to the 10 ms grid; a final partial group is summed as-is.
pub fn conditioning_vector(mask: &PickMask) -> ConditioningVector {
    let values = mask
        .bits
        .chunks(REDUCE)
        .map(|g| g.iter().map(|&b| b as f64).sum())
        .collect();
    ConditioningVector { values }
}

/// Fits the conditioning vector to exactly `t_frames` entries: truncates
/// if longer, repeats the final value if shorter.
pub fn align_conditioning(c: &ConditioningVector, t_frames: usize) -> ConditioningVector {
    assert!(!c.values.is_empty() && t_frames >= 1);
    let mut values = c.values.clone();
    values.truncate(t_frames);
    while values.len() < t_frames {
        values.push(*values.last().unwrap());
    }
    ConditioningVector { values }
}

/// Full VFR pipeline on an oversampled mel spectrogram: conditioning
/// vector aligned to `t_frames` 10 ms feature frames.
pub fn conditioning_from_mel(
    mel: &MelSpectrogram,
    t_frames: usize,
) -> Result<(EntropyCurve, Thresholds, PickMask, ConditioningVector)> {
    let curve = entropy_curve(mel)?;
    let th = compute_thresholds(&curve)?;
    let mask = pick_frames(&curve, &th, mel.n_frames())?;
    let c = align_conditioning(&conditioning_vector(&mask), t_frames);
    Ok((curve, th, mask, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn mel_from(frames: Array2<f64>) -> MelSpectrogram {
        MelSpectrogram { frames, hop_ms: 2.5 }
    }

    #[test]
    fn identical_frames_hit_the_floor() {
        let k = 5;
        let mel = mel_from(Array2::from_elem((12, k), 3.0));
        let curve = entropy_curve(&mel).unwrap();
        let expect = k as f64 * (2.0 * std::f64::consts::PI).sqrt().ln() + TRACE_FLOOR.ln();
        assert_eq!(curve.values.len(), 1);
        assert!((curve.values[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn closed_form_two_band_entropy() {
        // per-band variances 1 and 3 -> H = 2*ln(sqrt(2pi)) + ln(4) = 3.2242
        let mut frames = Array2::zeros((12, 2));
        // 6 pairs of (-s, +s) give population variance s^2 exactly
        for i in 0..12 {
            let sign = if i % 2 == 0 { -1.0 } else { 1.0 };
            frames[[i, 0]] = sign * 1.0;
            frames[[i, 1]] = sign * 3f64.sqrt();
        }
        let curve = entropy_curve(&mel_from(frames)).unwrap();
        assert!((curve.values[0] - 3.2242).abs() < 1e-3);
    }

    #[test]
    fn scaling_frames_shifts_entropy_by_2_ln_s() {
        let mut frames = Array2::zeros((24, 3));
        for (i, v) in frames.iter_mut().enumerate() {
            *v = ((i * 37 % 13) as f64) / 13.0;
        }
        let s = 2.5;
        let scaled = frames.mapv(|v| v * s);
        let h1 = entropy_curve(&mel_from(frames)).unwrap();
        let h2 = entropy_curve(&mel_from(scaled)).unwrap();
        for (a, b) in h1.values.iter().zip(&h2.values) {
            assert!((b - a - 2.0 * s.ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn too_few_frames_is_an_error() {
        let mel = mel_from(Array2::zeros((11, 4)));
        assert!(matches!(entropy_curve(&mel), Err(Error::AudioTooShort { .. })));
    }

    #[test]
    fn threshold_spot_checks() {
        let curve = EntropyCurve { values: vec![10.0, 6.0, 2.0], n_bands: 1 };
        let th = compute_thresholds(&curve).unwrap();
        assert!((th.t1 - 8.8).abs() < 1e-12);
        assert!((th.t2 - 6.8).abs() < 1e-12);
        assert!((th.t3 - 4.0).abs() < 1e-12);

        let curve = EntropyCurve { values: vec![1.0, 2.0, 3.0], n_bands: 1 };
        let th = compute_thresholds(&curve).unwrap();
        assert!((th.t1 - 2.7).abs() < 1e-12);
        assert!((th.t2 - 2.2).abs() < 1e-12);
        assert!((th.t3 - 1.5).abs() < 1e-12);
    }

    #[test]
    fn constant_curve_collapses_thresholds() {
        let curve = EntropyCurve { values: vec![4.2; 7], n_bands: 1 };
        let th = compute_thresholds(&curve).unwrap();
        assert_eq!(th.t1, 4.2);
        assert_eq!(th.t2, 4.2);
        assert_eq!(th.t3, 4.2);
    }

    #[test]
    fn constant_curve_picks_every_other_frame() {
        let curve = EntropyCurve { values: vec![1.0; 4], n_bands: 1 };
        let th = compute_thresholds(&curve).unwrap();
        let mask = pick_frames(&curve, &th, 10).unwrap();
        assert_eq!(mask.bits, vec![1, 0, 1, 0, 1, 0, 1, 0, 1, 0]);
    }

    #[test]
    fn below_t3_picks_every_fifth_frame() {
        let curve = EntropyCurve { values: vec![0.0; 4], n_bands: 1 };
        let th = Thresholds { t1: 3.0, t2: 2.0, t3: 1.0, m_max: 0.0, m_med: 0.0, m_min: 0.0 };
        let mask = pick_frames(&curve, &th, 12).unwrap();
        assert_eq!(mask.bits, vec![1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0]);
    }

    /// Brute-force left-to-right scanner over a per-frame rate table.
    fn reference_scan(rates: &[usize]) -> Vec<u8> {
        let mut bits = vec![0u8; rates.len()];
        bits[0] = 1;
        let mut last = 0;
        for i in 1..rates.len() {
            if i - last >= rates[i] {
                bits[i] = 1;
                last = i;
            }
        }
        bits
    }

    #[test]
    fn two_segment_curve_matches_reference_scanner() {
        // high entropy first half, low second half
        let mut values = vec![10.0; 5];
        values.extend(vec![0.0; 5]);
        let curve = EntropyCurve { values, n_bands: 1 };
        let th = Thresholds { t1: 8.0, t2: 5.0, t3: 2.0, m_max: 10.0, m_med: 5.0, m_min: 0.0 };
        let n = 60;
        let mask = pick_frames(&curve, &th, n).unwrap();
        let rates: Vec<usize> = (0..n).map(|i| rate_at(&curve, &th, i)).collect();
        assert_eq!(mask.bits, reference_scan(&rates));
        // spacing 2 in the high span, 5 deep in the low span
        assert_eq!(&mask.bits[0..6], &[1, 0, 1, 0, 1, 0]);
        let low_picks: Vec<usize> =
            (35..n).filter(|&i| mask.bits[i] == 1).collect();
        for w in low_picks.windows(2) {
            assert_eq!(w[1] - w[0], 5);
        }
    }

    #[test]
    fn conditioning_group_sums() {
        let mask = PickMask { bits: vec![1, 0, 1, 0, 0, 1, 0, 0] };
        assert_eq!(conditioning_vector(&mask).values, vec![2.0, 1.0]);
        let ones = PickMask { bits: vec![1; 8] };
        assert_eq!(conditioning_vector(&ones).values, vec![4.0, 4.0]);
        let zeros = PickMask { bits: vec![0; 8] };
        assert_eq!(conditioning_vector(&zeros).values, vec![0.0, 0.0]);
        // final partial group summed as-is
        let partial = PickMask { bits: vec![1, 1, 1, 1, 1, 1] };
        assert_eq!(conditioning_vector(&partial).values, vec![4.0, 2.0]);
    }

    #[test]
    fn align_edge_rules() {
        let c = ConditioningVector { values: (0..100).map(|i| (i % 5) as f64).collect() };
        assert_eq!(align_conditioning(&c, 100).values, c.values);
        let short = ConditioningVector { values: c.values[..98].to_vec() };
        let padded = align_conditioning(&short, 100);
        assert_eq!(padded.len(), 100);
        assert_eq!(padded.values[98], padded.values[97]);
        assert_eq!(padded.values[99], padded.values[97]);
        let long = ConditioningVector { values: (0..103).map(|i| i as f64).collect() };
        let cut = align_conditioning(&long, 100);
        assert_eq!(cut.values, (0..100).map(|i| i as f64).collect::<Vec<_>>());
    }

    #[test]
    fn entropy_equalization_beats_fixed_rate() {
        // two-level curve; VFR should equalize per-gap summed entropy
        let mut values = vec![5.0; 20];
        values.extend(vec![2.0; 20]);
        let curve = EntropyCurve { values: values.clone(), n_bands: 1 };
        let th = compute_thresholds(&curve).unwrap();
        let n = 240;
        let vfr = pick_frames(&curve, &th, n).unwrap();
        let fixed: Vec<u8> = (0..n).map(|i| u8::from(i % 4 == 0)).collect();

        let held: Vec<f64> = (0..n)
            .map(|i| values[(i / CURVE_HOP_FRAMES).min(values.len() - 1)])
            .collect();
        let cv = |bits: &[u8]| {
            let picks: Vec<usize> = (0..n).filter(|&i| bits[i] == 1).collect();
            let sums: Vec<f64> = picks
                .windows(2)
                .map(|w| held[w[0] + 1..=w[1]].iter().sum())
                .collect();
            let mean = sums.iter().sum::<f64>() / sums.len() as f64;
            let var = sums.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>()
                / sums.len() as f64;
            var.sqrt() / mean
        };
        assert!(cv(&vfr.bits) <= cv(&fixed));
    }

    proptest! {
        #[test]
        fn thresholds_ordered_for_any_curve(values in proptest::collection::vec(-50.0..50.0f64, 1..200)) {
            let curve = EntropyCurve { values, n_bands: 1 };
            let th = compute_thresholds(&curve).unwrap();
            prop_assert!(th.t1 >= th.t2 - 1e-12);
            prop_assert!(th.t2 >= th.t3 - 1e-12);
        }

        #[test]
        fn high_entropy_spans_denser_than_low(values in proptest::collection::vec(0.0..10.0f64, 4..40), n in 30usize..300) {
            let curve = EntropyCurve { values, n_bands: 1 };
            let th = compute_thresholds(&curve).unwrap();
            let mask = pick_frames(&curve, &th, n).unwrap();
            let mut hi = (0usize, 0usize); // (picked, total) where H >= T1
            let mut lo = (0usize, 0usize); // where H < T1 (rate >= 3)
            for i in 0..n {
                let r = rate_at(&curve, &th, i);
                if r == 2 {
                    hi = (hi.0 + mask.bits[i] as usize, hi.1 + 1);
                } else {
                    lo = (lo.0 + mask.bits[i] as usize, lo.1 + 1);
                }
            }
            if hi.1 >= 10 && lo.1 >= 10 {
                let dh = hi.0 as f64 / hi.1 as f64;
                let dl = lo.0 as f64 / lo.1 as f64;
                // small slack for gap phase at span boundaries
                prop_assert!(dh >= dl - 0.1);
            }
        }

        #[test]
        fn conditioning_totals_match_pick_count(bits in proptest::collection::vec(0u8..2, 1..400)) {
            let mask = PickMask { bits: bits.clone() };
            let c = conditioning_vector(&mask);
            prop_assert!(c.values.iter().all(|&v| (0.0..=4.0).contains(&v) && v.fract() == 0.0));
            let total: f64 = c.values.iter().sum();
            let picked: usize = bits.iter().map(|&b| b as usize).sum();
            prop_assert_eq!(total as usize, picked);
        }
    }
}

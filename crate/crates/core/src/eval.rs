//! Verification scoring: cosine trial scores, equal error rate, and
//! McNemar's paired significance test.

use std::path::Path;

use ndarray::Array1;

use crate::error::{Error, Result};

/// Chi-square critical value at p = 0.05, one degree of freedom.
pub const CHI2_05: f64 = 3.841;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub enroll_id: String,
    pub test_id: String,
    pub is_target: bool,
}

#[derive(Debug, Clone, Default)]
pub struct TrialList {
    pub trials: Vec<Trial>,
}

/// Scores aligned index-for-index with a trial list.
#[derive(Debug, Clone)]
pub struct ScoreSet {
    pub scores: Vec<f64>,
}

/// Accept/reject decisions at a stated threshold.
#[derive(Debug, Clone)]
pub struct DecisionSet {
    pub decisions: Vec<bool>,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct McNemarResult {
    pub statistic: f64,
    pub significant_at_05: bool,
    /// trials A got wrong and B got right
    pub n01: usize,
    /// trials A got right and B got wrong
    pub n10: usize,
}

pub fn cosine_score(a: &Array1<f64>, b: &Array1<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {}", a.len(), b.len())));
    }
    let na = a.dot(a).sqrt();
    let nb = b.dot(b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(a.dot(b) / (na * nb))
}

/// Sweeps all distinct score thresholds; FAR(t) is the fraction of
/// nontargets scoring >= t and FRR(t) the fraction of targets scoring
/// < t. The EER is the crossing, linearly interpolated between adjacent
/// operating points when FAR and FRR never tie exactly.
pub fn compute_eer(trials: &TrialList, scores: &ScoreSet) -> Result<(f64, f64)> {
    if trials.trials.len() != scores.scores.len() {
        return Err(Error::LengthMismatch(trials.trials.len(), scores.scores.len()));
    }
    let targets: Vec<f64> = trials
        .trials
        .iter()
        .zip(&scores.scores)
        .filter(|(t, _)| t.is_target)
        .map(|(_, &s)| s)
        .collect();
    let nontargets: Vec<f64> = trials
        .trials
        .iter()
        .zip(&scores.scores)
        .filter(|(t, _)| !t.is_target)
        .map(|(_, &s)| s)
        .collect();
    if targets.is_empty() || nontargets.is_empty() {
        return Err(Error::DegenerateTrials(
            "need at least one target and one nontarget".into(),
        ));
    }
    if scores.scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::DegenerateTrials("non-finite score".into()));
    }

    let mut thresholds: Vec<f64> = scores.scores.clone();
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();
    // one point past the top so FAR can reach 0
    thresholds.push(thresholds.last().unwrap() + 1.0);

    let far = |t: f64| nontargets.iter().filter(|&&s| s >= t).count() as f64 / nontargets.len() as f64;
    let frr = |t: f64| targets.iter().filter(|&&s| s < t).count() as f64 / targets.len() as f64;

    let mut prev: Option<(f64, f64, f64)> = None; // (threshold, far, frr)
    for &t in &thresholds {
        let (fa, fr) = (far(t), frr(t));
        if fr >= fa {
            // crossing reached (FRR grows, FAR shrinks as t increases)
            if fr == fa {
                return Ok((fa, t));
            }
            if let Some((pt, pfa, pfr)) = prev {
                // interpolate between the previous and current points
                let denom = (fr - fa) - (pfr - pfa);
                let alpha = if denom.abs() < 1e-300 { 0.0 } else { (pfa - pfr) / denom };
                let eer = pfa + alpha * (fa - pfa);
                let thr = pt + alpha * (t - pt);
                return Ok((eer, thr));
            }
            return Ok((fa.max(fr), t));
        }
        prev = Some((t, fa, fr));
    }
    // FRR never reached FAR: everything separates at the top threshold
    let t = *thresholds.last().unwrap();
    Ok((far(t).max(frr(t)), t))
}

/// Accept iff score >= the EER threshold.
pub fn decisions_at_eer(trials: &TrialList, scores: &ScoreSet) -> Result<DecisionSet> {
    let (_, threshold) = compute_eer(trials, scores)?;
    Ok(DecisionSet {
        decisions: scores.scores.iter().map(|&s| s >= threshold).collect(),
        threshold,
    })
}

/// McNemar's test on discordant decisions, without continuity
/// correction; significance at the 3.841 chi-square cutoff.
pub fn mcnemar(a: &DecisionSet, b: &DecisionSet, truth: &TrialList) -> Result<McNemarResult> {
    if a.decisions.len() != b.decisions.len() {
        return Err(Error::LengthMismatch(a.decisions.len(), b.decisions.len()));
    }
    if a.decisions.len() != truth.trials.len() {
        return Err(Error::LengthMismatch(a.decisions.len(), truth.trials.len()));
    }
    let mut n01 = 0usize;
    let mut n10 = 0usize;
    for ((&da, &db), trial) in a.decisions.iter().zip(&b.decisions).zip(&truth.trials) {
        let a_right = da == trial.is_target;
        let b_right = db == trial.is_target;
        match (a_right, b_right) {
            (false, true) => n01 += 1,
            (true, false) => n10 += 1,
            _ => {}
        }
    }
    let statistic = if n01 + n10 == 0 {
        0.0
    } else {
        let d = n01 as f64 - n10 as f64;
        d * d / (n01 + n10) as f64
    };
    Ok(McNemarResult { statistic, significant_at_05: statistic > CHI2_05, n01, n10 })
}

/// Parses `enroll_id test_id target|nontarget` lines; `#` comments.
pub fn read_trial_list<P: AsRef<Path>>(path: P) -> Result<TrialList> {
    let text = std::fs::read_to_string(path)?;
    let mut trials = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(Error::Parse(format!(
                "trial list line {}: expected 'enroll test target|nontarget'",
                lineno + 1
            )));
        }
        let is_target = match parts[2] {
            "target" => true,
            "nontarget" => false,
            other => {
                return Err(Error::Parse(format!(
                    "trial list line {}: bad label '{other}'",
                    lineno + 1
                )))
            }
        };
        trials.push(Trial {
            enroll_id: parts[0].to_string(),
            test_id: parts[1].to_string(),
            is_target,
        });
    }
    Ok(TrialList { trials })
}

/// Parses `enroll_id test_id score` lines aligned with a trial list.
pub fn read_scores<P: AsRef<Path>>(path: P, trials: &TrialList) -> Result<ScoreSet> {
    let text = std::fs::read_to_string(path)?;
    let mut scores = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(Error::Parse(format!(
                "scores line {}: expected 'enroll test score'",
                lineno + 1
            )));
        }
        let score: f64 = parts[2]
            .parse()
            .map_err(|e| Error::Parse(format!("scores line {}: {e}", lineno + 1)))?;
        scores.push((parts[0].to_string(), parts[1].to_string(), score));
    }
    if scores.len() != trials.trials.len() {
        return Err(Error::LengthMismatch(scores.len(), trials.trials.len()));
    }
    for (s, t) in scores.iter().zip(&trials.trials) {
        if s.0 != t.enroll_id || s.1 != t.test_id {
            return Err(Error::Parse(format!(
                "scores not aligned with trial list at ({}, {})",
                s.0, s.1
            )));
        }
    }
    Ok(ScoreSet { scores: scores.into_iter().map(|(_, _, s)| s).collect() })
}

pub fn write_scores<P: AsRef<Path>>(
    path: P,
    trials: &TrialList,
    scores: &ScoreSet,
) -> Result<()> {
    let mut out = String::new();
    for (t, s) in trials.trials.iter().zip(&scores.scores) {
        out.push_str(&format!("{} {} {}\n", t.enroll_id, t.test_id, s));
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn trial_list(labels: &[bool]) -> TrialList {
        TrialList {
            trials: labels
                .iter()
                .enumerate()
                .map(|(i, &t)| Trial {
                    enroll_id: format!("e{i}"),
                    test_id: format!("t{i}"),
                    is_target: t,
                })
                .collect(),
        }
    }

    #[test]
    fn cosine_identities() {
        let v = arr1(&[1.0, 2.0, -3.0]);
        assert!((cosine_score(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        let a = arr1(&[1.0, 0.0]);
        let b = arr1(&[0.0, 1.0]);
        assert!(cosine_score(&a, &b).unwrap().abs() < 1e-12);
        let neg = v.mapv(|x| -x);
        assert!((cosine_score(&v, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(
            cosine_score(&arr1(&[0.0, 0.0]), &a),
            Err(Error::ZeroVector)
        ));
        assert!(matches!(
            cosine_score(&a, &arr1(&[1.0, 2.0, 3.0])),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn perfect_separation_gives_zero_eer() {
        let trials = trial_list(&[true, true, false, false]);
        let scores = ScoreSet { scores: vec![0.8, 0.9, 0.1, 0.2] };
        let (eer, thr) = compute_eer(&trials, &scores).unwrap();
        assert_eq!(eer, 0.0);
        assert!(thr > 0.2 && thr <= 0.8);
    }

    /// Exhaustive threshold sweep over a fine grid.
    fn brute_force_eer(targets: &[f64], nontargets: &[f64]) -> f64 {
        let mut all: Vec<f64> = targets.iter().chain(nontargets).cloned().collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut best = f64::INFINITY;
        let mut eer = 0.0;
        let mut candidates = vec![all[0] - 1.0];
        candidates.extend(all.iter().cloned());
        candidates.push(all.last().unwrap() + 1.0);
        for &t in &candidates {
            let fa = nontargets.iter().filter(|&&s| s >= t).count() as f64
                / nontargets.len() as f64;
            let fr = targets.iter().filter(|&&s| s < t).count() as f64 / targets.len() as f64;
            if (fa - fr).abs() < best {
                best = (fa - fr).abs();
                eer = (fa + fr) / 2.0;
            }
        }
        eer
    }

    #[test]
    fn interleaved_scores_give_half_eer() {
        let trials = trial_list(&[true, true, false, false]);
        let scores = ScoreSet { scores: vec![0.9, 0.2, 0.8, 0.1] };
        let (eer, _) = compute_eer(&trials, &scores).unwrap();
        assert!((eer - 0.5).abs() < 1e-12);
        assert!((brute_force_eer(&[0.9, 0.2], &[0.8, 0.1]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn flipped_labels_on_separated_scores_give_one() {
        let trials = trial_list(&[true, true, false, false]);
        let scores = ScoreSet { scores: vec![0.1, 0.2, 0.8, 0.9] };
        let (eer, _) = compute_eer(&trials, &scores).unwrap();
        assert!((eer - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_trials_rejected() {
        let trials = trial_list(&[true, true]);
        let scores = ScoreSet { scores: vec![0.5, 0.6] };
        assert!(matches!(
            compute_eer(&trials, &scores),
            Err(Error::DegenerateTrials(_))
        ));
    }

    #[test]
    fn eer_invariant_under_monotone_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let labels: Vec<bool> = (0..60).map(|_| rng.gen_bool(0.5)).collect();
        let mut labels = labels;
        labels[0] = true;
        labels[1] = false;
        let trials = trial_list(&labels);
        let raw: Vec<f64> = (0..60).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (e1, _) = compute_eer(&trials, &ScoreSet { scores: raw.clone() }).unwrap();
        let transformed: Vec<f64> = raw.iter().map(|&s| (3.0 * s).tanh() * 10.0 + 2.0).collect();
        let (e2, _) = compute_eer(&trials, &ScoreSet { scores: transformed }).unwrap();
        assert!((e1 - e2).abs() < 1e-9);
    }

    #[test]
    fn random_scores_near_half_eer() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let labels: Vec<bool> = (0..1000).map(|i| i % 2 == 0).collect();
        let trials = trial_list(&labels);
        let scores = ScoreSet { scores: (0..1000).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let (eer, _) = compute_eer(&trials, &scores).unwrap();
        assert!((0.35..=0.65).contains(&eer), "random EER {eer}");
    }

    #[test]
    fn decisions_at_eer_cases() {
        let trials = trial_list(&[true, true, false, false]);
        let scores = ScoreSet { scores: vec![0.8, 0.9, 0.1, 0.2] };
        let d = decisions_at_eer(&trials, &scores).unwrap();
        assert_eq!(d.decisions, vec![true, true, false, false]);

        let flat = ScoreSet { scores: vec![0.5; 4] };
        let d = decisions_at_eer(&trials, &flat).unwrap();
        let first = d.decisions[0];
        assert!(d.decisions.iter().all(|&x| x == first));
    }

    #[test]
    fn decisions_recount_matches_rates_at_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let labels: Vec<bool> = (0..200).map(|_| rng.gen_bool(0.5)).collect();
        let mut labels = labels;
        labels[0] = true;
        labels[1] = false;
        let trials = trial_list(&labels);
        let scores = ScoreSet {
            scores: labels
                .iter()
                .map(|&t| if t { rng.gen_range(0.0..1.0) } else { rng.gen_range(-1.0..0.5) })
                .collect(),
        };
        let (eer, thr) = compute_eer(&trials, &scores).unwrap();
        let d = decisions_at_eer(&trials, &scores).unwrap();
        assert_eq!(d.threshold, thr);
        let fa = trials
            .trials
            .iter()
            .zip(&d.decisions)
            .filter(|(t, &acc)| !t.is_target && acc)
            .count() as f64
            / labels.iter().filter(|&&t| !t).count() as f64;
        let fr = trials
            .trials
            .iter()
            .zip(&d.decisions)
            .filter(|(t, &acc)| t.is_target && !acc)
            .count() as f64
            / labels.iter().filter(|&&t| t).count() as f64;
        // at the crossing FAR and FRR agree within one trial's weight
        assert!((fa - eer).abs() < 0.03, "FAR {fa} vs EER {eer}");
        assert!((fr - eer).abs() < 0.03, "FRR {fr} vs EER {eer}");
    }

    #[test]
    fn mcnemar_cases() {
        let truth = trial_list(&[true; 20]);
        let all_right = DecisionSet { decisions: vec![true; 20], threshold: 0.0 };
        let r = mcnemar(&all_right, &all_right, &truth).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!(!r.significant_at_05);
        assert_eq!((r.n01, r.n10), (0, 0));

        // n01 = 10, n10 = 2 -> 64/12 > 3.841
        let truth = trial_list(&vec![true; 12]);
        let mut a = vec![true; 12];
        let mut b = vec![true; 12];
        for slot in a.iter_mut().take(10) {
            *slot = false; // A wrong on 10
        }
        for slot in b.iter_mut().skip(10) {
            *slot = false; // B wrong on the other 2
        }
        let da = DecisionSet { decisions: a, threshold: 0.0 };
        let db = DecisionSet { decisions: b, threshold: 0.0 };
        let r = mcnemar(&da, &db, &truth).unwrap();
        assert!((r.statistic - 64.0 / 12.0).abs() < 1e-3);
        assert!(r.significant_at_05);
        assert_eq!((r.n01, r.n10), (10, 2));

        // swap symmetry
        let r2 = mcnemar(&db, &da, &truth).unwrap();
        assert_eq!(r2.statistic.to_bits(), r.statistic.to_bits());
        assert_eq!((r2.n01, r2.n10), (2, 10));
    }

    #[test]
    fn mcnemar_balanced_discordance_not_significant() {
        let truth = trial_list(&vec![true; 100]);
        let a: Vec<bool> = (0..100).map(|i| i >= 50).collect();
        let b: Vec<bool> = (0..100).map(|i| i < 50).collect();
        let r = mcnemar(
            &DecisionSet { decisions: a, threshold: 0.0 },
            &DecisionSet { decisions: b, threshold: 0.0 },
            &truth,
        )
        .unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!(!r.significant_at_05);
        assert_eq!((r.n01, r.n10), (50, 50));
    }

    #[test]
    fn trial_and_score_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let tpath = dir.path().join("trials.txt");
        std::fs::write(
            &tpath,
            "# comment\nspk1_a spk1_b target\nspk1_a spk2_a nontarget\n",
        )
        .unwrap();
        let trials = read_trial_list(&tpath).unwrap();
        assert_eq!(trials.trials.len(), 2);
        assert!(trials.trials[0].is_target);
        assert!(!trials.trials[1].is_target);

        let spath = dir.path().join("scores.txt");
        let scores = ScoreSet { scores: vec![0.7, -0.1] };
        write_scores(&spath, &trials, &scores).unwrap();
        let back = read_scores(&spath, &trials).unwrap();
        assert_eq!(back.scores, scores.scores);
    }

    proptest! {
        #[test]
        fn eer_in_unit_interval(seed in 0u64..300, n in 4usize..80) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            labels[0] = true;
            labels[1] = false;
            let trials = trial_list(&labels);
            let scores = ScoreSet { scores: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
            let (eer, _) = compute_eer(&trials, &scores).unwrap();
            prop_assert!((0.0..=1.0).contains(&eer));
        }
    }
}

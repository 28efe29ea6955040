//! Conformal structure selection between two fitted decompositions.
//!
//! The selector compares candidate models through the difference in their
//! predicted probabilities: per test point, `d = pi_A - pi_B`, with local
//! calibration neighborhoods taken in the null model's core-refinement
//! latent space. Class-conditional quantiles of neighbor difference
//! scores give per-point intervals (raw neighbor quantiles, not
//! residual-centered), counting interval endpoints over a grid on (-1, 1]
//! gives difference-ROC bands, and step sums give difference-AUC
//! confidence sets. An AUC set entirely above 0.5 selects the first
//! model, entirely below selects the second, anything else is a tie.
//!
//! The full protocol tests both directions (each model as the null with
//! its own latent space) and reconciles: evidence for exactly one model
//! selects it, none is a tie, both is a conflict.

use crate::conformal::{
    self, AucInterval, ConformalError, LatentPoint, RocBand,
};
use crate::decomp::Structure;
use crate::par;
use crate::pipeline::{self, FittedModel, PipelineError};
use crate::simgen::{self, SimConfig, SimError, Split};
use crate::tensor::DenseTensor;
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Debug, thiserror::Error)]
pub enum SelectorError {
    #[error("mismatched splits: {0}")]
    MismatchedSplits(String),
    #[error("calibration split has no points of class {0}")]
    MissingClass(u8),
    #[error(transparent)]
    Conformal(#[from] ConformalError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Selector settings: neighborhood size K = 8, distance weight 10,
/// alpha = 0.1, 200 grid thresholds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SelectorConfig {
    pub k: usize,
    pub omega: f64,
    pub alpha: f64,
    pub grid: usize,
    pub inflate: bool,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            k: 8,
            omega: 10.0,
            alpha: 0.1,
            grid: 200,
            inflate: false,
        }
    }
}

/// One point's difference score together with the null model's latent
/// representation used for neighborhoods.
#[derive(Clone, Debug)]
pub struct DiffScorePoint {
    pub d: f64,
    pub label: u8,
    pub core: DenseTensor,
    pub refinement: DenseTensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    ModelA,
    ModelB,
    Tie,
}

/// Both single-kind verdicts for one direction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SelectorDecision {
    pub auc_sens: AucInterval,
    pub auc_spec: AucInterval,
    pub verdict_sens: Verdict,
    pub verdict_spec: Verdict,
}

/// Final reconciled outcome of the two-direction protocol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FinalDecision {
    Tucker,
    Cp,
    Tie,
    Conflict,
}

// ---------------------------------------------------------------------------
// Difference scores and intervals
// ---------------------------------------------------------------------------

/// Assemble difference-score points from two prediction streams and the
/// null model's latents.
pub fn difference_scores(
    preds_a: &[f64],
    preds_b: &[f64],
    null_latents: &[LatentPoint],
) -> Result<Vec<DiffScorePoint>, SelectorError> {
    if preds_a.len() != preds_b.len() || preds_a.len() != null_latents.len() {
        return Err(SelectorError::MismatchedSplits(format!(
            "predictions {} vs {}, latents {}",
            preds_a.len(),
            preds_b.len(),
            null_latents.len()
        )));
    }
    Ok(preds_a
        .iter()
        .zip(preds_b)
        .zip(null_latents)
        .map(|((a, b), latent)| DiffScorePoint {
            d: a - b,
            label: latent.label,
            core: latent.core.clone(),
            refinement: latent.refinement.clone(),
        })
        .collect())
}

fn diff_distance(a: &DiffScorePoint, b: &DiffScorePoint, omega: f64) -> f64 {
    let dc = a.core.sub(&b.core).expect("core shapes match").frobenius_norm();
    let du = a
        .refinement
        .sub(&b.refinement)
        .expect("refinement shapes match")
        .frobenius_norm();
    dc + omega * du
}

/// Per-test-point difference intervals: the empirical alpha/2 and
/// 1 - alpha/2 quantiles of the K nearest same-class calibration points'
/// difference scores.
pub fn diff_intervals(
    test: &[DiffScorePoint],
    cal: &[DiffScorePoint],
    cfg: &SelectorConfig,
) -> Result<Vec<(f64, f64)>, SelectorError> {
    for class in [0u8, 1u8] {
        if !cal.iter().any(|p| p.label == class) {
            return Err(SelectorError::MissingClass(class));
        }
    }
    let out: Vec<Result<(f64, f64), SelectorError>> = par::batch_map(test, |point| {
        let mut same: Vec<(f64, usize)> = cal
            .iter()
            .enumerate()
            .filter(|(_, p)| p.label == point.label)
            .map(|(i, p)| (diff_distance(p, point, cfg.omega), i))
            .collect();
        same.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let scores: Vec<f64> = same
            .iter()
            .take(cfg.k.min(same.len()))
            .map(|&(_, i)| cal[i].d)
            .collect();
        let lo = conformal::class_quantile(&scores, cfg.alpha / 2.0, cfg.inflate)?;
        let hi = conformal::class_quantile(&scores, 1.0 - cfg.alpha / 2.0, cfg.inflate)?;
        Ok((lo, hi))
    });
    out.into_iter().collect()
}

// ---------------------------------------------------------------------------
// Difference-ROC bands and AUC sets
// ---------------------------------------------------------------------------

/// Uniform grid of `g` thresholds on (-1, 1]: the left end is open, the
/// right end is included.
pub fn diff_grid(g: usize) -> Vec<f64> {
    assert!(g >= 2);
    (0..g).map(|i| -1.0 + 2.0 * (i + 1) as f64 / g as f64).collect()
}

/// Difference-ROC band: point curves count the difference scores, limits
/// count each test point's interval endpoints.
pub fn diff_roc_bands(
    test: &[DiffScorePoint],
    intervals: &[(f64, f64)],
    thresholds: &[f64],
    alpha: f64,
) -> Result<RocBand, SelectorError> {
    let values: Vec<f64> = test.iter().map(|p| p.d).collect();
    let labels: Vec<u8> = test.iter().map(|p| p.label).collect();
    Ok(conformal::count_band(
        &values, &labels, intervals, thresholds, alpha,
    )?)
}

/// Difference-AUC confidence sets from a band (sensitivity and
/// specificity step sums).
pub fn diff_auc_sets(band: &RocBand) -> (AucInterval, AucInterval) {
    conformal::auc_intervals(band)
}

/// Decision rules: an AUC set whose lower bound clears 0.5 selects the
/// first model, an upper bound below 0.5 selects the second, anything
/// straddling is a tie.
pub fn decide(auc_sens: AucInterval, auc_spec: AucInterval) -> SelectorDecision {
    let verdict = |iv: &AucInterval| -> Verdict {
        if iv.lower > 0.5 {
            Verdict::ModelA
        } else if iv.upper < 0.5 {
            Verdict::ModelB
        } else {
            Verdict::Tie
        }
    };
    SelectorDecision {
        verdict_sens: verdict(&auc_sens),
        verdict_spec: verdict(&auc_spec),
        auc_sens,
        auc_spec,
    }
}

/// Contingency counts at one threshold: (label 1 with d > lambda, label
/// 1 with d <= lambda, label 0 with d > lambda, label 0 with d <=
/// lambda). Diagnostic only.
pub fn contingency_counts(test: &[DiffScorePoint], lambda: f64) -> [usize; 4] {
    let mut counts = [0usize; 4];
    for p in test {
        let above = p.d > lambda;
        match (p.label, above) {
            (1, true) => counts[0] += 1,
            (1, false) => counts[1] += 1,
            (0, true) => counts[2] += 1,
            (0, false) => counts[3] += 1,
            _ => unreachable!("labels are 0/1"),
        }
    }
    counts
}

// ---------------------------------------------------------------------------
// Two-direction protocol
// ---------------------------------------------------------------------------

/// One direction of the protocol: the named null model supplies the
/// latent space, the difference is null minus alternative.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DirectionReport {
    pub null: Structure,
    pub alternative: Structure,
    pub decision: SelectorDecision,
    /// Contingency diagnostic at threshold zero.
    pub contingency_at_zero: [usize; 4],
    #[serde(skip)]
    pub band: Option<RocBand>,
}

/// Outcome of running both directions plus the reconciled decision.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub forward: DirectionReport,
    pub reverse: DirectionReport,
    pub final_decision: FinalDecision,
}

/// Run one direction on a dataset's calibration and test splits.
pub fn run_direction(
    null_model: &FittedModel,
    alt_model: &FittedModel,
    ds: &simgen::SimDataset,
    cfg: &SelectorConfig,
) -> Result<(DirectionReport, RocBand), SelectorError> {
    let mut reports = Vec::new();
    for split in [Split::Cal, Split::Test] {
        let null_preds = pipeline::predict_split(null_model, ds, split)?;
        let alt_preds = pipeline::predict_split(alt_model, ds, split)?;
        let null_latents = pipeline::latent_points(null_model, ds, split)?;
        let probs_null: Vec<f64> = null_preds.iter().map(|(p, _)| *p).collect();
        let probs_alt: Vec<f64> = alt_preds.iter().map(|(p, _)| *p).collect();
        reports.push(difference_scores(&probs_null, &probs_alt, &null_latents)?);
    }
    let test_points = reports.pop().expect("two splits");
    let cal_points = reports.pop().expect("two splits");

    let intervals = diff_intervals(&test_points, &cal_points, cfg)?;
    let band = diff_roc_bands(&test_points, &intervals, &diff_grid(cfg.grid), cfg.alpha)?;
    let (auc_sens, auc_spec) = diff_auc_sets(&band);
    let decision = decide(auc_sens, auc_spec);
    let report = DirectionReport {
        null: null_model.decomp.structure(),
        alternative: alt_model.decomp.structure(),
        decision,
        contingency_at_zero: contingency_counts(&test_points, 0.0),
        band: None,
    };
    Ok((report, band))
}

/// Collapse a direction's two verdicts into one: agreement wins, a
/// single tie defers to the other side, contradiction is a tie.
pub fn direction_verdict(decision: &SelectorDecision) -> Verdict {
    match (decision.verdict_sens, decision.verdict_spec) {
        (a, b) if a == b => a,
        (Verdict::Tie, b) => b,
        (a, Verdict::Tie) => a,
        _ => Verdict::Tie,
    }
}

/// Reconcile both directions into the final decision. Each direction's
/// verdict is mapped to the structure it favors; evidence for exactly
/// one structure selects it, for neither a tie, for both a conflict.
pub fn reconcile(
    forward: &DirectionReport,
    reverse: &DirectionReport,
) -> FinalDecision {
    let favored = |report: &DirectionReport| -> Option<Structure> {
        match direction_verdict(&report.decision) {
            Verdict::ModelA => Some(report.null),
            Verdict::ModelB => Some(report.alternative),
            Verdict::Tie => None,
        }
    };
    let f = favored(forward);
    let r = favored(reverse);
    let wants = |s: Structure| f == Some(s) || r == Some(s);
    match (wants(Structure::Tucker), wants(Structure::Cp)) {
        (true, true) => FinalDecision::Conflict,
        (true, false) => FinalDecision::Tucker,
        (false, true) => FinalDecision::Cp,
        (false, false) => FinalDecision::Tie,
    }
}

/// Full two-direction selection between a Tucker-structure fit and a
/// CP-structure fit sharing one dataset.
pub fn select_structure(
    tucker_fit: &FittedModel,
    cp_fit: &FittedModel,
    ds: &simgen::SimDataset,
    cfg: &SelectorConfig,
) -> Result<(SelectionOutcome, RocBand, RocBand), SelectorError> {
    let (forward, forward_band) = run_direction(tucker_fit, cp_fit, ds, cfg)?;
    let (reverse, reverse_band) = run_direction(cp_fit, tucker_fit, ds, cfg)?;
    let final_decision = reconcile(&forward, &reverse);
    Ok((
        SelectionOutcome {
            forward,
            reverse,
            final_decision,
        },
        forward_band,
        reverse_band,
    ))
}

/// Difference-band CSV: conformal band schema with a d prefix.
pub fn write_diff_band_csv<W: Write>(w: &mut W, band: &RocBand) -> std::io::Result<()> {
    writeln!(w, "dlambda,dsens,dsens_lo,dsens_hi,dspec,dspec_lo,dspec_hi")?;
    for g in 0..band.thresholds.len() {
        writeln!(
            w,
            "{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e}",
            band.thresholds[g],
            band.sens[g],
            band.sens_lo[g],
            band.sens_hi[g],
            band.spec[g],
            band.spec_lo[g],
            band.spec_hi[g],
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Selection experiment
// ---------------------------------------------------------------------------

/// One replication of the end-to-end selection pipeline.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub seed: u64,
    pub dauc_sens_point: f64,
    pub dauc_spec_point: f64,
    pub final_decision: FinalDecision,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SelectionReport {
    pub records: Vec<SelectionRecord>,
    pub tucker_rate: f64,
    pub cp_rate: f64,
    pub tie_rate: f64,
    pub conflict_rate: f64,
}

/// Repeated generate-fit-select runs: per seed, generate a dataset, fit
/// both structures, and run the two-direction selector.
pub fn selection_experiment(
    base: &SimConfig,
    tucker_opts: &pipeline::FitOptions,
    cp_opts: &pipeline::FitOptions,
    cfg: &SelectorConfig,
    reps: usize,
) -> Result<SelectionReport, SelectorError> {
    let mut records = Vec::with_capacity(reps);
    for rep in 0..reps {
        let mut sim = base.clone();
        sim.seed = base.seed.wrapping_add(rep as u64);
        let ds = simgen::gen_dataset(&sim)?;
        let mut topts = tucker_opts.clone();
        topts.train.seed = sim.seed.wrapping_add(0x7A);
        let mut copts = cp_opts.clone();
        copts.train.seed = sim.seed.wrapping_add(0xC9);
        let tucker_fit = pipeline::fit_on_dataset(&ds, &topts)?;
        let cp_fit = pipeline::fit_on_dataset(&ds, &copts)?;
        let (outcome, _, _) = select_structure(&tucker_fit, &cp_fit, &ds, cfg)?;
        records.push(SelectionRecord {
            seed: sim.seed,
            dauc_sens_point: outcome.forward.decision.auc_sens.point,
            dauc_spec_point: outcome.forward.decision.auc_spec.point,
            final_decision: outcome.final_decision,
        });
    }
    let rate = |d: FinalDecision| {
        records.iter().filter(|r| r.final_decision == d).count() as f64
            / records.len().max(1) as f64
    };
    Ok(SelectionReport {
        tucker_rate: rate(FinalDecision::Tucker),
        cp_rate: rate(FinalDecision::Cp),
        tie_rate: rate(FinalDecision::Tie),
        conflict_rate: rate(FinalDecision::Conflict),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformal::AucKind;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn dpoint(d: f64, label: u8, pos: f64) -> DiffScorePoint {
        DiffScorePoint {
            d,
            label,
            core: DenseTensor::from_vec(&[1], vec![pos]),
            refinement: DenseTensor::from_vec(&[1], vec![0.0]),
        }
    }

    fn interval(kind: AucKind, lower: f64, upper: f64) -> AucInterval {
        AucInterval {
            kind,
            point: 0.5 * (lower + upper),
            lower,
            upper,
        }
    }

    #[test]
    fn equal_models_give_zero_scores() {
        let preds = vec![0.3, 0.7, 0.9];
        let latents: Vec<LatentPoint> = preds
            .iter()
            .enumerate()
            .map(|(i, &p)| LatentPoint {
                core: DenseTensor::from_vec(&[1], vec![i as f64]),
                refinement: DenseTensor::from_vec(&[1], vec![0.0]),
                prob: p,
                label: (i % 2) as u8,
                smoothed: None,
            })
            .collect();
        let points = difference_scores(&preds, &preds, &latents).unwrap();
        assert!(points.iter().all(|p| p.d == 0.0));

        let ones = vec![1.0; 3];
        let zeros = vec![0.0; 3];
        let points = difference_scores(&ones, &zeros, &latents).unwrap();
        assert!(points.iter().all(|p| p.d == 1.0));
    }

    #[test]
    fn difference_matches_subtraction_of_streams() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let a: Vec<f64> = (0..20).map(|_| rng.gen::<f64>()).collect();
        let b: Vec<f64> = (0..20).map(|_| rng.gen::<f64>()).collect();
        let latents: Vec<LatentPoint> = (0..20)
            .map(|i| LatentPoint {
                core: DenseTensor::from_vec(&[1], vec![i as f64]),
                refinement: DenseTensor::from_vec(&[1], vec![0.0]),
                prob: 0.0,
                label: (i % 2) as u8,
                smoothed: None,
            })
            .collect();
        let points = difference_scores(&a, &b, &latents).unwrap();
        for (i, p) in points.iter().enumerate() {
            assert_eq!(p.d, a[i] - b[i]);
        }
    }

    #[test]
    fn diff_interval_hand_order_statistics() {
        // Neighbors {-0.2, 0, 0.2, 0.4} at alpha = 0.5 give the 1st and
        // 3rd order statistics.
        let cal: Vec<DiffScorePoint> = [-0.2, 0.0, 0.2, 0.4]
            .iter()
            .map(|&d| dpoint(d, 1, 0.0))
            .chain(std::iter::once(dpoint(0.0, 0, 5.0)))
            .collect();
        let test = vec![dpoint(0.1, 1, 0.0)];
        let cfg = SelectorConfig {
            k: 4,
            alpha: 0.5,
            ..SelectorConfig::default()
        };
        let ivs = diff_intervals(&test, &cal, &cfg).unwrap();
        assert_eq!(ivs[0], (-0.2, 0.2));

        // alpha -> 0 widens to [min, max].
        let cfg = SelectorConfig {
            k: 4,
            alpha: 0.0,
            ..SelectorConfig::default()
        };
        let ivs = diff_intervals(&test, &cal, &cfg).unwrap();
        assert_eq!(ivs[0], (-0.2, 0.4));

        // Identical neighbor scores give a degenerate interval.
        let cal: Vec<DiffScorePoint> = (0..6)
            .map(|i| dpoint(0.25, (i % 2) as u8, i as f64))
            .collect();
        let cfg = SelectorConfig {
            k: 3,
            ..SelectorConfig::default()
        };
        let ivs = diff_intervals(&test, &cal, &cfg).unwrap();
        assert_eq!(ivs[0], (0.25, 0.25));
    }

    #[test]
    fn zero_scores_step_at_zero_with_degenerate_band() {
        let test: Vec<DiffScorePoint> =
            (0..20).map(|i| dpoint(0.0, (i % 2) as u8, 0.0)).collect();
        let intervals = vec![(0.0, 0.0); 20];
        let grid = diff_grid(200);
        let band = diff_roc_bands(&test, &intervals, &grid, 0.1).unwrap();
        for (g, &lam) in grid.iter().enumerate() {
            let expect = if lam < 0.0 { 1.0 } else { 0.0 };
            assert_eq!(band.sens[g], expect, "lambda = {lam}");
            assert_eq!(band.sens_lo[g], expect);
            assert_eq!(band.sens_hi[g], expect);
            let expect_spec = if lam < 0.0 { 0.0 } else { 1.0 };
            assert_eq!(band.spec[g], expect_spec);
        }
    }

    #[test]
    fn perfect_separation_gives_unit_auc_sets() {
        let mut test = Vec::new();
        for i in 0..20 {
            let (d, label) = if i % 2 == 0 { (0.615, 1) } else { (-0.615, 0) };
            test.push(dpoint(d, label, 0.0));
        }
        let intervals: Vec<(f64, f64)> = test.iter().map(|p| (p.d, p.d)).collect();
        let band = diff_roc_bands(&test, &intervals, &diff_grid(200), 0.1).unwrap();
        let (s, p) = diff_auc_sets(&band);
        assert_eq!((s.lower, s.point, s.upper), (1.0, 1.0, 1.0));
        assert_eq!((p.lower, p.point, p.upper), (1.0, 1.0, 1.0));
    }

    #[test]
    fn hand_three_threshold_auc_sets() {
        let band = RocBand {
            thresholds: vec![-0.5, 0.0, 0.5],
            sens: vec![0.9, 0.5, 0.1],
            sens_lo: vec![0.8, 0.3, 0.0],
            sens_hi: vec![1.0, 0.7, 0.2],
            spec: vec![0.2, 0.6, 0.9],
            spec_lo: vec![0.1, 0.5, 0.8],
            spec_hi: vec![0.3, 0.7, 1.0],
            alpha: 0.1,
        };
        let (s, p) = diff_auc_sets(&band);
        // Edge-averaged rectangles, summed by hand.
        assert!((s.lower - (0.55 * 0.4 + 0.15 * 0.3)).abs() < 1e-12);
        assert!((s.upper - (0.85 * 0.4 + 0.45 * 0.3)).abs() < 1e-12);
        assert!((p.lower - (0.3 * 0.4 + 0.65 * 0.4)).abs() < 1e-12);
        assert!((p.upper - (0.5 * 0.4 + 0.85 * 0.4)).abs() < 1e-12);
    }

    #[test]
    fn label_independent_scores_straddle_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let n = 4000;
        let test: Vec<DiffScorePoint> = (0..n)
            .map(|i| dpoint(rng.gen_range(-0.995..0.995), (i % 2) as u8, 0.0))
            .collect();
        let intervals: Vec<(f64, f64)> = test.iter().map(|p| (p.d - 0.05, p.d + 0.05)).collect();
        let band = diff_roc_bands(&test, &intervals, &diff_grid(200), 0.1).unwrap();
        let (s, _) = diff_auc_sets(&band);
        assert!((s.point - 0.5).abs() < 0.05, "point {}", s.point);
        assert!(s.lower < 0.5 && s.upper > 0.5);
    }

    #[test]
    fn flipping_scores_mirrors_auc() {
        // Interleaved off-grid scores: class 1 on one set of cell
        // midpoints, class 0 on the other, so no two jumps share a grid
        // cell and the mirrored set has no boundary ties.
        let mut test = Vec::new();
        for j in 0..85 {
            test.push(dpoint(-0.695 + 0.02 * j as f64 + 0.004, 1, 0.0));
            test.push(dpoint(-0.885 + 0.02 * j as f64 - 0.004, 0, 0.0));
        }
        let intervals: Vec<(f64, f64)> = test.iter().map(|p| (p.d, p.d)).collect();
        let band = diff_roc_bands(&test, &intervals, &diff_grid(200), 0.1).unwrap();
        let (s, _) = diff_auc_sets(&band);

        // Negating every score (labels fixed) mirrors the curve through
        // the diagonal.
        let flipped: Vec<DiffScorePoint> =
            test.iter().map(|p| dpoint(-p.d, p.label, 0.0)).collect();
        let fintervals: Vec<(f64, f64)> = flipped.iter().map(|p| (p.d, p.d)).collect();
        let fband = diff_roc_bands(&flipped, &fintervals, &diff_grid(200), 0.1).unwrap();
        let (fs, _) = diff_auc_sets(&fband);
        assert!(
            (fs.point - (1.0 - s.point)).abs() < 1e-9,
            "mirror: {} vs {}",
            fs.point,
            1.0 - s.point
        );
        // The construction is informative, so this also pins the mirror
        // away from the fixed point.
        assert!((s.point - 0.5).abs() > 0.05);
    }

    #[test]
    fn decide_reference_cases() {
        let d = decide(
            interval(AucKind::Sens, 0.692, 0.831),
            interval(AucKind::Spec, 0.723, 0.864),
        );
        assert_eq!(d.verdict_sens, Verdict::ModelA);
        assert_eq!(d.verdict_spec, Verdict::ModelA);

        let d = decide(
            interval(AucKind::Sens, 0.040, 0.269),
            interval(AucKind::Spec, 0.047, 0.329),
        );
        assert_eq!(d.verdict_sens, Verdict::ModelB);
        assert_eq!(d.verdict_spec, Verdict::ModelB);

        let d = decide(
            interval(AucKind::Sens, 0.45, 0.55),
            interval(AucKind::Spec, 0.48, 0.52),
        );
        assert_eq!(d.verdict_sens, Verdict::Tie);
        assert_eq!(d.verdict_spec, Verdict::Tie);
    }

    #[test]
    fn decide_is_antisymmetric_under_role_swap() {
        // Swapping roles maps an AUC set [l, u] to [1-u, 1-l].
        let cases = [
            (0.692, 0.831),
            (0.040, 0.269),
            (0.45, 0.55),
            (0.5, 0.7),
            (0.3, 0.5),
        ];
        for (lo, hi) in cases {
            let d = decide(
                interval(AucKind::Sens, lo, hi),
                interval(AucKind::Spec, lo, hi),
            );
            let swapped = decide(
                interval(AucKind::Sens, 1.0 - hi, 1.0 - lo),
                interval(AucKind::Spec, 1.0 - hi, 1.0 - lo),
            );
            let expect = match d.verdict_sens {
                Verdict::ModelA => Verdict::ModelB,
                Verdict::ModelB => Verdict::ModelA,
                Verdict::Tie => Verdict::Tie,
            };
            assert_eq!(swapped.verdict_sens, expect);
        }
    }

    #[test]
    fn reconciliation_logic() {
        let mk = |null: Structure, alt: Structure, vs: Verdict, vp: Verdict| DirectionReport {
            null,
            alternative: alt,
            decision: SelectorDecision {
                auc_sens: interval(AucKind::Sens, 0.4, 0.6),
                auc_spec: interval(AucKind::Spec, 0.4, 0.6),
                verdict_sens: vs,
                verdict_spec: vp,
            },
            contingency_at_zero: [0; 4],
            band: None,
        };
        use Structure::{Cp, Tucker};
        use Verdict::{ModelA, ModelB, Tie};

        // Reject direction 1 (CP wins), tie in direction 2: select CP.
        let f = mk(Tucker, Cp, ModelB, ModelB);
        let r = mk(Cp, Tucker, Tie, Tie);
        assert_eq!(reconcile(&f, &r), FinalDecision::Cp);

        // Double tie.
        let f = mk(Tucker, Cp, Tie, Tie);
        assert_eq!(reconcile(&f, &r), FinalDecision::Tie);

        // Both directions support Tucker.
        let f = mk(Tucker, Cp, ModelA, ModelA);
        let r = mk(Cp, Tucker, ModelB, ModelB);
        assert_eq!(reconcile(&f, &r), FinalDecision::Tucker);

        // Double reject: conflict.
        let f = mk(Tucker, Cp, ModelB, ModelB);
        let r = mk(Cp, Tucker, ModelB, ModelB);
        assert_eq!(reconcile(&f, &r), FinalDecision::Conflict);

        // Contradicting kinds inside one direction collapse to a tie.
        let f = mk(Tucker, Cp, ModelA, ModelB);
        assert_eq!(direction_verdict(&f.decision), Tie);
        let f = mk(Tucker, Cp, Tie, ModelA);
        assert_eq!(direction_verdict(&f.decision), ModelA);
    }

    #[test]
    fn identical_fits_tie_end_to_end() {
        // Identical difference streams (all zero) through both
        // directions produce degenerate intervals at zero, AUC sets at
        // the coin-flip value, and a final tie.
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let mk_points = |rng: &mut ChaCha8Rng, n: usize| -> Vec<DiffScorePoint> {
            (0..n)
                .map(|i| dpoint(0.0, (i % 2) as u8, rng.gen_range(-1.0..1.0)))
                .collect()
        };
        let cal = mk_points(&mut rng, 30);
        let test = mk_points(&mut rng, 30);
        let cfg = SelectorConfig::default();
        let ivs = diff_intervals(&test, &cal, &cfg).unwrap();
        let band = diff_roc_bands(&test, &ivs, &diff_grid(cfg.grid), cfg.alpha).unwrap();
        let (s, p) = diff_auc_sets(&band);
        let d = decide(s, p);
        assert_eq!(d.verdict_sens, Verdict::Tie);
        assert_eq!(d.verdict_spec, Verdict::Tie);
    }

    #[test]
    fn contingency_counts_partition_the_test_set() {
        let test: Vec<DiffScorePoint> = [
            (0.4, 1),
            (-0.1, 1),
            (0.2, 0),
            (-0.3, 0),
            (0.6, 1),
        ]
        .iter()
        .map(|&(d, l)| dpoint(d, l, 0.0))
        .collect();
        let c = contingency_counts(&test, 0.0);
        assert_eq!(c, [2, 1, 1, 1]);
        assert_eq!(c.iter().sum::<usize>(), test.len());
    }

    #[test]
    fn diff_band_csv_schema() {
        let band = RocBand {
            thresholds: vec![-0.99, 1.0],
            sens: vec![1.0, 0.0],
            sens_lo: vec![1.0, 0.0],
            sens_hi: vec![1.0, 0.0],
            spec: vec![0.0, 1.0],
            spec_lo: vec![0.0, 1.0],
            spec_hi: vec![0.0, 1.0],
            alpha: 0.1,
        };
        let mut buf = Vec::new();
        write_diff_band_csv(&mut buf, &band).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("dlambda,dsens,dsens_lo,dsens_hi,dspec,dspec_lo,dspec_hi\n"));
        assert_eq!(text.lines().count(), 3);
    }
}

//! Benchmark harness: seeded trials over scenes, color effects and pose
//! perturbations, aggregated per alignment mode.

use super::effects::apply_color_effects;
use super::metrics::{perturb_pose, rotation_error, translation_error, PerturbationSpec};
use super::scene::{generate_scene, SceneSpec};
use crate::aligner::{align, AlignConfig};
use crate::error::{Error, Result};
use rayon::prelude::*;
use std::fmt::Write as _;
use std::path::Path;

const EFFECTS_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const PERTURB_SEED_SALT: u64 = 0x5851_f42d_4c95_7f2d;
/// Number of bins in the cumulative histograms.
pub const HISTOGRAM_BINS: usize = 50;

#[derive(Clone, Debug)]
pub struct BenchmarkSpec {
    pub n_trials: usize,
    /// Template; trial `i` uses seed `scene.seed + i`.
    pub scene: SceneSpec,
    /// Template; the seed is derived from each trial's scene seed.
    pub perturb: PerturbationSpec,
    pub color_effects: bool,
    pub modes: Vec<AlignConfig>,
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_trials == 0 {
            return Err(Error::invalid("n_trials must be at least 1"));
        }
        if self.modes.is_empty() {
            return Err(Error::invalid("at least one mode is required"));
        }
        if !(self.perturb.max_translation >= 0.0 && self.perturb.max_rotation >= 0.0) {
            return Err(Error::invalid("perturbation maxima must be non-negative"));
        }
        self.scene.validate()?;
        for m in &self.modes {
            m.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialResult {
    pub mode: String,
    pub trial: usize,
    pub seed: u64,
    pub translation_error_mm: f64,
    pub rotation_error_deg: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Set when the alignment returned an error; the error fields are then NaN.
    pub failure: Option<String>,
}

impl TrialResult {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

/// `[min, Q1, median, Q3, max]`.
pub type Quantiles = [f64; 5];

#[derive(Clone, Debug, PartialEq)]
pub struct ModeSummary {
    pub mode: String,
    pub trials: usize,
    pub failures: usize,
    pub converged: usize,
    pub translation: Quantiles,
    pub rotation: Quantiles,
}

impl ModeSummary {
    pub fn median_translation_mm(&self) -> f64 {
        self.translation[2]
    }

    pub fn median_rotation_deg(&self) -> f64 {
        self.rotation[2]
    }

    pub fn convergence_rate(&self) -> f64 {
        self.converged as f64 / self.trials as f64
    }

    pub fn failure_rate(&self) -> f64 {
        self.failures as f64 / self.trials as f64
    }
}

/// Cumulative normalized histogram: `values[k]` is the fraction of
/// successful trials with error at most `edges[k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Cdf {
    pub edges: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkReport {
    pub n_trials: usize,
    pub base_seed: u64,
    pub modes: Vec<String>,
    pub trials: Vec<TrialResult>,
    pub summaries: Vec<ModeSummary>,
    pub translation_cdf: Cdf,
    pub rotation_cdf: Cdf,
}

/// Linearly interpolated quantiles of `values`; NaN when empty.
pub fn quantiles(values: &[f64]) -> Quantiles {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return [f64::NAN; 5];
    }
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    [v[0], q(0.25), q(0.5), q(0.75), v[v.len() - 1]]
}

/// Cumulative histograms of several samples over shared, evenly spaced edges
/// from 0 to the largest finite value.
pub fn cumulative_histograms(samples: &[Vec<f64>], bins: usize) -> Cdf {
    let max = samples
        .iter()
        .flatten()
        .copied()
        .filter(|x| x.is_finite())
        .fold(0.0_f64, f64::max);
    let top = if max > 0.0 { max } else { 1.0 };
    let edges: Vec<f64> = (1..=bins).map(|k| top * k as f64 / bins as f64).collect();
    let values = samples
        .iter()
        .map(|s| {
            let finite: Vec<f64> = s.iter().copied().filter(|x| x.is_finite()).collect();
            if finite.is_empty() {
                return vec![0.0; bins];
            }
            let mut out: Vec<f64> = edges
                .iter()
                .map(|e| finite.iter().filter(|&&x| x <= *e).count() as f64 / finite.len() as f64)
                .collect();
            // The last edge is the maximum itself.
            *out.last_mut().unwrap() = 1.0;
            out
        })
        .collect();
    Cdf { edges, values }
}

fn run_trial(spec: &BenchmarkSpec, trial: usize) -> Vec<TrialResult> {
    let seed = spec.scene.seed.wrapping_add(trial as u64);
    let fail_all = |msg: String| {
        spec.modes
            .iter()
            .map(|m| TrialResult {
                mode: m.label(),
                trial,
                seed,
                translation_error_mm: f64::NAN,
                rotation_error_deg: f64::NAN,
                converged: false,
                iterations: 0,
                failure: Some(msg.clone()),
            })
            .collect()
    };
    let scene = match generate_scene(&SceneSpec { seed, ..spec.scene }) {
        Ok(s) => s,
        Err(e) => return fail_all(e.to_string()),
    };
    let image = if spec.color_effects {
        apply_color_effects(&scene.image, seed ^ EFFECTS_SEED_SALT)
    } else {
        scene.image.clone()
    };
    let theta0 = perturb_pose(
        &scene.theta_gt,
        &PerturbationSpec {
            seed: seed ^ PERTURB_SEED_SALT,
            ..spec.perturb
        },
    );
    spec.modes
        .iter()
        .map(|cfg| {
            let base = TrialResult {
                mode: cfg.label(),
                trial,
                seed,
                translation_error_mm: f64::NAN,
                rotation_error_deg: f64::NAN,
                converged: false,
                iterations: 0,
                failure: None,
            };
            match align(&scene.pc, &image, &scene.intrinsics, &theta0, cfg) {
                Ok(r) => TrialResult {
                    translation_error_mm: translation_error(&scene.theta_gt, &r.theta_final),
                    rotation_error_deg: rotation_error(&scene.theta_gt, &r.theta_final),
                    converged: r.converged,
                    iterations: r.iterations_run,
                    ..base
                },
                Err(e) => {
                    log::warn!("trial {trial} mode {} failed: {e}", cfg.label());
                    TrialResult {
                        failure: Some(e.to_string()),
                        ..base
                    }
                }
            }
        })
        .collect()
}

/// Runs every trial under every mode. Trials run in parallel; the report
/// does not depend on the thread count.
pub fn run_benchmark(spec: &BenchmarkSpec) -> Result<BenchmarkReport> {
    spec.validate()?;
    let per_trial: Vec<Vec<TrialResult>> = (0..spec.n_trials)
        .into_par_iter()
        .map(|t| run_trial(spec, t))
        .collect();
    let trials: Vec<TrialResult> = per_trial.into_iter().flatten().collect();
    let modes: Vec<String> = spec.modes.iter().map(|m| m.label()).collect();
    Ok(BenchmarkReport::from_trials(
        spec.n_trials,
        spec.scene.seed,
        modes,
        trials,
    ))
}

impl BenchmarkReport {
    /// Aggregates trial rows, grouped by mode in `modes` order.
    pub fn from_trials(
        n_trials: usize,
        base_seed: u64,
        modes: Vec<String>,
        trials: Vec<TrialResult>,
    ) -> Self {
        let mut summaries = Vec::new();
        let mut t_samples = Vec::new();
        let mut r_samples = Vec::new();
        for (i, mode) in modes.iter().enumerate() {
            // Labels may repeat; rows are interleaved per trial in mode order.
            let rows: Vec<&TrialResult> = trials
                .iter()
                .enumerate()
                .filter(|(k, _)| k % modes.len() == i)
                .map(|(_, t)| t)
                .collect();
            let te: Vec<f64> = rows.iter().map(|t| t.translation_error_mm).collect();
            let re: Vec<f64> = rows.iter().map(|t| t.rotation_error_deg).collect();
            summaries.push(ModeSummary {
                mode: mode.clone(),
                trials: rows.len(),
                failures: rows.iter().filter(|t| t.failed()).count(),
                converged: rows.iter().filter(|t| t.converged).count(),
                translation: quantiles(&te),
                rotation: quantiles(&re),
            });
            t_samples.push(te);
            r_samples.push(re);
        }
        Self {
            n_trials,
            base_seed,
            translation_cdf: cumulative_histograms(&t_samples, HISTOGRAM_BINS),
            rotation_cdf: cumulative_histograms(&r_samples, HISTOGRAM_BINS),
            modes,
            trials,
            summaries,
        }
    }

    pub fn summary(&self, mode: &str) -> Option<&ModeSummary> {
        self.summaries.iter().find(|s| s.mode == mode)
    }

    pub fn trials_for(&self, mode: &str) -> impl Iterator<Item = &TrialResult> + '_ {
        let mode = mode.to_string();
        self.trials.iter().filter(move |t| t.mode == mode)
    }

    pub fn failure_rate(&self) -> f64 {
        if self.trials.is_empty() {
            return 0.0;
        }
        self.trials.iter().filter(|t| t.failed()).count() as f64 / self.trials.len() as f64
    }

    /// Key-value header followed by `[summary]`, `[quantiles]` and
    /// `[trials]` CSV sections.
    pub fn to_report_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n_trials={}", self.n_trials);
        let _ = writeln!(s, "base_seed={}", self.base_seed);
        let _ = writeln!(s, "modes={}", self.modes.join(","));
        let _ = writeln!(s, "failure_rate={:.6}", self.failure_rate());
        s.push_str("\n[summary]\n");
        s.push_str("mode,trials,failures,converged,median_translation_mm,median_rotation_deg\n");
        for m in &self.summaries {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                m.mode,
                m.trials,
                m.failures,
                m.converged,
                fmt(m.median_translation_mm()),
                fmt(m.median_rotation_deg())
            );
        }
        s.push_str("\n[quantiles]\n");
        s.push_str(&self.quantiles_csv());
        s.push_str("\n[trials]\n");
        s.push_str("mode,trial,seed,translation_error_mm,rotation_error_deg,converged,iterations,status\n");
        for t in &self.trials {
            let status = match &t.failure {
                None => "ok".to_string(),
                Some(msg) => format!("failed: {}", msg.replace([',', '\n'], ";")),
            };
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                t.mode,
                t.trial,
                t.seed,
                fmt(t.translation_error_mm),
                fmt(t.rotation_error_deg),
                t.converged,
                t.iterations,
                status
            );
        }
        s
    }

    pub fn quantiles_csv(&self) -> String {
        let mut s = String::from("mode,metric,min,q1,median,q3,max\n");
        for m in &self.summaries {
            for (name, q) in [("translation_mm", &m.translation), ("rotation_deg", &m.rotation)] {
                let _ = writeln!(
                    s,
                    "{},{},{}",
                    m.mode,
                    name,
                    q.iter().map(|v| fmt(*v)).collect::<Vec<_>>().join(",")
                );
            }
        }
        s
    }

    fn cdf_csv(&self, cdf: &Cdf, unit: &str) -> String {
        let mut s = format!("error_{unit},{}\n", self.modes.join(","));
        for (k, e) in cdf.edges.iter().enumerate() {
            let _ = write!(s, "{}", fmt(*e));
            for v in &cdf.values {
                let _ = write!(s, ",{}", fmt(v[k]));
            }
            s.push('\n');
        }
        s
    }

    /// Writes `report.txt`, `quantiles.csv`, `cdf_translation.csv` and
    /// `cdf_rotation.csv` into `dir`, creating it if needed.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.txt"), self.to_report_text())?;
        std::fs::write(dir.join("quantiles.csv"), self.quantiles_csv())?;
        std::fs::write(
            dir.join("cdf_translation.csv"),
            self.cdf_csv(&self.translation_cdf, "mm"),
        )?;
        std::fs::write(
            dir.join("cdf_rotation.csv"),
            self.cdf_csv(&self.rotation_cdf, "deg"),
        )?;
        Ok(())
    }
}

fn fmt(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.9}")
    } else {
        "nan".to_string()
    }
}

//! Dreaming metrics, expressibility estimation and report files.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{Circuit, Gate, GateSpec, Param};
use crate::datagen::MEAN_FIELD_ENERGY;
use crate::dreaming::DreamTrace;
use crate::seeding::child_rng;
use crate::simulator::{apply_circuit, state_fidelity, Binding, SimError, StateVector, C64};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("trace has no epochs")]
    EmptyTrace,
    #[error("cohort is empty")]
    EmptyCohort,
    #[error("need at least as many samples as bins ({samples} < {bins})")]
    TooFewSamples { samples: usize, bins: usize },
    #[error("bins must be positive")]
    ZeroBins,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("cannot write {path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DreamMetrics {
    pub initial_energy: f64,
    pub final_energy: f64,
    pub minimum_energy: f64,
    pub energy_displacement: f64,
}

/// Initial, final (last accepted) and minimum true energy of a trace.
pub fn trace_metrics(t: &DreamTrace) -> Result<DreamMetrics, AnalysisError> {
    if t.epochs.is_empty() {
        return Err(AnalysisError::EmptyTrace);
    }
    let initial = t.initial().energy;
    let fin = t.final_epoch().energy;
    let minimum = t.epochs.iter().map(|e| e.energy).fold(f64::INFINITY, f64::min);
    Ok(DreamMetrics {
        initial_energy: initial,
        final_energy: fin,
        minimum_energy: minimum,
        energy_displacement: fin - initial,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortMetrics {
    pub n: usize,
    pub mf_energy: f64,
    pub pct_final_below_mf: f64,
    pub pct_min_below_mf: f64,
    /// Share of runs whose final energy is not above the initial energy.
    pub pct_final_not_above_initial: f64,
    /// Share of runs whose final energy is strictly below the initial energy.
    pub pct_decreased: f64,
    pub lowest_min_energy: f64,
    pub lowest_final_energy: f64,
    pub mean_initial: f64,
    pub mean_final: f64,
    pub mean_minimum: f64,
    pub mean_displacement: f64,
}

impl CohortMetrics {
    pub fn default_mf() -> f64 {
        MEAN_FIELD_ENERGY
    }
}

pub fn cohort_metrics(runs: &[DreamMetrics], mf_energy: f64) -> Result<CohortMetrics, AnalysisError> {
    if runs.is_empty() {
        return Err(AnalysisError::EmptyCohort);
    }
    let n = runs.len() as f64;
    let pct = |f: &dyn Fn(&DreamMetrics) -> bool| 100.0 * runs.iter().filter(|m| f(m)).count() as f64 / n;
    let mean = |f: &dyn Fn(&DreamMetrics) -> f64| runs.iter().map(f).sum::<f64>() / n;
    Ok(CohortMetrics {
        n: runs.len(),
        mf_energy,
        pct_final_below_mf: pct(&|m| m.final_energy < mf_energy),
        pct_min_below_mf: pct(&|m| m.minimum_energy < mf_energy),
        pct_final_not_above_initial: pct(&|m| m.final_energy <= m.initial_energy),
        pct_decreased: pct(&|m| m.final_energy < m.initial_energy),
        lowest_min_energy: runs.iter().map(|m| m.minimum_energy).fold(f64::INFINITY, f64::min),
        lowest_final_energy: runs.iter().map(|m| m.final_energy).fold(f64::INFINITY, f64::min),
        mean_initial: mean(&|m| m.initial_energy),
        mean_final: mean(&|m| m.final_energy),
        mean_minimum: mean(&|m| m.minimum_energy),
        mean_displacement: mean(&|m| m.energy_displacement),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpressibilityScore {
    /// KL divergence from the Haar fidelity distribution; lower is more expressive.
    pub kl_divergence: f64,
    /// `-log10(kl)`; higher is more expressive.
    pub neg_log10_kl: f64,
    pub samples: usize,
    pub bins: usize,
    /// The circuit has no free parameters, so every fidelity is 1.
    pub degenerate: bool,
}

/// Probability mass of `[a, b)` under the Haar fidelity density
/// `(N-1)(1-F)^(N-2)` for Hilbert-space dimension `dim`.
pub fn haar_bin_probability(a: f64, b: f64, dim: usize) -> f64 {
    let k = (dim - 1) as i32;
    (1.0 - a).powi(k) - (1.0 - b).powi(k)
}

/// KL divergence of a fidelity histogram from the Haar distribution.
///
/// Empty bins contribute nothing (`0 ln 0 = 0`). Every Haar bin has positive
/// mass, so the sum stays finite without smoothing the counts; add-one
/// smoothing would put mass where the Haar density is vanishingly small and
/// swamp the estimate with a term that decays only like `1/samples`.
pub fn kl_from_fidelities(fidelities: &[f64], dim: usize, bins: usize) -> Result<f64, AnalysisError> {
    if bins == 0 {
        return Err(AnalysisError::ZeroBins);
    }
    if fidelities.len() < bins {
        return Err(AnalysisError::TooFewSamples {
            samples: fidelities.len(),
            bins,
        });
    }
    let mut counts = vec![0usize; bins];
    for f in fidelities {
        let i = ((f.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        counts[i] += 1;
    }
    let total = fidelities.len() as f64;
    let mut kl = 0.0;
    for (i, c) in counts.iter().enumerate().filter(|(_, c)| **c > 0) {
        let p = *c as f64 / total;
        let q = haar_bin_probability(i as f64 / bins as f64, (i + 1) as f64 / bins as f64, dim).max(f64::MIN_POSITIVE);
        kl += p * (p / q).ln();
    }
    Ok(kl.max(0.0))
}

fn random_binding<R: Rng + ?Sized>(names: &[String], rng: &mut R) -> Binding {
    names.iter().map(|n| (n.clone(), rng.random_range(0.0..2.0 * PI))).collect()
}

/// Fidelities of `samples` pairs of uniformly random parameter bindings.
pub fn sample_fidelities(c: &Circuit, samples: usize, seed: u64) -> Result<Vec<f64>, AnalysisError> {
    let names = c.free_parameters();
    (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = child_rng(seed, i as u64);
            let a = apply_circuit(c, &random_binding(&names, &mut rng))?;
            let b = apply_circuit(c, &random_binding(&names, &mut rng))?;
            Ok(state_fidelity(&a, &b)?)
        })
        .collect()
}

pub fn expressibility(c: &Circuit, samples: usize, bins: usize, seed: u64) -> Result<ExpressibilityScore, AnalysisError> {
    if bins == 0 {
        return Err(AnalysisError::ZeroBins);
    }
    if samples < bins {
        return Err(AnalysisError::TooFewSamples { samples, bins });
    }
    let fids = sample_fidelities(c, samples, seed)?;
    let kl = kl_from_fidelities(&fids, 1 << c.n_qubits(), bins)?;
    Ok(ExpressibilityScore {
        kl_divergence: kl,
        neg_log10_kl: -kl.log10(),
        samples,
        bins,
        degenerate: c.free_parameters().is_empty(),
    })
}

/// Haar-random pure state from normalized complex Gaussian amplitudes.
pub fn haar_state<R: Rng + ?Sized>(n_qubits: usize, rng: &mut R) -> StateVector {
    let amps: Vec<C64> = (0..1usize << n_qubits)
        .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    StateVector::from_amplitudes(amps.into_iter().map(|a| a / norm).collect()).expect("normalized")
}

pub fn haar_fidelities(n_qubits: usize, samples: usize, seed: u64) -> Vec<f64> {
    (0..samples)
        .map(|i| {
            let mut rng = child_rng(seed, i as u64);
            let a = haar_state(n_qubits, &mut rng);
            let b = haar_state(n_qubits, &mut rng);
            state_fidelity(&a, &b).expect("same size")
        })
        .collect()
}

/// `moments` layers of RY and RZ on every qubit followed by CNOTs between
/// every pair of qubits.
pub fn entangling_ansatz(n_qubits: usize, moments: usize) -> Circuit {
    let mut gates = Vec::new();
    let mut k = 0;
    let mut next = || {
        k += 1;
        Param::Var(format!("t{}", k - 1))
    };
    for _ in 0..moments {
        for q in 0..n_qubits {
            gates.push(GateSpec::rotation(Gate::RY, q, next()));
            gates.push(GateSpec::rotation(Gate::RZ, q, next()));
        }
        for c in 0..n_qubits {
            for t in c + 1..n_qubits {
                gates.push(GateSpec::two(Gate::CNOT, t, c, Param::None));
            }
        }
    }
    Circuit::new(n_qubits, gates).expect("valid ansatz")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReportFormat {
    /// One JSON object per run plus a summary object.
    Lines,
    /// Aligned text table with a summary row.
    Table,
}

/// Writes per-run metrics and the cohort summary. `digests` maps a label
/// (for example `train_config`) to a digest recorded for provenance.
pub fn export_report(
    runs: &[DreamMetrics],
    mf_energy: f64,
    digests: &BTreeMap<String, String>,
    path: impl AsRef<Path>,
    format: ReportFormat,
) -> Result<CohortMetrics, AnalysisError> {
    let cohort = cohort_metrics(runs, mf_energy)?;
    let text = render_report(runs, &cohort, digests, format);
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| AnalysisError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    Ok(cohort)
}

pub fn render_report(
    runs: &[DreamMetrics],
    cohort: &CohortMetrics,
    digests: &BTreeMap<String, String>,
    format: ReportFormat,
) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Lines => {
            for (i, m) in runs.iter().enumerate() {
                let mut v = serde_json::to_value(m).expect("serializable");
                v["run"] = i.into();
                out.push_str(&v.to_string());
                out.push('\n');
            }
            let summary = serde_json::json!({ "summary": cohort, "digests": digests });
            out.push_str(&summary.to_string());
            out.push('\n');
        }
        ReportFormat::Table => {
            for (k, v) in digests {
                let _ = writeln!(out, "# {k}: {v}");
            }
            let _ = writeln!(out, "{:>6} {:>14} {:>14} {:>14} {:>14}", "run", "initial", "final", "minimum", "displacement");
            for (i, m) in runs.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{:>6} {:>14.6} {:>14.6} {:>14.6} {:>14.6}",
                    i, m.initial_energy, m.final_energy, m.minimum_energy, m.energy_displacement
                );
            }
            let _ = writeln!(
                out,
                "{:>6} {:>14.6} {:>14.6} {:>14.6} {:>14.6}",
                "mean", cohort.mean_initial, cohort.mean_final, cohort.mean_minimum, cohort.mean_displacement
            );
            let _ = writeln!(
                out,
                "# n={} final<mf={:.1}% min<mf={:.1}% final<=initial={:.1}% lowest_min={:.6}",
                cohort.n, cohort.pct_final_below_mf, cohort.pct_min_below_mf, cohort.pct_final_not_above_initial, cohort.lowest_min_energy
            );
        }
    }
    out
}

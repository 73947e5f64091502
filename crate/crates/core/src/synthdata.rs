//! Labeled synthetic vibration data from a damped spring-mass chain.
//!
//! Spring `i` (1-based) joins mass `i-1` to mass `i`; spring 1 ties mass 1 to
//! the ground. Damage scales one spring's stiffness by `1 - α`. Records are
//! produced by an exact zero-order-hold discretization of the continuous
//! state-space model driven by low-pass filtered Gaussian noise.

use std::f64::consts::PI;

use chrono::{DateTime, Duration, Utc};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::signals::SignalRecord;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureSpec {
    pub n_dof: usize,
    pub masses: Vec<f64>,
    pub stiffnesses: Vec<f64>,
    pub rayleigh_alpha: f64,
    pub rayleigh_beta: f64,
    /// 1-based DOFs whose accelerations are recorded.
    pub sensor_dofs: Vec<usize>,
    /// 1-based DOF receiving the excitation force.
    pub drive_dof: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DamageState {
    pub label: i64,
    /// 1-based spring index.
    pub spring: usize,
    /// Stiffness reduction fraction in [0, 1).
    pub reduction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcitationRegime {
    pub label: i64,
    pub bandwidth_hz: f64,
    pub rms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub damage_states: Vec<DamageState>,
    pub excitation_regimes: Vec<ExcitationRegime>,
    /// Range of the global stiffness modulation, e.g. `[-0.02, 0.02]`.
    pub env_drift: [f64; 2],
    /// Simulated seconds for every (damage state, excitation regime) cell.
    pub duration_per_state: f64,
    /// Cells are emitted as records of this length.
    pub record_seconds: f64,
    pub sample_rate: f64,
    /// Additive Gaussian sensor noise, absolute units.
    #[serde(default)]
    pub noise_std: f64,
    /// Drift is held constant over blocks of this many seconds.
    #[serde(default = "default_drift_block")]
    pub drift_block_seconds: f64,
    #[serde(default = "default_burn_in")]
    pub burn_in_seconds: f64,
    pub start_time: DateTime<Utc>,
    pub seed: u64,
}

fn default_drift_block() -> f64 {
    10.0
}

fn default_burn_in() -> f64 {
    20.0
}

impl StructureSpec {
    /// Fixed-base chain with uniform masses and stiffnesses.
    pub fn uniform_chain(n_dof: usize, mass: f64, stiffness: f64) -> Self {
        Self {
            n_dof,
            masses: vec![mass; n_dof],
            stiffnesses: vec![stiffness; n_dof],
            rayleigh_alpha: 0.0,
            rayleigh_beta: 0.0,
            sensor_dofs: (1..=n_dof).collect(),
            drive_dof: n_dof,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_dof;
        if n == 0 || self.masses.len() != n || self.stiffnesses.len() != n {
            return Err(Error::Spec(format!(
                "n_dof {n} needs {n} masses and {n} stiffnesses"
            )));
        }
        if self.masses.iter().chain(&self.stiffnesses).any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Spec("masses and stiffnesses must be positive".into()));
        }
        if self.rayleigh_alpha < 0.0 || self.rayleigh_beta < 0.0 {
            return Err(Error::Spec("Rayleigh coefficients must be non-negative".into()));
        }
        if self.sensor_dofs.is_empty() || self.sensor_dofs.iter().any(|&d| d == 0 || d > n) {
            return Err(Error::Spec(format!("sensor_dofs must lie in 1..={n}")));
        }
        if self.drive_dof == 0 || self.drive_dof > n {
            return Err(Error::Spec(format!("drive_dof must lie in 1..={n}")));
        }
        Ok(())
    }

    fn spring_values(&self, damage: Option<&DamageState>) -> Result<Vec<f64>> {
        let mut k = self.stiffnesses.clone();
        if let Some(d) = damage {
            if d.spring == 0 || d.spring > self.n_dof {
                return Err(Error::Spec(format!("damaged spring {} out of range", d.spring)));
            }
            if !(0.0..1.0).contains(&d.reduction) {
                return Err(Error::Spec(format!("reduction {} outside [0, 1)", d.reduction)));
            }
            k[d.spring - 1] *= 1.0 - d.reduction;
        }
        Ok(k)
    }

    /// Assembled stiffness matrix with optional damage.
    pub fn stiffness_matrix(&self, damage: Option<&DamageState>) -> Result<DMatrix<f64>> {
        let k = self.spring_values(damage)?;
        let n = self.n_dof;
        let mut mat = DMatrix::zeros(n, n);
        for (i, &ki) in k.iter().enumerate() {
            mat[(i, i)] += ki;
            if i > 0 {
                mat[(i - 1, i - 1)] += ki;
                mat[(i - 1, i)] -= ki;
                mat[(i, i - 1)] -= ki;
            }
        }
        Ok(mat)
    }

    pub fn mass_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(self.masses.clone()))
    }
}

#[derive(Debug, Clone)]
pub struct ModalResult {
    /// Natural frequencies in Hz, ascending.
    pub frequencies: Vec<f64>,
    /// Mass-normalized mode shapes, one column per mode.
    pub mode_shapes: DMatrix<f64>,
}

/// Undamped natural frequencies and mode shapes of the (optionally damaged) chain.
pub fn modal_analysis(spec: &StructureSpec, damage: Option<&DamageState>) -> Result<ModalResult> {
    spec.validate()?;
    let k = spec.stiffness_matrix(damage)?;
    if k.clone().cholesky().is_none() {
        return Err(Error::Spec("stiffness matrix is not positive definite".into()));
    }
    let inv_sqrt_m = DVector::from_iterator(spec.n_dof, spec.masses.iter().map(|m| 1.0 / m.sqrt()));
    let mut sym = k.clone();
    for i in 0..spec.n_dof {
        for j in 0..spec.n_dof {
            sym[(i, j)] *= inv_sqrt_m[i] * inv_sqrt_m[j];
        }
    }
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..spec.n_dof).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let frequencies = order
        .iter()
        .map(|&i| eig.eigenvalues[i].max(0.0).sqrt() / (2.0 * PI))
        .collect();
    let mut shapes = DMatrix::zeros(spec.n_dof, spec.n_dof);
    for (col, &i) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(i);
        // fix the sign so the largest-magnitude entry is positive
        let pivot = v.iter().cloned().fold(0.0, |acc: f64, x| if x.abs() > acc.abs() { x } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for r in 0..spec.n_dof {
            shapes[(r, col)] = sign * v[r] * inv_sqrt_m[r];
        }
    }
    Ok(ModalResult {
        frequencies,
        mode_shapes: shapes,
    })
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.damage_states.is_empty() || self.excitation_regimes.is_empty() {
            return Err(Error::Spec("scenario needs damage states and excitation regimes".into()));
        }
        if self.damage_states.iter().any(|d| !(0.0..1.0).contains(&d.reduction)) {
            return Err(Error::Spec("damage reduction must lie in [0, 1)".into()));
        }
        if !(self.sample_rate > 0.0) {
            return Err(Error::Spec("sample_rate must be positive".into()));
        }
        for r in &self.excitation_regimes {
            if r.rms < 0.0 || !(r.bandwidth_hz > 0.0 && r.bandwidth_hz < self.sample_rate / 2.0) {
                return Err(Error::Spec(format!(
                    "excitation {} needs rms >= 0 and 0 < bandwidth < Nyquist",
                    r.label
                )));
            }
        }
        let [lo, hi] = self.env_drift;
        if !(lo <= hi && lo > -0.05 && hi < 0.05) {
            return Err(Error::Spec("env_drift must be an ordered range inside (-0.05, 0.05)".into()));
        }
        if !(self.record_seconds > 0.0 && self.duration_per_state >= self.record_seconds) {
            return Err(Error::Spec("need 0 < record_seconds <= duration_per_state".into()));
        }
        if !(self.drift_block_seconds > 0.0) || self.noise_std < 0.0 || self.burn_in_seconds < 0.0 {
            return Err(Error::Spec("drift block, noise and burn-in must be non-negative".into()));
        }
        Ok(())
    }

    pub fn records_per_cell(&self) -> usize {
        (self.duration_per_state / self.record_seconds).floor() as usize
    }

    pub fn samples_per_record(&self) -> usize {
        (self.record_seconds * self.sample_rate).round() as usize
    }
}

/// The default desk-scale structure: 8-DOF chain, 1 kg masses, a base spring
/// four times softer than the rest (first mode near 3.1 Hz, highest near
/// 44 Hz), ~1-1.5% modal damping, four sensors, driven at DOF 5.
pub fn default_structure() -> StructureSpec {
    let mut spec = StructureSpec::uniform_chain(8, 1.0, 20000.0);
    spec.stiffnesses[0] = 5000.0;
    spec.rayleigh_alpha = 0.4;
    spec.rayleigh_beta = 1.0e-4;
    spec.sensor_dofs = vec![2, 4, 6, 8];
    spec.drive_dof = 5;
    spec
}

/// Four damage states (α = 0, 0.05, 0.1, 0.2 on the base spring), three
/// excitation regimes from weak/narrow to strong/broad, ±2% stiffness drift.
/// Five hours per cell in ten-minute records at 100 Hz. The band edges sit
/// below 12.5 Hz so that the data stays informative after decimating by 4.
pub fn default_scenario() -> ScenarioSpec {
    ScenarioSpec {
        damage_states: [0.0, 0.05, 0.1, 0.2]
            .iter()
            .enumerate()
            .map(|(i, &a)| DamageState {
                label: i as i64 + 1,
                spring: 1,
                reduction: a,
            })
            .collect(),
        excitation_regimes: vec![
            ExcitationRegime { label: 1, bandwidth_hz: 3.0, rms: 0.5 },
            ExcitationRegime { label: 2, bandwidth_hz: 6.0, rms: 1.0 },
            ExcitationRegime { label: 3, bandwidth_hz: 12.0, rms: 2.0 },
        ],
        env_drift: [-0.02, 0.02],
        duration_per_state: 18000.0,
        record_seconds: 600.0,
        sample_rate: 100.0,
        noise_std: 0.05,
        drift_block_seconds: 10.0,
        burn_in_seconds: 20.0,
        start_time: DateTime::parse_from_rfc3339("2025-01-01T00:00:00Z").unwrap().to_utc(),
        seed: 2024,
    }
}

/// Deterministic per-stream seed derived from the scenario seed and labels.
pub fn stream_seed(seed: u64, parts: &[u64]) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    parts.iter().fold(splitmix(seed), |acc, &p| splitmix(acc ^ p))
}

/// Two cascaded RBJ low-pass biquads forming a 4th-order Butterworth filter.
struct Butterworth4 {
    sections: [[f64; 5]; 2],
    state: [[f64; 2]; 2],
}

impl Butterworth4 {
    fn new(cutoff: f64, fs: f64) -> Self {
        let w0 = 2.0 * PI * cutoff / fs;
        let (sin, cos) = w0.sin_cos();
        let q = [1.0 / (2.0 * (PI / 8.0).cos()), 1.0 / (2.0 * (3.0 * PI / 8.0).cos())];
        let sections = q.map(|q| {
            let alpha = sin / (2.0 * q);
            let a0 = 1.0 + alpha;
            [
                (1.0 - cos) / 2.0 / a0,
                (1.0 - cos) / a0,
                (1.0 - cos) / 2.0 / a0,
                -2.0 * cos / a0,
                (1.0 - alpha) / a0,
            ]
        });
        Self {
            sections,
            state: [[0.0; 2]; 2],
        }
    }

    fn step(&mut self, mut x: f64) -> f64 {
        for (s, st) in self.sections.iter().zip(self.state.iter_mut()) {
            // transposed direct form II
            let y = s[0] * x + st[0];
            st[0] = s[1] * x - s[3] * y + st[1];
            st[1] = s[2] * x - s[4] * y;
            x = y;
        }
        x
    }
}

/// Discrete model for one drift level.
struct Discrete {
    phi: Vec<f64>,
    gamma: Vec<f64>,
    out_state: Vec<f64>,
    out_feed: Vec<f64>,
}

fn discretize(
    spec: &StructureSpec,
    k: &DMatrix<f64>,
    c: &DMatrix<f64>,
    dt: f64,
) -> Discrete {
    let n = spec.n_dof;
    let s = 2 * n;
    let inv_m: Vec<f64> = spec.masses.iter().map(|m| 1.0 / m).collect();
    let drive = spec.drive_dof - 1;

    // augmented [[A, B], [0, 0]] so that exp(dt·aug) = [[Φ, Γ], [0, 1]]
    let mut aug = DMatrix::zeros(s + 1, s + 1);
    for i in 0..n {
        aug[(i, n + i)] = 1.0;
        for j in 0..n {
            aug[(n + i, j)] = -inv_m[i] * k[(i, j)];
            aug[(n + i, n + j)] = -inv_m[i] * c[(i, j)];
        }
    }
    aug[(n + drive, s)] = inv_m[drive];
    let e = (aug * dt).exp();

    let mut phi = vec![0.0; s * s];
    let mut gamma = vec![0.0; s];
    for i in 0..s {
        for j in 0..s {
            phi[i * s + j] = e[(i, j)];
        }
        gamma[i] = e[(i, s)];
    }
    let sensors = &spec.sensor_dofs;
    let mut out_state = vec![0.0; sensors.len() * s];
    let mut out_feed = vec![0.0; sensors.len()];
    for (r, &dof) in sensors.iter().enumerate() {
        let i = dof - 1;
        for j in 0..n {
            out_state[r * s + j] = -inv_m[i] * k[(i, j)];
            out_state[r * s + n + j] = -inv_m[i] * c[(i, j)];
        }
        if i == drive {
            out_feed[r] = inv_m[i];
        }
    }
    Discrete {
        phi,
        gamma,
        out_state,
        out_feed,
    }
}

struct RecordJob {
    damage: DamageState,
    regime: ExcitationRegime,
    index: usize,
    start_time: DateTime<Utc>,
}

fn simulate_record(spec: &StructureSpec, scenario: &ScenarioSpec, job: &RecordJob) -> Result<SignalRecord> {
    let fs = scenario.sample_rate;
    let dt = 1.0 / fs;
    let n = spec.n_dof;
    let s = 2 * n;
    let samples = scenario.samples_per_record();
    let burn_in = (scenario.burn_in_seconds * fs).round() as usize;
    let block = ((scenario.drift_block_seconds * fs).round() as usize).max(1);

    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(
        scenario.seed,
        &[
            job.damage.label as u64,
            job.regime.label as u64,
            job.index as u64,
        ],
    ));

    let k0 = spec.stiffness_matrix(Some(&job.damage))?;
    let c = spec.mass_matrix() * spec.rayleigh_alpha + &k0 * spec.rayleigh_beta;

    let [lo, hi] = scenario.env_drift;
    let (d0, d1) = if hi > lo {
        let u = Uniform::new(lo, hi).map_err(|e| Error::Spec(e.to_string()))?;
        (u.sample(&mut rng), u.sample(&mut rng))
    } else {
        (lo, lo)
    };

    // force: Gaussian white noise through the low-pass, scaled to the target RMS
    let total = burn_in + samples;
    let mut filter = Butterworth4::new(job.regime.bandwidth_hz, fs);
    let mut force: Vec<f64> = (0..total)
        .map(|_| filter.step(StandardNormal.sample(&mut rng)))
        .collect();
    let rms = (force.iter().map(|f| f * f).sum::<f64>() / total as f64).sqrt();
    let gain = if rms > 0.0 { job.regime.rms / rms } else { 0.0 };
    force.iter_mut().for_each(|f| *f *= gain);

    let channels = spec.sensor_dofs.len();
    let mut out = vec![Vec::with_capacity(samples); channels];
    let mut x = vec![0.0; s];
    let mut next = vec![0.0; s];
    let mut model = None;
    let mut current_block = usize::MAX;

    for (t, &f) in force.iter().enumerate() {
        let b = t.saturating_sub(burn_in) / block;
        if b != current_block {
            current_block = b;
            let n_blocks = samples.div_ceil(block).max(1);
            let frac = if n_blocks > 1 { (b as f64 + 0.5) / n_blocks as f64 } else { 0.5 };
            let drift = d0 + (d1 - d0) * frac.min(1.0);
            model = Some(discretize(spec, &(&k0 * (1.0 + drift)), &c, dt));
        }
        let m = model.as_ref().unwrap();
        if t >= burn_in {
            for (r, ch) in out.iter_mut().enumerate() {
                let row = &m.out_state[r * s..(r + 1) * s];
                let a: f64 = row.iter().zip(&x).map(|(p, q)| p * q).sum::<f64>() + m.out_feed[r] * f;
                let noise: f64 = StandardNormal.sample(&mut rng);
                ch.push(a + scenario.noise_std * noise);
            }
        }
        for i in 0..s {
            let row = &m.phi[i * s..(i + 1) * s];
            next[i] = row.iter().zip(&x).map(|(p, q)| p * q).sum::<f64>() + m.gamma[i] * f;
        }
        std::mem::swap(&mut x, &mut next);
        let norm: f64 = x.iter().map(|v| v * v).sum();
        if !norm.is_finite() || norm > 1e24 {
            return Err(Error::Simulation(format!(
                "response diverged at step {t} in damage {} / excitation {}",
                job.damage.label, job.regime.label
            )));
        }
    }

    Ok(SignalRecord {
        name: format!("d{}_e{}_r{:03}", job.damage.label, job.regime.label, job.index),
        samples: out,
        sample_rate: fs,
        start_time: Some(job.start_time),
        damage_label: job.damage.label,
        excitation_label: job.regime.label,
    })
}

/// Simulate every (damage state × excitation regime) cell. Records are
/// returned in chronological order: damage states in sequence, and within
/// one state the excitation regimes interleaved record by record.
pub fn simulate(spec: &StructureSpec, scenario: &ScenarioSpec) -> Result<Vec<SignalRecord>> {
    spec.validate()?;
    scenario.validate()?;
    let per_cell = scenario.records_per_cell();
    let seconds = Duration::milliseconds((scenario.record_seconds * 1000.0).round() as i64);

    let mut jobs = Vec::new();
    let mut clock = scenario.start_time;
    for damage in &scenario.damage_states {
        for index in 0..per_cell {
            for regime in &scenario.excitation_regimes {
                jobs.push(RecordJob {
                    damage: *damage,
                    regime: *regime,
                    index,
                    start_time: clock,
                });
                clock += seconds;
            }
        }
    }
    jobs.par_iter().map(|job| simulate_record(spec, scenario, job)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_scenario() -> ScenarioSpec {
        let mut s = default_scenario();
        s.damage_states.truncate(2);
        s.excitation_regimes.truncate(2);
        s.duration_per_state = 20.0;
        s.record_seconds = 10.0;
        s.burn_in_seconds = 2.0;
        s
    }

    #[test]
    fn single_dof_frequency() {
        let spec = StructureSpec::uniform_chain(1, 1.0, 4.0 * PI * PI);
        let m = modal_analysis(&spec, None).unwrap();
        assert!((m.frequencies[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_modes_alternate() {
        // free-free-like symmetric chain: equal end springs to ground on both sides
        // is not expressible, so use a two-mass chain whose second spring couples
        let mut spec = StructureSpec::uniform_chain(2, 1.0, 100.0);
        spec.stiffnesses = vec![100.0, 50.0];
        let m = modal_analysis(&spec, None).unwrap();
        let s = &m.mode_shapes;
        // first mode in phase, second out of phase
        assert!(s[(0, 0)] * s[(1, 0)] > 0.0);
        assert!(s[(0, 1)] * s[(1, 1)] < 0.0);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = default_structure();
        spec.masses[3] = 0.0;
        assert!(matches!(modal_analysis(&spec, None), Err(Error::Spec(_))));
        let mut spec = default_structure();
        spec.sensor_dofs.push(9);
        assert!(spec.validate().is_err());
        let bad = DamageState { label: 1, spring: 1, reduction: 1.0 };
        assert!(modal_analysis(&default_structure(), Some(&bad)).is_err());
    }

    #[test]
    fn zero_amplitude_gives_zero_records() {
        let mut s = tiny_scenario();
        s.noise_std = 0.0;
        for r in &mut s.excitation_regimes {
            r.rms = 0.0;
        }
        let recs = simulate(&default_structure(), &s).unwrap();
        assert!(recs.iter().all(|r| r.samples.iter().flatten().all(|&v| v == 0.0)));
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let s = tiny_scenario();
        let a = simulate(&default_structure(), &s).unwrap();
        let b = simulate(&default_structure(), &s).unwrap();
        assert_eq!(a, b);
        let mut s2 = s.clone();
        s2.seed += 1;
        assert_ne!(a, simulate(&default_structure(), &s2).unwrap());
    }

    #[test]
    fn record_layout_and_labels() {
        let s = tiny_scenario();
        let recs = simulate(&default_structure(), &s).unwrap();
        assert_eq!(recs.len(), 2 * 2 * 2);
        assert!(recs.iter().all(|r| r.channels() == 4 && r.len() == 1000));
        assert_eq!(recs[0].name, "d1_e1_r000");
        assert_eq!(recs[1].name, "d1_e2_r000");
        assert!(recs.windows(2).all(|w| w[0].start_time < w[1].start_time));
    }

    #[test]
    fn scenario_validation() {
        let mut s = default_scenario();
        s.env_drift = [-0.06, 0.0];
        assert!(s.validate().is_err());
        let mut s = default_scenario();
        s.excitation_regimes[0].bandwidth_hz = 60.0;
        assert!(s.validate().is_err());
    }
}

//! Experiment configuration, parameter scans and CSV output.
//!
//! Every entry point is a deterministic function of its configuration:
//! grid cells may be computed in parallel but are assembled in grid order,
//! and trajectory ensembles reduce in trajectory order.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::{consistency_report, ConsistencyReport, ReportConfig};
use crate::error::{Error, Result};
use crate::lindblad::{channel_from_estimates, channel_from_moments, complete_graph_channels, extract_raw, Integrator};
use crate::network::{complete_graph, single_excitation_hamiltonian, NoiseSpec};
use crate::perturbation::{
    first_order_numeric, noiseless_max_fidelity, printed_weak_noise_channel, Baseline, DELTA_FLOOR,
};
use crate::propagator::{check_io, BlochInput, ChannelParams, Spectral};
use crate::stochastic::{ensemble_on_grid, initial_state_vector, TrajectoryPlan};

pub const CSV_HEADER: &str = "n,m,eta,t,F,abs_z,lambda,delta,method,seed";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Unitary,
    Lindblad,
    Trajectories,
    PerturbationNumeric,
    PerturbationPrinted,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Unitary => "unitary",
            Method::Lindblad => "lindblad",
            Method::Trajectories => "trajectories",
            Method::PerturbationNumeric => "perturbation-numeric",
            Method::PerturbationPrinted => "perturbation-printed",
        }
    }
}

/// Noise strength: one number, or a map from `"k-l"` to the edge strength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EtaField {
    Scalar(f64),
    PerEdge(BTreeMap<String, f64>),
}

impl Default for EtaField {
    fn default() -> Self {
        EtaField::Scalar(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub t_min: f64,
    pub t_max: f64,
    pub t_steps: usize,
}

impl TimeGrid {
    /// `t_steps` equally spaced points from `t_min` to `t_max` inclusive.
    pub fn points(&self) -> Vec<f64> {
        if self.t_steps == 1 {
            return vec![self.t_min];
        }
        let h = (self.t_max - self.t_min) / (self.t_steps - 1) as f64;
        (0..self.t_steps).map(|k| self.t_min + k as f64 * h).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.t_steps == 0 {
            return Err(Error::invalid("time_grid.t_steps must be >= 1"));
        }
        if !(self.t_min >= 0.0) || !(self.t_max >= self.t_min) || !self.t_max.is_finite() {
            return Err(Error::invalid("time_grid needs 0 <= t_min <= t_max < inf"));
        }
        Ok(())
    }
}

fn default_input() -> usize {
    1
}
fn default_output() -> usize {
    2
}
fn default_dt() -> f64 {
    1e-3
}
fn default_n_traj() -> usize {
    2000
}

/// One simulation on the complete graph `K_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    #[serde(default = "default_input")]
    pub input_vertex: usize,
    #[serde(default = "default_output")]
    pub output_vertex: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noisy_vertices: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default)]
    pub eta: EtaField,
    pub time_grid: TimeGrid,
    pub method: Method,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_n_traj")]
    pub n_traj: usize,
    #[serde(default)]
    pub master_seed: u64,
}

fn parse_edge(key: &str) -> Result<(usize, usize)> {
    let bad = || Error::InvalidNoiseSpec(format!("eta key {key:?} is not of the form \"k-l\""));
    let (a, b) = key.split_once('-').ok_or_else(bad)?;
    Ok((
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    ))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_io(self.n, self.input_vertex, self.output_vertex)?;
        self.time_grid.validate()?;
        if !(self.dt > 0.0) {
            return Err(Error::invalid("dt must be positive"));
        }
        if self.n_traj == 0 {
            return Err(Error::invalid("n_traj must be >= 1"));
        }
        let spec = self.noise()?;
        if self.method == Method::Unitary && !spec.is_noiseless() {
            return Err(Error::invalid("method unitary has no noise; set eta to 0"));
        }
        if matches!(self.method, Method::PerturbationNumeric | Method::PerturbationPrinted)
            && (self.input_vertex, self.output_vertex) != (1, 2)
        {
            return Err(Error::Unsupported(
                "perturbation methods use input 1 and output 2".into(),
            ));
        }
        Ok(())
    }

    /// Noise specification; `noisy_vertices` and `m` are mutually exclusive.
    pub fn noise(&self) -> Result<NoiseSpec> {
        let spec = match (&self.noisy_vertices, self.m, &self.eta) {
            (Some(_), Some(_), _) => {
                return Err(Error::invalid("give either noisy_vertices or m, not both"));
            }
            (None, None, EtaField::Scalar(_)) => NoiseSpec::none(),
            (None, None, EtaField::PerEdge(_)) => {
                return Err(Error::invalid("per-edge eta needs noisy_vertices"));
            }
            (None, Some(m), EtaField::Scalar(eta)) => {
                NoiseSpec::auto(self.n, m, self.input_vertex, self.output_vertex, *eta)?
            }
            (None, Some(_), EtaField::PerEdge(_)) => {
                return Err(Error::invalid("per-edge eta needs explicit noisy_vertices"));
            }
            (Some(v), None, EtaField::Scalar(eta)) => NoiseSpec::uniform(v.iter().copied(), *eta)?,
            (Some(v), None, EtaField::PerEdge(map)) => NoiseSpec::per_edge(
                v.iter().copied(),
                map.iter()
                    .map(|(k, &e)| parse_edge(k).map(|p| (p, e)))
                    .collect::<Result<Vec<_>>>()?,
            )?,
        };
        spec.validate_for(self.n, self.input_vertex, self.output_vertex)?;
        Ok(spec)
    }
}

/// One output row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanRecord {
    pub n: usize,
    pub m: usize,
    pub eta: f64,
    pub t: f64,
    #[serde(rename = "F")]
    pub f: f64,
    pub abs_z: f64,
    pub lambda: f64,
    pub delta: Option<f64>,
    pub method: String,
    pub seed: Option<u64>,
}

impl ScanRecord {
    fn from_channel(n: usize, m: usize, eta: f64, t: f64, ch: &ChannelParams, method: &str) -> Self {
        Self {
            n,
            m,
            eta,
            t,
            f: ch.fidelity(),
            abs_z: ch.abs_z(),
            lambda: ch.lambda(),
            delta: None,
            method: method.to_string(),
            seed: None,
        }
    }
}

/// `printf("%.12e")`: twelve fractional digits, signed exponent of at
/// least two digits.
pub fn fmt_sci(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let s = format!("{x:.12e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

pub fn to_csv(records: &[ScanRecord]) -> String {
    let mut s = String::with_capacity(128 * (records.len() + 1));
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.n,
            r.m,
            fmt_sci(r.eta),
            fmt_sci(r.t),
            fmt_sci(r.f),
            fmt_sci(r.abs_z),
            fmt_sci(r.lambda),
            r.delta.map(fmt_sci).unwrap_or_default(),
            r.method,
            r.seed.map(|s| s.to_string()).unwrap_or_default()
        );
    }
    s
}

/// One record per time-grid point.
pub fn run_simulate(cfg: &ExperimentConfig) -> Result<Vec<ScanRecord>> {
    cfg.validate()?;
    let spec = cfg.noise()?;
    let (n, m, eta) = (cfg.n, spec.m(), spec.max_strength());
    let (i, o) = (cfg.input_vertex, cfg.output_vertex);
    let times = cfg.time_grid.points();
    let method = cfg.method.as_str();
    let rec = |t: f64, ch: &ChannelParams| ScanRecord::from_channel(n, m, eta, t, ch, method);
    match cfg.method {
        Method::Unitary => {
            let sp = Spectral::of(&single_excitation_hamiltonian(&complete_graph(n)?))?;
            times
                .iter()
                .map(|&t| Ok(rec(t, &ChannelParams::unitary(sp.element(t, o, i))?)))
                .collect()
        }
        Method::Lindblad => {
            let chans = complete_graph_channels(n, &spec, i, o, &times, Integrator::Auto { dt: cfg.dt })?;
            Ok(times.iter().zip(&chans).map(|(&t, ch)| rec(t, ch)).collect())
        }
        Method::Trajectories => {
            let h = single_excitation_hamiltonian(&complete_graph(n)?);
            let probe = BlochInput::canonical();
            let psi0 = initial_state_vector(n, i, &probe)?;
            let t_final = times.last().copied().unwrap_or(0.0);
            let plan = TrajectoryPlan::new(cfg.n_traj, cfg.dt, t_final, cfg.master_seed, spec)?;
            let ens = ensemble_on_grid(&plan, &h, &psi0, &times)?;
            times
                .iter()
                .zip(&ens)
                .map(|(&t, e)| {
                    let (z_sq, lambda_z) = extract_raw(&e.rho_mean, &probe, i, o)?;
                    let ch = channel_from_estimates(z_sq, lambda_z);
                    let mut r = rec(t, &ch);
                    r.seed = Some(cfg.master_seed);
                    Ok(r)
                })
                .collect()
        }
        Method::PerturbationNumeric | Method::PerturbationPrinted => times
            .par_iter()
            .map(|&t| {
                let w = if cfg.method == Method::PerturbationNumeric {
                    first_order_numeric(n, m, eta, t, 1e-3)?
                } else {
                    printed_weak_noise_channel(n, m, eta, t)?
                };
                let ch = channel_from_moments(w.z_sq(), w.lambda_z())?;
                Ok(rec(t, &ch))
            })
            .collect(),
    }
}

fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64)
            .collect(),
    }
}

/// Surface `F(t, eta)` for `K_4` with noise on edge 3-4, transfer 1 -> 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fig1Config {
    pub eta_min: f64,
    pub eta_max: f64,
    pub eta_steps: usize,
    pub t_min: f64,
    pub t_max: f64,
    pub t_steps: usize,
}

impl Default for Fig1Config {
    fn default() -> Self {
        Self {
            eta_min: 0.0,
            eta_max: 64.0,
            eta_steps: 64,
            t_min: 0.0,
            t_max: 2.0 * PI,
            t_steps: 64,
        }
    }
}

pub fn run_scan_fig1(cfg: &Fig1Config) -> Result<Vec<ScanRecord>> {
    if cfg.eta_steps == 0 || cfg.t_steps == 0 || !(cfg.eta_min >= 0.0) || !(cfg.eta_max >= cfg.eta_min) {
        return Err(Error::invalid(
            "fig1 grid needs eta_steps, t_steps >= 1 and 0 <= eta_min <= eta_max",
        ));
    }
    TimeGrid {
        t_min: cfg.t_min,
        t_max: cfg.t_max,
        t_steps: cfg.t_steps,
    }
    .validate()?;
    let etas = linspace(cfg.eta_min, cfg.eta_max, cfg.eta_steps);
    let times = linspace(cfg.t_min, cfg.t_max, cfg.t_steps);
    let rows: Vec<Result<Vec<ScanRecord>>> = etas
        .par_iter()
        .map(|&eta| {
            let spec = NoiseSpec::uniform([3, 4], eta)?;
            let chans = complete_graph_channels(4, &spec, 1, 2, &times, Integrator::Exact)?;
            Ok(times
                .iter()
                .zip(&chans)
                .map(|(&t, ch)| ScanRecord::from_channel(4, 2, eta, t, ch, "lindblad"))
                .collect())
        })
        .collect();
    flatten(rows)
}

fn flatten(rows: Vec<Result<Vec<ScanRecord>>>) -> Result<Vec<ScanRecord>> {
    let mut out = Vec::new();
    for r in rows {
        out.extend(r?);
    }
    Ok(out)
}

/// Time axis of the `Delta` maps: `t_k = k t_max / t_steps`, `k = 1..=t_steps`.
pub fn delta_time_grid(t_max: f64, t_steps: usize) -> Vec<f64> {
    (1..=t_steps).map(|k| k as f64 * t_max / t_steps as f64).collect()
}

/// `Delta(t)` for `n` in a range with `m = n - 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fig2Config {
    pub n_min: usize,
    pub n_max: usize,
    pub eta: f64,
    pub t_max: f64,
    pub t_steps: usize,
}

impl Default for Fig2Config {
    fn default() -> Self {
        Self {
            n_min: 4,
            n_max: 12,
            eta: 0.01,
            t_max: 4.0 * PI,
            t_steps: 200,
        }
    }
}

/// `Delta(t)` at fixed `n` for `m` in a range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fig3Config {
    pub n: usize,
    pub m_min: usize,
    pub m_max: usize,
    pub eta: f64,
    pub t_max: f64,
    pub t_steps: usize,
}

impl Default for Fig3Config {
    fn default() -> Self {
        Self {
            n: 10,
            m_min: 2,
            m_max: 8,
            eta: 0.01,
            t_max: 4.0 * PI,
            t_steps: 200,
        }
    }
}

fn delta_rows(cases: &[(usize, usize)], eta: f64, t_max: f64, t_steps: usize) -> Result<Vec<ScanRecord>> {
    if t_steps == 0 || !(t_max > 0.0) || !(eta >= 0.0) {
        return Err(Error::invalid("delta map needs t_steps >= 1, t_max > 0 and eta >= 0"));
    }
    let times = delta_time_grid(t_max, t_steps);
    let rows: Vec<Result<Vec<ScanRecord>>> = cases
        .par_iter()
        .map(|&(n, m)| {
            let spec = NoiseSpec::auto(n, m, 1, 2, eta)?;
            let chans = complete_graph_channels(n, &spec, 1, 2, &times, Integrator::Exact)?;
            let deltas = delta_values(n, eta, &chans)?;
            Ok(times
                .iter()
                .zip(&chans)
                .zip(&deltas)
                .map(|((&t, ch), &d)| {
                    let mut r = ScanRecord::from_channel(n, m, eta, t, ch, "lindblad");
                    r.delta = Some(d);
                    r
                })
                .collect())
        })
        .collect();
    flatten(rows)
}

/// `Delta` for each channel of `K_n`, against the analytic noiseless maximum.
fn delta_values(n: usize, eta: f64, chans: &[ChannelParams]) -> Result<Vec<f64>> {
    let base = noiseless_max_fidelity(n, Baseline::Analytic)?;
    Ok(chans
        .iter()
        .map(|ch| {
            if eta == 0.0 {
                0.0
            } else {
                (ch.fidelity() - base).max(0.0)
            }
        })
        .collect())
}

pub fn run_scan_fig2(cfg: &Fig2Config) -> Result<Vec<ScanRecord>> {
    if cfg.n_min < 2 || cfg.n_max < cfg.n_min {
        return Err(Error::invalid("fig2 needs 2 <= n_min <= n_max"));
    }
    let cases: Vec<(usize, usize)> = (cfg.n_min..=cfg.n_max).map(|n| (n, n - 2)).collect();
    delta_rows(&cases, cfg.eta, cfg.t_max, cfg.t_steps)
}

pub fn run_scan_fig3(cfg: &Fig3Config) -> Result<Vec<ScanRecord>> {
    if cfg.m_max < cfg.m_min || cfg.m_max + 2 > cfg.n {
        return Err(Error::invalid("fig3 needs m_min <= m_max <= n - 2"));
    }
    let cases: Vec<(usize, usize)> = (cfg.m_min..=cfg.m_max).map(|m| (cfg.n, m)).collect();
    delta_rows(&cases, cfg.eta, cfg.t_max, cfg.t_steps)
}

/// Full cross-check suite.
pub fn run_report(cfg: &ReportConfig) -> Result<ConsistencyReport> {
    consistency_report(cfg)
}

/// Measure of `{t : Delta > 0}` per `(n, m)` group of a `Delta` scan,
/// assuming the uniform time grid of [`delta_time_grid`].
pub fn window_widths(records: &[ScanRecord], t_max: f64, t_steps: usize) -> Vec<((usize, usize), f64)> {
    let step = t_max / t_steps as f64;
    let mut out: Vec<((usize, usize), f64)> = Vec::new();
    for r in records {
        let key = (r.n, r.m);
        if out.last().map(|x| x.0) != Some(key) {
            out.push((key, 0.0));
        }
        if r.delta.unwrap_or(0.0) > DELTA_FLOOR {
            out.last_mut().expect("pushed above").1 += step;
        }
    }
    out
}

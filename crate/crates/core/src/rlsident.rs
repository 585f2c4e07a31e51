//! Recursive least-squares identification of the z-domain port admittance,
//! the batch least-squares oracle, and the probe orchestration that turns
//! boundary voltage/current records into FDNE coefficients.
//!
//! The model is the strictly proper ARX form
//! `y(k) = -a1 y(k-1) - ... - an y(k-n) + b1 u(k-1) + ... + bn u(k-n)`
//! with parameter vector `theta = [a1..an, b1..bn]` and regressor
//! `x(k) = [-y(k-1)..-y(k-n), u(k-1)..u(k-n)]`, so the stored `a` carry the
//! denominator sign convention of the transfer function
//! `(b1 z^-1 + ... + bn z^-n) / (1 + a1 z^-1 + ... + an z^-n)`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::casefile::CaseFile;
use crate::emtsim::{self, AssembleOptions, MachineMode, SimConfig, Solver, Tap};
use crate::fdne::FdneCoefficients;
use crate::{Error, Result};

/// One recursive least-squares estimator instance.
#[derive(Debug, Clone)]
pub struct RlsState {
    n: usize,
    theta: DVector<f64>,
    p: DMatrix<f64>,
    gamma: f64,
    /// Past outputs, most recent first.
    y_hist: Vec<f64>,
    /// Past inputs, most recent first.
    u_hist: Vec<f64>,
    k: usize,
    last_innovation: f64,
}

impl RlsState {
    /// Fresh estimator: `theta = 0`, `P = p0 I`, zero history.
    pub fn init(n: usize, p0: f64, gamma: f64) -> Result<Self> {
        if n < 1 {
            return Err(Error::Invalid("order must be >= 1".into()));
        }
        if p0 <= 0.0 || !(0.0 < gamma && gamma <= 1.0) {
            return Err(Error::Invalid("require p0 > 0 and 0 < gamma <= 1".into()));
        }
        Ok(Self {
            n,
            theta: DVector::zeros(2 * n),
            p: DMatrix::identity(2 * n, 2 * n) * p0,
            gamma,
            y_hist: vec![0.0; n],
            u_hist: vec![0.0; n],
            k: 0,
            last_innovation: 0.0,
        })
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn samples_seen(&self) -> usize {
        self.k
    }

    /// Parameter vector `[a1..an, b1..bn]`.
    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn last_innovation(&self) -> f64 {
        self.last_innovation
    }

    fn regressor(&self) -> DVector<f64> {
        let mut x = DVector::zeros(2 * self.n);
        for i in 0..self.n {
            x[i] = -self.y_hist[i];
            x[self.n + i] = self.u_hist[i];
        }
        x
    }

    /// One weighted RLS step. The only division is the scalar gain
    /// denominator; no matrix is inverted.
    pub fn update(&mut self, u: f64, y: f64) -> Result<()> {
        if !(u.is_finite() && y.is_finite()) {
            return Err(Error::NonFinite { step: self.k, what: "rls sample".into() });
        }
        let x = self.regressor();
        let px = &self.p * &x;
        let denom = self.gamma + x.dot(&px);
        let gain = px / denom;
        let innovation = y - x.dot(&self.theta);
        self.theta += &gain * innovation;
        // P <- (I - K x') P / gamma, then symmetrize: the textbook update is
        // not symmetry-preserving in finite precision
        let kxp = &gain * (x.transpose() * &self.p);
        self.p = (&self.p - kxp) / self.gamma;
        let pt = self.p.transpose();
        self.p = (&self.p + pt) * 0.5;

        self.y_hist.rotate_right(1);
        self.y_hist[0] = y;
        self.u_hist.rotate_right(1);
        self.u_hist[0] = u;
        self.k += 1;
        self.last_innovation = innovation;
        Ok(())
    }

    /// Split into (a, b) coefficient vectors.
    pub fn coefficients(&self) -> (Vec<f64>, Vec<f64>) {
        let a = self.theta.as_slice()[..self.n].to_vec();
        let b = self.theta.as_slice()[self.n..].to_vec();
        (a, b)
    }
}

/// Batch least squares `theta = (X'X)^-1 X' phi` over the full record, the
/// non-recursive oracle. Rows start at k = n so every regressor is complete.
pub fn batch_ls(u: &[f64], y: &[f64], n: usize) -> Result<DVector<f64>> {
    if u.len() != y.len() {
        return Err(Error::Invalid("input and output must be the same length".into()));
    }
    let rows = y.len().saturating_sub(n);
    if rows < 2 * n {
        return Err(Error::Invalid(format!(
            "need at least {} samples for order {n}",
            3 * n
        )));
    }
    let mut x = DMatrix::zeros(rows, 2 * n);
    let mut phi = DVector::zeros(rows);
    for (r, k) in (n..y.len()).enumerate() {
        for i in 0..n {
            x[(r, i)] = -y[k - 1 - i];
            x[(r, n + i)] = u[k - 1 - i];
        }
        phi[r] = y[k];
    }
    let svd = x.svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0_f64, |a, &b| a.max(b));
    let smin = svd.singular_values.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !cond.is_finite() || cond > 1e10 {
        return Err(Error::RankDeficient { cond });
    }
    svd.solve(&phi, 0.0)
        .map_err(|e| Error::Invalid(e.to_string()))
}

/// Sum of squared residuals of an (a, b) parameterization on a record; the
/// criterion batch least squares minimizes.
pub fn residual_criterion(u: &[f64], y: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let mut j = 0.0;
    for k in n..y.len() {
        let mut pred = 0.0;
        for i in 0..n {
            pred += -a[i] * y[k - 1 - i] + b[i] * u[k - 1 - i];
        }
        let e = y[k] - pred;
        j += e * e;
    }
    j
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeKind {
    Multisine,
    Chirp,
    FilteredNoise,
}

/// Broadband probe-voltage specification. A literal constant source cannot
/// excite 2n parameters, so identification runs drive the boundary with a
/// broadband waveform whose content covers `[f_lo_hz, f_hi_hz]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub kind: ProbeKind,
    /// RMS amplitude, pu.
    pub amplitude: f64,
    pub f_lo_hz: f64,
    pub f_hi_hz: f64,
    /// Tone count for the multisine kind.
    pub tones: usize,
    pub duration_s: f64,
    pub dt_s: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            kind: ProbeKind::Multisine,
            amplitude: 0.05,
            f_lo_hz: 1.0,
            f_hi_hz: 600.0,
            tones: 60,
            duration_s: 2.0,
            dt_s: 5e-5,
            seed: 1,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.amplitude < 0.0 {
            return Err(Error::Invalid("probe amplitude must be >= 0".into()));
        }
        if !(self.f_lo_hz > 0.0 && self.f_lo_hz < self.f_hi_hz) {
            return Err(Error::Invalid("probe band must satisfy 0 < f_lo < f_hi".into()));
        }
        if self.f_hi_hz >= 0.5 / self.dt_s {
            return Err(Error::Invalid("probe band exceeds the Nyquist limit".into()));
        }
        if self.duration_s <= 0.0 || self.dt_s <= 0.0 {
            return Err(Error::Invalid("probe duration and dt must be positive".into()));
        }
        if self.kind == ProbeKind::Multisine && self.tones == 0 {
            return Err(Error::Invalid("multisine needs at least one tone".into()));
        }
        Ok(())
    }

    pub fn samples(&self) -> usize {
        (self.duration_s / self.dt_s).round() as usize
    }

    /// Multisine tone frequencies, log spaced so the low end of the band
    /// (where an inductive port has most of its dynamics) is covered as
    /// densely as the top.
    pub fn tone_frequencies(&self) -> Vec<f64> {
        let k = self.tones;
        (0..k)
            .map(|i| {
                if k == 1 {
                    self.f_lo_hz
                } else {
                    let r = i as f64 / (k - 1) as f64;
                    self.f_lo_hz * (self.f_hi_hz / self.f_lo_hz).powf(r)
                }
            })
            .collect()
    }
}

/// Deterministic (seeded) probe voltage waveform with the configured RMS
/// amplitude and spectral content.
pub fn generate_probe(cfg: &ProbeConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n = cfg.samples();
    if cfg.amplitude == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = vec![0.0; n];
    match cfg.kind {
        ProbeKind::Multisine => {
            let k = cfg.tones;
            let amp = cfg.amplitude * (2.0 / k as f64).sqrt();
            let tones: Vec<(f64, f64)> = cfg
                .tone_frequencies()
                .iter()
                .map(|f| {
                    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                    (std::f64::consts::TAU * f, phase)
                })
                .collect();
            for (s, v) in out.iter_mut().enumerate() {
                let t = s as f64 * cfg.dt_s;
                *v = tones.iter().map(|(w, p)| amp * (w * t + p).cos()).sum();
            }
        }
        ProbeKind::Chirp => {
            let a = cfg.amplitude * 2.0_f64.sqrt();
            let rate = (cfg.f_hi_hz - cfg.f_lo_hz) / cfg.duration_s;
            for (s, v) in out.iter_mut().enumerate() {
                let t = s as f64 * cfg.dt_s;
                let phase = std::f64::consts::TAU * (cfg.f_lo_hz * t + 0.5 * rate * t * t);
                *v = a * phase.cos();
            }
        }
        ProbeKind::FilteredNoise => {
            // white noise -> one-pole low pass at f_hi -> one-pole high pass
            // at f_lo, then RMS normalization
            let a_lp = (-std::f64::consts::TAU * cfg.f_hi_hz * cfg.dt_s).exp();
            let a_hp = (-std::f64::consts::TAU * cfg.f_lo_hz * cfg.dt_s).exp();
            let (mut lp, mut hp_prev_in, mut hp) = (0.0, 0.0, 0.0);
            for v in out.iter_mut() {
                let w: f64 = rng.gen_range(-1.0..1.0);
                lp = a_lp * lp + (1.0 - a_lp) * w;
                hp = a_hp * (hp + lp - hp_prev_in);
                hp_prev_in = lp;
                *v = hp;
            }
            let rms = (out.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
            if rms > 0.0 {
                let scale = cfg.amplitude / rms;
                out.iter_mut().for_each(|x| *x *= scale);
            }
        }
    }
    Ok(out)
}

/// Convergence/fit diagnostics of an identification run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    /// RMS of the one-step innovation over the final 10% of samples.
    pub innovation_rms: f64,
    /// RMS of the output over the same tail, for scale.
    pub output_rms: f64,
    /// Largest per-coefficient variance over the final 10% of samples.
    pub tail_variance: f64,
    pub converged: bool,
    /// Moduli of the identified denominator roots.
    pub pole_moduli: Vec<f64>,
    pub stable: bool,
    pub samples: usize,
}

/// Tail variance below this declares the coefficient trajectory converged.
pub const CONVERGENCE_TAIL_VARIANCE: f64 = 1e-10;

/// Identify the external-area port admittance as an order-`n` discrete-time
/// model: the probe network (machine EMFs shorted, constant-current loads
/// opened, constant-impedance loads kept) is driven at the boundary bus by
/// the probe voltage inside the EMT solver, and the boundary (V_b, I_b)
/// record is fed through weighted RLS.
///
/// Both channels pass through the same first-order lowpass before the fit.
/// For an exact model a common filter cancels and changes nothing; with the
/// inevitable undermodeling it moves the equation-error weight down toward
/// the lower decades, where an inductive port has its largest admittance
/// and where the unfiltered fit is visibly biased.
pub fn identify_fdne(
    case: &CaseFile,
    probe: &ProbeConfig,
    n: usize,
    gamma: f64,
    p0: f64,
) -> Result<(FdneCoefficients, FitReport)> {
    probe.validate()?;
    if case.partition.external.is_empty() {
        return Err(Error::Invalid("external area is empty".into()));
    }
    let boundary = case.partition.boundary;
    let (u, y) = probe_response(case, probe)?;

    let fc = probe.f_hi_hz / 6.0;
    let pole = (-std::f64::consts::TAU * fc * probe.dt_s).exp();
    let (mut uf, mut yf) = (prefilter(&u, pole), prefilter(&y, pole));

    // ill-damped modes of the external network above the probe band ring
    // through the whole record and drag the fit toward them; a common
    // notch on both channels removes that energy without biasing the
    // in-band relation
    for f in ring_frequencies(case, probe)? {
        uf = notch(&uf, f, probe.dt_s);
        yf = notch(&yf, f, probe.dt_s);
    }

    let (mut coeffs, report) = identify_from_record(&uf, &yf, n, gamma, p0, probe.dt_s, boundary)?;
    coeffs.port_capacitance = port_charging_capacitance(case);
    if let Some((r, l, c)) = port_damping_branch(case, probe)? {
        coeffs.damping_r = r;
        coeffs.damping_l = l;
        coeffs.damping_c = c;
    }
    Ok((coeffs, report))
}

/// Series R-L-C damping branch for the reduced runs, tuned onto the sharp
/// resonances both sides of the interface have above the probe band.
///
/// The fit carries no information up there, so replaying the model through
/// the one-step-delay current hook turns whatever admittance it happens to
/// have into a feedback loop with the (equally resonant) study side. A
/// resistive path across the critical band keeps that loop gain below one
/// while drawing almost nothing at power frequencies.
fn port_damping_branch(case: &CaseFile, probe: &ProbeConfig) -> Result<Option<(f64, f64, f64)>> {
    let mut peaks = ring_frequencies(case, probe)?;
    peaks.extend(study_resonances(case, probe)?);
    if peaks.is_empty() {
        return Ok(None);
    }
    let fmin = peaks.iter().cloned().fold(f64::INFINITY, f64::min);
    let fmax = peaks.iter().cloned().fold(0.0_f64, f64::max);
    let (lo, hi) = (0.75 * fmin, 1.3 * fmax);
    let fc = (lo * hi).sqrt();
    let q = (fc / (hi - lo)).clamp(0.4, 3.0);
    let r = 0.15;
    let x = r * q;
    let w = std::f64::consts::TAU * fc;
    Ok(Some((r, x / w, 1.0 / (x * w))))
}

/// Frequencies where the study side presents a sharp impedance peak at the
/// boundary, above the probe band.
fn study_resonances(case: &CaseFile, probe: &ProbeConfig) -> Result<Vec<f64>> {
    let b = case.partition.boundary;
    let subset = case.study_with_boundary();
    let opts = crate::netmodel::AdmittanceOptions {
        include_machine_reactance: true,
        loads: crate::netmodel::LoadTreatment::ConstantImpedance,
    };
    let nyq = 0.5 / probe.dt_s;
    let lo = 1.2 * probe.f_hi_hz;
    let hi = 0.9 * nyq;
    if lo >= hi || subset.len() < 2 {
        return Ok(Vec::new());
    }
    let n = 240usize;
    let mut mags = Vec::with_capacity(n);
    let mut grid = Vec::with_capacity(n);
    for i in 0..n {
        let f = lo * (hi / lo).powf(i as f64 / (n - 1) as f64);
        let y = crate::netmodel::build_admittance(
            case,
            &subset,
            std::f64::consts::TAU * f,
            opts,
        )?;
        let red = crate::netmodel::kron_reduce(&y, &[b])?;
        mags.push(red.matrix()[(0, 0)].inv().norm());
        grid.push(f);
    }
    let mut out = Vec::new();
    for i in 1..n - 1 {
        if mags[i] > 20.0 && mags[i] >= mags[i - 1] && mags[i] >= mags[i + 1] {
            out.push(grid[i]);
        }
    }
    out.truncate(4);
    Ok(out)
}

/// Frequencies of sharp admittance peaks above the probe band, mapped to
/// where the trapezoidal discretization actually places them.
fn ring_frequencies(case: &CaseFile, probe: &ProbeConfig) -> Result<Vec<f64>> {
    let cport = port_charging_capacitance(case);
    let nyq = 0.5 / probe.dt_s;
    let lo = 1.2 * probe.f_hi_hz;
    let hi = 0.9 * nyq;
    if lo >= hi {
        return Ok(Vec::new());
    }
    let n = 240usize;
    let grid: Vec<f64> = (0..n)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
        .collect();
    let sweep = crate::netmodel::port_admittance_sweep(case, case.partition.boundary, &grid)?;
    let mag: Vec<f64> = grid
        .iter()
        .zip(sweep.iter())
        .map(|(f, y)| (y - Complex64::new(0.0, std::f64::consts::TAU * f * cport)).norm())
        .collect();
    let mut out = Vec::new();
    for i in 1..n - 1 {
        if mag[i] > 20.0 && mag[i] >= mag[i - 1] && mag[i] >= mag[i + 1] {
            // refine the peak, then prewarp to the discrete-time axis
            let mut best = (grid[i], mag[i]);
            let (a, b) = (grid[i - 1], grid[i + 1]);
            for j in 0..=80 {
                let f = a + (b - a) * j as f64 / 80.0;
                let y = crate::netmodel::port_admittance_sweep(
                    case,
                    case.partition.boundary,
                    &[f],
                )?[0];
                let m = (y - Complex64::new(0.0, std::f64::consts::TAU * f * cport)).norm();
                if m > best.1 {
                    best = (f, m);
                }
            }
            let warped = (std::f64::consts::PI * best.0 * probe.dt_s).atan()
                / (std::f64::consts::PI * probe.dt_s);
            out.push(warped);
        }
    }
    out.truncate(4);
    Ok(out)
}

/// Unit-circle zero pair at `f_hz` with poles pulled slightly inside, so a
/// narrow band around the frequency is removed and the rest passes.
fn notch(x: &[f64], f_hz: f64, dt: f64) -> Vec<f64> {
    let w = std::f64::consts::TAU * f_hz * dt;
    let r = 0.98;
    let (b1, a1, a2) = (-2.0 * w.cos(), -2.0 * r * w.cos(), r * r);
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    x.iter()
        .map(|&v| {
            let y = v + b1 * x1 + x2 - a1 * y1 - a2 * y2;
            x2 = x1;
            x1 = v;
            y2 = y1;
            y1 = y;
            y
        })
        .collect()
}

/// Charging capacitance the external branches hang directly on the
/// boundary bus. The probe network leaves it out (see
/// [`AssembleOptions::skip_charging_at`]) and it rides along with the
/// identified coefficients as a physical element instead.
pub fn port_charging_capacitance(case: &CaseFile) -> f64 {
    let b = case.partition.boundary;
    let subset = case.external_with_boundary();
    let omega0 = case.omega0();
    case.branches
        .iter()
        .filter(|br| {
            (br.from == b || br.to == b)
                && subset.contains(&br.from)
                && subset.contains(&br.to)
        })
        .map(|br| br.b_pu / 2.0 / omega0)
        .sum()
}

fn prefilter(x: &[f64], pole: f64) -> Vec<f64> {
    let mut s = 0.0;
    x.iter()
        .map(|&v| {
            s = pole * s + (1.0 - pole) * v;
            s
        })
        .collect()
}

/// Run the probe simulation and return the boundary (V_b, I_b) record.
pub fn probe_response(case: &CaseFile, probe: &ProbeConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let boundary = case.partition.boundary;
    let opts = AssembleOptions {
        subset: Some(case.external_with_boundary()),
        machines: MachineMode::ShortedToGround,
        include_constant_current_loads: false,
        skip_charging_at: Some(boundary),
    };
    let mut net = emtsim::build_network(case, &opts)?;
    let node = net.node_of(boundary)?;
    net.add_sampled_source("probe", node, generate_probe(probe)?);
    let config = SimConfig {
        dt: probe.dt_s,
        duration: probe.duration_s,
        f0: case.base_frequency_hz,
        fault: None,
    };
    let mut solver = Solver::new(net, config)?;
    let trace = solver.run(
        vec![],
        &[
            Tap::NodeVoltage(boundary),
            Tap::SourceCurrent("probe".into()),
        ],
    )?;
    let u = trace.channel(&format!("v:{boundary}")).unwrap().to_vec();
    let y = trace.channel("isrc:probe").unwrap().to_vec();
    Ok((u, y))
}

/// RLS identification over a prepared (input, output) record.
pub fn identify_from_record(
    u: &[f64],
    y: &[f64],
    n: usize,
    gamma: f64,
    p0: f64,
    dt: f64,
    port: crate::casefile::BusId,
) -> Result<(FdneCoefficients, FitReport)> {
    let mut rls = RlsState::init(n, p0, gamma)?;
    let total = u.len().min(y.len());
    let tail_start = total - total / 10;
    let mut tail_thetas: Vec<DVector<f64>> = Vec::with_capacity(total - tail_start);
    let mut innov_sq = 0.0;
    let mut out_sq = 0.0;
    let mut tail_count = 0usize;
    for k in 0..total {
        rls.update(u[k], y[k])?;
        if k >= tail_start {
            tail_thetas.push(rls.theta().clone());
            innov_sq += rls.last_innovation() * rls.last_innovation();
            out_sq += y[k] * y[k];
            tail_count += 1;
        }
    }
    let tail_variance = max_coefficient_variance(&tail_thetas);
    let (a, b) = rls.coefficients();
    let coeffs = FdneCoefficients {
        order: n,
        dt_s: dt,
        port,
        a,
        b,
        port_capacitance: 0.0,
        damping_r: 0.0,
        damping_l: 0.0,
        damping_c: 0.0,
    };
    let pole_moduli = coeffs.pole_moduli();
    let report = FitReport {
        innovation_rms: (innov_sq / tail_count.max(1) as f64).sqrt(),
        output_rms: (out_sq / tail_count.max(1) as f64).sqrt(),
        tail_variance,
        converged: tail_variance < CONVERGENCE_TAIL_VARIANCE,
        stable: pole_moduli.iter().all(|m| *m < 1.0),
        pole_moduli,
        samples: total,
    };
    Ok((coeffs, report))
}

fn max_coefficient_variance(thetas: &[DVector<f64>]) -> f64 {
    if thetas.len() < 2 {
        return f64::INFINITY;
    }
    let dim = thetas[0].len();
    let n = thetas.len() as f64;
    let mut worst = 0.0_f64;
    for i in 0..dim {
        let mean = thetas.iter().map(|t| t[i]).sum::<f64>() / n;
        let var = thetas.iter().map(|t| (t[i] - mean).powi(2)).sum::<f64>() / n;
        worst = worst.max(var);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Difference-equation simulator, the independent oracle for parameter
    /// recovery tests.
    fn simulate_arx(a: &[f64], b: &[f64], u: &[f64]) -> Vec<f64> {
        let n = a.len();
        let mut y = vec![0.0; u.len()];
        for k in 0..u.len() {
            let mut v = 0.0;
            for i in 0..n {
                if k > i {
                    v += -a[i] * y[k - 1 - i] + b[i] * u[k - 1 - i];
                }
            }
            y[k] = v;
        }
        y
    }

    fn prbs(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect()
    }

    #[test]
    fn init_shapes() {
        let s = RlsState::init(3, 1e6, 1.0).unwrap();
        assert_eq!(s.theta().len(), 6);
        assert_eq!(s.p.nrows(), 6);
        assert_eq!(s.p[(0, 0)], 1e6);
        assert_eq!(s.p[(0, 1)], 0.0);
    }

    #[test]
    fn zero_output_is_a_fixed_point() {
        let mut s = RlsState::init(2, 1e6, 1.0).unwrap();
        let u = prbs(100, 3);
        for &uk in &u {
            s.update(uk, 0.0).unwrap();
        }
        assert!(s.theta().iter().all(|c| *c == 0.0));
    }

    #[test]
    fn rejects_non_finite_sample() {
        let mut s = RlsState::init(1, 1e6, 1.0).unwrap();
        assert!(matches!(
            s.update(f64::NAN, 0.0),
            Err(Error::NonFinite { step: 0, .. })
        ));
    }

    #[test]
    fn first_order_recovery() {
        // y(k) = 0.5 y(k-1) + 0.25 u(k-1)  =>  a1 = -0.5, b1 = 0.25
        let a = [-0.5];
        let b = [0.25];
        let u = prbs(200, 7);
        let y = simulate_arx(&a, &b, &u);
        let mut s = RlsState::init(1, 1e6, 1.0).unwrap();
        for k in 0..u.len() {
            s.update(u[k], y[k]).unwrap();
        }
        assert!((s.theta()[0] + 0.5).abs() < 1e-6, "a1 {}", s.theta()[0]);
        assert!((s.theta()[1] - 0.25).abs() < 1e-6, "b1 {}", s.theta()[1]);
    }

    #[test]
    fn third_order_recovery() {
        // poles 0.9, 0.7, 0.5
        let a = [-2.1, 1.43, -0.315];
        let b = [0.5, -0.3, 0.1];
        let u = prbs(2000, 11);
        let y = simulate_arx(&a, &b, &u);
        let mut s = RlsState::init(3, 1e9, 1.0).unwrap();
        for k in 0..u.len() {
            s.update(u[k], y[k]).unwrap();
        }
        for (i, expect) in a.iter().chain(b.iter()).enumerate() {
            assert!(
                (s.theta()[i] - expect).abs() < 1e-6,
                "coefficient {i}: {} vs {expect}",
                s.theta()[i]
            );
        }
    }

    #[test]
    fn batch_exact_on_first_order() {
        let a = [-0.5];
        let b = [0.25];
        let u = prbs(100, 13);
        let y = simulate_arx(&a, &b, &u);
        let theta = batch_ls(&u, &y, 1).unwrap();
        assert!((theta[0] + 0.5).abs() < 1e-12);
        assert!((theta[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn batch_rejects_constant_input() {
        let u = vec![1.0; 200];
        let y = vec![0.5; 200];
        assert!(matches!(batch_ls(&u, &y, 2), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn rls_matches_batch_oracle() {
        let a = [-2.1, 1.43, -0.315];
        let b = [0.5, -0.3, 0.1];
        let u = prbs(3000, 17);
        let y = simulate_arx(&a, &b, &u);
        let batch = batch_ls(&u, &y, 3).unwrap();
        let mut s = RlsState::init(3, 1e9, 1.0).unwrap();
        for k in 0..u.len() {
            s.update(u[k], y[k]).unwrap();
        }
        let diff = (s.theta() - batch).amax();
        assert!(diff < 1e-8, "endpoint difference {diff}");
    }

    #[test]
    fn batch_minimizes_criterion() {
        let a = [-0.8, 0.15];
        let b = [0.4, 0.2];
        let u = prbs(500, 19);
        let mut y = simulate_arx(&a, &b, &u);
        // small deterministic disturbance so the minimum is strict
        for (k, v) in y.iter_mut().enumerate() {
            *v += 1e-3 * ((k as f64) * 0.7).sin();
        }
        let theta = batch_ls(&u, &y, 2).unwrap();
        let a_hat = [theta[0], theta[1]];
        let b_hat = [theta[2], theta[3]];
        let j0 = residual_criterion(&u, &y, &a_hat, &b_hat);
        for i in 0..4 {
            for sign in [-1.0, 1.0] {
                let mut a2 = a_hat;
                let mut b2 = b_hat;
                if i < 2 {
                    a2[i] += sign * 1e-3;
                } else {
                    b2[i - 2] += sign * 1e-3;
                }
                let j = residual_criterion(&u, &y, &a2, &b2);
                assert!(j > j0, "perturbation {i}/{sign} did not increase J");
            }
        }
    }

    #[test]
    fn forgetting_factor_tracks_a_switch() {
        // system switches at mid-record; gamma < 1 re-converges faster
        let u = prbs(4000, 23);
        let y1 = simulate_arx(&[-0.5], &[0.25], &u[..2000]);
        let mut y2 = simulate_arx(&[-0.8], &[0.5], &u[2000..]);
        let mut y = y1;
        y.append(&mut y2);

        let reconvergence = |gamma: f64| -> usize {
            let mut s = RlsState::init(1, 1e6, gamma).unwrap();
            let mut settled = usize::MAX;
            for k in 0..u.len() {
                s.update(u[k], y[k]).unwrap();
                if k > 2000 {
                    let err = (s.theta()[0] + 0.8).abs() + (s.theta()[1] - 0.5).abs();
                    if err < 1e-2 {
                        settled = settled.min(k - 2000);
                    }
                }
            }
            settled
        };
        let fast = reconvergence(0.98);
        let slow = reconvergence(1.0);
        assert!(
            fast < slow,
            "gamma 0.98 settled in {fast} samples, gamma 1.0 in {slow}"
        );
    }

    #[test]
    fn multisine_has_flat_tone_peaks() {
        let cfg = ProbeConfig {
            kind: ProbeKind::Multisine,
            amplitude: 1.0,
            f_lo_hz: 10.0,
            f_hi_hz: 500.0,
            tones: 20,
            duration_s: 1.0,
            dt_s: 5e-4,
            seed: 5,
        };
        let x = generate_probe(&cfg).unwrap();
        let n = x.len();
        // tones do not land on the DFT grid of a 1 s record, so correlate
        // at the exact tone frequencies instead
        let mut mags = Vec::new();
        for f in cfg.tone_frequencies() {
            let w = std::f64::consts::TAU * f;
            let (mut c, mut s) = (0.0, 0.0);
            for (k, v) in x.iter().enumerate() {
                let t = k as f64 * cfg.dt_s;
                c += v * (w * t).cos();
                s += v * (w * t).sin();
            }
            mags.push(((c * c + s * s).sqrt()) * 2.0 / n as f64);
        }
        let max = mags.iter().cloned().fold(0.0_f64, f64::max);
        let min = mags.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(
            20.0 * (max / min).log10() < 3.0,
            "tone spread {} dB",
            20.0 * (max / min).log10()
        );
        // RMS amplitude as configured
        let rms = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        assert!((rms - 1.0).abs() < 0.05, "rms {rms}");
    }

    #[test]
    fn zero_amplitude_probe_is_zero() {
        let cfg = ProbeConfig { amplitude: 0.0, ..Default::default() };
        assert!(generate_probe(&cfg).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn probe_is_deterministic_per_seed() {
        let cfg = ProbeConfig::default();
        assert_eq!(generate_probe(&cfg).unwrap(), generate_probe(&cfg).unwrap());
        let other = ProbeConfig { seed: 2, ..Default::default() };
        assert_ne!(generate_probe(&cfg).unwrap(), generate_probe(&other).unwrap());
    }

    #[test]
    fn probe_band_must_respect_nyquist() {
        let cfg = ProbeConfig { f_hi_hz: 20_000.0, ..Default::default() };
        assert!(generate_probe(&cfg).is_err());
    }
}

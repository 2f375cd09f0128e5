//! Frequency-domain helpers: amplitude spectra of sampled traces, peak
//! picking for ancilla frequency guesses, and Lorentzian spectrum curves.

use std::f64::consts::PI;

use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::lindblad::{ObservableTrace, SamplingGrid};
use crate::linalg::C64;
use crate::models::{AncillaSpec, LorentzianSpectrum};

/// Default peak threshold as a fraction of the largest amplitude.
pub const DEFAULT_MIN_PROMINENCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Window {
    #[default]
    Rectangular,
    Hann,
}

/// One-sided `|DFT|` of a mean-removed trace on `ω_j = 2πj/(KΔt)`,
/// `j = 0..=⌊K/2⌋`.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeSpectrum {
    pub frequencies: Vec<f64>,
    pub amplitudes: Vec<f64>,
    /// `2π/(KΔt)`.
    pub bin_width: f64,
    /// Length `K` of the transformed sequence.
    pub n_samples: usize,
}

impl AmplitudeSpectrum {
    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    /// `Σ_j c_j |X_j|²` with `c_j = 2` for bins that stand for a conjugate
    /// pair; equals `K Σ_k (y_k − ȳ)²` for an unwindowed trace.
    pub fn one_sided_energy(&self) -> f64 {
        let k = self.n_samples;
        self.amplitudes
            .iter()
            .enumerate()
            .map(|(j, a)| {
                let paired = j != 0 && !(k % 2 == 0 && j == k / 2);
                a * a * if paired { 2.0 } else { 1.0 }
            })
            .sum()
    }
}

/// [`dft_trace_with`] with a rectangular window.
pub fn dft_trace(trace: &ObservableTrace, grid: &SamplingGrid) -> Result<AmplitudeSpectrum> {
    dft_trace_with(trace, grid, Window::Rectangular)
}

pub fn dft_trace_with(trace: &ObservableTrace, grid: &SamplingGrid, window: Window) -> Result<AmplitudeSpectrum> {
    let k = trace.len();
    if k != grid.len() {
        return Err(Error::invalid(format!("trace has {k} samples, grid has {}", grid.len())));
    }
    if k < 8 {
        return Err(Error::invalid(format!("need at least 8 samples for a spectrum, got {k}")));
    }
    if trace.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("trace contains non-finite samples"));
    }
    let mean = trace.values.iter().sum::<f64>() / k as f64;
    let mut buf: Vec<C64> = trace
        .values
        .iter()
        .enumerate()
        .map(|(i, y)| {
            let w = match window {
                Window::Rectangular => 1.0,
                Window::Hann => 0.5 - 0.5 * (2.0 * PI * i as f64 / k as f64).cos(),
            };
            C64::new((y - mean) * w, 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(k).process(&mut buf);
    let bin_width = 2.0 * PI / (k as f64 * grid.dt());
    let half = k / 2;
    Ok(AmplitudeSpectrum {
        frequencies: (0..=half).map(|j| j as f64 * bin_width).collect(),
        amplitudes: buf[..=half].iter().map(|z| z.norm()).collect(),
        bin_width,
        n_samples: k,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    /// Refined angular frequency.
    pub frequency: f64,
    /// Refined amplitude.
    pub amplitude: f64,
    /// Index of the local-maximum bin.
    pub bin: usize,
}

/// Local maxima at or above `min_prominence × max`, refined by a parabola
/// through the bin and its neighbours, strongest first.
pub fn detect_peaks(spectrum: &AmplitudeSpectrum, min_prominence: f64) -> Result<Vec<Peak>> {
    if !(min_prominence > 0.0 && min_prominence < 1.0) {
        return Err(Error::invalid(format!("min_prominence must lie in (0, 1), got {min_prominence}")));
    }
    let a = &spectrum.amplitudes;
    let n = a.len();
    let max = a.iter().copied().fold(0.0, f64::max);
    if n == 0 || max == 0.0 {
        return Ok(Vec::new());
    }
    let threshold = min_prominence * max;
    let mut peaks = Vec::new();
    for j in 1..n {
        let right = if j + 1 < n { a[j + 1] } else { f64::NEG_INFINITY };
        if a[j] > a[j - 1] && a[j] >= right && a[j] >= threshold {
            let (delta, amp) = if j + 1 < n {
                parabolic_offset(a[j - 1], a[j], a[j + 1])
            } else {
                (0.0, a[j])
            };
            peaks.push(Peak {
                frequency: (j as f64 + delta) * spectrum.bin_width,
                amplitude: amp,
                bin: j,
            });
        }
    }
    peaks.sort_by(|x, y| y.amplitude.total_cmp(&x.amplitude).then(x.bin.cmp(&y.bin)));
    Ok(peaks)
}

/// Vertex of the parabola through `(−1, l)`, `(0, c)`, `(1, r)`.
fn parabolic_offset(l: f64, c: f64, r: f64) -> (f64, f64) {
    let denom = l - 2.0 * c + r;
    if denom == 0.0 {
        return (0.0, c);
    }
    let delta = (0.5 * (l - r) / denom).clamp(-0.5, 0.5);
    (delta, c - 0.25 * (l - r) * delta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuessStatus {
    Ok,
    /// Only the qubit line (or nothing) was found.
    NoResidualPeaks,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuessReport {
    /// Every detected peak, strongest first.
    pub peak_frequencies: Vec<f64>,
    /// Number of ancillas suggested, `omega_guesses.len()`.
    pub suggested_r: usize,
    /// Ancilla frequency guesses in increasing order.
    pub omega_guesses: Vec<f64>,
    /// The qubit line that was set aside, if any peak was found.
    pub qubit_peak: Option<f64>,
    pub bin_width: f64,
    pub status: GuessStatus,
}

/// [`initial_guess_with`] at the default prominence.
pub fn initial_guess(spectrum: &AmplitudeSpectrum, known_qubit_omega: f64) -> Result<GuessReport> {
    initial_guess_with(spectrum, known_qubit_omega, DEFAULT_MIN_PROMINENCE)
}

/// Sets aside the peak nearest `known_qubit_omega` and proposes one ancilla
/// per remaining peak. Damping and coupling guesses are left to the user.
pub fn initial_guess_with(
    spectrum: &AmplitudeSpectrum,
    known_qubit_omega: f64,
    min_prominence: f64,
) -> Result<GuessReport> {
    if !known_qubit_omega.is_finite() {
        return Err(Error::invalid("qubit frequency is not finite"));
    }
    let peaks = detect_peaks(spectrum, min_prominence)?;
    let qubit = peaks
        .iter()
        .enumerate()
        .min_by(|a, b| {
            (a.1.frequency - known_qubit_omega)
                .abs()
                .total_cmp(&(b.1.frequency - known_qubit_omega).abs())
        })
        .map(|(i, _)| i);
    let mut omega_guesses: Vec<f64> = peaks
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != qubit)
        .map(|(_, p)| p.frequency)
        .collect();
    omega_guesses.sort_by(f64::total_cmp);
    let status = if omega_guesses.is_empty() {
        log::warn!("no spectral lines besides the qubit line; suggesting R = 0");
        GuessStatus::NoResidualPeaks
    } else {
        GuessStatus::Ok
    };
    Ok(GuessReport {
        peak_frequencies: peaks.iter().map(|p| p.frequency).collect(),
        suggested_r: omega_guesses.len(),
        qubit_peak: qubit.map(|i| peaks[i].frequency),
        omega_guesses,
        bin_width: spectrum.bin_width,
        status,
    })
}

/// `λ − ω₀ − Σ_r μ_r² / (λ − ω_r)`; its roots are the normal-mode
/// frequencies of a qubit line at `ω₀` coupled to ancillas at `ω_r`.
pub fn secular(lambda: f64, omega_0: f64, omegas: &[f64], mu: &[f64]) -> f64 {
    lambda - omega_0 - omegas.iter().zip(mu).map(|(w, m)| m * m / (lambda - w)).sum::<f64>()
}

/// Bare ancilla frequencies whose hybridisation with the qubit line puts the
/// normal modes at `dressed`.
///
/// Spectral lines of a strongly coupled trace sit at the dressed modes, not
/// at the ancilla frequencies. Given coupling guesses `mu` (paired with
/// `dressed` in increasing frequency order) this inverts the secular equation
/// of the Hermitian part by damped Newton iteration; damping shifts are
/// ignored.
pub fn undress_frequencies(dressed: &[f64], omega_0: f64, mu: &[f64]) -> Result<Vec<f64>> {
    let r = dressed.len();
    if mu.len() != r {
        return Err(Error::invalid(format!("{} couplings for {r} dressed lines", mu.len())));
    }
    if dressed.iter().chain(mu).chain([&omega_0]).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite frequency or coupling"));
    }
    if r == 0 {
        return Ok(Vec::new());
    }
    let residual = |w: &[f64]| -> Vec<f64> { dressed.iter().map(|&l| secular(l, omega_0, w, mu)).collect() };
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    // each bare mode lies between its dressed line and the qubit line
    let mut w: Vec<f64> = dressed.iter().map(|&l| 0.5 * (l + omega_0)).collect();
    let mut f = residual(&w);
    for _ in 0..200 {
        if norm(&f) <= 1e-12 * (1.0 + omega_0.abs()) {
            return Ok(w);
        }
        let jac = ndarray::Array2::from_shape_fn((r, r), |(i, k)| C64::new(-(mu[k] / (dressed[i] - w[k])).powi(2), 0.0));
        let rhs = ndarray::Array2::from_shape_fn((r, 1), |(i, _)| C64::new(-f[i], 0.0));
        let step = crate::linalg::solve(&jac, &rhs)?;
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = w.iter().enumerate().map(|(k, wk)| wk + t * step[[k, 0]].re).collect();
            let ft = residual(&trial);
            if ft.iter().all(|v| v.is_finite()) && norm(&ft) < norm(&f) {
                w = trial;
                f = ft;
                break;
            }
            t *= 0.5;
            if t < 1e-12 {
                return Err(Error::numerical("undressing did not converge"));
            }
        }
    }
    Err(Error::numerical("undressing did not converge within 200 iterations"))
}

/// Sampled identified (and optionally true) environment spectra.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumCurve {
    pub omega: Vec<f64>,
    pub identified: Vec<f64>,
    pub truth: Option<Vec<f64>>,
}

impl SpectrumCurve {
    /// `max_ω |S_id − S_true| / S_true`, if a truth curve is present.
    pub fn max_relative_deviation(&self) -> Option<f64> {
        self.truth.as_ref().map(|t| {
            self.identified
                .iter()
                .zip(t)
                .map(|(s, st)| (s - st).abs() / st.abs())
                .fold(0.0, f64::max)
        })
    }
}

/// Evaluates `S(ω)` for `identified` (and `truth`) on `n_points` uniform
/// points of `[omega_range.0, omega_range.1]`.
pub fn reconstruct_spectrum(
    identified: &[AncillaSpec],
    truth: Option<&[AncillaSpec]>,
    omega_range: (f64, f64),
    n_points: usize,
) -> Result<SpectrumCurve> {
    let (lo, hi) = omega_range;
    if n_points < 2 {
        return Err(Error::invalid("a spectrum curve needs at least 2 points"));
    }
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(Error::invalid(format!("invalid frequency range [{lo}, {hi}]")));
    }
    let omega: Vec<f64> = (0..n_points)
        .map(|i| lo + (hi - lo) * i as f64 / (n_points - 1) as f64)
        .collect();
    let sample = |ancillas: &[AncillaSpec]| -> Result<Vec<f64>> {
        let s = LorentzianSpectrum::from_ancillas(ancillas)?;
        Ok(omega.iter().map(|&w| s.eval(w)).collect())
    };
    Ok(SpectrumCurve {
        identified: sample(identified)?,
        truth: truth.map(sample).transpose()?,
        omega,
    })
}

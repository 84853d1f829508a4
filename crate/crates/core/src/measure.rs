//! Waveform measurements and tuning-regime classification.

use std::fmt;

use thiserror::Error;

use crate::netlist::MeasureSpec;
use crate::solver::Waveform;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasureError {
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("measurement window [{0:e}, {1:e}] contains no samples")]
    EmptyWindow(f64, f64),
    #[error("input peak-to-peak voltage is zero")]
    ZeroInput,
    #[error("waveform has no independent sources")]
    NoSources,
    #[error("resistance must be positive, got {0} ohm")]
    NonPositiveResistance(f64),
}

/// Closed time interval `[start, stop]` in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub start: f64,
    pub stop: f64,
}

/// Trailing half of the run, shortened to a whole number of periods when
/// exactly one sinusoidal source drives the circuit.
pub fn default_window(w: &Waveform) -> Window {
    let (Some(&first), Some(&last)) = (w.times.first(), w.times.last()) else {
        return Window {
            start: 0.0,
            stop: 0.0,
        };
    };
    let mut span = (last - first) / 2.0;
    if let [freq] = w.sine_freqs[..] {
        let period = 1.0 / freq;
        let periods = (span / period + 1e-9).floor();
        if periods >= 1.0 {
            span = periods * period;
        }
    }
    Window {
        start: last - span,
        stop: last,
    }
}

fn window_indices(w: &Waveform, win: Window) -> Result<std::ops::Range<usize>, MeasureError> {
    let step = match w.times[..] {
        [a, b, ..] => b - a,
        _ => 1.0,
    };
    let eps = 1e-6 * step;
    let lo = w.times.partition_point(|&t| t < win.start - eps);
    let hi = w.times.partition_point(|&t| t <= win.stop + eps);
    if lo >= hi {
        return Err(MeasureError::EmptyWindow(win.start, win.stop));
    }
    Ok(lo..hi)
}

fn trace(w: &Waveform, node: &str) -> Result<Vec<f64>, MeasureError> {
    w.node_trace(node)
        .ok_or_else(|| MeasureError::UnknownNode(node.to_string()))
}

/// Peak-to-peak voltage: max minus min over the window.
pub fn vpp(w: &Waveform, node: &str, window: Option<Window>) -> Result<f64, MeasureError> {
    let v = trace(w, node)?;
    let range = window_indices(w, window.unwrap_or_else(|| default_window(w)))?;
    let samples = &v[range];
    let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(max - min)
}

/// Ratio of output to input peak-to-peak voltage over the default window.
pub fn gain_pp(w: &Waveform, in_node: &str, out_node: &str) -> Result<f64, MeasureError> {
    let vin = vpp(w, in_node, None)?;
    let vout = vpp(w, out_node, None)?;
    if vin == 0.0 {
        return Err(MeasureError::ZeroInput);
    }
    Ok(vout / vin)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerStats {
    /// Time average of total delivered source power.
    pub average: f64,
    /// Largest `|p(t)|` in the window.
    pub peak: f64,
}

/// Average and peak of the total power delivered by all independent sources.
///
/// The average is the trapezoidal time-average, which is exact for
/// sinusoids sampled uniformly over whole periods.
pub fn source_power(w: &Waveform, window: Option<Window>) -> Result<PowerStats, MeasureError> {
    if w.sources.is_empty() {
        return Err(MeasureError::NoSources);
    }
    let range = window_indices(w, window.unwrap_or_else(|| default_window(w)))?;
    let p = &w.total_source_power()[range.clone()];
    let t = &w.times[range];
    let peak = p.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let average = if p.len() == 1 {
        p[0]
    } else {
        let area: f64 = t
            .windows(2)
            .zip(p.windows(2))
            .map(|(t, p)| 0.5 * (t[1] - t[0]) * (p[0] + p[1]))
            .sum();
        area / (t[t.len() - 1] - t[0])
    };
    Ok(PowerStats { average, peak })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Measurement {
    Vpp { value: f64, window: Window },
    GainPp { value: f64, window: Window },
    Power { stats: PowerStats, window: Window },
}

/// Evaluate one `.measure` request over the default window.
pub fn evaluate(w: &Waveform, spec: &MeasureSpec) -> Result<Measurement, MeasureError> {
    let window = default_window(w);
    Ok(match spec {
        MeasureSpec::Vpp(node) => Measurement::Vpp {
            value: vpp(w, node, Some(window))?,
            window,
        },
        MeasureSpec::Gain { input, output } => Measurement::GainPp {
            value: gain_pp(w, input, output)?,
            window,
        },
        MeasureSpec::Power => Measurement::Power {
            stats: source_power(w, Some(window))?,
            window,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CaseLabel {
    /// R1 > R2.
    CaseI,
    /// R2 > R1.
    CaseII,
    /// R1 = R2.
    CaseIII,
}

impl fmt::Display for CaseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CaseLabel::CaseI => "Case I",
            CaseLabel::CaseII => "Case II",
            CaseLabel::CaseIII => "Case III",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Behavior {
    Attenuates,
    Amplifies,
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Behavior::Attenuates => "attenuates",
            Behavior::Amplifies => "amplifies",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuningCase {
    pub label: CaseLabel,
    /// `r2 / (r1 + r_x)`.
    pub predicted_gain: f64,
    pub behavior: Behavior,
}

/// Classify an (R1, R2) setting of the single-conveyor amplifier.
///
/// The label depends only on the order of `r1` and `r2`; the behavior on
/// whether the parasitic gain `r2 / (r1 + r_x)` exceeds one.
pub fn classify_tuning(r1: f64, r2: f64, r_x: f64) -> Result<TuningCase, MeasureError> {
    for r in [r1, r2] {
        if !(r.is_finite() && r > 0.0) {
            return Err(MeasureError::NonPositiveResistance(r));
        }
    }
    if !(r_x.is_finite() && r_x >= 0.0) {
        return Err(MeasureError::NonPositiveResistance(r_x));
    }
    let label = if r1 > r2 {
        CaseLabel::CaseI
    } else if r2 > r1 {
        CaseLabel::CaseII
    } else {
        CaseLabel::CaseIII
    };
    let predicted_gain = r2 / (r1 + r_x);
    let behavior = if predicted_gain > 1.0 {
        Behavior::Amplifies
    } else {
        Behavior::Attenuates
    };
    Ok(TuningCase {
        label,
        predicted_gain,
        behavior,
    })
}

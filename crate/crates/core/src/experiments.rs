//! Amplifier testbenches and the figure/table reproduction runner.
//!
//! The single-conveyor amplifier drives the Y port with the input, puts R1
//! from X to ground and R2 from Z to ground. With the X-port current
//! convention of [`crate::devices`] the output at Z is
//! `V_out = sigma * R2 / (R1 + R_X) * V_in`, which is `R2 / R1` for an ideal
//! plus-type conveyor.

use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::devices::{CcciiParams, ModelLevel, Polarity, RxSpec, SourceWave};
use crate::measure::{self, Behavior, MeasureError, TuningCase};
use crate::netlist::{
    validate, Circuit, Directive, ElementDecl, MeasureSpec, NetlistDocument, NetlistError,
};
use crate::solver::{transient, NewtonOptions, SolveError, Waveform};

pub const IN_NODE: &str = "in";
pub const X_NODE: &str = "x";
pub const OUT_NODE: &str = "out";

/// Transient grid used by every reproduction run.
pub const TSTEP: f64 = 20e-6;
pub const TSTOP: f64 = 5e-3;

/// Input amplitude matching the 100 mVpp drive of the reference figures.
pub const INPUT_AMPLITUDE: f64 = 0.05;
pub const INPUT_FREQ: f64 = 1e3;

/// Reference input level and the reported output levels for the three
/// amplifier figures: (name, R1, R2, output Vpp).
pub const REFERENCE_VIN_PP: f64 = 0.1;
pub const REFERENCE_FIGURES: [(&str, f64, f64, f64); 3] = [
    ("fig6", 1e3, 100e3, 1.0),
    ("fig7", 2e3, 50e3, 0.8),
    ("fig8", 8e3, 15e3, 0.13),
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExperimentError {
    #[error("invalid amplifier spec: {0}")]
    InvalidSpec(String),
    #[error("gain {gain} is outside (0, {max}) and would need R_X <= 0")]
    GainOutOfRange { gain: f64, max: f64 },
    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),
    #[error(transparent)]
    Netlist(#[from] NetlistError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SineInput {
    pub offset: f64,
    pub amplitude: f64,
    pub freq: f64,
}

impl Default for SineInput {
    fn default() -> Self {
        Self {
            offset: 0.0,
            amplitude: INPUT_AMPLITUDE,
            freq: INPUT_FREQ,
        }
    }
}

impl SineInput {
    fn wave(&self) -> SourceWave {
        SourceWave::Sin {
            offset: self.offset,
            amplitude: self.amplitude,
            freq: self.freq,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmplifierSpec {
    /// X port to ground.
    pub r1: f64,
    /// Z port to ground.
    pub r2: f64,
    pub input: SineInput,
    pub cccii: CcciiParams,
}

impl AmplifierSpec {
    /// Ideal plus-type conveyor, default 50 mV / 1 kHz drive.
    pub fn ideal(r1: f64, r2: f64) -> Self {
        Self {
            r1,
            r2,
            input: SineInput::default(),
            cccii: CcciiParams::ideal(Polarity::Plus),
        }
    }

    /// Plus-type conveyor with explicit R_X, rail clamp at the default rails.
    pub fn clamped(r1: f64, r2: f64, rx: f64) -> Result<Self, ExperimentError> {
        let cccii = CcciiParams::ideal(Polarity::Plus)
            .with_level(ModelLevel::Clamped)
            .with_rx(RxSpec::Explicit(rx))
            .map_err(|e| ExperimentError::InvalidSpec(e.to_string()))?;
        Ok(Self {
            cccii,
            ..Self::ideal(r1, r2)
        })
    }

    fn check(&self) -> Result<(), ExperimentError> {
        for (name, r) in [("r1", self.r1), ("r2", self.r2)] {
            if !(r.is_finite() && r > 0.0) {
                return Err(ExperimentError::InvalidSpec(format!(
                    "{name} must be positive"
                )));
            }
        }
        if !(self.input.amplitude > 0.0) {
            return Err(ExperimentError::InvalidSpec(
                "amplitude must be positive".into(),
            ));
        }
        Ok(())
    }

    /// `R2 / (R1 + R_X)`, ignoring the clamp.
    pub fn closed_form_gain(&self) -> f64 {
        self.r2 / (self.r1 + self.cccii.rx_ohms())
    }
}

fn standard_directives(input: &str, output: &str) -> Vec<Directive> {
    vec![
        Directive::Tran {
            tstep: TSTEP,
            tstop: TSTOP,
        },
        Directive::Measure(MeasureSpec::Vpp(input.into())),
        Directive::Measure(MeasureSpec::Vpp(output.into())),
        Directive::Measure(MeasureSpec::Gain {
            input: input.into(),
            output: output.into(),
        }),
        Directive::Measure(MeasureSpec::Power),
    ]
}

/// Netlist of the single-conveyor tunable amplifier.
pub fn proposed_amplifier_netlist(
    spec: &AmplifierSpec,
) -> Result<NetlistDocument, ExperimentError> {
    spec.check()?;
    Ok(NetlistDocument {
        title: Some("single-conveyor tunable voltage amplifier".into()),
        elements: vec![
            ElementDecl::vsource("VIN", IN_NODE, "0", spec.input.wave()),
            ElementDecl::cccii("XCC", IN_NODE, X_NODE, OUT_NODE, spec.cccii),
            ElementDecl::resistor("R1", X_NODE, "0", spec.r1),
            ElementDecl::resistor("R2", OUT_NODE, "0", spec.r2),
        ],
        directives: standard_directives(IN_NODE, OUT_NODE),
    })
}

pub fn build_proposed_amplifier(spec: &AmplifierSpec) -> Result<Circuit, ExperimentError> {
    Ok(validate(&proposed_amplifier_netlist(spec)?)?)
}

/// Netlist of the two-conveyor comparison amplifier.
///
/// Conveyor A buffers the input onto its X port, so R1 (from A's X to B's X)
/// carries `V_in / R1`. Conveyor B holds its X port at ground through its
/// grounded Y and mirrors that current into R2 at its Z port. A's Z port
/// has no load and is left floating. Both conveyors are plus-type, so the
/// output is inverted with magnitude `R2 / R1`.
pub fn ferri_amplifier_netlist(
    r1: f64,
    r2: f64,
    input: SineInput,
) -> Result<NetlistDocument, ExperimentError> {
    AmplifierSpec {
        input,
        ..AmplifierSpec::ideal(r1, r2)
    }
    .check()?;
    let cc = CcciiParams::ideal(Polarity::Plus);
    Ok(NetlistDocument {
        title: Some("two-conveyor voltage amplifier".into()),
        elements: vec![
            ElementDecl::vsource("VIN", IN_NODE, "0", input.wave()),
            ElementDecl::cccii("XA", IN_NODE, "xa", "za", cc),
            ElementDecl::resistor("R1", "xa", "xb", r1),
            ElementDecl::cccii("XB", "0", "xb", OUT_NODE, cc),
            ElementDecl::resistor("R2", OUT_NODE, "0", r2),
        ],
        directives: standard_directives(IN_NODE, OUT_NODE),
    })
}

pub fn build_ferri_amplifier(
    r1: f64,
    r2: f64,
    input: SineInput,
) -> Result<Circuit, ExperimentError> {
    Ok(validate(&ferri_amplifier_netlist(r1, r2, input)?)?)
}

/// Invert `gain = r2 / (r1 + R_X)` for `R_X`.
pub fn calibrate_rx(gain_measured: f64, r1: f64, r2: f64) -> Result<f64, ExperimentError> {
    let max = r2 / r1;
    let rx = r2 / gain_measured - r1;
    if !(gain_measured > 0.0 && gain_measured < max && rx > 0.0) {
        return Err(ExperimentError::GainOutOfRange {
            gain: gain_measured,
            max,
        });
    }
    Ok(rx)
}

/// R_X fitted to the 8k/15k figure: 130 mVpp out for 100 mVpp in.
pub fn calibrated_rx() -> f64 {
    let (_, r1, r2, vout) = REFERENCE_FIGURES[2];
    calibrate_rx(vout / REFERENCE_VIN_PP, r1, r2).expect("reference gain is below R2/R1")
}

/// Transient run on the standard reproduction grid.
pub fn simulate(circuit: &Circuit) -> Result<Waveform, ExperimentError> {
    Ok(transient(circuit, TSTEP, TSTOP, &NewtonOptions::default())?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub name: String,
    pub r1: f64,
    pub r2: f64,
    pub rx: f64,
    pub level: ModelLevel,
    pub vin_pp: f64,
    pub measured_vpp_out: f64,
    pub predicted_vpp_out: f64,
    pub reference_vpp_out: Option<f64>,
    /// Set for the tuning-table rows.
    pub tuning: Option<TuningCase>,
}

impl ReportRow {
    /// `(measured - reference) / reference`.
    pub fn deviation(&self) -> Option<f64> {
        self.reference_vpp_out
            .map(|p| (self.measured_vpp_out - p) / p)
    }

    pub fn measured_gain(&self) -> f64 {
        self.measured_vpp_out / self.vin_pp
    }

    /// Behavior seen in simulation, comparable with `tuning.behavior`.
    pub fn simulated_behavior(&self) -> Behavior {
        if self.measured_gain() > 1.0 {
            Behavior::Amplifies
        } else {
            Behavior::Attenuates
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReproductionReport {
    pub rows: Vec<ReportRow>,
}

impl ReproductionReport {
    pub fn row(&self, name: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Experiment {
    /// R_X = 0, no clamp, all three figure settings.
    Ideal,
    Fig6,
    Fig7,
    Fig8,
    Table2,
    Ferri,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::Ideal,
        Experiment::Fig6,
        Experiment::Fig7,
        Experiment::Fig8,
        Experiment::Table2,
        Experiment::Ferri,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Ideal => "ideal",
            Experiment::Fig6 => "fig6",
            Experiment::Fig7 => "fig7",
            Experiment::Fig8 => "fig8",
            Experiment::Table2 => "table2",
            Experiment::Ferri => "ferri",
        }
    }

    /// Netlist the experiment simulates, for single-circuit experiments.
    pub fn netlist(self) -> Result<Option<NetlistDocument>, ExperimentError> {
        Ok(match self {
            Experiment::Fig6 | Experiment::Fig7 | Experiment::Fig8 => {
                let (_, r1, r2, _) = figure(self);
                Some(proposed_amplifier_netlist(&AmplifierSpec::clamped(
                    r1,
                    r2,
                    calibrated_rx(),
                )?)?)
            }
            Experiment::Ferri => Some(ferri_amplifier_netlist(1e3, 10e3, SineInput::default())?),
            Experiment::Ideal | Experiment::Table2 => None,
        })
    }

    pub fn run(self) -> Result<Vec<ReportRow>, ExperimentError> {
        match self {
            Experiment::Ideal => REFERENCE_FIGURES
                .iter()
                .map(|&(name, r1, r2, reference)| {
                    let spec = AmplifierSpec::ideal(r1, r2);
                    amplifier_row(&format!("{name}-ideal"), &spec, Some(reference))
                })
                .collect(),
            Experiment::Fig6 | Experiment::Fig7 | Experiment::Fig8 => {
                let (name, r1, r2, reference) = figure(self);
                let spec = AmplifierSpec::clamped(r1, r2, calibrated_rx())?;
                Ok(vec![amplifier_row(name, &spec, Some(reference))?])
            }
            Experiment::Table2 => {
                let rx = calibrated_rx();
                [
                    ("case1", 10e3, 1e3),
                    ("case2", 1e3, 100e3),
                    ("case3", 5e3, 5e3),
                ]
                .iter()
                .map(|&(name, r1, r2)| {
                    let spec = AmplifierSpec {
                        cccii: CcciiParams::ideal(Polarity::Plus)
                            .with_rx(RxSpec::Explicit(rx))
                            .map_err(|e| ExperimentError::InvalidSpec(e.to_string()))?,
                        ..AmplifierSpec::ideal(r1, r2)
                    };
                    let mut row = amplifier_row(&format!("table2-{name}"), &spec, None)?;
                    row.tuning = Some(measure::classify_tuning(r1, r2, rx)?);
                    Ok(row)
                })
                .collect()
            }
            Experiment::Ferri => {
                let (r1, r2) = (1e3, 10e3);
                let circuit = build_ferri_amplifier(r1, r2, SineInput::default())?;
                let w = simulate(&circuit)?;
                let vin_pp = measure::vpp(&w, IN_NODE, None)?;
                Ok(vec![ReportRow {
                    name: "ferri".into(),
                    r1,
                    r2,
                    rx: 0.0,
                    level: ModelLevel::Ideal,
                    vin_pp,
                    measured_vpp_out: measure::vpp(&w, OUT_NODE, None)?,
                    predicted_vpp_out: r2 / r1 * vin_pp,
                    reference_vpp_out: None,
                    tuning: None,
                }])
            }
        }
    }
}

impl FromStr for Experiment {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| ExperimentError::UnknownExperiment(s.to_string()))
    }
}

fn figure(e: Experiment) -> (&'static str, f64, f64, f64) {
    let i = match e {
        Experiment::Fig6 => 0,
        Experiment::Fig7 => 1,
        _ => 2,
    };
    REFERENCE_FIGURES[i]
}

/// Simulate the single-conveyor amplifier and summarize it as one row.
pub fn amplifier_row(
    name: &str,
    spec: &AmplifierSpec,
    reference_vpp_out: Option<f64>,
) -> Result<ReportRow, ExperimentError> {
    let w = simulate(&build_proposed_amplifier(spec)?)?;
    let vin_pp = measure::vpp(&w, IN_NODE, None)?;
    let mut predicted = spec.closed_form_gain() * vin_pp;
    if spec.cccii.level() == ModelLevel::Clamped {
        predicted = predicted.min(spec.cccii.vdd() - spec.cccii.vss());
    }
    Ok(ReportRow {
        name: name.to_string(),
        r1: spec.r1,
        r2: spec.r2,
        rx: spec.cccii.rx_ohms(),
        level: spec.cccii.level(),
        vin_pp,
        measured_vpp_out: measure::vpp(&w, OUT_NODE, None)?,
        predicted_vpp_out: predicted,
        reference_vpp_out,
        tuning: None,
    })
}

/// Run a set of experiments concurrently; rows keep the order of `experiments`.
pub fn run_experiments(experiments: &[Experiment]) -> Result<ReproductionReport, ExperimentError> {
    let chunks: Result<Vec<Vec<ReportRow>>, ExperimentError> =
        experiments.par_iter().map(|e| e.run()).collect();
    Ok(ReproductionReport {
        rows: chunks?.into_iter().flatten().collect(),
    })
}

/// Every experiment, in [`Experiment::ALL`] order.
pub fn run_reproduction() -> Result<ReproductionReport, ExperimentError> {
    run_experiments(&Experiment::ALL)
}

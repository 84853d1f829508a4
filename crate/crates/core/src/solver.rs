//! MNA assembly, dense LU, Newton iteration and quasi-static transient runs.

use thiserror::Error;

use crate::devices::{
    eval_clamp, stamp_cccii_linear, stamp_isource, stamp_resistor, stamp_vsource, ModelLevel,
    SourceWave, StampContribution, Terminal,
};
use crate::netlist::{Circuit, Element};

/// Relative pivot threshold below which the matrix is reported singular.
pub const PIVOT_TOL: f64 = 1e-13;
/// Maximum number of step halvings per damped Newton iteration.
pub const MAX_HALVINGS: u32 = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("singular matrix at pivot {pivot} (floating node or unsolvable topology)")]
    SingularMatrix { pivot: usize },
    #[error("no convergence after {iterations} Newton iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("invalid time grid: tstep={tstep:e}, tstop={tstop:e}")]
    InvalidTimeGrid { tstep: f64, tstop: f64 },
    #[error("at t = {time:e} s: {source}")]
    AtTime {
        time: f64,
        #[source]
        source: Box<SolveError>,
    },
}

/// Dense square system `A x = b`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrix {
    dim: usize,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl SystemMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            a: vec![0.0; dim * dim],
            b: vec![0.0; dim],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>], rhs: &[f64]) -> Self {
        let dim = rhs.len();
        assert!(rows.len() == dim && rows.iter().all(|r| r.len() == dim));
        Self {
            dim,
            a: rows.concat(),
            b: rhs.to_vec(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.a[row * self.dim + col]
    }

    pub fn rhs(&self) -> &[f64] {
        &self.b
    }

    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        self.a[row * self.dim + col] += value;
    }

    pub fn add_rhs(&mut self, row: usize, value: f64) {
        self.b[row] += value;
    }

    pub fn apply(&mut self, stamp: &StampContribution) {
        for &(r, c, v) in &stamp.matrix {
            self.add(r, c, v);
        }
        for &(r, v) in &stamp.rhs {
            self.add_rhs(r, v);
        }
    }

    /// `A x - b`.
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| {
                let row = &self.a[i * self.dim..(i + 1) * self.dim];
                row.iter().zip(x).map(|(a, x)| a * x).sum::<f64>() - self.b[i]
            })
            .collect()
    }

    /// Infinity norm (max absolute row sum) of `A`.
    pub fn norm_inf(&self) -> f64 {
        self.a
            .chunks(self.dim.max(1))
            .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// Solve `A x = b` by LU factorization with partial pivoting.
pub fn lu_solve(system: &SystemMatrix) -> Result<Vec<f64>, SolveError> {
    let n = system.dim;
    let mut a = system.a.clone();
    let mut x = system.b.clone();
    let tol = PIVOT_TOL * system.norm_inf();
    for k in 0..n {
        let (p, pmax) = (k..n)
            .map(|i| (i, a[i * n + k].abs()))
            .fold(
                (k, -1.0),
                |best, cur| if cur.1 > best.1 { cur } else { best },
            );
        if !(pmax > tol) {
            return Err(SolveError::SingularMatrix { pivot: k });
        }
        if p != k {
            for j in 0..n {
                a.swap(k * n + j, p * n + j);
            }
            x.swap(k, p);
        }
        let pivot = a[k * n + k];
        for i in k + 1..n {
            let f = a[i * n + k] / pivot;
            if f == 0.0 {
                continue;
            }
            a[i * n + k] = f;
            for j in k + 1..n {
                a[i * n + j] -= f * a[k * n + j];
            }
            x[i] -= f * x[k];
        }
    }
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k * n + j] * x[j]).sum();
        x[k] = (x[k] - s) / a[k * n + k];
    }
    Ok(x)
}

/// Node voltages and branch currents at one timepoint. Ground is implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub voltages: Vec<f64>,
    pub currents: Vec<f64>,
    pub time: f64,
}

impl Solution {
    pub fn zeros(circuit: &Circuit) -> Self {
        Self {
            voltages: vec![0.0; circuit.node_count()],
            currents: vec![0.0; circuit.branch_count()],
            time: 0.0,
        }
    }

    pub fn from_vector(circuit: &Circuit, x: &[f64], time: f64) -> Self {
        let n = circuit.node_count();
        Self {
            voltages: x[..n].to_vec(),
            currents: x[n..].to_vec(),
            time,
        }
    }

    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = self.voltages.clone();
        v.extend_from_slice(&self.currents);
        v
    }

    pub fn voltage(&self, circuit: &Circuit, label: &str) -> Option<f64> {
        if !circuit.has_node(label) {
            return None;
        }
        Some(self.at(circuit.node_index(label)))
    }

    /// Voltage of a resolved terminal.
    pub fn at(&self, t: Terminal) -> f64 {
        t.map_or(0.0, |i| self.voltages[i])
    }

    /// Current of a branch unknown given by its system index.
    pub fn branch(&self, branch: usize) -> f64 {
        self.currents[branch - self.voltages.len()]
    }
}

fn linear_system(circuit: &Circuit, t: f64) -> SystemMatrix {
    let mut sys = SystemMatrix::zeros(circuit.dimension());
    for e in circuit.elements() {
        let stamp = match e {
            Element::Resistor { pos, neg, r, .. } => {
                stamp_resistor(*pos, *neg, *r).expect("resistance checked during validation")
            }
            Element::VSource {
                pos,
                neg,
                wave,
                branch,
                ..
            } => stamp_vsource(*pos, *neg, *branch, wave.value_at(t)),
            Element::ISource { pos, neg, wave, .. } => stamp_isource(*pos, *neg, wave.value_at(t)),
            Element::Cccii {
                y,
                x,
                z,
                branch,
                params,
                ..
            } => stamp_cccii_linear(*y, *x, *z, *branch, params),
        };
        sys.apply(&stamp);
    }
    sys
}

fn clamps(circuit: &Circuit) -> impl Iterator<Item = (usize, &crate::devices::CcciiParams)> {
    circuit.elements().iter().filter_map(|e| match e {
        Element::Cccii {
            z: Some(z), params, ..
        } if params.level() == ModelLevel::Clamped => Some((*z, params)),
        _ => None,
    })
}

/// Build the MNA system at time `t`, linearizing rail clamps about `guess`
/// (all zeros when `None`).
pub fn assemble(circuit: &Circuit, t: f64, guess: Option<&Solution>) -> SystemMatrix {
    let mut sys = linear_system(circuit, t);
    for (z, params) in clamps(circuit) {
        let v0 = guess.map_or(0.0, |g| g.voltages[z]);
        let (i0, g0) = eval_clamp(v0, params);
        if g0 != 0.0 {
            sys.add(z, z, g0);
        }
        let equiv = i0 - g0 * v0;
        if equiv != 0.0 {
            sys.add_rhs(z, -equiv);
        }
    }
    sys
}

/// Full nonlinear residual `f(x)` of the circuit equations at time `t`.
pub fn residual(circuit: &Circuit, t: f64, x: &[f64]) -> Vec<f64> {
    let mut r = linear_system(circuit, t).residual(x);
    for (z, params) in clamps(circuit) {
        r[z] += eval_clamp(x[z], params).0;
    }
    r
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub abs_tol: f64,
    pub max_iter: usize,
    pub damping: bool,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-9,
            max_iter: 50,
            damping: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonResult {
    pub solution: Solution,
    pub iterations: usize,
    /// Final `‖f(x)‖∞`.
    pub residual: f64,
}

/// Newton-Raphson on the full circuit equations.
///
/// Converged when `‖f(x)‖∞ <= abs_tol`; circuits with a rail clamp must
/// also have taken a step no larger than `abs_tol`. Linear circuits
/// therefore finish in exactly one iteration.
///
/// With damping enabled, an iterate that increases the residual is pulled
/// back by repeated halving; the first iterate from `init` is always taken
/// whole, and if no halving helps the full step is kept.
pub fn newton_solve(
    circuit: &Circuit,
    t: f64,
    init: &Solution,
    opts: &NewtonOptions,
) -> Result<NewtonResult, SolveError> {
    let mut current = Solution {
        time: t,
        ..init.clone()
    };
    let nonlinear = clamps(circuit).next().is_some();
    let mut x = current.to_vector();
    let mut res = norm_inf(&residual(circuit, t, &x));
    for iter in 1..=opts.max_iter.max(1) {
        let sys = assemble(circuit, t, Some(&current));
        let mut next = lu_solve(&sys)?;
        let mut next_res = norm_inf(&residual(circuit, t, &next));
        if opts.damping && iter > 1 && next_res > res {
            for k in 1..=MAX_HALVINGS {
                let s = 0.5f64.powi(k as i32);
                let trial: Vec<f64> = x.iter().zip(&next).map(|(a, b)| a + s * (b - a)).collect();
                let trial_res = norm_inf(&residual(circuit, t, &trial));
                if trial_res < res {
                    next = trial;
                    next_res = trial_res;
                    break;
                }
            }
        }
        let step = x
            .iter()
            .zip(&next)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        x = next;
        res = next_res;
        current = Solution::from_vector(circuit, &x, t);
        if res <= opts.abs_tol && (!nonlinear || step <= opts.abs_tol) {
            return Ok(NewtonResult {
                solution: current,
                iterations: iter,
                residual: res,
            });
        }
    }
    Err(SolveError::NoConvergence {
        iterations: opts.max_iter,
        residual: res,
    })
}

/// DC operating point at `t = 0` from a cold start.
pub fn operating_point(circuit: &Circuit, opts: &NewtonOptions) -> Result<Solution, SolveError> {
    newton_solve(circuit, 0.0, &Solution::zeros(circuit), opts).map(|r| r.solution)
}

/// Power absorbed by one element (negative when it delivers power).
#[derive(Debug, Clone, PartialEq)]
pub struct ElementPower {
    pub name: String,
    pub absorbed: f64,
}

/// Power absorbed by every element at one timepoint. By Tellegen's theorem
/// the entries sum to zero for a solution that satisfies KCL.
pub fn element_power(circuit: &Circuit, sol: &Solution) -> Vec<ElementPower> {
    circuit
        .elements()
        .iter()
        .map(|e| {
            let absorbed = match e {
                Element::Resistor { pos, neg, r, .. } => {
                    let v = sol.at(*pos) - sol.at(*neg);
                    v * v / r
                }
                Element::VSource {
                    pos, neg, branch, ..
                } => (sol.at(*pos) - sol.at(*neg)) * sol.branch(*branch),
                Element::ISource { pos, neg, wave, .. } => {
                    (sol.at(*pos) - sol.at(*neg)) * wave.value_at(sol.time)
                }
                Element::Cccii {
                    x,
                    z,
                    branch,
                    params,
                    ..
                } => {
                    let ix = sol.branch(*branch);
                    let vz = sol.at(*z);
                    let iz = params.polarity().sign() * ix + eval_clamp(vz, params).0;
                    sol.at(*x) * ix + vz * iz
                }
            };
            ElementPower {
                name: e.name().to_string(),
                absorbed,
            }
        })
        .collect()
}

/// Time-indexed sequence of solutions with per-source delivered power.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub times: Vec<f64>,
    pub solutions: Vec<Solution>,
    nodes: Vec<String>,
    /// Independent sources, in circuit order.
    pub sources: Vec<String>,
    /// Delivered power, indexed `[source][timepoint]`.
    pub source_power: Vec<Vec<f64>>,
    /// Frequencies of sinusoidal sources with nonzero amplitude.
    pub sine_freqs: Vec<f64>,
}

impl Waveform {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn node_names(&self) -> &[String] {
        &self.nodes
    }

    /// Voltage trace of a node; ground yields zeros, unknown labels `None`.
    pub fn node_trace(&self, label: &str) -> Option<Vec<f64>> {
        if label == crate::netlist::GROUND {
            return Some(vec![0.0; self.len()]);
        }
        let i = self.nodes.iter().position(|n| n == label)?;
        Some(self.solutions.iter().map(|s| s.voltages[i]).collect())
    }

    /// Total delivered source power at every timepoint.
    pub fn total_source_power(&self) -> Vec<f64> {
        (0..self.len())
            .map(|k| self.source_power.iter().map(|p| p[k]).sum())
            .collect()
    }
}

/// How each transient timepoint is seeded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartPolicy {
    /// Previous timepoint's solution.
    Warm,
    /// All zeros at every timepoint.
    Cold,
}

/// Quasi-static transient: an independent DC solve at `t = k * tstep` for
/// `k = 0..=round(tstop / tstep)`, warm-started from the previous point.
pub fn transient(
    circuit: &Circuit,
    tstep: f64,
    tstop: f64,
    opts: &NewtonOptions,
) -> Result<Waveform, SolveError> {
    transient_with(circuit, tstep, tstop, opts, StartPolicy::Warm)
}

pub fn transient_with(
    circuit: &Circuit,
    tstep: f64,
    tstop: f64,
    opts: &NewtonOptions,
    start: StartPolicy,
) -> Result<Waveform, SolveError> {
    if !(tstep > 0.0 && tstep.is_finite() && tstop >= tstep && tstop.is_finite()) {
        return Err(SolveError::InvalidTimeGrid { tstep, tstop });
    }
    let steps = (tstop / tstep * (1.0 + 1e-12)).floor() as usize;
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * tstep).collect();
    solve_at(circuit, &times, opts, start)
}

/// Solve at each of the given timepoints in order and collect a [`Waveform`].
pub fn solve_at(
    circuit: &Circuit,
    times: &[f64],
    opts: &NewtonOptions,
    start: StartPolicy,
) -> Result<Waveform, SolveError> {
    let mut solutions: Vec<Solution> = Vec::with_capacity(times.len());
    let cold = Solution::zeros(circuit);
    for &t in times {
        let init = match (start, solutions.last()) {
            (StartPolicy::Warm, Some(prev)) => prev,
            _ => &cold,
        };
        let r = newton_solve(circuit, t, init, opts).map_err(|e| SolveError::AtTime {
            time: t,
            source: Box::new(e),
        })?;
        solutions.push(r.solution);
    }
    let times = times.to_vec();

    let mut sources = Vec::new();
    let mut source_power = Vec::new();
    let mut sine_freqs = Vec::new();
    for (ei, e) in circuit.elements().iter().enumerate() {
        let wave = match e {
            Element::VSource { wave, .. } | Element::ISource { wave, .. } => wave,
            _ => continue,
        };
        if let SourceWave::Sin {
            amplitude, freq, ..
        } = wave
        {
            if *amplitude != 0.0 && *freq > 0.0 {
                sine_freqs.push(*freq);
            }
        }
        sources.push(e.name().to_string());
        source_power.push(
            solutions
                .iter()
                .map(|s| -element_power(circuit, s)[ei].absorbed)
                .collect(),
        );
    }

    Ok(Waveform {
        times,
        solutions,
        nodes: circuit.node_names().to_vec(),
        sources,
        source_power,
        sine_freqs,
    })
}

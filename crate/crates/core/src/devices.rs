//! Device models and their MNA stamps.
//!
//! Unknowns are ordered as node voltages first, then branch currents.
//! Ground is not an unknown; a terminal on ground is represented as `None`
//! and its rows/columns are simply dropped from the stamp.
//!
//! KCL rows are written as "sum of currents leaving the node through the
//! element equals the right-hand side".

use std::f64::consts::PI;

use thiserror::Error;

/// Dense system index of a terminal, `None` for ground.
pub type Terminal = Option<usize>;

/// Half-width of the smoothing band at each rail of the output clamp.
pub const CLAMP_BAND: f64 = 10e-3;
/// Series resistance of the clamp once the output is past the rail.
pub const CLAMP_R_SAT: f64 = 1.0;
/// Default upper supply rail.
pub const DEFAULT_VDD: f64 = 0.5;
/// Default lower supply rail.
pub const DEFAULT_VSS: f64 = -0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DeviceError {
    #[error("bias current must be positive, got {0} A")]
    NonPositiveBias(f64),
    #[error("resistance must be positive and finite, got {0} ohm")]
    NonPositiveResistance(f64),
    #[error("intrinsic resistance must be non-negative and finite, got {0} ohm")]
    NegativeRx(f64),
    #[error("transconductance parameter must be positive, got {0} A/V^2")]
    NonPositiveBeta(f64),
    #[error("process parameter `{0}` must be positive and finite")]
    InvalidProcess(&'static str),
    #[error("supply rails must satisfy vdd > vss (vdd={vdd}, vss={vss})")]
    InvalidRails { vdd: f64, vss: f64 },
}

/// MOS process figures that set the transconductance parameter
/// `beta_n = mu_n * c_ox * w / l`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MosProcessParams {
    mu_n: f64,
    c_ox: f64,
    w: f64,
    l: f64,
}

impl MosProcessParams {
    pub fn new(mu_n: f64, c_ox: f64, w: f64, l: f64) -> Result<Self, DeviceError> {
        for (name, v) in [("mu_n", mu_n), ("c_ox", c_ox), ("w", w), ("l", l)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(DeviceError::InvalidProcess(name));
            }
        }
        Ok(Self { mu_n, c_ox, w, l })
    }

    pub fn mu_n(&self) -> f64 {
        self.mu_n
    }

    pub fn c_ox(&self) -> f64 {
        self.c_ox
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    /// Transconductance parameter in A/V².
    pub fn beta_n(&self) -> f64 {
        self.mu_n * self.c_ox * self.w / self.l
    }
}

/// Intrinsic X-port resistance of a translinear conveyor biased at `i_b`.
///
/// `R_X = 1 / (2 g_m)` with `g_m = sqrt(2 beta_n i_b)`, i.e.
/// `R_X = 1 / sqrt(8 beta_n i_b)`.
pub fn compute_rx(process: &MosProcessParams, i_b: f64) -> Result<f64, DeviceError> {
    rx_from_beta(process.beta_n(), i_b)
}

/// Same as [`compute_rx`] with the transconductance parameter given directly.
pub fn rx_from_beta(beta_n: f64, i_b: f64) -> Result<f64, DeviceError> {
    if !(i_b.is_finite() && i_b > 0.0) {
        return Err(DeviceError::NonPositiveBias(i_b));
    }
    if !(beta_n.is_finite() && beta_n > 0.0) {
        return Err(DeviceError::NonPositiveBeta(beta_n));
    }
    Ok(1.0 / (8.0 * beta_n * i_b).sqrt())
}

/// Sign of the Z-port current relative to the X-port current.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    Plus,
    Minus,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Plus => 1.0,
            Polarity::Minus => -1.0,
        }
    }
}

/// Level 1 is the ideal conveyor (plus whatever explicit R_X is given);
/// level 2 additionally clamps the Z node to the supply rails.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelLevel {
    Ideal,
    Clamped,
}

impl ModelLevel {
    pub fn number(self) -> u8 {
        match self {
            ModelLevel::Ideal => 1,
            ModelLevel::Clamped => 2,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(ModelLevel::Ideal),
            2 => Some(ModelLevel::Clamped),
            _ => None,
        }
    }
}

/// How the X-port resistance is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RxSpec {
    Explicit(f64),
    Bias { i_b: f64, beta_n: f64 },
}

/// Parameters of one CCCII± instance. Validated on construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CcciiParams {
    polarity: Polarity,
    level: ModelLevel,
    rx: RxSpec,
    vdd: f64,
    vss: f64,
}

impl CcciiParams {
    pub fn new(
        polarity: Polarity,
        level: ModelLevel,
        rx: RxSpec,
        vdd: f64,
        vss: f64,
    ) -> Result<Self, DeviceError> {
        match rx {
            RxSpec::Explicit(r) if !(r.is_finite() && r >= 0.0) => {
                return Err(DeviceError::NegativeRx(r))
            }
            RxSpec::Bias { i_b, beta_n } => {
                rx_from_beta(beta_n, i_b)?;
            }
            _ => {}
        }
        if !(vdd.is_finite() && vss.is_finite() && vdd > vss) {
            return Err(DeviceError::InvalidRails { vdd, vss });
        }
        Ok(Self {
            polarity,
            level,
            rx,
            vdd,
            vss,
        })
    }

    /// Ideal conveyor: R_X = 0, no clamp, default rails.
    pub fn ideal(polarity: Polarity) -> Self {
        Self {
            polarity,
            level: ModelLevel::Ideal,
            rx: RxSpec::Explicit(0.0),
            vdd: DEFAULT_VDD,
            vss: DEFAULT_VSS,
        }
    }

    pub fn polarity(&self) -> Polarity {
        self.polarity
    }

    pub fn level(&self) -> ModelLevel {
        self.level
    }

    pub fn rx_spec(&self) -> RxSpec {
        self.rx
    }

    pub fn vdd(&self) -> f64 {
        self.vdd
    }

    pub fn vss(&self) -> f64 {
        self.vss
    }

    /// Resolved X-port resistance in ohms.
    pub fn rx_ohms(&self) -> f64 {
        match self.rx {
            RxSpec::Explicit(r) => r,
            // validated in `new`
            RxSpec::Bias { i_b, beta_n } => 1.0 / (8.0 * beta_n * i_b).sqrt(),
        }
    }

    pub fn with_polarity(mut self, polarity: Polarity) -> Self {
        self.polarity = polarity;
        self
    }

    pub fn with_level(mut self, level: ModelLevel) -> Self {
        self.level = level;
        self
    }

    pub fn with_rx(self, rx: RxSpec) -> Result<Self, DeviceError> {
        Self::new(self.polarity, self.level, rx, self.vdd, self.vss)
    }

    pub fn with_rails(self, vdd: f64, vss: f64) -> Result<Self, DeviceError> {
        Self::new(self.polarity, self.level, self.rx, vdd, vss)
    }
}

/// Time dependence of an independent source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceWave {
    Dc(f64),
    Sin {
        offset: f64,
        amplitude: f64,
        freq: f64,
    },
}

impl SourceWave {
    pub fn value_at(&self, t: f64) -> f64 {
        match *self {
            SourceWave::Dc(v) => v,
            SourceWave::Sin {
                offset,
                amplitude,
                freq,
            } => offset + amplitude * (2.0 * PI * freq * t).sin(),
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        match *self {
            SourceWave::Dc(v) => SourceWave::Dc(k * v),
            SourceWave::Sin {
                offset,
                amplitude,
                freq,
            } => SourceWave::Sin {
                offset: k * offset,
                amplitude: k * amplitude,
                freq,
            },
        }
    }
}

/// Additive contribution of one device to the MNA system.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StampContribution {
    pub matrix: Vec<(usize, usize, f64)>,
    pub rhs: Vec<(usize, f64)>,
}

impl StampContribution {
    fn add(&mut self, row: Terminal, col: Terminal, value: f64) {
        if let (Some(r), Some(c)) = (row, col) {
            self.matrix.push((r, c, value));
        }
    }

    fn add_rhs(&mut self, row: Terminal, value: f64) {
        if let Some(r) = row {
            self.rhs.push((r, value));
        }
    }

    /// Largest row or column index touched, if any.
    pub fn max_index(&self) -> Option<usize> {
        self.matrix
            .iter()
            .flat_map(|&(r, c, _)| [r, c])
            .chain(self.rhs.iter().map(|&(r, _)| r))
            .max()
    }
}

pub fn stamp_resistor(
    pos: Terminal,
    neg: Terminal,
    r: f64,
) -> Result<StampContribution, DeviceError> {
    if !(r.is_finite() && r > 0.0) {
        return Err(DeviceError::NonPositiveResistance(r));
    }
    let g = 1.0 / r;
    let mut s = StampContribution::default();
    s.add(pos, pos, g);
    s.add(neg, neg, g);
    s.add(pos, neg, -g);
    s.add(neg, pos, -g);
    Ok(s)
}

/// Voltage source with branch current flowing into `pos`, through the
/// source, and out of `neg`.
pub fn stamp_vsource(pos: Terminal, neg: Terminal, branch: usize, value: f64) -> StampContribution {
    let b = Some(branch);
    let mut s = StampContribution::default();
    s.add(pos, b, 1.0);
    s.add(neg, b, -1.0);
    s.add(b, pos, 1.0);
    s.add(b, neg, -1.0);
    s.add_rhs(b, value);
    s
}

/// Current source pushing `value` amperes from `pos` through itself to `neg`.
pub fn stamp_isource(pos: Terminal, neg: Terminal, value: f64) -> StampContribution {
    let mut s = StampContribution::default();
    s.add_rhs(pos, -value);
    s.add_rhs(neg, value);
    s
}

/// Linear part of the CCCII± port relations.
///
/// `i_x` (the branch unknown) flows from node X into the device. The branch
/// row enforces `V_X - V_Y - R_X i_x = 0`, the X row carries `i_x` and the
/// Z row carries `sigma * i_x`. The Y row is never touched.
pub fn stamp_cccii_linear(
    y: Terminal,
    x: Terminal,
    z: Terminal,
    branch: usize,
    params: &CcciiParams,
) -> StampContribution {
    let b = Some(branch);
    let mut s = StampContribution::default();
    s.add(b, x, 1.0);
    s.add(b, y, -1.0);
    let rx = params.rx_ohms();
    if rx != 0.0 {
        s.add(b, b, -rx);
    }
    s.add(x, b, 1.0);
    s.add(z, b, params.polarity().sign());
    s
}

/// Extra current leaving the Z node into the rail clamp, and its derivative.
///
/// Zero inside `[vss + band, vdd - band]`, quadratic across the band up to
/// the rail, then linear with conductance `1 / R_sat`. Continuous with a
/// continuous derivative. Only meaningful for level-2 conveyors.
pub fn eval_clamp(v_z: f64, params: &CcciiParams) -> (f64, f64) {
    if params.level() != ModelLevel::Clamped {
        return (0.0, 0.0);
    }
    let g = 1.0 / CLAMP_R_SAT;
    let d = CLAMP_BAND;
    let over = v_z - (params.vdd() - d);
    let under = (params.vss() + d) - v_z;
    if over > 0.0 {
        let (i, di) = clamp_branch(over, g, d);
        (i, di)
    } else if under > 0.0 {
        let (i, di) = clamp_branch(under, g, d);
        (-i, di)
    } else {
        (0.0, 0.0)
    }
}

fn clamp_branch(u: f64, g: f64, d: f64) -> (f64, f64) {
    if u < d {
        (g * u * u / (2.0 * d), g * u / d)
    } else {
        (g * (u - d / 2.0), g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn params(level: ModelLevel) -> CcciiParams {
        CcciiParams::ideal(Polarity::Plus).with_level(level)
    }

    #[test]
    fn rx_reference_values() {
        // 8 * 1e-3 * 50e-6 = 4e-7; sqrt = 6.32455532e-4; 1/x = 1581.1388...
        let r = rx_from_beta(1.0e-3, 50e-6).unwrap();
        assert_relative_eq!(r, 1_581.138_830_084_189_7, max_relative = 1e-12);
        let r4 = rx_from_beta(1.0e-3, 200e-6).unwrap();
        assert_relative_eq!(r4, 790.569_415_042_094_9, max_relative = 1e-12);
        assert_eq!(rx_from_beta(0.125, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn rx_equals_inverse_twice_gm() {
        let p = MosProcessParams::new(0.04, 0.02, 2e-6, 0.5e-6).unwrap();
        let gm = (2.0 * p.beta_n() * 30e-6).sqrt();
        assert_relative_eq!(
            compute_rx(&p, 30e-6).unwrap(),
            1.0 / (2.0 * gm),
            max_relative = 1e-14
        );
    }

    #[test]
    fn rx_rejects_bad_bias() {
        assert_eq!(
            rx_from_beta(1e-3, 0.0),
            Err(DeviceError::NonPositiveBias(0.0))
        );
        assert!(rx_from_beta(1e-3, -1e-6).is_err());
        assert!(MosProcessParams::new(0.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn resistor_stamps() {
        let s = stamp_resistor(Some(0), None, 1e3).unwrap();
        assert_eq!(s.matrix, vec![(0, 0, 1e-3)]);
        let s = stamp_resistor(Some(0), Some(1), 2e3).unwrap();
        assert_eq!(s.matrix.len(), 4);
        assert!(s.matrix.iter().all(|&(_, _, v)| v.abs() == 5e-4));
        assert_eq!(
            stamp_resistor(Some(0), None, 0.0),
            Err(DeviceError::NonPositiveResistance(0.0))
        );
    }

    #[test]
    fn vsource_stamp_and_sine() {
        let s = stamp_vsource(Some(0), None, 1, 1.0);
        assert_eq!(s.matrix, vec![(0, 1, 1.0), (1, 0, 1.0)]);
        assert_eq!(s.rhs, vec![(1, 1.0)]);
        let w = SourceWave::Sin {
            offset: 0.0,
            amplitude: 0.05,
            freq: 1e3,
        };
        assert_eq!(w.value_at(0.0), 0.0);
        assert_relative_eq!(w.value_at(0.25e-3), 0.05, max_relative = 1e-15);
    }

    #[test]
    fn cccii_stamp_entries() {
        let p = params(ModelLevel::Ideal)
            .with_rx(RxSpec::Explicit(100.0))
            .unwrap();
        let s = stamp_cccii_linear(Some(0), Some(1), Some(2), 3, &p);
        assert_eq!(
            s.matrix,
            vec![
                (3, 1, 1.0),
                (3, 0, -1.0),
                (3, 3, -100.0),
                (1, 3, 1.0),
                (2, 3, 1.0)
            ]
        );
        let m = stamp_cccii_linear(
            Some(0),
            Some(1),
            Some(2),
            3,
            &p.with_polarity(Polarity::Minus),
        );
        assert!(m.matrix.contains(&(2, 3, -1.0)));
    }

    #[test]
    fn clamp_piecewise() {
        let p = params(ModelLevel::Clamped);
        assert_eq!(eval_clamp(0.0, &p), (0.0, 0.0));
        assert_eq!(eval_clamp(p.vdd() - CLAMP_BAND, &p), (0.0, 0.0));
        let (i, g) = eval_clamp(p.vdd() + 1.0, &p);
        assert_relative_eq!(i, 1.0 + CLAMP_BAND / 2.0, max_relative = 1e-12);
        assert_eq!(g, 1.0);
        let (i, g) = eval_clamp(p.vss() - 1.0, &p);
        assert_relative_eq!(i, -(1.0 + CLAMP_BAND / 2.0), max_relative = 1e-12);
        assert_eq!(g, 1.0);
        assert_eq!(eval_clamp(5.0, &params(ModelLevel::Ideal)), (0.0, 0.0));
    }

    #[test]
    fn rails_validated() {
        assert!(CcciiParams::ideal(Polarity::Plus)
            .with_rails(0.0, 0.0)
            .is_err());
        assert!(CcciiParams::ideal(Polarity::Plus)
            .with_rx(RxSpec::Explicit(-1.0))
            .is_err());
    }

    proptest! {
        #[test]
        fn quarter_bias_doubles_rx(beta in 1e-6f64..1.0, ib in 1e-9f64..1e-2) {
            let r = rx_from_beta(beta, ib).unwrap();
            let r4 = rx_from_beta(beta, ib / 4.0).unwrap();
            prop_assert!((r4 - 2.0 * r).abs() <= 1e-12 * r4);
        }

        #[test]
        fn clamp_is_c1(v in -1.0f64..1.0) {
            let p = params(ModelLevel::Clamped);
            let h = 1e-7;
            let (i0, g0) = eval_clamp(v, &p);
            let (ip, _) = eval_clamp(v + h, &p);
            let (im, _) = eval_clamp(v - h, &p);
            prop_assert!(((ip - im) / (2.0 * h) - g0).abs() < 1e-4);
            prop_assert!(i0 * v >= 0.0);
        }

        #[test]
        fn cccii_never_touches_y_row(y in 0usize..3, rx in 0.0f64..1e4) {
            let p = params(ModelLevel::Ideal).with_rx(RxSpec::Explicit(rx)).unwrap();
            let (x, z) = ((y + 1) % 3, (y + 2) % 3);
            let s = stamp_cccii_linear(Some(y), Some(x), Some(z), 3, &p);
            prop_assert!(s.matrix.iter().all(|&(r, _, _)| r != y));
            prop_assert!(s.rhs.iter().all(|&(r, _)| r != y));
        }
    }
}

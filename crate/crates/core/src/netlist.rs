//! Netlist dialect: parsing, serialization and validation into a [`Circuit`].
//!
//! One element or directive per line:
//!
//! ```text
//! * comment
//! .title Proposed amplifier
//! VIN in 0 SIN(0 50m 1k)
//! XCC in x out CCCII+ RX=3.5k LEVEL=2 VDD=0.5 VSS=-0.5
//! R1 x 0 8k
//! R2 out 0 15k
//! .tran 20u 5m
//! .measure gain(in,out)
//! .end
//! ```

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::devices::{
    CcciiParams, DeviceError, ModelLevel, Polarity, RxSpec, SourceWave, Terminal, DEFAULT_VDD,
    DEFAULT_VSS,
};

pub const GROUND: &str = "0";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetlistError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("line {line}: duplicate element name `{name}`")]
    DuplicateName { line: usize, name: String },
    #[error("line {line}: unknown element kind `{name}`")]
    UnknownElementKind { line: usize, name: String },
    #[error("line {line}: missing .end")]
    MissingEnd { line: usize },
    #[error("node `{node}` is touched only by one terminal of `{element}` and cannot be solved")]
    DanglingNode { node: String, element: String },
    #[error("no element connects to ground node \"0\"")]
    NoGroundReference,
    #[error("node `{node}` has no path to ground")]
    FloatingSubcircuit { node: String },
    #[error("element `{element}`: {source}")]
    Device {
        element: String,
        #[source]
        source: DeviceError,
    },
}

impl NetlistError {
    /// Source line the error refers to, when it has one.
    pub fn line(&self) -> Option<usize> {
        match self {
            NetlistError::Syntax { line, .. }
            | NetlistError::DuplicateName { line, .. }
            | NetlistError::UnknownElementKind { line, .. }
            | NetlistError::MissingEnd { line } => Some(*line),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElementKind {
    Resistor,
    VSource,
    ISource,
    Cccii,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ElementValue {
    Resistor(f64),
    VSource(SourceWave),
    ISource(SourceWave),
    Cccii(CcciiParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElementDecl {
    pub name: String,
    /// Terminal labels; `(Y, X, Z)` for conveyors.
    pub nodes: Vec<String>,
    pub value: ElementValue,
}

impl ElementDecl {
    pub fn kind(&self) -> ElementKind {
        match self.value {
            ElementValue::Resistor(_) => ElementKind::Resistor,
            ElementValue::VSource(_) => ElementKind::VSource,
            ElementValue::ISource(_) => ElementKind::ISource,
            ElementValue::Cccii(_) => ElementKind::Cccii,
        }
    }

    pub fn resistor(name: &str, pos: &str, neg: &str, r: f64) -> Self {
        Self {
            name: name.into(),
            nodes: vec![pos.into(), neg.into()],
            value: ElementValue::Resistor(r),
        }
    }

    pub fn vsource(name: &str, pos: &str, neg: &str, wave: SourceWave) -> Self {
        Self {
            name: name.into(),
            nodes: vec![pos.into(), neg.into()],
            value: ElementValue::VSource(wave),
        }
    }

    pub fn isource(name: &str, pos: &str, neg: &str, wave: SourceWave) -> Self {
        Self {
            name: name.into(),
            nodes: vec![pos.into(), neg.into()],
            value: ElementValue::ISource(wave),
        }
    }

    pub fn cccii(name: &str, y: &str, x: &str, z: &str, params: CcciiParams) -> Self {
        Self {
            name: name.into(),
            nodes: vec![y.into(), x.into(), z.into()],
            value: ElementValue::Cccii(params),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum MeasureSpec {
    Vpp(String),
    Gain { input: String, output: String },
    Power,
}

impl MeasureSpec {
    pub fn label(&self) -> String {
        match self {
            MeasureSpec::Vpp(n) => format!("vpp({n})"),
            MeasureSpec::Gain { input, output } => format!("gain({input},{output})"),
            MeasureSpec::Power => "power".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Directive {
    Tran { tstep: f64, tstop: f64 },
    Op,
    Measure(MeasureSpec),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NetlistDocument {
    pub title: Option<String>,
    pub elements: Vec<ElementDecl>,
    pub directives: Vec<Directive>,
}

impl NetlistDocument {
    pub fn element(&self, name: &str) -> Option<&ElementDecl> {
        self.elements
            .iter()
            .find(|e| e.name.eq_ignore_ascii_case(name))
    }

    pub fn element_mut(&mut self, name: &str) -> Option<&mut ElementDecl> {
        self.elements
            .iter_mut()
            .find(|e| e.name.eq_ignore_ascii_case(name))
    }

    pub fn tran(&self) -> Option<(f64, f64)> {
        self.directives.iter().find_map(|d| match d {
            Directive::Tran { tstep, tstop } => Some((*tstep, *tstop)),
            _ => None,
        })
    }

    pub fn measures(&self) -> impl Iterator<Item = &MeasureSpec> {
        self.directives.iter().filter_map(|d| match d {
            Directive::Measure(m) => Some(m),
            _ => None,
        })
    }
}

/// Expand a numeric literal with an optional SPICE scale suffix.
///
/// Suffixes are case-insensitive: `f p n u m k meg g`. The result is the
/// floating-point product of the mantissa and the scale factor.
pub fn parse_value(token: &str) -> Option<f64> {
    let bytes = token.as_bytes();
    let mut i = 0;
    if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
        i += 1;
    }
    let digits_start = i;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    let mut n_digits = i - digits_start;
    if i < bytes.len() && bytes[i] == b'.' {
        i += 1;
        let frac_start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        n_digits += i - frac_start;
    }
    if n_digits == 0 {
        return None;
    }
    if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
        let mut j = i + 1;
        if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
            j += 1;
        }
        let exp_start = j;
        while j < bytes.len() && bytes[j].is_ascii_digit() {
            j += 1;
        }
        if j > exp_start {
            i = j;
        }
    }
    let mantissa: f64 = token[..i].parse().ok()?;
    let scale = match token[i..].to_ascii_lowercase().as_str() {
        "" => 1.0,
        "f" => 1e-15,
        "p" => 1e-12,
        "n" => 1e-9,
        "u" => 1e-6,
        "m" => 1e-3,
        "k" => 1e3,
        "meg" => 1e6,
        "g" => 1e9,
        _ => return None,
    };
    let v = mantissa * scale;
    v.is_finite().then_some(v)
}

fn tokenize(line: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    for ch in line.chars() {
        match ch {
            c if c.is_whitespace() || c == '(' || c == ')' || c == ',' => {
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                }
            }
            '=' => {
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                }
                tokens.push("=".into());
            }
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    tokens
}

struct LineCtx {
    line: usize,
}

impl LineCtx {
    fn err(&self, reason: impl Into<String>) -> NetlistError {
        NetlistError::Syntax {
            line: self.line,
            reason: reason.into(),
        }
    }

    fn number(&self, tok: &str, what: &str) -> Result<f64, NetlistError> {
        parse_value(tok).ok_or_else(|| self.err(format!("invalid {what} `{tok}`")))
    }
}

/// Parse a netlist document. Never panics; every failure carries a line number.
pub fn parse_netlist(text: &str) -> Result<NetlistDocument, NetlistError> {
    let mut doc = NetlistDocument::default();
    let mut seen: HashSet<String> = HashSet::new();
    let mut last_line = 0;
    for (idx, raw) in text.lines().enumerate() {
        let ctx = LineCtx { line: idx + 1 };
        last_line = ctx.line;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('*') {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('.') {
            let keyword = rest
                .split_whitespace()
                .next()
                .unwrap_or("")
                .to_ascii_lowercase();
            if keyword == "end" {
                return Ok(doc);
            }
            if keyword == "title" {
                let title = rest[5..].trim();
                if title.is_empty() {
                    return Err(ctx.err(".title needs text"));
                }
                doc.title = Some(title.to_string());
                continue;
            }
            let directive = parse_directive(&ctx, &keyword, &tokenize(trimmed)[1..])?;
            if matches!(directive, Directive::Tran { .. }) && doc.tran().is_some() {
                return Err(ctx.err("more than one .tran directive"));
            }
            doc.directives.push(directive);
            continue;
        }
        let tokens = tokenize(trimmed);
        let element = parse_element(&ctx, &tokens)?;
        if !seen.insert(element.name.to_ascii_lowercase()) {
            return Err(NetlistError::DuplicateName {
                line: ctx.line,
                name: element.name,
            });
        }
        doc.elements.push(element);
    }
    Err(NetlistError::MissingEnd {
        line: last_line + 1,
    })
}

fn parse_directive(
    ctx: &LineCtx,
    keyword: &str,
    args: &[String],
) -> Result<Directive, NetlistError> {
    match keyword {
        "op" => {
            if !args.is_empty() {
                return Err(ctx.err(".op takes no arguments"));
            }
            Ok(Directive::Op)
        }
        "tran" => {
            let [tstep, tstop] = args else {
                return Err(ctx.err(".tran expects <tstep> <tstop>"));
            };
            let tstep = ctx.number(tstep, "timestep")?;
            let tstop = ctx.number(tstop, "stop time")?;
            if !(tstep > 0.0) {
                return Err(ctx.err("timestep must be positive"));
            }
            if tstop < tstep {
                return Err(ctx.err("stop time must be at least one timestep"));
            }
            Ok(Directive::Tran { tstep, tstop })
        }
        "measure" | "meas" => {
            let Some(metric) = args.first() else {
                return Err(ctx.err(".measure needs a metric"));
            };
            let spec = match (metric.to_ascii_lowercase().as_str(), &args[1..]) {
                ("vpp", [node]) => MeasureSpec::Vpp(node.clone()),
                ("gain", [input, output]) => MeasureSpec::Gain {
                    input: input.clone(),
                    output: output.clone(),
                },
                ("power", []) => MeasureSpec::Power,
                _ => return Err(ctx.err(format!("malformed .measure `{}`", args.join(" ")))),
            };
            Ok(Directive::Measure(spec))
        }
        other => Err(ctx.err(format!("unknown directive `.{other}`"))),
    }
}

fn parse_element(ctx: &LineCtx, tokens: &[String]) -> Result<ElementDecl, NetlistError> {
    let Some(name) = tokens.first().cloned() else {
        return Err(ctx.err("line has no element name"));
    };
    let kind = name.chars().next().map(|c| c.to_ascii_uppercase());
    match kind {
        Some('R') => {
            let [_, p, n, v] = tokens else {
                return Err(ctx.err("resistor expects `R<name> n+ n- <value>`"));
            };
            let r = ctx.number(v, "resistance")?;
            if !(r > 0.0) {
                return Err(ctx.err(format!("resistance must be positive, got {r}")));
            }
            Ok(ElementDecl::resistor(&name, p, n, r))
        }
        Some(k @ ('V' | 'I')) => {
            if tokens.len() < 4 {
                return Err(ctx.err("source expects `n+ n-` followed by a value"));
            }
            let wave = parse_wave(ctx, &tokens[3..])?;
            let (p, n) = (&tokens[1], &tokens[2]);
            Ok(if k == 'V' {
                ElementDecl::vsource(&name, p, n, wave)
            } else {
                ElementDecl::isource(&name, p, n, wave)
            })
        }
        Some('X') => parse_cccii(ctx, &name, tokens),
        _ => Err(NetlistError::UnknownElementKind {
            line: ctx.line,
            name,
        }),
    }
}

fn parse_wave(ctx: &LineCtx, args: &[String]) -> Result<SourceWave, NetlistError> {
    let head = args[0].to_ascii_lowercase();
    match (head.as_str(), &args[1..]) {
        ("dc", [v]) => Ok(SourceWave::Dc(ctx.number(v, "DC value")?)),
        ("sin", [offset, amplitude, freq]) => {
            let freq = ctx.number(freq, "frequency")?;
            if !(freq >= 0.0) {
                return Err(ctx.err("frequency must be non-negative"));
            }
            Ok(SourceWave::Sin {
                offset: ctx.number(offset, "offset")?,
                amplitude: ctx.number(amplitude, "amplitude")?,
                freq,
            })
        }
        ("sin", _) => Err(ctx.err("SIN expects (<offset> <amplitude> <freq>)")),
        (_, []) => Ok(SourceWave::Dc(ctx.number(&args[0], "source value")?)),
        _ => Err(ctx.err(format!("malformed source value `{}`", args.join(" ")))),
    }
}

fn parse_cccii(ctx: &LineCtx, name: &str, tokens: &[String]) -> Result<ElementDecl, NetlistError> {
    if tokens.len() < 5 {
        return Err(ctx.err("conveyor expects `X<name> <y> <x> <z> CCCII+|CCCII-`"));
    }
    let polarity = match tokens[4].to_ascii_uppercase().as_str() {
        "CCCII+" => Polarity::Plus,
        "CCCII-" => Polarity::Minus,
        other => {
            return Err(NetlistError::UnknownElementKind {
                line: ctx.line,
                name: format!("{name} ({other})"),
            })
        }
    };
    let mut rx = None;
    let mut ib = None;
    let mut beta = None;
    let mut level = ModelLevel::Ideal;
    let mut vdd = DEFAULT_VDD;
    let mut vss = DEFAULT_VSS;
    let mut keys_seen = HashSet::new();
    let mut rest = &tokens[5..];
    while !rest.is_empty() {
        let [key, eq, value, tail @ ..] = rest else {
            return Err(ctx.err(format!("expected KEY=VALUE, found `{}`", rest.join(" "))));
        };
        if eq != "=" {
            return Err(ctx.err(format!("expected `=` after `{key}`")));
        }
        let key = key.to_ascii_uppercase();
        if !keys_seen.insert(key.clone()) {
            return Err(ctx.err(format!("parameter {key} given twice")));
        }
        match key.as_str() {
            "RX" => rx = Some(ctx.number(value, "RX")?),
            "IB" => ib = Some(ctx.number(value, "IB")?),
            "BETA" => beta = Some(ctx.number(value, "BETA")?),
            "VDD" => vdd = ctx.number(value, "VDD")?,
            "VSS" => vss = ctx.number(value, "VSS")?,
            "LEVEL" => {
                level = match value.as_str() {
                    "1" => ModelLevel::Ideal,
                    "2" => ModelLevel::Clamped,
                    _ => return Err(ctx.err(format!("LEVEL must be 1 or 2, got `{value}`"))),
                }
            }
            other => return Err(ctx.err(format!("unknown conveyor parameter `{other}`"))),
        }
        rest = tail;
    }
    let rx_spec = match (rx, ib, beta) {
        (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
            return Err(ctx.err("give either RX or IB with BETA, not both"))
        }
        (Some(r), None, None) => RxSpec::Explicit(r),
        (None, Some(i_b), Some(beta_n)) => RxSpec::Bias { i_b, beta_n },
        (None, Some(_), None) | (None, None, Some(_)) => {
            return Err(ctx.err("IB and BETA must be given together"))
        }
        (None, None, None) => RxSpec::Explicit(0.0),
    };
    let params =
        CcciiParams::new(polarity, level, rx_spec, vdd, vss).map_err(|e| ctx.err(e.to_string()))?;
    Ok(ElementDecl::cccii(
        name, &tokens[1], &tokens[2], &tokens[3], params,
    ))
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn wave_text(w: &SourceWave) -> String {
    match w {
        SourceWave::Dc(v) => format!("DC {}", num(*v)),
        SourceWave::Sin {
            offset,
            amplitude,
            freq,
        } => format!("SIN({} {} {})", num(*offset), num(*amplitude), num(*freq)),
    }
}

/// Render a document back to text. Numbers use scientific notation with
/// shortest round-trip digits, so parsing the output reproduces `doc` exactly.
pub fn serialize(doc: &NetlistDocument) -> String {
    let mut out = String::new();
    if let Some(t) = &doc.title {
        let _ = writeln!(out, ".title {t}");
    }
    for e in &doc.elements {
        let nodes = e.nodes.join(" ");
        let _ = match &e.value {
            ElementValue::Resistor(r) => writeln!(out, "{} {} {}", e.name, nodes, num(*r)),
            ElementValue::VSource(w) | ElementValue::ISource(w) => {
                writeln!(out, "{} {} {}", e.name, nodes, wave_text(w))
            }
            ElementValue::Cccii(p) => {
                let pol = match p.polarity() {
                    Polarity::Plus => "CCCII+",
                    Polarity::Minus => "CCCII-",
                };
                let rx = match p.rx_spec() {
                    RxSpec::Explicit(r) => format!("RX={}", num(r)),
                    RxSpec::Bias { i_b, beta_n } => format!("IB={} BETA={}", num(i_b), num(beta_n)),
                };
                writeln!(
                    out,
                    "{} {} {} {} LEVEL={} VDD={} VSS={}",
                    e.name,
                    nodes,
                    pol,
                    rx,
                    p.level().number(),
                    num(p.vdd()),
                    num(p.vss())
                )
            }
        };
    }
    for d in &doc.directives {
        let _ = match d {
            Directive::Op => writeln!(out, ".op"),
            Directive::Tran { tstep, tstop } => {
                writeln!(out, ".tran {} {}", num(*tstep), num(*tstop))
            }
            Directive::Measure(m) => writeln!(out, ".measure {}", m.label()),
        };
    }
    out.push_str(".end");
    out
}

/// Element with terminals resolved to system indices.
#[derive(Debug, Clone, PartialEq)]
pub enum Element {
    Resistor {
        name: String,
        pos: Terminal,
        neg: Terminal,
        r: f64,
    },
    VSource {
        name: String,
        pos: Terminal,
        neg: Terminal,
        wave: SourceWave,
        branch: usize,
    },
    ISource {
        name: String,
        pos: Terminal,
        neg: Terminal,
        wave: SourceWave,
    },
    Cccii {
        name: String,
        y: Terminal,
        x: Terminal,
        /// `None` when Z is grounded or left floating.
        z: Terminal,
        branch: usize,
        params: CcciiParams,
    },
}

impl Element {
    pub fn name(&self) -> &str {
        match self {
            Element::Resistor { name, .. }
            | Element::VSource { name, .. }
            | Element::ISource { name, .. }
            | Element::Cccii { name, .. } => name,
        }
    }
}

/// A validated, index-resolved circuit ready for assembly.
#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    nodes: Vec<String>,
    index: HashMap<String, usize>,
    elements: Vec<Element>,
    branch_count: usize,
    floating: Vec<String>,
}

impl Circuit {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn branch_count(&self) -> usize {
        self.branch_count
    }

    /// Number of MNA unknowns.
    pub fn dimension(&self) -> usize {
        self.nodes.len() + self.branch_count
    }

    pub fn node_names(&self) -> &[String] {
        &self.nodes
    }

    /// Dense index of a node; `None` for ground and unknown labels.
    pub fn node_index(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn has_node(&self, label: &str) -> bool {
        label == GROUND || self.index.contains_key(label)
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    /// Conveyor Z nodes with no other connection, dropped from the system.
    pub fn floating_nodes(&self) -> &[String] {
        &self.floating
    }

    /// A copy of the circuit with every independent source scaled by `k`.
    pub fn with_sources_scaled(&self, k: f64) -> Circuit {
        let mut c = self.clone();
        for e in &mut c.elements {
            match e {
                Element::VSource { wave, .. } | Element::ISource { wave, .. } => {
                    *wave = wave.scaled(k)
                }
                _ => {}
            }
        }
        c
    }

    /// A copy with only the named independent source kept active; all other
    /// sources are zeroed.
    pub fn with_only_source(&self, keep: &str) -> Circuit {
        let mut c = self.clone();
        for e in &mut c.elements {
            match e {
                Element::VSource { name, wave, .. } | Element::ISource { name, wave, .. }
                    if name.as_str() != keep =>
                {
                    *wave = wave.scaled(0.0)
                }
                _ => {}
            }
        }
        c
    }
}

fn is_ground(label: &str) -> bool {
    label == GROUND
}

/// Resolve node labels, allocate branch unknowns and check connectivity.
pub fn validate(doc: &NetlistDocument) -> Result<Circuit, NetlistError> {
    // terminal touches per node: (element index, terminal position)
    let mut touches: HashMap<&str, Vec<(usize, usize)>> = HashMap::new();
    let mut order: Vec<&str> = Vec::new();
    let mut grounded = false;
    for (ei, e) in doc.elements.iter().enumerate() {
        for (ti, n) in e.nodes.iter().enumerate() {
            if is_ground(n) {
                grounded = true;
                continue;
            }
            let entry = touches.entry(n.as_str()).or_default();
            if entry.is_empty() {
                order.push(n.as_str());
            }
            entry.push((ei, ti));
        }
    }
    if !grounded && !doc.elements.is_empty() {
        return Err(NetlistError::NoGroundReference);
    }

    let mut floating = HashSet::new();
    for &node in &order {
        let t = &touches[node];
        if t.len() != 1 {
            continue;
        }
        let (ei, ti) = t[0];
        let e = &doc.elements[ei];
        match (e.kind(), ti) {
            (ElementKind::Cccii, 2) => {
                floating.insert(node);
            }
            (ElementKind::ISource, _) | (ElementKind::Cccii, 0) => {
                return Err(NetlistError::DanglingNode {
                    node: node.to_string(),
                    element: e.name.clone(),
                })
            }
            _ => {}
        }
    }

    check_grounded_components(doc, &order, &floating)?;

    let nodes: Vec<String> = order
        .iter()
        .filter(|n| !floating.contains(*n))
        .map(|n| n.to_string())
        .collect();
    let index: HashMap<String, usize> = nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.clone(), i))
        .collect();
    let term = |label: &str| index.get(label).copied();

    let mut next_branch = nodes.len();
    let mut elements = Vec::with_capacity(doc.elements.len());
    for e in &doc.elements {
        let name = e.name.clone();
        let el = match &e.value {
            ElementValue::Resistor(r) => {
                if !(r.is_finite() && *r > 0.0) {
                    return Err(NetlistError::Device {
                        element: name,
                        source: DeviceError::NonPositiveResistance(*r),
                    });
                }
                Element::Resistor {
                    pos: term(&e.nodes[0]),
                    neg: term(&e.nodes[1]),
                    r: *r,
                    name,
                }
            }
            ElementValue::VSource(wave) => {
                next_branch += 1;
                Element::VSource {
                    pos: term(&e.nodes[0]),
                    neg: term(&e.nodes[1]),
                    wave: *wave,
                    branch: next_branch - 1,
                    name,
                }
            }
            ElementValue::ISource(wave) => Element::ISource {
                pos: term(&e.nodes[0]),
                neg: term(&e.nodes[1]),
                wave: *wave,
                name,
            },
            ElementValue::Cccii(params) => {
                next_branch += 1;
                Element::Cccii {
                    y: term(&e.nodes[0]),
                    x: term(&e.nodes[1]),
                    z: term(&e.nodes[2]),
                    branch: next_branch - 1,
                    params: *params,
                    name,
                }
            }
        };
        elements.push(el);
    }

    let mut floating: Vec<String> = floating.into_iter().map(String::from).collect();
    floating.sort();
    Ok(Circuit {
        branch_count: next_branch - nodes.len(),
        nodes,
        index,
        elements,
        floating,
    })
}

fn check_grounded_components(
    doc: &NetlistDocument,
    order: &[&str],
    floating: &HashSet<&str>,
) -> Result<(), NetlistError> {
    // union-find over labels, ground included
    let mut id: HashMap<&str, usize> = HashMap::new();
    id.insert(GROUND, 0);
    for &n in order {
        let next = id.len();
        id.entry(n).or_insert(next);
    }
    let mut parent: Vec<usize> = (0..id.len()).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for e in &doc.elements {
        let mut labels = e.nodes.iter().map(|n| id[n.as_str()]);
        if let Some(first) = labels.next() {
            for other in labels {
                let (a, b) = (find(&mut parent, first), find(&mut parent, other));
                parent[a] = b;
            }
        }
    }
    let root = find(&mut parent, 0);
    for &n in order {
        if floating.contains(n) {
            continue;
        }
        if find(&mut parent, id[n]) != root {
            return Err(NetlistError::FloatingSubcircuit {
                node: n.to_string(),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_resistor_with_suffix() {
        let doc = parse_netlist("R1 1 0 1k\n.end").unwrap();
        assert_eq!(
            doc.elements,
            vec![ElementDecl::resistor("R1", "1", "0", 1000.0)]
        );
    }

    #[test]
    fn parses_cccii() {
        let doc = parse_netlist("XA in x out CCCII+ RX=0\n.end").unwrap();
        let e = &doc.elements[0];
        assert_eq!(e.nodes, ["in", "x", "out"]);
        let ElementValue::Cccii(p) = e.value else {
            panic!("not a conveyor")
        };
        assert_eq!(p.polarity(), Polarity::Plus);
        assert_eq!(p.rx_spec(), RxSpec::Explicit(0.0));
        assert_eq!(p.level(), ModelLevel::Ideal);
    }

    #[test]
    fn cccii_bias_and_level() {
        let doc =
            parse_netlist("X1 a b c cccii- IB=50u BETA=1m LEVEL=2 VDD=0.9 VSS=-0.9\n.end").unwrap();
        let ElementValue::Cccii(p) = doc.elements[0].value else {
            panic!()
        };
        assert_eq!(p.polarity(), Polarity::Minus);
        assert_eq!(p.level(), ModelLevel::Clamped);
        assert_eq!(p.vdd(), 0.9);
        assert!((p.rx_ohms() - 1581.1388300841897).abs() < 1e-9);
    }

    #[test]
    fn duplicate_names_case_insensitive() {
        let err = parse_netlist("R1 1 0 1k\nR1 2 0 2k\n.end").unwrap_err();
        assert_eq!(
            err,
            NetlistError::DuplicateName {
                line: 2,
                name: "R1".into()
            }
        );
        assert!(matches!(
            parse_netlist("R1 1 0 1k\nr1 2 0 2k\n.end"),
            Err(NetlistError::DuplicateName { .. })
        ));
    }

    #[test]
    fn located_errors() {
        assert_eq!(
            parse_netlist("R1 1 0 1k").unwrap_err(),
            NetlistError::MissingEnd { line: 2 }
        );
        assert!(matches!(
            parse_netlist("Q1 1 2 3\n.end"),
            Err(NetlistError::UnknownElementKind { line: 1, .. })
        ));
        assert!(matches!(
            parse_netlist("* c\nR1 1 0\n.end"),
            Err(NetlistError::Syntax { line: 2, .. })
        ));
        assert!(matches!(
            parse_netlist("R1 1 0 1k\n.tran 0 1m\n.end"),
            Err(NetlistError::Syntax { line: 2, .. })
        ));
        assert!(matches!(
            parse_netlist(".tran 1u 1m\n.tran 1u 2m\n.end"),
            Err(NetlistError::Syntax { line: 2, .. })
        ));
        assert!(matches!(
            parse_netlist("X1 a b c CCCII+ IB=1u\n.end"),
            Err(NetlistError::Syntax { line: 1, .. })
        ));
    }

    #[test]
    fn suffixes() {
        assert_eq!(parse_value("1k"), Some(1000.0));
        assert_eq!(parse_value("1MEG"), Some(1e6));
        assert_eq!(parse_value("1m"), Some(1e-3));
        assert_eq!(parse_value("2.5u"), Some(2.5 * 1e-6));
        assert_eq!(parse_value("-3e-2"), Some(-0.03));
        assert_eq!(parse_value("1e3k"), Some(1e6));
        assert_eq!(parse_value(".5"), Some(0.5));
        assert_eq!(parse_value("k"), None);
        assert_eq!(parse_value("1x"), None);
        assert_eq!(parse_value("1e"), None);
    }

    #[test]
    fn directives_and_title() {
        let doc = parse_netlist(
            ".title amp\nV1 in 0 SIN(0 50m 1k)\nR1 in 0 1k\n.op\n.tran 20u 5m\n.measure vpp(in)\n.measure gain(in, in)\n.measure power\n.end\nR9 garbage",
        )
        .unwrap();
        assert_eq!(doc.title.as_deref(), Some("amp"));
        assert_eq!(doc.tran(), Some((20.0 * 1e-6, 5.0 * 1e-3)));
        assert_eq!(doc.measures().count(), 3);
        assert_eq!(doc.elements.len(), 2);
    }

    #[test]
    fn serialize_forms() {
        let doc = NetlistDocument {
            elements: vec![ElementDecl::resistor("R1", "1", "0", 1000.0)],
            ..Default::default()
        };
        assert_eq!(serialize(&doc), "R1 1 0 1e3\n.end");
        assert_eq!(serialize(&NetlistDocument::default()), ".end");
    }

    #[test]
    fn validate_counts() {
        let c = validate(&parse_netlist("R1 1 0 1k\n.end").unwrap()).unwrap();
        assert_eq!((c.node_count(), c.branch_count()), (1, 0));
        let c = validate(
            &parse_netlist("V1 1 0 DC 1\nX1 1 2 3 CCCII+ RX=0\nR1 2 0 1k\nR2 3 0 1k\n.end")
                .unwrap(),
        )
        .unwrap();
        assert_eq!((c.node_count(), c.branch_count()), (3, 2));
        assert_eq!(c.dimension(), 5);
    }

    #[test]
    fn validate_errors() {
        let doc = parse_netlist("R1 1 2 1k\n.end").unwrap();
        assert_eq!(validate(&doc), Err(NetlistError::NoGroundReference));
        let doc = parse_netlist("R1 1 0 1k\nR2 2 3 1k\n.end").unwrap();
        assert!(matches!(
            validate(&doc),
            Err(NetlistError::FloatingSubcircuit { .. })
        ));
        let doc = parse_netlist("I1 1 0 DC 1m\nR1 2 0 1k\n.end").unwrap();
        assert!(matches!(
            validate(&doc),
            Err(NetlistError::DanglingNode { .. })
        ));
        let doc = parse_netlist("X1 y 0 0 CCCII+\n.end").unwrap();
        assert!(matches!(
            validate(&doc),
            Err(NetlistError::DanglingNode { .. })
        ));
    }

    #[test]
    fn floating_z_is_dropped() {
        let doc = parse_netlist("V1 in 0 DC 1\nX1 in x zf CCCII+\nR1 x 0 1k\n.end").unwrap();
        let c = validate(&doc).unwrap();
        assert_eq!(c.floating_nodes(), ["zf"]);
        assert_eq!(c.node_index("zf"), None);
        assert_eq!(c.node_count(), 2);
    }
}

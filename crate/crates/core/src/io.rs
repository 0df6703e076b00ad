//! JSON documents for channels, codes and kernels, and float formatting.

use std::collections::BTreeMap;
use std::io;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::channel::Channel;
use crate::codec::{path_to_rank, rank_to_path, CodeSpec, FrozenClass, LeafStat};
use crate::error::{Error, Result};
use crate::gf::{FieldSpec, Kernel};
use crate::transform::SynthChannel;

/// Blahut–Arimoto tolerance used when a document asks for the capacity input.
pub const CAPACITY_TOL: f64 = 1e-11;

/// 17 significant digits, trailing zeros trimmed; plain notation for decimal
/// exponents in `[-5, 16]`.
pub fn fmt_f64(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "NaN".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0.0".into() } else { "0.0".into() };
    }
    let sci = format!("{:.16e}", x);
    let (mant, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let (neg, mant) = mant.strip_prefix('-').map_or((false, mant), |m| (true, m));
    let digits: String = mant.chars().filter(|c| *c != '.').collect();
    let digits = digits.trim_end_matches('0');
    let digits = if digits.is_empty() { "0" } else { digits };
    let mut out = String::new();
    if neg {
        out.push('-');
    }
    if (-5..=16).contains(&exp) {
        if exp < 0 {
            out.push_str("0.");
            out.extend(std::iter::repeat_n('0', (-exp - 1) as usize));
            out.push_str(digits);
        } else {
            let int_len = exp as usize + 1;
            if digits.len() <= int_len {
                out.push_str(digits);
                out.extend(std::iter::repeat_n('0', int_len - digits.len()));
                out.push_str(".0");
            } else {
                out.push_str(&digits[..int_len]);
                out.push('.');
                out.push_str(&digits[int_len..]);
            }
        }
    } else {
        out.push_str(&digits[..1]);
        if digits.len() > 1 {
            out.push('.');
            out.push_str(&digits[1..]);
        }
        out.push_str(&format!("e{exp}"));
    }
    out
}

struct FloatFormatter(PrettyFormatter<'static>);

impl Formatter for FloatFormatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(fmt_f64(value).as_bytes())
    }
    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }
    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Pretty JSON with every float printed by [`fmt_f64`].
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FloatFormatter(PrettyFormatter::new()));
    value.serialize(&mut ser).map_err(|e| Error::Format(e.to_string()))?;
    buf.push(b'\n');
    String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
}

pub fn from_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InputDoc {
    Dist(Vec<f64>),
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelDoc {
    pub p: u32,
    pub m: u32,
    pub output_size: usize,
    pub transition: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_dist: Option<InputDoc>,
}

impl ChannelDoc {
    pub fn from_channel(w: &Channel) -> ChannelDoc {
        ChannelDoc {
            p: w.field().p(),
            m: w.field().m(),
            output_size: w.output_size(),
            transition: w.transition_rows(),
            input_dist: Some(InputDoc::Dist(w.input_dist().to_vec())),
        }
    }

    /// Validates and builds the channel. A missing input law means uniform.
    pub fn to_channel(&self) -> Result<Channel> {
        let field = FieldSpec::new(self.p, self.m)?;
        if let Some((r, row)) = self.transition.iter().enumerate().find(|(_, row)| row.len() != self.output_size) {
            return Err(Error::InvalidChannel(format!(
                "row {r} has {} entries but output_size is {}",
                row.len(),
                self.output_size
            )));
        }
        let uniform = Channel::uniform_input(&field);
        match &self.input_dist {
            None => Channel::new(&field, self.transition.clone(), uniform),
            Some(InputDoc::Dist(d)) => Channel::new(&field, self.transition.clone(), d.clone()),
            Some(InputDoc::Named(name)) => {
                let base = Channel::new(&field, self.transition.clone(), uniform)?;
                match name.as_str() {
                    "uniform" => Ok(base),
                    "capacity" => {
                        let dist = base.capacity_input(CAPACITY_TOL)?;
                        base.with_input(dist)
                    }
                    other => Err(Error::Format(format!("unknown input distribution {other:?}"))),
                }
            }
        }
    }
}

pub fn channel_to_json(w: &Channel) -> Result<String> {
    to_json(&ChannelDoc::from_channel(w))
}

pub fn channel_from_json(text: &str) -> Result<Channel> {
    from_json::<ChannelDoc>(text)?.to_channel()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthChannelDoc {
    #[serde(flatten)]
    pub channel: ChannelDoc,
    pub path: Vec<usize>,
    pub exact: bool,
}

pub fn synth_to_json(s: &SynthChannel) -> Result<String> {
    to_json(&SynthChannelDoc { channel: ChannelDoc::from_channel(&s.channel), path: s.path.clone(), exact: s.exact })
}

pub fn synth_from_json(text: &str) -> Result<SynthChannel> {
    let d: SynthChannelDoc = from_json(text)?;
    Ok(SynthChannel { channel: d.channel.to_channel()?, path: d.path, exact: d.exact })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelDoc {
    pub p: u32,
    pub m: u32,
    pub matrix: Vec<Vec<u64>>,
}

fn matrix_of(g: &Kernel) -> Vec<Vec<u64>> {
    g.rows().into_iter().map(|r| r.into_iter().map(u64::from).collect()).collect()
}

pub fn kernel_to_json(g: &Kernel) -> Result<String> {
    to_json(&KernelDoc { p: g.field().p(), m: g.field().m(), matrix: matrix_of(g) })
}

pub fn kernel_from_json(text: &str) -> Result<Kernel> {
    let d: KernelDoc = from_json(text)?;
    Kernel::from_indices(&FieldSpec::new(d.p, d.m)?, &d.matrix)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeKernelDoc {
    /// 1-based node path from the root.
    pub path: Vec<usize>,
    pub matrix: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafStatDoc {
    pub path: Vec<usize>,
    #[serde(flatten)]
    pub stat: LeafStat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeSpecDoc {
    pub p: u32,
    pub m: u32,
    pub ell: usize,
    pub n: usize,
    pub pi: f64,
    pub theta: f64,
    pub seed: u64,
    pub input_dist: Vec<f64>,
    pub kernels: Vec<NodeKernelDoc>,
    pub info_set: Vec<Vec<usize>>,
    /// Keys are comma-joined 1-based leaf paths.
    pub frozen_class: BTreeMap<String, FrozenClass>,
    pub leaf_stats: Vec<LeafStatDoc>,
}

fn one_based(path: Vec<usize>) -> Vec<usize> {
    path.into_iter().map(|k| k + 1).collect()
}

fn path_key(path: &[usize]) -> String {
    path.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(",")
}

impl CodeSpecDoc {
    pub fn from_spec(spec: &CodeSpec) -> CodeSpecDoc {
        let ell = spec.ell;
        let leaf_path = |r: usize| one_based(rank_to_path(r, ell, spec.n));
        let kernels = spec
            .kernels
            .iter()
            .enumerate()
            .flat_map(|(m, level)| {
                level
                    .iter()
                    .enumerate()
                    .map(move |(r, g)| NodeKernelDoc { path: one_based(rank_to_path(r, ell, m)), matrix: matrix_of(g) })
            })
            .collect();
        CodeSpecDoc {
            p: spec.field.p(),
            m: spec.field.m(),
            ell,
            n: spec.n,
            pi: spec.pi,
            theta: spec.theta,
            seed: spec.seed,
            input_dist: spec.input_dist.clone(),
            kernels,
            info_set: spec.info_set.iter().map(|&r| leaf_path(r)).collect(),
            frozen_class: spec.frozen_class.iter().map(|(&r, &c)| (path_key(&leaf_path(r)), c)).collect(),
            leaf_stats: spec
                .leaf_stats
                .iter()
                .enumerate()
                .map(|(r, s)| LeafStatDoc { path: leaf_path(r), stat: s.clone() })
                .collect(),
        }
    }

    pub fn to_spec(&self) -> Result<CodeSpec> {
        let field = FieldSpec::new(self.p, self.m)?;
        let ell = self.ell;
        if ell < 2 || self.n < 1 {
            return Err(Error::Format("need ℓ ≥ 2 and n ≥ 1".into()));
        }
        let rank = |path: &[usize], depth: usize| -> Result<usize> {
            if path.len() != depth || path.iter().any(|&k| k < 1 || k > ell) {
                return Err(Error::Format(format!("bad path {path:?} at depth {depth}")));
            }
            Ok(path_to_rank(&path.iter().map(|k| k - 1).collect::<Vec<_>>(), ell))
        };
        let mut levels: Vec<Vec<Option<Kernel>>> = (0..self.n).map(|m| vec![None; ell.pow(m as u32)]).collect();
        for k in &self.kernels {
            let depth = k.path.len();
            if depth >= self.n {
                return Err(Error::Format(format!("kernel path {:?} is too deep", k.path)));
            }
            let r = rank(&k.path, depth)?;
            levels[depth][r] = Some(Kernel::from_indices(&field, &k.matrix)?);
        }
        let kernels = levels
            .into_iter()
            .map(|level| {
                level
                    .into_iter()
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| Error::Format("every internal node needs a kernel".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        let info_set = self.info_set.iter().map(|p| rank(p, self.n)).collect::<Result<Vec<_>>>()?;
        let mut frozen_class = BTreeMap::new();
        for (key, &c) in &self.frozen_class {
            let path = key
                .split(',')
                .map(|s| s.trim().parse::<usize>().map_err(|e| Error::Format(format!("frozen key {key:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            frozen_class.insert(rank(&path, self.n)?, c);
        }
        let mut leaf_stats: Vec<Option<LeafStat>> = vec![None; ell.pow(self.n as u32)];
        for l in &self.leaf_stats {
            leaf_stats[rank(&l.path, self.n)?] = Some(l.stat.clone());
        }
        let leaf_stats = leaf_stats
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::Format("every leaf needs statistics".into()))?;
        let mut info_set = info_set;
        info_set.sort_unstable();
        let spec = CodeSpec {
            field,
            ell,
            n: self.n,
            pi: self.pi,
            theta: self.theta,
            seed: self.seed,
            input_dist: self.input_dist.clone(),
            kernels,
            info_set,
            frozen_class,
            leaf_stats,
        };
        spec.validate()?;
        Ok(spec)
    }
}

pub fn spec_to_json(spec: &CodeSpec) -> Result<String> {
    to_json(&CodeSpecDoc::from_spec(spec))
}

pub fn spec_from_json(text: &str) -> Result<CodeSpec> {
    from_json::<CodeSpecDoc>(text)?.to_spec()
}

/// Received-block file: output indices or posterior rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReceivedDoc {
    Symbols(Vec<usize>),
    Posteriors(Vec<Vec<f64>>),
}

impl From<ReceivedDoc> for crate::codec::Received {
    fn from(d: ReceivedDoc) -> Self {
        match d {
            ReceivedDoc::Symbols(s) => crate::codec::Received::Symbols(s),
            ReceivedDoc::Posteriors(p) => crate::codec::Received::Posteriors(p),
        }
    }
}

//! Token traces: one generated sequence with paired clean/noisy token
//! probabilities, plus the JSON-lines file format used to exchange them.
//!
//! File layout: the first non-empty line is a header
//! `{"format":"visdep-trace","version":1,"noise_step":N}` and every
//! following line is one record
//! `{"sample_id":..,"tokens":[..],"surfaces":[..],"p_clean":[..],"p_noisy":[..],"eos_index":..}`.
//! Probabilities are plain probabilities (not logs), written with
//! shortest-round-trip precision so reading back yields identical `f64`s.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_NAME: &str = "visdep-trace";
pub const FORMAT_VERSION: u32 = 1;

/// One generated sequence with per-token probabilities under the clean and
/// the noised condition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TokenTrace {
    sample_id: String,
    tokens: Vec<u32>,
    surfaces: Vec<String>,
    p_clean: Vec<f64>,
    p_noisy: Vec<f64>,
    eos_index: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrace {
    sample_id: String,
    tokens: Vec<u32>,
    surfaces: Vec<String>,
    p_clean: Vec<f64>,
    p_noisy: Vec<f64>,
    eos_index: Option<usize>,
}

impl TokenTrace {
    pub fn new(
        sample_id: impl Into<String>,
        tokens: Vec<u32>,
        surfaces: Vec<String>,
        p_clean: Vec<f64>,
        p_noisy: Vec<f64>,
        eos_index: Option<usize>,
    ) -> Result<Self> {
        let trace = TokenTrace {
            sample_id: sample_id.into(),
            tokens,
            surfaces,
            p_clean,
            p_noisy,
            eos_index,
        };
        trace.validate()?;
        Ok(trace)
    }

    fn validate(&self) -> Result<()> {
        let ctx = || format!("sample '{}'", self.sample_id);
        let n = self.tokens.len();
        if n == 0 {
            return Err(Error::invariant(ctx(), "tokens", "trace must contain at least one token"));
        }
        for (field, len) in [
            ("surfaces", self.surfaces.len()),
            ("p_clean", self.p_clean.len()),
            ("p_noisy", self.p_noisy.len()),
        ] {
            if len != n {
                return Err(Error::invariant(
                    ctx(),
                    field,
                    format!("length {len} differs from tokens length {n}"),
                ));
            }
        }
        for (field, probs) in [("p_clean", &self.p_clean), ("p_noisy", &self.p_noisy)] {
            if let Some((i, p)) = probs
                .iter()
                .enumerate()
                .find(|(_, p)| !(0.0..=1.0).contains(*p))
            {
                return Err(Error::invariant(
                    ctx(),
                    format!("{field}[{i}]"),
                    format!("probability {p} outside [0, 1]"),
                ));
            }
        }
        if let Some(eos) = self.eos_index {
            if eos != n - 1 {
                return Err(Error::invariant(
                    ctx(),
                    "eos_index",
                    format!("eos_index {eos} is not the last index {}", n - 1),
                ));
            }
        }
        Ok(())
    }

    pub fn sample_id(&self) -> &str {
        &self.sample_id
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn surfaces(&self) -> &[String] {
        &self.surfaces
    }

    pub fn p_clean(&self) -> &[f64] {
        &self.p_clean
    }

    pub fn p_noisy(&self) -> &[f64] {
        &self.p_noisy
    }

    pub fn eos_index(&self) -> Option<usize> {
        self.eos_index
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl<'de> Deserialize<'de> for TokenTrace {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawTrace::deserialize(d)?;
        TokenTrace::new(
            raw.sample_id,
            raw.tokens,
            raw.surfaces,
            raw.p_clean,
            raw.p_noisy,
            raw.eos_index,
        )
        .map_err(serde::de::Error::custom)
    }
}

/// Header line of a trace file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceHeader {
    pub format: String,
    pub version: u32,
    pub noise_step: usize,
    /// Free-form description of whatever produced the traces.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
}

impl TraceHeader {
    pub fn new(noise_step: usize) -> Self {
        TraceHeader {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            noise_step,
            generator: None,
        }
    }

    pub fn with_generator(mut self, generator: impl Into<String>) -> Self {
        self.generator = Some(generator.into());
        self
    }
}

/// An ordered collection of traces with unique sample ids.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub header: TraceHeader,
    traces: Vec<TokenTrace>,
}

impl TraceFile {
    pub fn new(header: TraceHeader, traces: Vec<TokenTrace>) -> Result<Self> {
        let mut seen = HashSet::new();
        for t in &traces {
            if !seen.insert(t.sample_id()) {
                return Err(Error::invariant(
                    format!("sample '{}'", t.sample_id()),
                    "sample_id",
                    "duplicate sample_id in trace file",
                ));
            }
        }
        Ok(TraceFile { header, traces })
    }

    pub fn traces(&self) -> &[TokenTrace] {
        &self.traces
    }

    pub fn into_traces(self) -> Vec<TokenTrace> {
        self.traces
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    /// Total number of tokens across all traces.
    pub fn token_count(&self) -> usize {
        self.traces.iter().map(TokenTrace::len).sum()
    }
}

/// Read a trace file. A completely empty file yields an empty collection
/// with a default header.
pub fn read_traces(path: impl AsRef<Path>) -> Result<TraceFile> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_traces(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn parse_traces<R: BufRead>(reader: R) -> Result<TraceFile> {
    let mut header: Option<TraceHeader> = None;
    let mut traces = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        if header.is_none() {
            let h: TraceHeader = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: lineno,
                message: format!("expected trace header: {e}"),
            })?;
            if h.format != FORMAT_NAME {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("unknown format '{}'", h.format),
                });
            }
            if h.version != FORMAT_VERSION {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("unsupported version {}", h.version),
                });
            }
            header = Some(h);
            continue;
        }
        let trace: TokenTrace = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if !seen.insert(trace.sample_id.clone()) {
            return Err(Error::invariant(
                format!("sample '{}'", trace.sample_id),
                "sample_id",
                format!("duplicate sample_id at line {lineno}"),
            ));
        }
        traces.push(trace);
    }
    Ok(TraceFile {
        header: header.unwrap_or_else(|| TraceHeader::new(crate::noise::DEFAULT_NOISE_STEP)),
        traces,
    })
}

pub fn write_traces(traces: &TraceFile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serialize_traces(traces, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn serialize_traces<W: Write>(traces: &TraceFile, w: &mut W) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, &traces.header)?;
    w.write_all(b"\n")?;
    for t in &traces.traces {
        serde_json::to_writer(&mut *w, t)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

//! Run configuration shared by the command-line tools.
//!
//! Files are flat `key = value` lines; blank lines and lines starting with
//! `#` are ignored. Values given on the command line override the file,
//! which overrides the defaults.

use std::fmt::Write;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::SESSION_EDGE_NS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Volume cap `K`.
    pub k: u32,
    /// Number of periods `M`.
    pub periods: u32,
    /// Additive smoothing for estimated rows.
    pub smoothing: f64,
    /// Value iteration stopping tolerance.
    pub tol: f64,
    pub seed: u64,
    pub paths: usize,
    /// Events generated by `fixture`.
    pub events: usize,
    /// Continuation probability of the fixture model.
    pub theta: f64,
    /// Weight on the last order type in the fixture model.
    pub e_effect: f64,
    /// Session open and close in nanoseconds; the trim applies only when both are set.
    pub session_open_ns: Option<i64>,
    pub session_close_ns: Option<i64>,
    /// Width trimmed from each end of the session.
    pub session_edge_ns: i64,
    pub input: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            k: 10,
            periods: 10,
            smoothing: 0.0,
            tol: 1e-9,
            seed: 2024,
            paths: 100_000,
            events: 500_000,
            theta: 0.81,
            e_effect: 0.5,
            session_open_ns: None,
            session_close_ns: None,
            session_edge_ns: SESSION_EDGE_NS,
            input: None,
            output_dir: PathBuf::from("."),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::InvalidArgument(format!("bad value {value:?} for {key}")))
}

fn opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value.is_empty() {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "k" => self.k = parse(key, value)?,
            "periods" => self.periods = parse(key, value)?,
            "smoothing" => self.smoothing = parse(key, value)?,
            "tol" => self.tol = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "paths" => self.paths = parse(key, value)?,
            "events" => self.events = parse(key, value)?,
            "theta" => self.theta = parse(key, value)?,
            "e_effect" => self.e_effect = parse(key, value)?,
            "session_open_ns" => self.session_open_ns = opt(key, value)?,
            "session_close_ns" => self.session_close_ns = opt(key, value)?,
            "session_edge_ns" => self.session_edge_ns = parse(key, value)?,
            "input" => self.input = (!value.is_empty()).then(|| PathBuf::from(value)),
            "output_dir" => self.output_dir = PathBuf::from(value),
            _ => return Err(Error::InvalidArgument(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Apply every `key = value` line of `text` on top of `self`.
    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse { line: n + 1, msg: format!("expected key = value, found {line:?}") })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        c.merge_text(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Every key, one per line, in a form `from_text` reads back unchanged.
    pub fn to_text(&self) -> String {
        let show = |p: &Option<i64>| p.map(|v| v.to_string()).unwrap_or_default();
        let mut s = String::new();
        let _ = writeln!(s, "k = {}", self.k);
        let _ = writeln!(s, "periods = {}", self.periods);
        let _ = writeln!(s, "smoothing = {:?}", self.smoothing);
        let _ = writeln!(s, "tol = {:?}", self.tol);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "paths = {}", self.paths);
        let _ = writeln!(s, "events = {}", self.events);
        let _ = writeln!(s, "theta = {:?}", self.theta);
        let _ = writeln!(s, "e_effect = {:?}", self.e_effect);
        let _ = writeln!(s, "session_open_ns = {}", show(&self.session_open_ns));
        let _ = writeln!(s, "session_close_ns = {}", show(&self.session_close_ns));
        let _ = writeln!(s, "session_edge_ns = {}", self.session_edge_ns);
        let _ = writeln!(s, "input = {}", self.input.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
        let _ = writeln!(s, "output_dir = {}", self.output_dir.display());
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.k < 2 {
            return bad(format!("k = {} must be at least 2", self.k));
        }
        if self.periods < 1 {
            return bad("periods must be at least 1".into());
        }
        if self.paths < 1 {
            return bad("paths must be at least 1".into());
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return bad(format!("tol = {} must be positive", self.tol));
        }
        if !(self.smoothing >= 0.0 && self.smoothing.is_finite()) {
            return bad(format!("smoothing = {} must be non-negative", self.smoothing));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return bad(format!("theta = {} outside [0, 1]", self.theta));
        }
        if !(self.e_effect >= 0.0 && self.e_effect.is_finite()) {
            return bad(format!("e_effect = {} must be non-negative", self.e_effect));
        }
        if self.session_edge_ns < 0 {
            return bad("session_edge_ns must be non-negative".into());
        }
        if let (Some(o), Some(c)) = (self.session_open_ns, self.session_close_ns) {
            if o >= c {
                return bad(format!("session open {o} is not before close {c}"));
            }
        }
        Ok(())
    }
}

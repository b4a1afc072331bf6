//! Run configuration: line-based key=value sections, strict about unknown
//! keys, with a canonical serialization for hashing and round-trips.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use ctmdp_core::queueing::{InitialLaw, QueueParams};

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        ConfigError {
            line: Some(line),
            message: message.into(),
        }
    }

    fn plain(message: impl Into<String>) -> Self {
        ConfigError {
            line: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Solve,
    Simulate,
    Verify,
    Example,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Simulate => "simulate",
            Command::Verify => "verify",
            Command::Example => "example",
        }
    }

    fn parse(s: &str) -> Option<Command> {
        match s {
            "solve" => Some(Command::Solve),
            "simulate" => Some(Command::Simulate),
            "verify" => Some(Command::Verify),
            "example" => Some(Command::Example),
            _ => None,
        }
    }
}

/// Where the model comes from: a model file or the built-in example.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelSource {
    Path(PathBuf),
    Example(ExampleConfig),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExampleConfig {
    pub params: QueueParams,
    pub n_states: usize,
}

impl Default for ExampleConfig {
    fn default() -> Self {
        ExampleConfig {
            params: QueueParams::desk_default(),
            n_states: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub source: ModelSource,
    pub tol: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub episodes: usize,
    /// Simulation horizon; picked from the tail bound when absent.
    pub horizon: Option<f64>,
    /// Time at which the moment bound is probed by `verify`.
    pub moment_time: f64,
    pub max_iter: usize,
    /// Largest core-set level probed by `verify`.
    pub probe_levels: u32,
}

impl RunConfig {
    /// Canonical text form: parsing it reproduces the configuration exactly.
    pub fn canonical_text(&self) -> String {
        let mut out = String::from("[run]\n");
        out.push_str(&format!("command = {}\n", self.command.name()));
        if let ModelSource::Path(p) = &self.source {
            out.push_str(&format!("model = {}\n", p.display()));
        }
        out.push_str(&format!("tol = {}\n", self.tol));
        out.push_str(&format!("seed = {}\n", self.seed));
        out.push_str(&format!("out = {}\n", self.out.display()));
        out.push_str(&format!("episodes = {}\n", self.episodes));
        if let Some(h) = self.horizon {
            out.push_str(&format!("horizon = {h}\n"));
        }
        out.push_str(&format!("moment_time = {}\n", self.moment_time));
        out.push_str(&format!("max_iter = {}\n", self.max_iter));
        out.push_str(&format!("probe_levels = {}\n", self.probe_levels));
        if let ModelSource::Example(ex) = &self.source {
            let p = &ex.params;
            out.push_str("\n[example]\n");
            out.push_str(&format!("lambda = {}\n", p.lambda));
            out.push_str(&format!("alpha = {}\n", p.alpha));
            out.push_str(&format!("c1 = {}\n", p.c1));
            out.push_str(&format!("c2 = {}\n", p.c2));
            out.push_str(&format!("abar = {}\n", p.a_budget));
            out.push_str(&format!(
                "gamma = uniform {} {}\n",
                p.initial.uniform_lo, p.initial.uniform_hi
            ));
            out.push_str(&format!("gamma_atom = {}\n", p.initial.atom_at_zero));
            out.push_str(&format!("n_states = {}\n", ex.n_states));
        }
        out
    }
}

/// A parsed key: value text plus the line it came from.
struct Entry {
    value: String,
    line: usize,
    used: bool,
}

struct Section {
    entries: BTreeMap<String, Entry>,
    line: usize,
}

/// Splits section-structured key=value text; rejects duplicates.
fn split_sections(text: &str) -> Result<BTreeMap<String, Section>, ConfigError> {
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let name = name.trim().to_string();
            if sections.contains_key(&name) {
                return Err(ConfigError::at(line_no, format!("duplicate section [{name}]")));
            }
            sections.insert(
                name.clone(),
                Section {
                    entries: BTreeMap::new(),
                    line: line_no,
                },
            );
            current = Some(name);
            continue;
        }
        let Some(section_name) = &current else {
            return Err(ConfigError::at(line_no, "content before the first section header"));
        };
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::at(line_no, format!("expected key = value, got `{line}`")));
        };
        let key = key.trim().to_string();
        let section = sections.get_mut(section_name).unwrap();
        if section.entries.contains_key(&key) {
            return Err(ConfigError::at(line_no, format!("duplicate key `{key}`")));
        }
        section.entries.insert(
            key,
            Entry {
                value: value.trim().to_string(),
                line: line_no,
                used: false,
            },
        );
    }
    Ok(sections)
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(pos) => &line[..pos],
        None => line,
    }
}

struct SectionReader<'a> {
    section: &'a mut Section,
}

impl SectionReader<'_> {
    fn take(&mut self, key: &str) -> Option<(String, usize)> {
        self.section.entries.get_mut(key).map(|e| {
            e.used = true;
            (e.value.clone(), e.line)
        })
    }

    fn f64(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse::<f64>()
                .map(Some)
                .map_err(|_| ConfigError::at(line, format!("key `{key}`: malformed number `{v}`"))),
        }
    }

    fn positive_f64(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        match (self.f64(key)?, self.line_of(key)) {
            (None, _) => Ok(None),
            (Some(v), line) if v > 0.0 && v.is_finite() => {
                let _ = line;
                Ok(Some(v))
            }
            (Some(v), line) => Err(ConfigError {
                line,
                message: format!("key `{key}` must be positive, got {v}"),
            }),
        }
    }

    fn usize(&mut self, key: &str) -> Result<Option<usize>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse::<usize>()
                .map(Some)
                .map_err(|_| ConfigError::at(line, format!("key `{key}`: malformed integer `{v}`"))),
        }
    }

    fn u64(&mut self, key: &str) -> Result<Option<u64>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse::<u64>()
                .map(Some)
                .map_err(|_| ConfigError::at(line, format!("key `{key}`: malformed integer `{v}`"))),
        }
    }

    fn line_of(&self, key: &str) -> Option<usize> {
        self.section.entries.get(key).map(|e| e.line)
    }
}

fn reject_unused(sections: &BTreeMap<String, Section>) -> Result<(), ConfigError> {
    for section in sections.values() {
        for (key, entry) in &section.entries {
            if !entry.used {
                return Err(ConfigError::at(entry.line, format!("unknown key `{key}`")));
            }
        }
    }
    Ok(())
}

pub fn parse_config_str(text: &str) -> Result<RunConfig, ConfigError> {
    let mut sections = split_sections(text)?;

    for name in sections.keys() {
        if name != "run" && name != "example" {
            let line = sections[name].line;
            return Err(ConfigError::at(line, format!("unknown section [{name}]")));
        }
    }

    let has_example = sections.contains_key("example");
    let example = if has_example {
        let section = sections.get_mut("example").unwrap();
        let mut r = SectionReader { section };
        let defaults = ExampleConfig::default();
        let lambda = r.positive_f64("lambda")?.unwrap_or(defaults.params.lambda);
        let alpha = r.positive_f64("alpha")?.unwrap_or(defaults.params.alpha);
        let c1 = r.f64("c1")?.unwrap_or(defaults.params.c1);
        let c2 = r.f64("c2")?.unwrap_or(defaults.params.c2);
        let abar = r.f64("abar")?.unwrap_or(defaults.params.a_budget);
        let atom = r.f64("gamma_atom")?.unwrap_or(0.0);
        let initial = match r.take("gamma") {
            None => InitialLaw {
                atom_at_zero: atom,
                ..defaults.params.initial
            },
            Some((v, line)) => parse_gamma(&v, line, atom)?,
        };
        let n_states = r.usize("n_states")?.unwrap_or(defaults.n_states);
        if n_states < 2 {
            return Err(ConfigError::plain("key `n_states` must be at least 2"));
        }
        let params = QueueParams {
            lambda,
            alpha,
            c1,
            c2,
            a_budget: abar,
            initial,
        };
        params
            .validate()
            .map_err(|e| ConfigError::plain(format!("[example] section: {e}")))?;
        Some(ExampleConfig { params, n_states })
    } else {
        None
    };

    let Some(run_section) = sections.get_mut("run") else {
        return Err(ConfigError::plain("missing [run] section"));
    };
    let mut r = SectionReader { section: run_section };

    let command = match r.take("command") {
        None => return Err(ConfigError::plain("missing required key `command`")),
        Some((v, line)) => Command::parse(&v)
            .ok_or_else(|| ConfigError::at(line, format!("unknown command `{v}`")))?,
    };

    let model_path = r.take("model").map(|(v, _)| PathBuf::from(v));
    let source = match (model_path, example) {
        (Some(p), None) => ModelSource::Path(p),
        (None, Some(ex)) => ModelSource::Example(ex),
        (Some(_), Some(_)) => {
            return Err(ConfigError::plain(
                "both `model` and an [example] section given; pick one",
            ))
        }
        (None, None) => {
            if command == Command::Example {
                ModelSource::Example(ExampleConfig::default())
            } else {
                return Err(ConfigError::plain(
                    "missing required key `model` (or an [example] section)",
                ));
            }
        }
    };
    if command == Command::Example && !matches!(source, ModelSource::Example(_)) {
        return Err(ConfigError::plain(
            "the example command needs an [example] section, not a model file",
        ));
    }

    let tol = r.positive_f64("tol")?.unwrap_or(1e-9);
    let seed = r.u64("seed")?.unwrap_or(0);
    let out = PathBuf::from(r.take("out").map(|(v, _)| v).unwrap_or_else(|| "out".into()));
    let episodes = r.usize("episodes")?.unwrap_or(10_000);
    if episodes < 2 {
        return Err(ConfigError::plain("key `episodes` must be at least 2"));
    }
    let horizon = r.positive_f64("horizon")?;
    let moment_time = r.positive_f64("moment_time")?.unwrap_or(1.0);
    let max_iter = r.usize("max_iter")?.unwrap_or(2_000_000);
    if max_iter == 0 {
        return Err(ConfigError::plain("key `max_iter` must be positive"));
    }
    let probe_levels = r.u64("probe_levels")?.unwrap_or(20) as u32;
    if probe_levels == 0 {
        return Err(ConfigError::plain("key `probe_levels` must be positive"));
    }

    reject_unused(&sections)?;

    Ok(RunConfig {
        command,
        source,
        tol,
        seed,
        out,
        episodes,
        horizon,
        moment_time,
        max_iter,
        probe_levels,
    })
}

fn parse_gamma(value: &str, line: usize, atom: f64) -> Result<InitialLaw, ConfigError> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    match parts.as_slice() {
        ["uniform", lo, hi] => {
            let lo: f64 = lo
                .parse()
                .map_err(|_| ConfigError::at(line, "key `gamma`: malformed number"))?;
            let hi: f64 = hi
                .parse()
                .map_err(|_| ConfigError::at(line, "key `gamma`: malformed number"))?;
            Ok(InitialLaw {
                atom_at_zero: atom,
                uniform_lo: lo,
                uniform_hi: hi,
            })
        }
        _ => Err(ConfigError::at(
            line,
            "key `gamma`: expected `uniform LO HI`",
        )),
    }
}

pub fn parse_config(path: &std::path::Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::plain(format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text)
}

/// FNV-1a over the canonical text; stable across runs and platforms.
pub fn config_hash(config: &RunConfig) -> u64 {
    fnv1a(config.canonical_text().as_bytes())
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

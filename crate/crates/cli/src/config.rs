//! Flat `key = value` experiment configuration.
//!
//! ```text
//! # comments run to end of line
//! [tree]
//! branching = 2
//! depth = 4
//!
//! [network]
//! activations = linear, relu
//!
//! [experiment]
//! seeds = 0..20
//! schedules = base, relearn
//!
//! [schedule.relearn]
//! relearn_epochs = 200
//! ```
//!
//! Every key is optional; omitted keys take the documented defaults, and
//! [`ExperimentConfig::render`] writes all of them back out.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use sdsim_core::{Activation, FrequencyRule, NaiveModel, Thresholds, TreeSpec};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    /// 1-based line, or 0 when the problem is not tied to a line.
    pub line: usize,
    pub msg: String,
}

impl ConfigError {
    fn at(line: usize, msg: impl Into<String>) -> Self {
        ConfigError {
            line,
            msg: msg.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "{}", self.msg)
        } else {
            write!(f, "line {}: {}", self.line, self.msg)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSection {
    pub hidden: usize,
    pub init_scale: f64,
    pub learning_rate: f64,
    pub activations: Vec<Activation>,
    pub epsilon: f64,
    pub max_epochs: usize,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            hidden: 16,
            init_scale: 1e-3,
            learning_rate: 0.05,
            activations: vec![Activation::Linear, Activation::Relu],
            epsilon: 1e-8,
            max_epochs: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSection {
    pub thresholds: Thresholds,
    pub naive: NaiveModel,
    /// Distance slack within which forced decoding treats items as tied.
    pub tie_tolerance: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            thresholds: Thresholds::default(),
            naive: NaiveModel::Zero,
            tie_tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleSpec {
    pub name: String,
    pub per_step: usize,
    pub relearn_epochs: usize,
    pub frequency: FrequencyRule,
    pub relearn_rate: Option<f64>,
}

impl ScheduleSpec {
    /// Built-in schedules available by name without a section.
    pub fn builtin(name: &str) -> Option<ScheduleSpec> {
        let (epochs, frequency) = match name {
            "base" => (0, FrequencyRule::Uniform),
            "relearn" => (200, FrequencyRule::Uniform),
            "relearn_freq" => (200, FrequencyRule::OddItemsDouble),
            _ => return None,
        };
        Some(ScheduleSpec {
            name: name.to_string(),
            per_step: 1,
            relearn_epochs: epochs,
            frequency,
            relearn_rate: None,
        })
    }

    fn blank(name: &str) -> ScheduleSpec {
        ScheduleSpec {
            name: name.to_string(),
            per_step: 1,
            relearn_epochs: 0,
            frequency: FrequencyRule::Uniform,
            relearn_rate: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub tree: TreeSpec,
    pub network: NetworkSection,
    pub analysis: AnalysisSection,
    pub schedules: Vec<ScheduleSpec>,
    pub seeds: Vec<u64>,
    /// Atrophy fractions at which summary tables are taken.
    pub checkpoints: Vec<f64>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            tree: TreeSpec::default(),
            network: NetworkSection::default(),
            analysis: AnalysisSection::default(),
            schedules: ["base", "relearn"]
                .iter()
                .map(|n| ScheduleSpec::builtin(n).unwrap())
                .collect(),
            seeds: (0..20).collect(),
            checkpoints: vec![0.5],
            output_dir: PathBuf::from("out"),
        }
    }
}

/// One parsed `key = value` line.
struct Entry {
    line: usize,
    value: String,
}

type Section = BTreeMap<String, Entry>;

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn split_sections(text: &str) -> Result<Vec<(String, usize, Section)>, ConfigError> {
    let mut sections: Vec<(String, usize, Section)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = strip_comment(raw).trim();
        if body.is_empty() {
            continue;
        }
        if let Some(name) = body.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::at(line, "unterminated section header"))?
                .trim();
            if sections.iter().any(|(n, _, _)| n == name) {
                return Err(ConfigError::at(line, format!("duplicate section [{name}]")));
            }
            sections.push((name.to_string(), line, Section::new()));
            continue;
        }
        let (key, value) = body.split_once('=').ok_or_else(|| {
            ConfigError::at(line, format!("expected `key = value`, got `{body}`"))
        })?;
        let (key, value) = (key.trim(), value.trim());
        let Some((_, _, section)) = sections.last_mut() else {
            return Err(ConfigError::at(line, "key outside of any section"));
        };
        if section.contains_key(key) {
            return Err(ConfigError::at(line, format!("duplicate key `{key}`")));
        }
        section.insert(
            key.to_string(),
            Entry {
                line,
                value: value.to_string(),
            },
        );
    }
    Ok(sections)
}

struct Reader<'a> {
    name: &'a str,
    entries: Section,
}

impl<'a> Reader<'a> {
    fn take<T>(
        &mut self,
        key: &str,
        parse: impl FnOnce(&str) -> Result<T, String>,
    ) -> Result<Option<T>, ConfigError> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(e) => parse(&e.value)
                .map(Some)
                .map_err(|msg| ConfigError::at(e.line, format!("[{}] {key}: {msg}", self.name))),
        }
    }

    fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map(|e| e.line).unwrap_or(0)
    }

    fn finish(self) -> Result<(), ConfigError> {
        match self.entries.into_iter().next() {
            Some((key, e)) => Err(ConfigError::at(
                e.line,
                format!("unknown key `{key}` in [{}]", self.name),
            )),
            None => Ok(()),
        }
    }
}

fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("cannot parse `{s}`"))
}

fn positive_usize(s: &str) -> Result<usize, String> {
    let v: usize = parse_num(s)?;
    if v == 0 {
        return Err("must be at least 1".into());
    }
    Ok(v)
}

fn positive_f64(s: &str) -> Result<f64, String> {
    let v: f64 = parse_num(s)?;
    if !(v.is_finite() && v > 0.0) {
        return Err(format!("must be a positive number, got {s}"));
    }
    Ok(v)
}

fn nonneg_f64(s: &str) -> Result<f64, String> {
    let v: f64 = parse_num(s)?;
    if !(v.is_finite() && v >= 0.0) {
        return Err(format!("must be a nonnegative number, got {s}"));
    }
    Ok(v)
}

fn list(s: &str) -> Vec<&str> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .collect()
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (parse_num(a.trim())?, parse_num(b.trim())?);
        if a >= b {
            return Err(format!("empty seed range {s}"));
        }
        return Ok((a..b).collect());
    }
    list(s).into_iter().map(parse_num).collect()
}

fn parse_frequency(s: &str) -> Result<FrequencyRule, String> {
    match s {
        "uniform" => Ok(FrequencyRule::Uniform),
        "odd_items_double" => Ok(FrequencyRule::OddItemsDouble),
        _ => {
            let weights = list(s)
                .into_iter()
                .map(positive_f64)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| {
                    format!("expected uniform, odd_items_double or positive weights, got `{s}`")
                })?;
            if weights.is_empty() {
                return Err("empty weight list".into());
            }
            Ok(FrequencyRule::Explicit(weights))
        }
    }
}

/// Short name of a frequency rule; explicit weights are labelled `explicit`.
pub fn frequency_label(rule: &FrequencyRule) -> String {
    match rule {
        FrequencyRule::Explicit(_) => "explicit".into(),
        other => render_frequency(other),
    }
}

fn render_frequency(rule: &FrequencyRule) -> String {
    match rule {
        FrequencyRule::Uniform => "uniform".into(),
        FrequencyRule::OddItemsDouble => "odd_items_double".into(),
        FrequencyRule::Explicit(w) => w
            .iter()
            .map(|v| format!("{v:?}"))
            .collect::<Vec<_>>()
            .join(", "),
    }
}

fn render_seeds(seeds: &[u64]) -> String {
    let contiguous = seeds.len() > 1 && seeds.windows(2).all(|w| w[1] == w[0] + 1);
    if contiguous {
        format!("{}..{}", seeds[0], seeds[seeds.len() - 1] + 1)
    } else {
        seeds
            .iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join(", ")
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig::default();
    let mut schedule_sections: BTreeMap<String, (usize, Section)> = BTreeMap::new();
    let mut schedule_names: Option<(usize, Vec<String>)> = None;

    for (name, header_line, entries) in split_sections(text)? {
        let mut r = Reader {
            name: &name,
            entries,
        };
        match name.as_str() {
            "tree" => {
                if let Some(v) = r.take("branching", parse_num)? {
                    cfg.tree.branching = v;
                }
                if let Some(v) = r.take("depth", parse_num)? {
                    cfg.tree.depth = v;
                }
                if let Some(v) = r.take("seed", parse_num)? {
                    cfg.tree.seed = v;
                }
                cfg.tree
                    .validate()
                    .map_err(|e| ConfigError::at(header_line, e.to_string()))?;
            }
            "network" => {
                let n = &mut cfg.network;
                if let Some(v) = r.take("hidden", positive_usize)? {
                    n.hidden = v;
                }
                if let Some(v) = r.take("init_scale", nonneg_f64)? {
                    n.init_scale = v;
                }
                if let Some(v) = r.take("learning_rate", positive_f64)? {
                    n.learning_rate = v;
                }
                if let Some(v) = r.take("epsilon", positive_f64)? {
                    n.epsilon = v;
                }
                if let Some(v) = r.take("max_epochs", positive_usize)? {
                    n.max_epochs = v;
                }
                let line = r.line_of("activations");
                if let Some(v) = r.take("activations", |s| {
                    list(s)
                        .into_iter()
                        .map(|a| a.parse::<Activation>().map_err(|e| e.to_string()))
                        .collect::<Result<Vec<_>, _>>()
                })? {
                    if v.is_empty() {
                        return Err(ConfigError::at(line, "at least one activation required"));
                    }
                    let mut seen = v.clone();
                    seen.dedup();
                    if seen.len() != v.len()
                        || v.iter().enumerate().any(|(i, a)| v[..i].contains(a))
                    {
                        return Err(ConfigError::at(line, "activations must be distinct"));
                    }
                    n.activations = v;
                }
            }
            "analysis" => {
                let a = &mut cfg.analysis;
                if let Some(v) = r.take("tau_super", positive_f64)? {
                    a.thresholds.superordinate = v;
                }
                if let Some(v) = r.take("tau_correct", positive_f64)? {
                    a.thresholds.correct = v;
                }
                if let Some(v) = r.take("naive", |s| {
                    s.parse::<NaiveModel>().map_err(|e| e.to_string())
                })? {
                    a.naive = v;
                }
                if let Some(v) = r.take("tie_tolerance", nonneg_f64)? {
                    a.tie_tolerance = v;
                }
                a.thresholds
                    .validate()
                    .map_err(|e| ConfigError::at(header_line, e.to_string()))?;
            }
            "experiment" => {
                let line = r.line_of("seeds");
                if let Some(v) = r.take("seeds", parse_seeds)? {
                    if v.is_empty() {
                        return Err(ConfigError::at(line, "at least one seed required"));
                    }
                    let mut sorted = v.clone();
                    sorted.sort_unstable();
                    sorted.dedup();
                    if sorted.len() != v.len() {
                        return Err(ConfigError::at(line, "seeds must be distinct"));
                    }
                    cfg.seeds = v;
                }
                let line = r.line_of("checkpoints");
                if let Some(v) = r.take("checkpoints", |s| {
                    list(s)
                        .into_iter()
                        .map(parse_num::<f64>)
                        .collect::<Result<Vec<_>, _>>()
                })? {
                    if v.is_empty() || v.iter().any(|c| !(0.0..=1.0).contains(c)) {
                        return Err(ConfigError::at(
                            line,
                            "checkpoints must be a non-empty list of fractions in [0, 1]",
                        ));
                    }
                    cfg.checkpoints = v;
                }
                if let Some(v) = r.take("output_dir", |s| Ok(PathBuf::from(s)))? {
                    cfg.output_dir = v;
                }
                let line = r.line_of("schedules");
                if let Some(v) = r.take("schedules", |s| {
                    Ok(list(s).into_iter().map(String::from).collect::<Vec<_>>())
                })? {
                    schedule_names = Some((line, v));
                }
            }
            other => match other.strip_prefix("schedule.") {
                Some(sched) if !sched.is_empty() => {
                    schedule_sections.insert(sched.to_string(), (header_line, r.entries));
                    continue;
                }
                _ => {
                    return Err(ConfigError::at(
                        header_line,
                        format!("unknown section [{other}]"),
                    ))
                }
            },
        }
        r.finish()?;
    }

    if let Some((line, names)) = schedule_names {
        if names.is_empty() {
            return Err(ConfigError::at(line, "at least one schedule required"));
        }
        let mut specs = Vec::new();
        for name in &names {
            if specs.iter().any(|s: &ScheduleSpec| &s.name == name) {
                return Err(ConfigError::at(
                    line,
                    format!("schedule `{name}` listed twice"),
                ));
            }
            let base = ScheduleSpec::builtin(name);
            if base.is_none() && !schedule_sections.contains_key(name) {
                return Err(ConfigError::at(
                    line,
                    format!(
                        "schedule `{name}` is not built in and has no [schedule.{name}] section"
                    ),
                ));
            }
            specs.push(base.unwrap_or_else(|| ScheduleSpec::blank(name)));
        }
        cfg.schedules = specs;
    }

    for (name, (header_line, entries)) in schedule_sections {
        let section_name = format!("schedule.{name}");
        let Some(spec) = cfg.schedules.iter_mut().find(|s| s.name == name) else {
            return Err(ConfigError::at(
                header_line,
                format!("[{section_name}] is not listed in [experiment] schedules"),
            ));
        };
        let mut r = Reader {
            name: &section_name,
            entries,
        };
        if let Some(v) = r.take("per_step", positive_usize)? {
            spec.per_step = v;
        }
        if let Some(v) = r.take("relearn_epochs", parse_num)? {
            spec.relearn_epochs = v;
        }
        if let Some(v) = r.take("frequency", parse_frequency)? {
            spec.frequency = v;
        }
        if let Some(v) = r.take("relearn_rate", |s| match s {
            "default" => Ok(None),
            _ => positive_f64(s).map(Some),
        })? {
            spec.relearn_rate = v;
        }
        r.finish()?;
    }

    validate(&cfg)?;
    Ok(cfg)
}

/// Cross-section checks that no single key can catch.
pub fn validate(cfg: &ExperimentConfig) -> Result<(), ConfigError> {
    if cfg.schedules.is_empty() {
        return Err(ConfigError::at(0, "at least one schedule required"));
    }
    if cfg.seeds.is_empty() {
        return Err(ConfigError::at(0, "at least one seed required"));
    }
    let per_step = cfg.schedules[0].per_step;
    if cfg.schedules.iter().any(|s| s.per_step != per_step) {
        return Err(ConfigError::at(
            0,
            "all schedules must share per_step so deletions stay paired",
        ));
    }
    let items = cfg.tree.branching.pow(cfg.tree.depth as u32 - 1);
    if cfg.network.hidden < items {
        return Err(ConfigError::at(
            0,
            format!(
                "hidden = {} is below the {items} items, so the intact network cannot fit the data",
                cfg.network.hidden
            ),
        ));
    }
    for s in &cfg.schedules {
        if let FrequencyRule::Explicit(w) = &s.frequency {
            if w.len() != items {
                return Err(ConfigError::at(
                    0,
                    format!(
                        "schedule `{}` lists {} weights for {items} items",
                        s.name,
                        w.len()
                    ),
                ));
            }
        }
    }
    Ok(())
}

impl ExperimentConfig {
    /// Full text form with every default materialized.
    pub fn render(&self) -> String {
        let mut out = self.render_tree();
        out.push('\n');
        out.push_str(&self.render_network(true));
        let a = &self.analysis;
        out.push_str(&format!(
            "\n[analysis]\ntau_super = {:?}\ntau_correct = {:?}\nnaive = {}\ntie_tolerance = {:?}\n",
            a.thresholds.superordinate,
            a.thresholds.correct,
            a.naive.name(),
            a.tie_tolerance
        ));
        out.push_str("\n[experiment]\n");
        out.push_str(&format!("seeds = {}\n", render_seeds(&self.seeds)));
        out.push_str(&format!(
            "checkpoints = {}\n",
            self.checkpoints
                .iter()
                .map(|c| format!("{c:?}"))
                .collect::<Vec<_>>()
                .join(", ")
        ));
        out.push_str(&format!("output_dir = {}\n", self.output_dir.display()));
        out.push_str(&format!(
            "schedules = {}\n",
            self.schedules
                .iter()
                .map(|s| s.name.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        ));
        for s in &self.schedules {
            out.push('\n');
            out.push_str(&render_schedule(s));
        }
        out
    }

    fn render_tree(&self) -> String {
        let t = &self.tree;
        format!(
            "[tree]\nbranching = {}\ndepth = {}\nseed = {}\n",
            t.branching, t.depth, t.seed
        )
    }

    fn render_network(&self, with_activations: bool) -> String {
        let n = &self.network;
        let mut out = format!(
            "[network]\nhidden = {}\ninit_scale = {:?}\nlearning_rate = {:?}\n",
            n.hidden, n.init_scale, n.learning_rate
        );
        if with_activations {
            out.push_str(&format!(
                "activations = {}\n",
                n.activations
                    .iter()
                    .map(|a| a.name())
                    .collect::<Vec<_>>()
                    .join(", ")
            ));
        }
        out.push_str(&format!(
            "epsilon = {:?}\nmax_epochs = {}\n",
            n.epsilon, n.max_epochs
        ));
        out
    }

    /// Canonical text identifying the raw output of one run: tree, training
    /// settings, the activation, the schedule definition, and the seed.
    /// Analysis settings are left out because they only affect derived files.
    pub fn run_identity(
        &self,
        activation: Activation,
        schedule: &ScheduleSpec,
        seed: u64,
    ) -> String {
        format!(
            "{}\n{}\n[run]\nactivation = {activation}\nseed = {seed}\n\n{}",
            self.render_tree(),
            self.render_network(false),
            render_schedule(schedule)
        )
    }
}

fn render_schedule(s: &ScheduleSpec) -> String {
    format!(
        "[schedule.{}]\nper_step = {}\nrelearn_epochs = {}\nfrequency = {}\nrelearn_rate = {}\n",
        s.name,
        s.per_step,
        s.relearn_epochs,
        render_frequency(&s.frequency),
        s.relearn_rate
            .map(|r| format!("{r:?}"))
            .unwrap_or_else(|| "default".into())
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_documented_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!((cfg.tree.branching, cfg.tree.depth), (2, 4));
        assert_eq!(cfg.network.hidden, 16);
        let names: Vec<&str> = cfg.schedules.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["base", "relearn"]);
        assert_eq!(cfg.schedules[0].relearn_epochs, 0);
        assert_eq!(cfg.schedules[1].relearn_epochs, 200);
        assert_eq!(cfg.seeds.len(), 20);
        assert_eq!(cfg.checkpoints, vec![0.5]);
    }

    #[test]
    fn empty_schedule_list_is_rejected() {
        let err = parse_config("[experiment]\nschedules =\n").unwrap_err();
        assert_eq!(err.msg, "at least one schedule required");
        assert_eq!(err.line, 2);
    }

    #[test]
    fn render_round_trips() {
        let text = "\
# grid
[network]
activations = relu
init_scale = 0.0005   # smaller
[experiment]
seeds = 3, 9, 4
checkpoints = 0.25, 0.5, 0.75
schedules = base, slow, relearn_freq
[schedule.slow]
relearn_epochs = 50
relearn_rate = 0.01
frequency = 1, 2, 1, 2, 1, 2, 1, 2.5
";
        let cfg = parse_config(text).unwrap();
        let rendered = cfg.render();
        let again = parse_config(&rendered).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.render(), rendered);
        let slow = &cfg.schedules[1];
        assert_eq!(slow.relearn_rate, Some(0.01));
        assert_eq!(
            slow.frequency,
            FrequencyRule::Explicit(vec![1., 2., 1., 2., 1., 2., 1., 2.5])
        );
        assert_eq!(cfg.seeds, vec![3, 9, 4]);
    }

    #[test]
    fn errors_point_at_lines() {
        let cases = [
            (
                "[tree]\nbranching = 2\nwidth = 3\n",
                3,
                "unknown key `width`",
            ),
            ("[network]\nhidden = many\n", 2, "cannot parse"),
            ("[network]\nactivations = tanh\n", 2, "unknown activation"),
            ("\n[nonsense]\n", 2, "unknown section"),
            ("[experiment]\nseeds = 1, 1\n", 2, "distinct"),
            ("[experiment]\nschedules = mystery\n", 2, "not built in"),
            ("[schedule.extra]\nrelearn_epochs = 1\n", 1, "not listed"),
            ("[tree]\ndepth = 1\n", 1, "depth must be >= 2"),
            (
                "[analysis]\ntau_super = 0.7\n",
                1,
                "tau_super < tau_correct",
            ),
            ("hidden = 3\n", 1, "outside of any section"),
            ("[tree]\ndepth = 3\ndepth = 4\n", 3, "duplicate key"),
            ("[experiment]\ncheckpoints = 1.5\n", 2, "fractions"),
        ];
        for (text, line, needle) in cases {
            let err = parse_config(text).unwrap_err();
            assert_eq!(err.line, line, "{text:?}: {err}");
            assert!(err.msg.contains(needle), "{text:?}: {err}");
        }
    }

    #[test]
    fn cross_section_checks() {
        let err = parse_config("[network]\nhidden = 4\n").unwrap_err();
        assert!(err.msg.contains("below the 8 items"), "{err}");
        let err = parse_config(
            "[experiment]\nschedules = base, relearn\n[schedule.relearn]\nper_step = 2\n",
        )
        .unwrap_err();
        assert!(err.msg.contains("per_step"), "{err}");
    }

    #[test]
    fn seed_ranges() {
        assert_eq!(parse_seeds("2..5").unwrap(), vec![2, 3, 4]);
        assert!(parse_seeds("5..5").is_err());
        assert_eq!(render_seeds(&[2, 3, 4]), "2..5");
        assert_eq!(render_seeds(&[7]), "7");
    }
}

//! `key = value` run configs. Blank lines and `#` comments are ignored; key
//! order does not matter; unknown or repeated keys are rejected.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{bail, Error, Result};
use crate::perceptual::LossWeights;
use crate::trainer::TrainConfig;

/// Splits text into a map of trimmed keys and values.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!(Format, "line {}: expected `key = value`, got {raw:?}", n + 1);
        };
        let k = k.trim();
        if k.is_empty() {
            bail!(Format, "line {}: empty key", n + 1);
        }
        if out.insert(k.to_string(), v.trim().to_string()).is_some() {
            bail!(Format, "line {}: key {k:?} repeated", n + 1);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub arch: String,
    pub group: usize,
    pub train: TrainConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            arch: "desk-64".into(),
            group: crate::metanet::DEFAULT_GROUP,
            train: TrainConfig::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub const KEYS: [&'static str; 15] = [
        "arch",
        "group",
        "k",
        "m",
        "iterations",
        "lr",
        "lambda_content",
        "lambda_style",
        "lambda_tv",
        "seed",
        "checkpoint_every",
        "checkpoint_dir",
        "content_dir",
        "style_dir",
        "output_dir",
    ];

    pub fn parse(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        if let Some(k) = pairs.keys().find(|k| !Self::KEYS.contains(&k.as_str())) {
            bail!(Usage, "unknown config key {k:?}");
        }
        let mut c = Self::default();
        let t = &mut c.train;
        let w: &mut LossWeights = &mut t.weights;
        for (k, v) in &pairs {
            match k.as_str() {
                "arch" => c.arch = v.clone(),
                "group" => c.group = num(k, v)?,
                "k" => t.k = num(k, v)?,
                "m" => t.m = num(k, v)?,
                "iterations" => t.iterations = num(k, v)?,
                "lr" => t.lr = num(k, v)?,
                "lambda_content" => w.content = num(k, v)?,
                "lambda_style" => w.style = num(k, v)?,
                "lambda_tv" => w.tv = num(k, v)?,
                "seed" => t.seed = num(k, v)?,
                "checkpoint_every" => t.checkpoint_every = num(k, v)?,
                "checkpoint_dir" => t.checkpoint_dir = Some(v.into()),
                "content_dir" => t.content_dir = Some(v.into()),
                "style_dir" => t.style_dir = Some(v.into()),
                "output_dir" => c.output_dir = v.into(),
                _ => unreachable!("key list checked above"),
            }
        }
        t.validate()?;
        if c.group == 0 {
            bail!(Usage, "group must be at least 1");
        }
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Canonical text form, one key per line in [`RunConfig::KEYS`] order.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let opt = |p: &Option<PathBuf>| p.as_ref().map(|p| format!("{}", p.display()));
        let mut lines = vec![
            format!("arch = {}", self.arch),
            format!("group = {}", self.group),
            format!("k = {}", t.k),
            format!("m = {}", t.m),
            format!("iterations = {}", t.iterations),
            format!("lr = {}", t.lr),
            format!("lambda_content = {}", t.weights.content),
            format!("lambda_style = {}", t.weights.style),
            format!("lambda_tv = {}", t.weights.tv),
            format!("seed = {}", t.seed),
            format!("checkpoint_every = {}", t.checkpoint_every),
        ];
        for (k, v) in [("checkpoint_dir", opt(&t.checkpoint_dir)), ("content_dir", opt(&t.content_dir)), ("style_dir", opt(&t.style_dir))] {
            if let Some(v) = v {
                lines.push(format!("{k} = {v}"));
            }
        }
        lines.push(format!("output_dir = {}", self.output_dir.display()));
        lines.join("\n") + "\n"
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Usage(format!("config key {key:?}: cannot parse {v:?}")))
}

/// Writes comma-separated rows under `header`, LF line endings. Fields
/// containing commas, quotes or newlines are quoted.
pub fn csv_string(header: &[&str], rows: &[Vec<String>]) -> String {
    let field = |f: &str| {
        if f.contains([',', '"', '\n']) {
            format!("\"{}\"", f.replace('"', "\"\""))
        } else {
            f.to_string()
        }
    };
    let mut out = header.iter().map(|h| field(h)).collect::<Vec<_>>().join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.iter().map(|f| field(f)).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_does_not_matter() {
        let a = RunConfig::parse("k = 5\nm = 2\nseed = 9\n").unwrap();
        let b = RunConfig::parse("# comment\nseed=9\n\nm = 2 \nk = 5").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train.k, 5);
        assert_eq!(a.train.iterations, 2000);
    }

    #[test]
    fn rejects_unknown_and_repeated_keys() {
        assert!(matches!(RunConfig::parse("speed = 3"), Err(Error::Usage(_))));
        assert!(matches!(RunConfig::parse("k = 1\nk = 2"), Err(Error::Format(_))));
        assert!(matches!(RunConfig::parse("k = 0"), Err(Error::Usage(_))));
        assert!(matches!(RunConfig::parse("just words"), Err(Error::Format(_))));
    }

    #[test]
    fn text_form_round_trips() {
        let mut c = RunConfig::default();
        c.train.content_dir = Some("corpus/content".into());
        c.train.lr = 0.003;
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn csv_quotes_when_needed() {
        let s = csv_string(&["a", "b"], &[vec!["1".into(), "x,y".into()]]);
        assert_eq!(s, "a,b\n1,\"x,y\"\n");
    }
}

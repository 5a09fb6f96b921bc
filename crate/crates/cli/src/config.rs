//! Run configuration resolved from flags, an optional config file and defaults.

use std::path::Path;
use std::str::FromStr;

use actionhe_core::ckks::{CkksParams, Profile};
use actionhe_core::convolution::Strategy;
use actionhe_core::fastpath::Mode;
use actionhe_core::layout::Dim;
use actionhe_core::model::NetworkShape;
use anyhow::{anyhow, bail, Context as _, Result};
use clap::Args;

/// Flat `key = value` settings used when a flag is absent.
#[derive(Debug, Clone, Default)]
pub struct FileConfig(toml::Table);

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let table: toml::Table = text.parse().with_context(|| format!("parsing {}", path.display()))?;
        Ok(FileConfig(table))
    }

    pub fn get(&self, key: &str) -> Option<String> {
        match self.0.get(key)? {
            toml::Value::String(s) => Some(s.clone()),
            toml::Value::Integer(i) => Some(i.to_string()),
            toml::Value::Float(f) => Some(f.to_string()),
            toml::Value::Boolean(b) => Some(b.to_string()),
            _ => None,
        }
    }

    pub fn get_parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|e| anyhow!("config key {key}: {e}")))
            .transpose()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Sim,
    Ckks,
}

impl FromStr for Backend {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sim" => Ok(Backend::Sim),
            "ckks" => Ok(Backend::Ckks),
            _ => Err(format!("unknown backend {s:?} (sim|ckks)")),
        }
    }
}

/// Network, evaluation mode and parameter flags shared by most commands.
#[derive(Debug, Clone, Default, Args)]
pub struct NetArgs {
    /// Preset (1d-w64, 1d-w128, 2d-w64, 2d-w128) or `DIM:TxJ:W1,W2,W3:CLASSES`, e.g. `2d:32x15:16,32,64:10`.
    #[arg(long)]
    pub net: Option<String>,
    /// hear | fast
    #[arg(long)]
    pub mode: Option<String>,
    /// full | giant | baby
    #[arg(long)]
    pub strategy: Option<String>,
    /// hear | fast-hear | toy-hear | toy-fast (defaults to the mode's profile)
    #[arg(long)]
    pub params: Option<String>,
    /// Seed for every random choice; entropy when absent.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub net: String,
    pub shape: NetworkShape,
    pub mode: Mode,
    pub strategy: Strategy,
    pub params: CkksParams,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn slots(&self) -> usize {
        self.params.slots()
    }
}

pub fn parse_net(s: &str) -> Result<NetworkShape> {
    if let Some(shape) = NetworkShape::preset(s) {
        return Ok(shape);
    }
    let parts: Vec<&str> = s.split(':').collect();
    let [dim, tj, widths, classes] = parts[..] else {
        bail!("network {s:?} is neither a preset nor DIM:TxJ:W1,W2,W3:CLASSES");
    };
    let dim = match dim.to_ascii_lowercase().as_str() {
        "1d" => Dim::One,
        "2d" => Dim::Two,
        d => bail!("dimension {d:?} (1d|2d)"),
    };
    let (t, j) = tj.split_once('x').ok_or_else(|| anyhow!("extent {tj:?} is not TxJ"))?;
    let w: Vec<usize> = widths.split(',').map(str::parse).collect::<Result<_, _>>().context("widths")?;
    let widths: [usize; 3] = w.try_into().map_err(|_| anyhow!("need three widths"))?;
    Ok(NetworkShape::new(dim, t.parse()?, j.parse()?, widths, classes.parse()?)?)
}

pub fn default_profile(mode: Mode) -> Profile {
    match mode {
        Mode::Hear => Profile::Hear,
        Mode::Fast => Profile::FastHear,
    }
}

impl NetArgs {
    pub fn resolve(&self, file: &FileConfig) -> Result<RunConfig> {
        let pick = |flag: &Option<String>, key: &str| flag.clone().or_else(|| file.get(key));
        let net = pick(&self.net, "net").unwrap_or_else(|| "2d-w64".into());
        let shape = parse_net(&net)?;
        let mode: Mode = pick(&self.mode, "mode").unwrap_or_else(|| "fast".into()).parse().map_err(|e: String| anyhow!(e))?;
        let strategy: Strategy =
            pick(&self.strategy, "strategy").unwrap_or_else(|| "giant".into()).parse().map_err(|e| anyhow!("{e}"))?;
        let profile = match pick(&self.params, "params") {
            Some(p) => p.parse::<Profile>().map_err(|e| anyhow!(e))?,
            None => default_profile(mode),
        };
        let params = CkksParams::generate(profile)?;
        if params.max_level() != mode.top_level() {
            bail!(
                "mode {mode} needs a chain with L = {}, profile {profile} has L = {}",
                mode.top_level(),
                params.max_level()
            );
        }
        let seed = match self.seed {
            Some(s) => Some(s),
            None => file.get_parsed("seed")?,
        };
        Ok(RunConfig { net, shape, mode, strategy, params, seed })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_and_custom_networks() {
        assert_eq!(parse_net("2d-w128").unwrap().widths, [128, 256, 512]);
        let s = parse_net("2d:32x15:16,32,64:10").unwrap();
        assert_eq!((s.frames, s.joints, s.classes), (32, 15, 10));
        assert!(parse_net("3d-w64").is_err());
        assert!(parse_net("2d:32x15:16,32:10").is_err());
    }

    #[test]
    fn mode_must_match_the_chain() {
        let args = NetArgs { mode: Some("fast".into()), params: Some("toy-hear".into()), ..Default::default() };
        assert!(args.resolve(&FileConfig::default()).is_err());
        let args = NetArgs { mode: Some("hear".into()), ..Default::default() };
        assert_eq!(args.resolve(&FileConfig::default()).unwrap().params.profile, Profile::Hear);
    }

    #[test]
    fn file_fills_missing_flags() {
        let file = FileConfig("mode = \"hear\"\nstrategy = \"baby\"\nseed = 9".parse().unwrap());
        let cfg = NetArgs { strategy: Some("full".into()), ..Default::default() }.resolve(&file).unwrap();
        assert_eq!((cfg.mode, cfg.strategy, cfg.seed), (Mode::Hear, Strategy::Full, Some(9)));
    }
}

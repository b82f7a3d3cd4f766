use std::fmt;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::str::FromStr;

use crate::baseline::Decision;
use crate::channel::{ChannelKind, ChannelSpec};
use crate::error::{Error, Result};
use crate::link::CsiMode;
use crate::wire::parse_snr;

/// Keys accepted in experiment config files, with their defaults.
pub const CONFIG_KEYS: &str = "\
scheme=jscc              jscc | jscc_random_snr | baseline
channel=awgn             awgn | rayleigh | multipath
num_paths=5              multipath only
decay=1                  exponential delay-profile constant
snr_grid=-5,0,5,10,15    comma-separated dB values
mr=adaptive              adaptive or a fixed ratio in [0, 1)
mr_grid=0,0.1,...,0.8    ratios for sweep-mr
seeds=0,1,2,3,4          distinct experiment seeds
corpus=synthetic         directory of .ppm/.pgm (+ .boxes) or 'synthetic'
corpus_size=16           synthetic corpus size
image_size=64            synthetic image side
checkpoint=              codec checkpoint (required by jscc schemes)
emulator=                host:port of a running emulator (framed path)
output=                  CSV output path (stdout when empty)
csi=ls                   ls | perfect
power=off                off | uniform | learned
decision=hard            hard | soft (baseline Viterbi)
patch_size=16
hidden=128               codec hidden width (train)
train_steps=400,200,200  reconstruction, mixing, joint steps (train)
alloc_steps=150          allocator steps (train; 0 disables)
train_snr=10             training SNR in dB (train)
train_paths=3            multipath paths while training (train)
train_seed=0";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scheme {
    Jscc,
    JsccRandomSnr,
    Baseline,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Jscc => "jscc",
            Scheme::JsccRandomSnr => "jscc_random_snr",
            Scheme::Baseline => "baseline",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jscc" => Ok(Self::Jscc),
            "jscc_random_snr" => Ok(Self::JsccRandomSnr),
            "baseline" => Ok(Self::Baseline),
            _ => Err(Error::Config(format!("unknown scheme {s:?}"))),
        }
    }
}

/// Transmit-side power shaping for JSCC runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PowerMode {
    /// Natural placement, unit gains.
    Off,
    /// Rank-ordered placement, unit gains.
    Uniform,
    /// Rank-ordered placement with the checkpoint's learned gains.
    Learned,
}

impl FromStr for PowerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" | "none" => Ok(Self::Off),
            "uniform" => Ok(Self::Uniform),
            "learned" => Ok(Self::Learned),
            _ => Err(Error::Config(format!("unknown power mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub scheme: Scheme,
    /// Kind, paths and decay; the SNR comes from the grid.
    pub channel: ChannelSpec,
    pub snr_grid: Vec<f64>,
    /// `None` means the adaptive mask-ratio policy.
    pub mr: Option<f64>,
    pub mr_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub corpus: Option<PathBuf>,
    pub corpus_size: usize,
    pub image_size: usize,
    pub checkpoint: Option<PathBuf>,
    pub emulator: Option<SocketAddr>,
    pub output: Option<PathBuf>,
    pub csi: CsiMode,
    pub power: PowerMode,
    pub decision: Decision,
    pub patch_size: usize,
    pub hidden: usize,
    pub train_steps: [usize; 3],
    pub alloc_steps: usize,
    pub train_snr: f64,
    /// Multipath paths used for training; evaluation uses `channel`.
    pub train_paths: usize,
    pub train_seed: u64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            scheme: Scheme::Jscc,
            channel: ChannelSpec::awgn(0.0),
            snr_grid: vec![-5.0, 0.0, 5.0, 10.0, 15.0],
            mr: None,
            mr_grid: (0..=8).map(|i| i as f64 / 10.0).collect(),
            seeds: (0..5).collect(),
            corpus: None,
            corpus_size: 16,
            image_size: 64,
            checkpoint: None,
            emulator: None,
            output: None,
            csi: CsiMode::LeastSquares,
            power: PowerMode::Off,
            decision: Decision::Hard,
            patch_size: 16,
            hidden: 128,
            train_steps: [400, 200, 200],
            alloc_steps: 150,
            train_snr: 10.0,
            train_paths: 3,
            train_seed: 0,
        }
    }
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::Config(format!("bad {key} entry {s:?}")))
        })
        .collect()
}

fn one<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value for {key}: {v:?}")))
}

impl ExperimentSpec {
    /// Parses flat `key=value` text over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Self::default();
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line:?} lacks '='")))?;
            s.set(k.trim(), v.trim())?;
        }
        s.validate()?;
        Ok(s)
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, k: &str, v: &str) -> Result<()> {
        let opt_path = |v: &str| (!v.is_empty()).then(|| PathBuf::from(v));
        match k {
            "scheme" => self.scheme = v.parse()?,
            "channel" => {
                self.channel.kind = v.parse::<ChannelKind>()?;
                if self.channel.kind != ChannelKind::Multipath {
                    self.channel.num_paths = 1;
                } else if self.channel.num_paths == 1 {
                    self.channel.num_paths = 5;
                }
            }
            "num_paths" => self.channel.num_paths = one(k, v)?,
            "decay" => self.channel.decay = one(k, v)?,
            "snr_grid" => {
                self.snr_grid = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        parse_snr(s)
                            .ok_or_else(|| Error::Config(format!("bad snr_grid entry {s:?}")))
                    })
                    .collect::<Result<_>>()?
            }
            "mr" => {
                self.mr = if v == "adaptive" {
                    None
                } else {
                    Some(one(k, v)?)
                }
            }
            "mr_grid" => self.mr_grid = list(k, v)?,
            "seeds" => self.seeds = list(k, v)?,
            "corpus" => self.corpus = if v == "synthetic" { None } else { opt_path(v) },
            "corpus_size" => self.corpus_size = one(k, v)?,
            "image_size" => self.image_size = one(k, v)?,
            "checkpoint" => self.checkpoint = opt_path(v),
            "emulator" => self.emulator = if v.is_empty() { None } else { Some(one(k, v)?) },
            "output" => self.output = opt_path(v),
            "csi" => {
                self.csi = match v {
                    "ls" => CsiMode::LeastSquares,
                    "perfect" => CsiMode::Perfect,
                    _ => return Err(Error::Config(format!("unknown csi mode {v:?}"))),
                }
            }
            "power" => self.power = v.parse()?,
            "decision" => {
                self.decision = match v {
                    "hard" => Decision::Hard,
                    "soft" => Decision::Soft,
                    _ => return Err(Error::Config(format!("unknown decision {v:?}"))),
                }
            }
            "patch_size" => self.patch_size = one(k, v)?,
            "hidden" => self.hidden = one(k, v)?,
            "train_steps" => {
                let l: Vec<usize> = list(k, v)?;
                self.train_steps = l
                    .try_into()
                    .map_err(|_| Error::Config("train_steps needs three values".into()))?;
            }
            "alloc_steps" => self.alloc_steps = one(k, v)?,
            "train_snr" => self.train_snr = one(k, v)?,
            "train_paths" => self.train_paths = one(k, v)?,
            "train_seed" => self.train_seed = one(k, v)?,
            _ => return Err(Error::Config(format!("unknown key {k:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.channel.kind != ChannelKind::Multipath && self.channel.num_paths != 1 {
            return Err(Error::Config(format!(
                "num_paths={} needs channel=multipath",
                self.channel.num_paths
            )));
        }
        self.channel.validate()?;
        self.train_channel().validate()?;
        if self.snr_grid.is_empty() || self.mr_grid.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config(
                "snr_grid, mr_grid and seeds must be non-empty".into(),
            ));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        for &r in self.mr.iter().chain(&self.mr_grid) {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Config(format!("mask ratio {r} outside [0, 1)")));
            }
        }
        if self.corpus.is_none() && (self.corpus_size == 0 || self.image_size == 0) {
            return Err(Error::Config("synthetic corpus needs positive size".into()));
        }
        Ok(())
    }

    pub fn channel_at(&self, snr_db: f64) -> ChannelSpec {
        self.channel.with_snr(snr_db)
    }

    /// Training channel: `channel` at `train_snr`, with `train_paths` paths
    /// when it is multipath.
    pub fn train_channel(&self) -> ChannelSpec {
        let mut c = self.channel_at(self.train_snr);
        if c.kind == ChannelKind::Multipath {
            c.num_paths = self.train_paths;
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_overrides() {
        let s = ExperimentSpec::parse(
            "# comment\nscheme=baseline\nchannel=multipath\nsnr_grid=0, 5,inf\nseeds=3,4\nmr=0.5\ndecision=soft\n",
        )
        .unwrap();
        assert_eq!(s.scheme, Scheme::Baseline);
        assert_eq!(s.channel.num_paths, 5);
        assert_eq!(s.snr_grid.len(), 3);
        assert!(s.snr_grid[2].is_infinite());
        assert_eq!(s.mr, Some(0.5));
        assert_eq!(s.decision, Decision::Soft);
        assert_eq!(s.train_channel().num_paths, 3);
        assert_eq!(s.train_channel().snr_db, 10.0);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(ExperimentSpec::parse("seeds=1,1").is_err());
        assert!(ExperimentSpec::parse("snr_grid=").is_err());
        assert!(ExperimentSpec::parse("mystery=1").is_err());
        assert!(ExperimentSpec::parse("mr=1.0").is_err());
        assert!(ExperimentSpec::parse("num_paths=3").is_err());
        assert!(ExperimentSpec::parse("channel=multipath\ntrain_paths=0").is_err());
    }
}

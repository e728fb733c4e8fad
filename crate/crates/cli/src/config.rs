//! Run configuration: profile defaults, then an optional `key=value` file,
//! then command-line flags.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use dwnet::generator::{GeneratorConfig, TrainConfig};
use dwnet::iuv_io::parse_key_values;

use crate::fail::Failure;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Profile {
    /// 64x64 images, 16x16 warp grid.
    Desk,
    /// 256x256 images, 64x64 warp grid.
    Paper,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        })
    }
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            _ => Err(format!("unknown profile `{s}` (desk or paper)")),
        }
    }
}

/// Image size, written `HxW` or a single side.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub height: usize,
    pub width: usize,
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

impl FromStr for Dims {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let side = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad dims `{s}` (use HxW)"));
        let (height, width) = match s.split_once(['x', 'X']) {
            Some((h, w)) => (side(h)?, side(w)?),
            None => {
                let n = side(s)?;
                (n, n)
            }
        };
        if height == 0 || width == 0 {
            return Err(format!("dims `{s}` must be positive"));
        }
        Ok(Dims { height, width })
    }
}

/// Values that may come from the config file or from flags.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub profile: Option<Profile>,
    pub seed: Option<u64>,
    pub dims: Option<Dims>,
    pub lambda: Option<f64>,
    pub lr: Option<f64>,
    pub steps: Option<usize>,
    pub scenes: Option<usize>,
    pub frames: Option<usize>,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, Failure> {
    value
        .parse()
        .map_err(|_| Failure::config(format!("config value `{key}={value}` does not parse")))
}

impl Overrides {
    pub fn from_file(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
        let kv = parse_key_values(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
        let mut o = Overrides::default();
        for (k, v) in &kv {
            match k.as_str() {
                "profile" => o.profile = Some(v.parse().map_err(Failure::config)?),
                "seed" => o.seed = Some(parse(k, v)?),
                "dims" => o.dims = Some(v.parse().map_err(Failure::config)?),
                "lambda" => o.lambda = Some(parse(k, v)?),
                "lr" => o.lr = Some(parse(k, v)?),
                "steps" => o.steps = Some(parse(k, v)?),
                "scenes" => o.scenes = Some(parse(k, v)?),
                "frames" => o.frames = Some(parse(k, v)?),
                _ => return Err(Failure::config(format!("{}: unknown key `{k}`", path.display()))),
            }
        }
        Ok(o)
    }

    /// `self` wins over `lower` field by field.
    pub fn over(self, lower: Overrides) -> Overrides {
        Overrides {
            profile: self.profile.or(lower.profile),
            seed: self.seed.or(lower.seed),
            dims: self.dims.or(lower.dims),
            lambda: self.lambda.or(lower.lambda),
            lr: self.lr.or(lower.lr),
            steps: self.steps.or(lower.steps),
            scenes: self.scenes.or(lower.scenes),
            frames: self.frames.or(lower.frames),
        }
    }
}

/// Fully resolved settings.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    pub dims: Dims,
    /// Whether `dims` was given explicitly rather than taken from the profile.
    pub dims_explicit: bool,
    pub lambda: f64,
    pub lr: f64,
    pub steps: usize,
    pub scenes: usize,
    pub frames: usize,
}

impl RunConfig {
    /// Defaults < file < flags.
    pub fn resolve(file: Option<&Path>, flags: Overrides) -> Result<Self, Failure> {
        let merged = match file {
            Some(p) => flags.over(Overrides::from_file(p)?),
            None => flags,
        };
        let profile = merged.profile.unwrap_or(Profile::Desk);
        let base = generator_base(profile);
        let train = TrainConfig::default();
        let cfg = RunConfig {
            profile,
            seed: merged.seed.unwrap_or(0),
            dims: merged.dims.unwrap_or(Dims {
                height: base.image_height,
                width: base.image_width,
            }),
            dims_explicit: merged.dims.is_some(),
            lambda: merged.lambda.unwrap_or(train.lambda),
            lr: merged.lr.unwrap_or(train.lr),
            steps: merged.steps.unwrap_or(train.total_steps),
            scenes: merged.scenes.unwrap_or(8),
            frames: merged.frames.unwrap_or(32),
        };
        if !(cfg.lambda >= 0.0 && cfg.lambda.is_finite()) {
            return Err(Failure::config(format!("lambda must be a finite non-negative number, got {}", cfg.lambda)));
        }
        if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
            return Err(Failure::config(format!("lr must be positive, got {}", cfg.lr)));
        }
        Ok(cfg)
    }

    pub fn generator(&self) -> Result<GeneratorConfig, Failure> {
        let cfg = GeneratorConfig {
            image_height: self.dims.height,
            image_width: self.dims.width,
            ..generator_base(self.profile)
        };
        cfg.validate().map_err(|e| Failure::config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            lambda: self.lambda,
            lr: self.lr,
            total_steps: self.steps,
            ..TrainConfig::default()
        }
    }
}

pub fn generator_base(profile: Profile) -> GeneratorConfig {
    match profile {
        Profile::Desk => GeneratorConfig::desk(),
        Profile::Paper => GeneratorConfig::paper(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_parse() {
        assert_eq!("32x48".parse::<Dims>().unwrap(), Dims { height: 32, width: 48 });
        assert_eq!("16".parse::<Dims>().unwrap(), Dims { height: 16, width: 16 });
        assert!("0x4".parse::<Dims>().is_err());
        assert!("ax4".parse::<Dims>().is_err());
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = std::env::temp_dir().join(format!("dwnet-config-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.cfg");
        std::fs::write(&path, "# run\nseed=5\nlr=0.001\nprofile=paper\n").unwrap();
        let flags = Overrides {
            seed: Some(9),
            ..Overrides::default()
        };
        let cfg = RunConfig::resolve(Some(&path), flags).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.lr, 0.001);
        assert_eq!(cfg.profile, Profile::Paper);
        assert_eq!(cfg.dims, Dims { height: 256, width: 256 });
        assert_eq!(cfg.lambda, 10.0);
        std::fs::write(&path, "colour=blue\n").unwrap();
        assert_eq!(RunConfig::resolve(Some(&path), Overrides::default()).unwrap_err().code, 4);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}

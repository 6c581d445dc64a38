use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::Args;
use coulomb_core::sphere::SpherePoint;
use serde::Serialize;

/// Flags shared by all commands; each overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Config file with `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Mesh refinement level.
    #[arg(long, global = true)]
    pub level: Option<u32>,
    /// Comma-separated ε values.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub eps: Option<String>,
    /// Sphere quadrature level.
    #[arg(long = "quad-level", global = true)]
    pub quad_level: Option<u32>,
    /// Regular-value bound N.
    #[arg(long = "n-bound", global = true)]
    pub n_bound: Option<usize>,
    /// Averaging cap as `center,rho`; center is `k`, `-k` or `x,y,z`.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub cap: Option<String>,
    /// Margin σ of the admissible region.
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    /// Nominal continuation steps.
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    /// Surface family: enneper, stereo-plus or stereo-minus.
    #[arg(long, global = true)]
    pub family: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyChoice {
    Enneper,
    StereoPlus,
    StereoMinus,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CapSpec {
    pub center: [f64; 3],
    pub rho: f64,
}

impl CapSpec {
    pub fn center(&self) -> SpherePoint {
        let [x, y, z] = self.center;
        SpherePoint::from_xyz(x, y, z).expect("validated at parse time")
    }
}

/// Fully resolved experiment configuration.
#[derive(Debug, Clone, Serialize)]
pub struct Settings {
    pub command: String,
    pub level: u32,
    pub eps: Vec<f64>,
    pub quad_level: u32,
    pub n_bound: usize,
    pub cap: CapSpec,
    pub sigma: f64,
    pub steps: usize,
    pub family: FamilyChoice,
    pub out: PathBuf,
    pub seed: u64,
}

/// Per-command defaults.
pub struct Defaults {
    pub level: u32,
    pub eps: &'static [f64],
    pub quad_level: u32,
}

pub fn defaults(command: &str) -> Defaults {
    match command {
        "enneper-table" => Defaults {
            level: 6,
            eps: &[1.0, 0.5, 0.25],
            quad_level: 5,
        },
        "holography" | "convergence" => Defaults {
            level: 6,
            eps: &[0.3, 0.1, 0.03],
            quad_level: 5,
        },
        "self-intersect" => Defaults {
            level: 4,
            eps: &[0.4],
            quad_level: 5,
        },
        "mesh-info" => Defaults {
            level: 4,
            eps: &[0.5],
            quad_level: 5,
        },
        _ => Defaults {
            level: 6,
            eps: &[0.5],
            quad_level: 5,
        },
    }
}

fn read_file(path: &Path) -> Result<BTreeMap<String, String>, UsageError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| UsageError(format!("{}:{}: expected key = value", path.display(), lineno + 1)))?;
        map.insert(k.trim().replace('_', "-"), v.trim().to_string());
    }
    Ok(map)
}

const KEYS: [&str; 10] = [
    "level",
    "eps",
    "quad-level",
    "n-bound",
    "cap",
    "sigma",
    "steps",
    "family",
    "out",
    "seed",
];

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, UsageError> {
    v.parse()
        .map_err(|_| UsageError(format!("invalid value for {key}: {v:?}")))
}

fn parse_eps(v: &str) -> Result<Vec<f64>, UsageError> {
    let eps: Vec<f64> = v
        .split(',')
        .map(|s| parse::<f64>("eps", s.trim()))
        .collect::<Result<_, _>>()?;
    if eps.is_empty() || eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(UsageError(format!("eps must be positive numbers, got {v:?}")));
    }
    Ok(eps)
}

fn parse_cap(v: &str) -> Result<CapSpec, UsageError> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    let (center, rho) = match parts.as_slice() {
        [c, r] => {
            let center = match *c {
                "k" | "+k" => [0.0, 0.0, 1.0],
                "-k" => [0.0, 0.0, -1.0],
                _ => return Err(UsageError(format!("unknown cap center {c:?}"))),
            };
            (center, parse::<f64>("cap", r)?)
        }
        [x, y, z, r] => (
            [parse("cap", x)?, parse("cap", y)?, parse("cap", z)?],
            parse::<f64>("cap", r)?,
        ),
        _ => return Err(UsageError(format!("cap must be center,rho; got {v:?}"))),
    };
    let [x, y, z]: [f64; 3] = center;
    let norm = (x * x + y * y + z * z).sqrt();
    if norm.is_nan() || norm == 0.0 || rho.is_nan() || rho <= 0.0 || rho >= std::f64::consts::PI {
        return Err(UsageError(format!("invalid cap {v:?}")));
    }
    Ok(CapSpec {
        center: [x / norm, y / norm, z / norm],
        rho,
    })
}

fn parse_family(v: &str) -> Result<FamilyChoice, UsageError> {
    match v {
        "enneper" => Ok(FamilyChoice::Enneper),
        "stereo-plus" | "stereographic-plus" => Ok(FamilyChoice::StereoPlus),
        "stereo-minus" | "stereographic-minus" => Ok(FamilyChoice::StereoMinus),
        _ => Err(UsageError(format!("unknown family {v:?}"))),
    }
}

impl Settings {
    pub fn resolve(command: &str, flags: &Flags) -> Result<Self, UsageError> {
        let file = match &flags.config {
            Some(p) => read_file(p)?,
            None => BTreeMap::new(),
        };
        if let Some(k) = file.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(UsageError(format!("unknown config key {k:?}")));
        }
        let get = |k: &str| file.get(k).map(String::as_str);
        let d = defaults(command);
        let level = match (flags.level, get("level")) {
            (Some(v), _) => v,
            (None, Some(v)) => parse("level", v)?,
            (None, None) => d.level,
        };
        let eps = match (&flags.eps, get("eps")) {
            (Some(v), _) => parse_eps(v)?,
            (None, Some(v)) => parse_eps(v)?,
            (None, None) => d.eps.to_vec(),
        };
        let quad_level = match (flags.quad_level, get("quad-level")) {
            (Some(v), _) => v,
            (None, Some(v)) => parse("quad-level", v)?,
            (None, None) => d.quad_level,
        };
        let n_bound = match (flags.n_bound, get("n-bound")) {
            (Some(v), _) => v,
            (None, Some(v)) => parse("n-bound", v)?,
            (None, None) => coulomb_core::preimage::DEFAULT_REGULAR_BOUND,
        };
        if n_bound < 2 {
            return Err(UsageError(format!("n-bound must be at least 2, got {n_bound}")));
        }
        let cap = match (&flags.cap, get("cap")) {
            (Some(v), _) => parse_cap(v)?,
            (None, Some(v)) => parse_cap(v)?,
            (None, None) => CapSpec {
                center: [0.0, 0.0, -1.0],
                rho: std::f64::consts::FRAC_PI_4,
            },
        };
        let sigma = match (flags.sigma, get("sigma")) {
            (Some(v), _) => v,
            (None, Some(v)) => parse("sigma", v)?,
            (None, None) => 0.1,
        };
        if !(sigma > 0.0 && sigma < 1.0) {
            return Err(UsageError(format!("sigma must lie in (0, 1), got {sigma}")));
        }
        let steps = match (flags.steps, get("steps")) {
            (Some(v), _) => v,
            (None, Some(v)) => parse("steps", v)?,
            (None, None) => 16,
        };
        if steps == 0 {
            return Err(UsageError("steps must be positive".into()));
        }
        let family = match (&flags.family, get("family")) {
            (Some(v), _) => parse_family(v)?,
            (None, Some(v)) => parse_family(v)?,
            (None, None) => FamilyChoice::Enneper,
        };
        let out = match (&flags.out, get("out")) {
            (Some(v), _) => v.clone(),
            (None, Some(v)) => PathBuf::from(v),
            (None, None) => PathBuf::from("out"),
        };
        let seed = match (flags.seed, get("seed")) {
            (Some(v), _) => v,
            (None, Some(v)) => parse("seed", v)?,
            (None, None) => 20_240_917,
        };
        Ok(Self {
            command: command.to_string(),
            level,
            eps,
            quad_level,
            n_bound,
            cap,
            sigma,
            steps,
            family,
            out,
            seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cap_forms() {
        let c = parse_cap("-k,0.75").unwrap();
        assert_eq!(c.center, [0.0, 0.0, -1.0]);
        assert_eq!(c.rho, 0.75);
        let c = parse_cap("0,3,4,1").unwrap();
        assert_eq!(c.center, [0.0, 0.6, 0.8]);
        assert!(parse_cap("k,4").is_err());
        assert!(parse_cap("q,1").is_err());
    }

    #[test]
    fn eps_lists() {
        assert_eq!(parse_eps("0.3, 0.1,0.03").unwrap(), vec![0.3, 0.1, 0.03]);
        assert!(parse_eps("0.3,-1").is_err());
        assert!(parse_eps("x").is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = std::env::temp_dir().join(format!("coulomb-lab-config-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.cfg");
        std::fs::write(&path, "# comment\nlevel = 3\nquad_level=2\neps = 0.25\n").unwrap();
        let flags = Flags {
            config: Some(path.clone()),
            level: Some(4),
            ..Default::default()
        };
        let s = Settings::resolve("decompose", &flags).unwrap();
        assert_eq!((s.level, s.quad_level), (4, 2));
        assert_eq!(s.eps, vec![0.25]);
        std::fs::write(&path, "colour = blue\n").unwrap();
        assert!(Settings::resolve("decompose", &flags).is_err());
        std::fs::remove_dir_all(dir).unwrap();
    }
}

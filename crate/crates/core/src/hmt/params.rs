use std::fmt;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to every emission variance.
pub const VARIANCE_FLOOR: f64 = 1e-12;
/// Ridge added to every covariance re-estimate.
pub const COVARIANCE_RIDGE: f64 = 1e-9;
const PROB_TOL: f64 = 1e-12;

const BUILTIN_UNIVERSAL: &str = include_str!("../../config/uhmt_default.toml");

/// Which HMT family a parameter set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flavor {
    /// Universal, fixed parameters; scalar per-band emissions.
    Uhmt,
    /// Trained per image; scalar per-band emissions.
    Thmt,
    /// Trained per image; 3-dimensional emissions over (HL, LH, HH).
    Vhmt,
}

impl Flavor {
    pub fn is_vector(self) -> bool {
        self == Flavor::Vhmt
    }
}

impl fmt::Display for Flavor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Flavor::Uhmt => "uhmt",
            Flavor::Thmt => "thmt",
            Flavor::Vhmt => "vhmt",
        })
    }
}

impl std::str::FromStr for Flavor {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "uhmt" => Ok(Flavor::Uhmt),
            "thmt" => Ok(Flavor::Thmt),
            "vhmt" => Ok(Flavor::Vhmt),
            other => Err(format!("unknown variant `{other}` (expected uhmt, thmt or vhmt)")),
        }
    }
}

/// Zero-mean Gaussian emission of one hidden state at one scale.
#[derive(Debug, Clone, PartialEq)]
pub enum Emission {
    /// Independent variance per orientation band.
    Bands([f64; 3]),
    /// Full covariance over the three bands.
    Covariance([[f64; 3]; 3]),
}

impl Emission {
    pub(crate) fn prepare(&self) -> PreparedEmission {
        match self {
            Emission::Bands(v) => {
                let log_norm = v
                    .iter()
                    .map(|s| -0.5 * (2.0 * std::f64::consts::PI * s).ln())
                    .sum();
                PreparedEmission::Bands {
                    log_norm,
                    half_precision: v.map(|s| 0.5 / s),
                }
            }
            Emission::Covariance(c) => {
                let m = Matrix3::from_fn(|r, k| c[r][k]);
                let chol = m
                    .cholesky()
                    .expect("covariance validated as positive definite");
                let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
                PreparedEmission::Full {
                    log_norm: -1.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det,
                    precision: chol.inverse(),
                }
            }
        }
    }

    /// Same emission as an explicit covariance matrix.
    pub fn covariance(&self) -> [[f64; 3]; 3] {
        match self {
            Emission::Bands(v) => {
                let mut c = [[0.0; 3]; 3];
                for b in 0..3 {
                    c[b][b] = v[b];
                }
                c
            }
            Emission::Covariance(c) => *c,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum PreparedEmission {
    Bands {
        log_norm: f64,
        half_precision: [f64; 3],
    },
    Full {
        log_norm: f64,
        precision: Matrix3<f64>,
    },
}

impl PreparedEmission {
    pub(crate) fn log_density(&self, w: &[f64; 3]) -> f64 {
        match self {
            PreparedEmission::Bands {
                log_norm,
                half_precision,
            } => {
                log_norm
                    - (0..3)
                        .map(|b| w[b] * w[b] * half_precision[b])
                        .sum::<f64>()
            }
            PreparedEmission::Full {
                log_norm,
                precision,
            } => {
                let x = Vector3::new(w[0], w[1], w[2]);
                log_norm - 0.5 * x.dot(&(precision * x))
            }
        }
    }
}

/// Tied parameters of one scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleParams {
    /// `transition[parent][child]`; `None` at the coarsest scale.
    pub transition: Option<[[f64; 2]; 2]>,
    /// Emission of state 0 (small variance) and state 1 (large variance).
    pub emission: [Emission; 2],
}

/// Two-state HMT parameters tied per scale, coarsest scale first.
#[derive(Debug, Clone, PartialEq)]
pub struct HmtParams {
    pub flavor: Flavor,
    pub root_prior: [f64; 2],
    pub scales: Vec<ScaleParams>,
}

impl HmtParams {
    pub fn num_scales(&self) -> usize {
        self.scales.len()
    }

    /// Check every probability, variance and covariance; the error names the
    /// offending field.
    pub fn validate(&self) -> Result<()> {
        check_distribution("root_prior", &self.root_prior)?;
        if self.scales.is_empty() {
            return Err(Error::params("scale", "at least one scale is required"));
        }
        for (l, scale) in self.scales.iter().enumerate() {
            let name = format!("scale[{}]", l + 1);
            match (&scale.transition, l) {
                (Some(_), 0) => {
                    return Err(Error::params(
                        format!("{name}.transition"),
                        "the coarsest scale has no parent transition",
                    ))
                }
                (None, l) if l > 0 => {
                    return Err(Error::params(format!("{name}.transition"), "missing"))
                }
                (Some(a), _) => {
                    for (m, row) in a.iter().enumerate() {
                        check_distribution(&format!("{name}.transition[{m}]"), row)?;
                    }
                }
                (None, _) => {}
            }
            for (m, e) in scale.emission.iter().enumerate() {
                let field = format!("{name}.{}[{m}]", emission_key(e));
                match (e, self.flavor.is_vector()) {
                    (Emission::Bands(v), false) => {
                        if let Some(s) = v.iter().find(|s| !(s.is_finite() && **s >= VARIANCE_FLOOR)) {
                            return Err(Error::params(
                                field,
                                format!("variance {s} below floor {VARIANCE_FLOOR:e} or non-finite"),
                            ));
                        }
                    }
                    (Emission::Covariance(c), true) => check_covariance(&field, c)?,
                    (_, vector) => {
                        return Err(Error::params(
                            field,
                            format!(
                                "{} emissions do not match flavor {}",
                                if vector { "scalar" } else { "vector" },
                                self.flavor
                            ),
                        ))
                    }
                }
            }
        }
        Ok(())
    }

    /// Embed scalar band variances as diagonal covariances (VHMT flavor).
    pub fn to_vector(&self) -> HmtParams {
        HmtParams {
            flavor: Flavor::Vhmt,
            root_prior: self.root_prior,
            scales: self
                .scales
                .iter()
                .map(|s| ScaleParams {
                    transition: s.transition,
                    emission: s.emission.clone().map(|e| Emission::Covariance(e.covariance())),
                })
                .collect(),
        }
    }

    /// The same model with the two state indices exchanged everywhere.
    pub fn with_states_swapped(&self) -> HmtParams {
        HmtParams {
            flavor: self.flavor,
            root_prior: [self.root_prior[1], self.root_prior[0]],
            scales: self
                .scales
                .iter()
                .map(|s| ScaleParams {
                    transition: s.transition.map(|a| [[a[1][1], a[1][0]], [a[0][1], a[0][0]]]),
                    emission: [s.emission[1].clone(), s.emission[0].clone()],
                })
                .collect(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::parse(text, Path::new("<memory>"))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&ParamsFile::from_params(self)).expect("parameter file is serializable")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    fn parse(text: &str, origin: &Path) -> Result<Self> {
        let parse_err = |reason: String| Error::ParamsParse {
            path: origin.to_path_buf(),
            reason,
        };
        let file: ParamsFile = toml::from_str(text).map_err(|e| parse_err(e.to_string()))?;
        let params = file.into_params().map_err(parse_err)?;
        params.validate()?;
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }
}

fn emission_key(e: &Emission) -> &'static str {
    match e {
        Emission::Bands(_) => "variances",
        Emission::Covariance(_) => "covariance",
    }
}

fn check_distribution(field: &str, p: &[f64; 2]) -> Result<()> {
    if let Some(v) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::params(field, format!("probability {v} outside [0, 1]")));
    }
    let sum = p[0] + p[1];
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(Error::params(field, format!("row sums to {sum}")));
    }
    Ok(())
}

fn check_covariance(field: &str, c: &[[f64; 3]; 3]) -> Result<()> {
    if c.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::params(field, "non-finite entry"));
    }
    for r in 0..3 {
        if c[r][r] < VARIANCE_FLOOR {
            return Err(Error::params(
                field,
                format!("diagonal entry {} below floor {VARIANCE_FLOOR:e}", c[r][r]),
            ));
        }
        for k in 0..r {
            let scale = c[r][k].abs().max(c[k][r].abs()).max(f64::MIN_POSITIVE);
            if (c[r][k] - c[k][r]).abs() > 1e-12 * scale {
                return Err(Error::params(field, "not symmetric"));
            }
        }
    }
    if Matrix3::from_fn(|r, k| c[r][k]).cholesky().is_none() {
        return Err(Error::params(field, "not positive definite"));
    }
    Ok(())
}

/// Where universal (UHMT) parameters come from.
#[derive(Debug, Clone, Copy)]
pub enum UniversalSource<'a> {
    /// The defaults shipped in `config/uhmt_default.toml`.
    BuiltIn,
    File(&'a Path),
}

/// Load fixed UHMT parameters. A missing or invalid file is an error; there is
/// no fallback to the built-in set.
pub fn universal_params(source: UniversalSource<'_>) -> Result<HmtParams> {
    let mut params = match source {
        UniversalSource::BuiltIn => {
HmtParams::parse(BUILTIN_UNIVERSAL, Path::new("config/uhmt_default.toml"))?
        }
        UniversalSource::File(path) => HmtParams::load(path)?,
    };
    if params.flavor.is_vector() {
        return Err(Error::params("flavor", "universal parameters must be scalar"));
    }
    params.flavor = Flavor::Uhmt;
    Ok(params)
}

// On-disk layout. Kept separate from `HmtParams` so the in-memory type can use
// enums while the file stays flat and readable.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsFile {
    flavor: Flavor,
    root_prior: [f64; 2],
    scale: Vec<ScaleFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScaleFile {
    level: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    transition: Option<[[f64; 2]; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    variances: Option<[[f64; 3]; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    covariance: Option<[[[f64; 3]; 3]; 2]>,
}

impl ParamsFile {
    fn from_params(p: &HmtParams) -> Self {
        ParamsFile {
            flavor: p.flavor,
            root_prior: p.root_prior,
            scale: p
                .scales
                .iter()
                .enumerate()
                .map(|(l, s)| {
                    let (variances, covariance) = match (&s.emission[0], &s.emission[1]) {
                        (Emission::Bands(a), Emission::Bands(b)) => (Some([*a, *b]), None),
                        (a, b) => (None, Some([a.covariance(), b.covariance()])),
                    };
                    ScaleFile {
                        level: l + 1,
                        transition: s.transition,
                        variances,
                        covariance,
                    }
                })
                .collect(),
        }
    }

    fn into_params(self) -> std::result::Result<HmtParams, String> {
        let mut scales = Vec::with_capacity(self.scale.len());
        for (l, s) in self.scale.into_iter().enumerate() {
            if s.level != l + 1 {
                return Err(format!(
                    "scale[{}].level: expected {}, found {}",
                    l + 1,
                    l + 1,
                    s.level
                ));
            }
            let emission = match (s.variances, s.covariance) {
                (Some([a, b]), None) => [Emission::Bands(a), Emission::Bands(b)],
                (None, Some([a, b])) => [Emission::Covariance(a), Emission::Covariance(b)],
                _ => {
                    return Err(format!(
                        "scale[{}]: exactly one of `variances` or `covariance` is required",
                        l + 1
                    ))
                }
            };
            scales.push(ScaleParams {
                transition: s.transition,
                emission,
            });
        }
        Ok(HmtParams {
            flavor: self.flavor,
            root_prior: self.root_prior,
            scales,
        })
    }
}

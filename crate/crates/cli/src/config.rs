//! Run configuration: TOML file plus `--set key=value` overrides, validated against a
//! per-kind schema.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown experiment kind `{0}`")]
    UnknownKind(String),
    #[error("unknown key `{key}` for kind `{kind}`")]
    UnknownKey { kind: &'static str, key: String },
    #[error("key `{key}`: expected {expected}, got `{got}`")]
    TypeMismatch {
        key: String,
        expected: &'static str,
        got: String,
    },
    #[error("key `{key}` violates `{constraint}` (got {got})")]
    Constraint {
        key: String,
        constraint: String,
        got: String,
    },
    #[error("malformed override `{0}`; expected key=value")]
    MalformedOverride(String),
    #[error("kind mismatch: command line says `{cli}`, config file says `{file}`")]
    KindMismatch { cli: String, file: String },
    #[error("config parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Kind {
    Ghz,
    QftCheck,
    Qpe,
    Qae,
    Gkls,
    SawtoothRun,
    SawtoothEcho,
    Threewave,
    EmbedKvn,
    EmbedLiouville,
    EmbedCarleman,
    RkhsTable,
}

impl Kind {
    pub const ALL: [Kind; 12] = [
        Kind::Ghz,
        Kind::QftCheck,
        Kind::Qpe,
        Kind::Qae,
        Kind::Gkls,
        Kind::SawtoothRun,
        Kind::SawtoothEcho,
        Kind::Threewave,
        Kind::EmbedKvn,
        Kind::EmbedLiouville,
        Kind::EmbedCarleman,
        Kind::RkhsTable,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Kind::Ghz => "ghz",
            Kind::QftCheck => "qft-check",
            Kind::Qpe => "qpe",
            Kind::Qae => "qae",
            Kind::Gkls => "gkls",
            Kind::SawtoothRun => "sawtooth-run",
            Kind::SawtoothEcho => "sawtooth-echo",
            Kind::Threewave => "threewave",
            Kind::EmbedKvn => "embed-kvn",
            Kind::EmbedLiouville => "embed-liouville",
            Kind::EmbedCarleman => "embed-carleman",
            Kind::RkhsTable => "rkhs-table",
        }
    }

    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        Kind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ConfigError::UnknownKind(s.to_string()))
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Float(f64),
    Str(String),
    List(Vec<f64>),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Float(v) => write!(f, "{v}"),
            Value::Str(v) => write!(f, "{v:?}"),
            Value::List(v) => write!(f, "{v:?}"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Ty {
    Int,
    Float,
    Choice(&'static [&'static str]),
    List,
}

impl Ty {
    fn name(&self) -> &'static str {
        match self {
            Ty::Int => "integer",
            Ty::Float => "number",
            Ty::Choice(_) => "string",
            Ty::List => "array of numbers",
        }
    }
}

/// Numeric bound checked before execution.
#[derive(Debug, Clone, Copy)]
enum Bound {
    None,
    /// Inclusive range.
    Range(f64, f64),
    /// `> x`.
    Above(f64),
    /// `≥ x`.
    AtLeast(f64),
}

struct Param {
    key: &'static str,
    ty: Ty,
    default: fn() -> Value,
    bound: Bound,
}

const THETA_SCHEMES: &[&str] = &["crank-nicolson", "implicit-euler", "explicit-euler"];

fn p(key: &'static str, ty: Ty, default: fn() -> Value, bound: Bound) -> Param {
    Param {
        key,
        ty,
        default,
        bound,
    }
}

fn schema(kind: Kind) -> Vec<Param> {
    use Bound::*;
    use Ty::*;
    let mut v = match kind {
        Kind::Ghz => vec![
            p("n", Int, || Value::Int(3), Range(1.0, 20.0)),
            p("shots", Int, || Value::Int(10_000), Range(1.0, 1e9)),
        ],
        Kind::QftCheck => vec![p("n_max", Int, || Value::Int(6), Range(1.0, 10.0))],
        Kind::Qpe => vec![
            p("m", Int, || Value::Int(5), Range(1.0, 16.0)),
            p("phase", Float, || Value::Float(0.3125), Range(0.0, 1.0)),
        ],
        Kind::Qae => vec![
            p("N", Int, || Value::Int(64), Range(2.0, 4096.0)),
            p("marked", Int, || Value::Int(1), AtLeast(1.0)),
            p("m", Int, || Value::Int(6), Range(1.0, 12.0)),
        ],
        Kind::Gkls => vec![
            p("relax", Float, || Value::Float(1.0), AtLeast(0.0)),
            p("dephase", Float, || Value::Float(0.5), AtLeast(0.0)),
            p("t_max", Float, || Value::Float(5.0), Above(0.0)),
            p("dt", Float, || Value::Float(0.01), Above(0.0)),
            p("initial", Choice(&["plus", "one", "zero", "plus-i"]), || Value::Str("plus".into()), None),
        ],
        Kind::SawtoothRun => vec![
            p("K", Float, || Value::Float(0.5), None),
            p("n", Int, || Value::Int(8), Range(1.0, 20.0)),
            p("steps", Int, || Value::Int(100), Range(0.0, 1e7)),
            p("tau", Float, || Value::Float(1.0), Above(0.0)),
            p("p0_over_pi", Float, || Value::Float(0.75), None),
            p("husimi_grid", Int, || Value::Int(32), Range(8.0, 512.0)),
            p("poincare_points", Int, || Value::Int(64), Range(1.0, 1e6)),
        ],
        Kind::SawtoothEcho => vec![
            p("K", Float, || Value::Float(0.5), None),
            p("n", Int, || Value::Int(8), Range(1.0, 14.0)),
            p("steps", Int, || Value::Int(60), Range(1.0, 1e5)),
            p("tau", Float, || Value::Float(1.0), Above(0.0)),
            p("p0_over_pi", Float, || Value::Float(0.75), None),
            p("noise", Choice(&["jitter", "lindblad"]), || Value::Str("jitter".into()), None),
            p("eps", Float, || Value::Float(1e-3), AtLeast(0.0)),
            p("relax", Float, || Value::Float(1e-3), AtLeast(0.0)),
            p("dephase", Float, || Value::Float(1e-3), AtLeast(0.0)),
        ],
        Kind::Threewave => vec![
            p("s2", Int, || Value::Int(3), Range(0.0, 10_000.0)),
            p("s3", Int, || Value::Int(2), Range(0.0, 10_000.0)),
            p("g", Float, || Value::Float(1.0), None),
            p("g_phase", Float, || Value::Float(0.0), None),
            p("dt", Float, || Value::Float(0.01), Above(0.0)),
            p("steps", Int, || Value::Int(1000), Range(1.0, 1e7)),
            p("j0", Int, || Value::Int(0), AtLeast(0.0)),
        ],
        Kind::EmbedKvn | Kind::EmbedLiouville => {
            let mut v = vec![
                p("gamma", Float, || Value::Float(1.0), None),
                p("points", Int, || Value::Int(512), Range(4.0, 1e6)),
                p("half_width", Float, || Value::Float(4.0), Above(0.0)),
                p("z0", Float, || Value::Float(1.5), None),
                p("sigma", Float, || Value::Float(0.5), Above(0.0)),
                p("dt", Float, || Value::Float(0.01), Above(0.0)),
                p("steps", Int, || Value::Int(300), Range(1.0, 1e7)),
            ];
            if kind == Kind::EmbedLiouville {
                v.push(p("flux", Choice(&["central", "upwind"]), || Value::Str("central".into()), None));
            } else {
                v.push(p("picture", Choice(&["eulerian", "lagrangian"]), || Value::Str("eulerian".into()), None));
            }
            v
        }
        Kind::EmbedCarleman => vec![
            p("coefficients", List, || Value::List(vec![0.0, -1.0, 0.1]), None),
            p("z0", Float, || Value::Float(0.5), None),
            p("order", Int, || Value::Int(8), Range(1.0, 200.0)),
            p("dt", Float, || Value::Float(1e-3), Above(0.0)),
            p("steps", Int, || Value::Int(5000), Range(1.0, 1e8)),
        ],
        Kind::RkhsTable => vec![
            p(
                "space",
                Choice(&["all", "segal-bargmann", "bergman", "hardy"]),
                || Value::Str("all".into()),
                None,
            ),
            p("order", Int, || Value::Int(10), Range(1.0, 20.0)),
            p(
                "convention",
                Choice(&["factorial-normalized", "raw-moment"]),
                || Value::Str("factorial-normalized".into()),
                None,
            ),
            p(
                "ladder",
                Choice(&["multiplication-raises", "derivative-raises"]),
                || Value::Str("multiplication-raises".into()),
                None,
            ),
        ],
    };
    v.push(p("theta_scheme", Choice(THETA_SCHEMES), || Value::Str("crank-nicolson".into()), None));
    v
}

/// Keys accepted by `kind` in schema order.
pub fn known_keys(kind: Kind) -> Vec<&'static str> {
    schema(kind).iter().map(|p| p.key).collect()
}

/// Validated experiment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub kind: Kind,
    pub seed: u64,
    pub params: BTreeMap<String, Value>,
    /// Keys filled from defaults rather than given.
    pub defaulted: Vec<String>,
    /// Informational messages raised during validation.
    pub notices: Vec<String>,
}

impl RunConfig {
    fn value(&self, key: &str) -> &Value {
        self.params
            .get(key)
            .unwrap_or_else(|| panic!("schema has no key `{key}`"))
    }

    pub fn f64(&self, key: &str) -> f64 {
        match self.value(key) {
            Value::Float(v) => *v,
            Value::Int(v) => *v as f64,
            other => panic!("`{key}` is not numeric: {other}"),
        }
    }

    pub fn i64(&self, key: &str) -> i64 {
        match self.value(key) {
            Value::Int(v) => *v,
            other => panic!("`{key}` is not an integer: {other}"),
        }
    }

    pub fn usize(&self, key: &str) -> usize {
        self.i64(key) as usize
    }

    pub fn str(&self, key: &str) -> &str {
        match self.value(key) {
            Value::Str(v) => v,
            other => panic!("`{key}` is not a string: {other}"),
        }
    }

    pub fn list(&self, key: &str) -> &[f64] {
        match self.value(key) {
            Value::List(v) => v,
            other => panic!("`{key}` is not a list: {other}"),
        }
    }

    /// `θ` of the configured implicit scheme.
    pub fn theta(&self) -> f64 {
        match self.str("theta_scheme") {
            "implicit-euler" => 1.0,
            "explicit-euler" => 0.0,
            _ => 0.5,
        }
    }

    /// Parameters as a JSON object, for manifests.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": self.kind.as_str(),
            "seed": self.seed,
            "params": self.params,
            "defaulted": self.defaulted,
        })
    }
}

fn convert(key: &str, ty: Ty, raw: &toml::Value) -> Result<Value, ConfigError> {
    let mismatch = || ConfigError::TypeMismatch {
        key: key.to_string(),
        expected: ty.name(),
        got: raw.to_string(),
    };
    match (ty, raw) {
        (Ty::Int, toml::Value::Integer(i)) => Ok(Value::Int(*i)),
        (Ty::Float, toml::Value::Float(x)) => Ok(Value::Float(*x)),
        (Ty::Float, toml::Value::Integer(i)) => Ok(Value::Float(*i as f64)),
        (Ty::Choice(options), toml::Value::String(s)) => {
            if options.contains(&s.as_str()) {
                Ok(Value::Str(s.clone()))
            } else {
                Err(ConfigError::Constraint {
                    key: key.to_string(),
                    constraint: format!("one of {}", options.join("|")),
                    got: format!("{s:?}"),
                })
            }
        }
        (Ty::List, toml::Value::Array(items)) => items
            .iter()
            .map(|it| match it {
                toml::Value::Float(x) => Ok(*x),
                toml::Value::Integer(i) => Ok(*i as f64),
                _ => Err(mismatch()),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Value::List),
        _ => Err(mismatch()),
    }
}

/// Parses the right-hand side of `--set key=value` as a TOML value, falling back to a
/// bare string.
fn parse_override_value(text: &str) -> toml::Value {
    let doc = format!("v = {text}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or(toml::Value::String(text.to_string())),
        Err(_) => toml::Value::String(text.to_string()),
    }
}

fn constraint(key: &str, constraint: impl Into<String>, got: impl fmt::Display) -> ConfigError {
    ConfigError::Constraint {
        key: key.to_string(),
        constraint: constraint.into(),
        got: got.to_string(),
    }
}

fn check_bound(key: &str, v: &Value, bound: Bound) -> Result<(), ConfigError> {
    let x = match v {
        Value::Int(i) => *i as f64,
        Value::Float(f) => {
            if !f.is_finite() {
                return Err(constraint(key, "finite", f));
            }
            *f
        }
        Value::List(items) => {
            if let Some(bad) = items.iter().find(|x| !x.is_finite()) {
                return Err(constraint(key, "finite entries", bad));
            }
            return Ok(());
        }
        _ => return Ok(()),
    };
    match bound {
        Bound::None => Ok(()),
        Bound::Range(lo, hi) if !(lo..=hi).contains(&x) => Err(constraint(key, format!("{lo} <= {key} <= {hi}"), v)),
        Bound::Above(lo) if x <= lo => Err(constraint(key, format!("{key} > {lo}"), v)),
        Bound::AtLeast(lo) if x < lo => Err(constraint(key, format!("{key} >= {lo}"), v)),
        _ => Ok(()),
    }
}

/// Assembles and validates a configuration.
///
/// `file` is the TOML text (optional top-level `kind` and `seed`, parameters under
/// `[params]`). Overrides are `key=value`; `seed=` sets the seed. A `--seed` value
/// wins over both.
pub fn parse_config(
    kind: Kind,
    file: Option<&str>,
    overrides: &[String],
    seed: Option<u64>,
) -> Result<RunConfig, ConfigError> {
    let schema = schema(kind);
    let mut raw: BTreeMap<String, toml::Value> = BTreeMap::new();
    let mut file_seed = None;
    if let Some(text) = file {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.message().to_string()))?;
        for (k, v) in table {
            match (k.as_str(), v) {
                ("kind", toml::Value::String(s)) => {
                    if s != kind.as_str() {
                        return Err(ConfigError::KindMismatch {
                            cli: kind.as_str().into(),
                            file: s,
                        });
                    }
                }
                ("seed", v) => file_seed = Some(seed_value(&v)?),
                ("params", toml::Value::Table(t)) => raw.extend(t),
                (_, v) if !v.is_table() => {
                    raw.insert(k, v);
                }
                _ => {
                    return Err(ConfigError::UnknownKey {
                        kind: kind.as_str(),
                        key: k,
                    })
                }
            }
        }
    }
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .filter(|(k, _)| !k.trim().is_empty())
            .ok_or_else(|| ConfigError::MalformedOverride(o.clone()))?;
        let (k, v) = (k.trim(), parse_override_value(v.trim()));
        if k == "seed" {
            file_seed = Some(seed_value(&v)?);
        } else {
            raw.insert(k.to_string(), v);
        }
    }
    for key in raw.keys() {
        if !schema.iter().any(|p| p.key == key) {
            return Err(ConfigError::UnknownKey {
                kind: kind.as_str(),
                key: key.clone(),
            });
        }
    }
    let mut params = BTreeMap::new();
    let mut defaulted = Vec::new();
    for p in &schema {
        let v = match raw.get(p.key) {
            Some(r) => convert(p.key, p.ty, r)?,
            None => {
                defaulted.push(p.key.to_string());
                (p.default)()
            }
        };
        check_bound(p.key, &v, p.bound)?;
        params.insert(p.key.to_string(), v);
    }
    let mut cfg = RunConfig {
        kind,
        seed: seed.or(file_seed).unwrap_or(0),
        params,
        defaulted,
        notices: Vec::new(),
    };
    cross_validate(&mut cfg)?;
    Ok(cfg)
}

fn seed_value(v: &toml::Value) -> Result<u64, ConfigError> {
    match v {
        toml::Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        toml::Value::Integer(i) => Err(constraint("seed", "seed >= 0", i)),
        other => Err(ConfigError::TypeMismatch {
            key: "seed".into(),
            expected: "integer",
            got: other.to_string(),
        }),
    }
}

/// Preconditions that involve more than one key.
fn cross_validate(cfg: &mut RunConfig) -> Result<(), ConfigError> {
    let uses_theta = matches!(cfg.kind, Kind::EmbedKvn | Kind::EmbedLiouville | Kind::EmbedCarleman);
    if !uses_theta && cfg.str("theta_scheme") != "crank-nicolson" {
        cfg.notices
            .push(format!("theta_scheme has no effect on kind `{}`", cfg.kind));
    }
    match cfg.kind {
        Kind::Qae => {
            let n = cfg.i64("N");
            let marked = cfg.i64("marked");
            if marked >= n {
                return Err(constraint("marked", "1 <= marked < N", marked));
            }
        }
        Kind::Gkls => {
            if cfg.f64("dt") > cfg.f64("t_max") {
                return Err(constraint("dt", "dt <= t_max", cfg.f64("dt")));
            }
        }
        Kind::Threewave => {
            let (s2, s3) = (cfg.i64("s2"), cfg.i64("s3"));
            let dim = s2.min(s3);
            if cfg.i64("j0") > dim {
                return Err(constraint("j0", format!("j0 <= min(s2, s3) = {dim}"), cfg.i64("j0")));
            }
            if s3 > s2 {
                cfg.notices.push(format!(
                    "invariants canonicalized from (s2, s3) = ({s2}, {s3}) to ({s3}, {s2}); modes 2 and 3 relabelled internally, outputs use the original labels"
                ));
            }
        }
        Kind::EmbedKvn | Kind::EmbedLiouville => {
            let z0 = cfg.f64("z0");
            let hw = cfg.f64("half_width");
            if z0.abs() >= hw {
                return Err(constraint("z0", "|z0| < half_width", z0));
            }
        }
        Kind::EmbedCarleman => {
            let c = cfg.list("coefficients");
            let degree = c.iter().rposition(|x| *x != 0.0);
            match degree {
                None | Some(0) => {
                    return Err(constraint("coefficients", "polynomial degree >= 1", format!("{c:?}")));
                }
                Some(d) if (cfg.i64("order") as usize) < d => {
                    return Err(constraint("order", format!("order >= degree = {d}"), cfg.i64("order")));
                }
                _ => {}
            }
            if cfg.str("theta_scheme") != "crank-nicolson" {
                return Err(constraint(
                    "theta_scheme",
                    "embed-carleman integrates with crank-nicolson only",
                    cfg.str("theta_scheme"),
                ));
            }
        }
        _ => {}
    }
    Ok(())
}

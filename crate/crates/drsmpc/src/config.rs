//! Line-oriented experiment configuration.
//!
//! Each non-blank line is `key = value`; `#` starts a comment. Values are
//! JSON (`0.8`, `[1, 2]`, `[[1, 0], [0, 1]]`) or a bare word (`auto`,
//! `cvar`). Unknown and repeated keys are errors.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use drsmpc_core::constraints::Halfspaces;
use drsmpc_core::drprs::RiskMode;
use drsmpc_core::linalg::Matrix;
use drsmpc_core::model::{LtiSystem, NoiseModel, TubeGain};
use serde_json::Value;

use crate::sim::ErrorSampling;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    /// One-based line, or 0 for errors that concern the file as a whole.
    pub line: usize,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line > 0 {
            write!(f, "line {}: {}", self.line, self.message)
        } else {
            f.write_str(&self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, PartialEq)]
pub enum GainSpec {
    Explicit(Matrix),
    /// The LQR gain for `Q`, `R`.
    Auto,
}

/// `[min, max, count]` of one grid axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Axis {
    pub fn points(&self) -> Vec<f64> {
        match self.count {
            1 => vec![self.min],
            n => (0..n)
                .map(|i| self.min + (self.max - self.min) * i as f64 / (n - 1) as f64)
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub a: Matrix,
    pub b: Matrix,
    pub gain: GainSpec,
    pub q: Matrix,
    pub r: Matrix,
    pub sigma_w: Matrix,
    pub h_mat: Matrix,
    pub h: Vec<f64>,
    pub l_mat: Option<Matrix>,
    pub l: Option<Vec<f64>>,
    pub horizon: usize,
    pub x0: Vec<f64>,
    pub p_x: f64,
    pub p_u: f64,
    pub theta: f64,
    pub m: usize,
    pub n_s: usize,
    pub t: usize,
    pub n_mc: usize,
    pub n_v: usize,
    pub seed: u64,
    pub mode: RiskMode,
    pub lambda_min: f64,
    pub sampling: ErrorSampling,
    /// Zero-based coordinate of the reliability loss `|e_i|`.
    pub reliability_coordinate: usize,
    pub reliability_m: Vec<usize>,
    pub reliability_thetas: Vec<f64>,
    pub simulate_etas: Option<Vec<f64>>,
    pub region_x1: Axis,
    pub region_x2: Axis,
    pub region_eta: Option<f64>,
}

const KEYS: &[&str] = &[
    "matrix.A",
    "matrix.B",
    "matrix.K",
    "matrix.Q",
    "matrix.R",
    "matrix.Sigma_w",
    "matrix.H",
    "vector.h",
    "matrix.L",
    "vector.l",
    "horizon",
    "x0",
    "p_x",
    "p_u",
    "theta",
    "M",
    "N_s",
    "T",
    "N_mc",
    "N_v",
    "seed",
    "mode",
    "lambda_min",
    "sampling",
    "reliability.coordinate",
    "reliability.M",
    "reliability.theta",
    "reliability.theta_max",
    "reliability.theta_steps",
    "simulate.eta",
    "region.x1",
    "region.x2",
    "region.eta",
];

const REQUIRED: &[&str] = &["matrix.A", "matrix.B", "matrix.Q", "matrix.R", "matrix.Sigma_w", "matrix.H", "vector.h"];

struct Entries(BTreeMap<String, (usize, Value)>);

impl Entries {
    fn take(&mut self, key: &str) -> Option<(usize, Value)> {
        self.0.remove(key)
    }

    fn get<T>(&mut self, key: &str, conv: impl Fn(&Value) -> Option<T>, what: &str) -> Result<Option<(usize, T)>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => conv(&v)
                .map(|t| Some((line, t)))
                .ok_or_else(|| ConfigError::at(line, format!("{key}: expected {what}"))),
        }
    }

    fn or<T>(&mut self, key: &str, default: T, conv: impl Fn(&Value) -> Option<T>, what: &str) -> Result<(usize, T), ConfigError> {
        Ok(self.get(key, conv, what)?.unwrap_or((0, default)))
    }

    fn required<T>(&mut self, key: &str, conv: impl Fn(&Value) -> Option<T>, what: &str) -> Result<(usize, T), ConfigError> {
        self.get(key, conv, what)?
            .ok_or_else(|| ConfigError::at(0, format!("missing key {key}")))
    }
}

fn as_f64(v: &Value) -> Option<f64> {
    v.as_f64().filter(|x| x.is_finite())
}

fn as_usize(v: &Value) -> Option<usize> {
    v.as_u64().and_then(|x| usize::try_from(x).ok())
}

fn as_vec(v: &Value) -> Option<Vec<f64>> {
    v.as_array()?.iter().map(as_f64).collect()
}

fn as_usize_vec(v: &Value) -> Option<Vec<usize>> {
    v.as_array()?.iter().map(as_usize).collect()
}

fn as_matrix(v: &Value) -> Option<Matrix> {
    let rows: Vec<Vec<f64>> = v.as_array()?.iter().map(as_vec).collect::<Option<_>>()?;
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return None;
    }
    Matrix::new(rows.len(), cols, rows.concat()).ok()
}

fn as_axis(v: &Value) -> Option<Axis> {
    let a = v.as_array()?;
    if a.len() != 3 {
        return None;
    }
    let axis = Axis {
        min: as_f64(&a[0])?,
        max: as_f64(&a[1])?,
        count: as_usize(&a[2])?,
    };
    (axis.count >= 1 && axis.min <= axis.max).then_some(axis)
}

fn as_word(v: &Value) -> Option<&str> {
    v.as_str()
}

fn probability(line: usize, key: &str, p: f64) -> Result<f64, ConfigError> {
    if p > 0.0 && p < 1.0 {
        Ok(p)
    } else {
        Err(ConfigError::at(line, format!("{key} must lie in (0, 1)")))
    }
}

fn positive(line: usize, key: &str, n: usize) -> Result<usize, ConfigError> {
    if n >= 1 {
        Ok(n)
    } else {
        Err(ConfigError::at(line, format!("{key} must be at least 1")))
    }
}

pub fn parse_mode(word: &str) -> Option<RiskMode> {
    match word {
        "var" => Some(RiskMode::VarByproduct),
        "cvar" => Some(RiskMode::Cvar),
        _ => None,
    }
}

fn parse_lines(text: &str) -> Result<Entries, ConfigError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| ConfigError::at(line, "expected `key = value`"))?;
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(ConfigError::at(line, format!("unknown key `{key}`")));
        }
        if value.is_empty() {
            return Err(ConfigError::at(line, format!("{key}: empty value")));
        }
        let parsed = match serde_json::from_str::<Value>(value) {
            Ok(v) => v,
            Err(_) if value.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') => Value::String(value.into()),
            Err(e) => return Err(ConfigError::at(line, format!("{key}: {e}"))),
        };
        if let Some((first, _)) = map.insert(key.to_string(), (line, parsed)) {
            return Err(ConfigError::at(line, format!("{key} already set on line {first}")));
        }
    }
    Ok(Entries(map))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::at(0, format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut e = parse_lines(text)?;
        for key in REQUIRED {
            if !e.0.contains_key(*key) {
                return Err(ConfigError::at(0, format!("missing key {key}")));
            }
        }
        let matrix = "a matrix [[..], ..]";
        let (la, a) = e.required("matrix.A", as_matrix, matrix)?;
        let (lb, b) = e.required("matrix.B", as_matrix, matrix)?;
        let nx = a.rows();
        if !a.is_square() || b.rows() != nx {
            return Err(ConfigError::at(la.max(lb), "matrix.A must be square with as many rows as matrix.B"));
        }
        let nu = b.cols();
        let gain = match e.take("matrix.K") {
            None => GainSpec::Auto,
            Some((_, Value::String(w))) if w == "auto" => GainSpec::Auto,
            Some((line, v)) => {
                let k = as_matrix(&v).ok_or_else(|| ConfigError::at(line, "matrix.K: expected a matrix or `auto`"))?;
                if k.shape() != (nu, nx) {
                    return Err(ConfigError::at(line, format!("matrix.K must be {nu}x{nx}")));
                }
                GainSpec::Explicit(k)
            }
        };
        let square = |e: &mut Entries, key: &str, n: usize| -> Result<Matrix, ConfigError> {
            let (line, m) = e.required(key, as_matrix, matrix)?;
            if m.shape() != (n, n) {
                return Err(ConfigError::at(line, format!("{key} must be {n}x{n}")));
            }
            Ok(m)
        };
        let q = square(&mut e, "matrix.Q", nx)?;
        let r = square(&mut e, "matrix.R", nu)?;
        let sigma_w = square(&mut e, "matrix.Sigma_w", nx)?;

        let (lh, h_mat) = e.required("matrix.H", as_matrix, matrix)?;
        let (lhv, h) = e.required("vector.h", as_vec, "a vector")?;
        if h_mat.cols() != nx || h_mat.rows() != h.len() {
            return Err(ConfigError::at(lh.max(lhv), "matrix.H must have nx columns and one row per entry of vector.h"));
        }
        if h.iter().any(|&v| v <= 0.0) {
            return Err(ConfigError::at(lhv, "vector.h must be positive"));
        }
        let l_mat = e.get("matrix.L", as_matrix, matrix)?;
        let l = e.get("vector.l", as_vec, "a vector")?;
        let (l_mat, l) = match (l_mat, l) {
            (None, None) => (None, None),
            (Some((ll, lm)), Some((lv, l))) => {
                if lm.cols() != nu || lm.rows() != l.len() {
                    return Err(ConfigError::at(ll.max(lv), "matrix.L must have nu columns and one row per entry of vector.l"));
                }
                if l.iter().any(|&v| v <= 0.0) {
                    return Err(ConfigError::at(lv, "vector.l must be positive"));
                }
                (Some(lm), Some(l))
            }
            (Some((line, _)), None) | (None, Some((line, _))) => {
                return Err(ConfigError::at(line, "matrix.L and vector.l go together"))
            }
        };

        let (lh, horizon) = e.or("horizon", 30, as_usize, "an integer")?;
        let horizon = positive(lh, "horizon", horizon)?;
        let (lx, x0) = e.or("x0", vec![0.0; nx], as_vec, "a vector")?;
        if x0.len() != nx {
            return Err(ConfigError::at(lx, format!("x0 must have {nx} entries")));
        }
        let (lp, p_x) = e.or("p_x", 0.8, as_f64, "a number")?;
        let p_x = probability(lp, "p_x", p_x)?;
        let (lp, p_u) = e.or("p_u", 0.8, as_f64, "a number")?;
        let p_u = probability(lp, "p_u", p_u)?;
        let (lt, theta) = e.or("theta", 0.0, as_f64, "a number")?;
        if theta < 0.0 {
            return Err(ConfigError::at(lt, "theta must be >= 0"));
        }
        let int = "a positive integer";
        let (ln, m) = e.or("M", 30, as_usize, int)?;
        let m = positive(ln, "M", m)?;
        let (ln, n_s) = e.or("N_s", 1000, as_usize, int)?;
        let n_s = positive(ln, "N_s", n_s)?;
        let (ln, t) = e.or("T", 100, as_usize, int)?;
        let t = positive(ln, "T", t)?;
        let (ln, n_mc) = e.or("N_mc", 1000, as_usize, int)?;
        let n_mc = positive(ln, "N_mc", n_mc)?;
        let (ln, n_v) = e.or("N_v", 100_000, as_usize, int)?;
        let n_v = positive(ln, "N_v", n_v)?;
        let (_, seed) = e.or("seed", 42, Value::as_u64, "an unsigned integer")?;
        let (_, mode) = e.or("mode", RiskMode::VarByproduct, |v| as_word(v).and_then(parse_mode), "var or cvar")?;
        let (ll, lambda_min) = e.or("lambda_min", 1.0, as_f64, "a number")?;
        if lambda_min <= 0.0 {
            return Err(ConfigError::at(ll, "lambda_min must be > 0"));
        }
        let (_, sampling) = e.or(
            "sampling",
            ErrorSampling::Stationary,
            |v| match as_word(v)? {
                "stationary" => Some(ErrorSampling::Stationary),
                "recursion" => Some(ErrorSampling::Recursion),
                _ => None,
            },
            "stationary or recursion",
        )?;

        let (lc, coord) = e.or("reliability.coordinate", nx, as_usize, int)?;
        if coord == 0 || coord > nx {
            return Err(ConfigError::at(lc, format!("reliability.coordinate must lie in 1..={nx}")));
        }
        let (lm, reliability_m) = e.or("reliability.M", vec![30, 100, 400], as_usize_vec, "a list of integers")?;
        if reliability_m.is_empty() || reliability_m.contains(&0) {
            return Err(ConfigError::at(lm, "reliability.M must list positive sample sizes"));
        }
        let explicit = e.get("reliability.theta", as_vec, "a list of numbers")?;
        let max = e.get("reliability.theta_max", as_f64, "a number")?;
        let steps = e.get("reliability.theta_steps", as_usize, int)?;
        let reliability_thetas = match (explicit, max, steps) {
            (Some((line, _)), Some(_), _) | (Some((line, _)), _, Some(_)) => {
                return Err(ConfigError::at(line, "reliability.theta excludes theta_max and theta_steps"))
            }
            (Some((line, v)), None, None) => {
                if v.is_empty() || v.iter().any(|&t| t < 0.0) {
                    return Err(ConfigError::at(line, "reliability.theta must list values >= 0"));
                }
                v
            }
            (None, max, steps) => {
                let (lm, max) = max.unwrap_or((0, 0.2));
                let (ls, steps) = steps.unwrap_or((0, 21));
                if max < 0.0 {
                    return Err(ConfigError::at(lm, "reliability.theta_max must be >= 0"));
                }
                Axis {
                    min: 0.0,
                    max,
                    count: positive(ls, "reliability.theta_steps", steps)?,
                }
                .points()
            }
        };
        let simulate_etas = e.get("simulate.eta", as_vec, "a list of numbers")?;
        if let Some((line, v)) = &simulate_etas {
            if v.is_empty() || v.iter().any(|&x| x < 0.0) {
                return Err(ConfigError::at(*line, "simulate.eta must list radii >= 0"));
            }
        }
        let axis = "[min, max, count]";
        let (_, region_x1) = e.or("region.x1", Axis { min: -15.0, max: 15.0, count: 61 }, as_axis, axis)?;
        let (_, region_x2) = e.or("region.x2", Axis { min: -5.0, max: 5.0, count: 41 }, as_axis, axis)?;
        let region_eta = e.get("region.eta", as_f64, "a number")?;
        if let Some((line, v)) = region_eta {
            if v < 0.0 {
                return Err(ConfigError::at(line, "region.eta must be >= 0"));
            }
        }
        debug_assert!(e.0.is_empty());

        Ok(Self {
            a,
            b,
            gain,
            q,
            r,
            sigma_w,
            h_mat,
            h,
            l_mat,
            l,
            horizon,
            x0,
            p_x,
            p_u,
            theta,
            m,
            n_s,
            t,
            n_mc,
            n_v,
            seed,
            mode,
            lambda_min,
            sampling,
            reliability_coordinate: coord - 1,
            reliability_m,
            reliability_thetas,
            simulate_etas: simulate_etas.map(|(_, v)| v),
            region_x1,
            region_x2,
            region_eta: region_eta.map(|(_, v)| v),
        })
    }

    pub fn nx(&self) -> usize {
        self.a.rows()
    }

    pub fn nu(&self) -> usize {
        self.b.cols()
    }

    pub fn system(&self) -> drsmpc_core::Result<LtiSystem> {
        LtiSystem::new(self.a.clone(), self.b.clone())
    }

    pub fn tube_gain(&self) -> drsmpc_core::Result<TubeGain> {
        let system = self.system()?;
        match &self.gain {
            GainSpec::Explicit(k) => TubeGain::new(&system, k.clone()),
            GainSpec::Auto => TubeGain::lqr(&system, &self.q, &self.r),
        }
    }

    pub fn noise(&self) -> drsmpc_core::Result<NoiseModel> {
        NoiseModel::from_covariance(&self.sigma_w)
    }

    pub fn state_set(&self) -> drsmpc_core::Result<Halfspaces> {
        Halfspaces::constraint_set(self.h_mat.clone(), self.h.clone())
    }

    /// The input rows, or no rows at all.
    pub fn input_set(&self) -> drsmpc_core::Result<Halfspaces> {
        match (&self.l_mat, &self.l) {
            (Some(l_mat), Some(l)) => Halfspaces::constraint_set(l_mat.clone(), l.clone()),
            _ => Ok(Halfspaces::unconstrained(self.nu())),
        }
    }
}

//! Command-line flags, `key=value` config files and their resolution into
//! core configuration types.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use manifold_flow::adapt::{StepRule, Tolerance};
use manifold_flow::scenarios::{Bump, FieldProvider, Shape, ShapeSpec};
use manifold_flow::{EvolutionConfig, VelocityLaw};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "manifold-flow", version, about = "Evolve point-cloud surfaces with local B-spline patches")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit patches to a static cloud and tabulate normal and curvature errors.
    FitTest(Flags),
    /// Mean-curvature flow of a sphere or ellipsoid.
    Evolve(Flags),
    /// Curvature- and field-driven flow of a torus or sphere.
    Coupled(Flags),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::FitTest(_) => "fit-test",
            Command::Evolve(_) => "evolve",
            Command::Coupled(_) => "coupled",
        }
    }

    pub fn flags(&self) -> &Flags {
        match self {
            Command::FitTest(f) | Command::Evolve(f) | Command::Coupled(f) => f,
        }
    }
}

/// Every flag is read as text so that config-file values and flags share
/// one parser. Config files use the flag names without dashes as keys.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// `sphere[:r]`, `ellipsoid[:a,b,c]` or `torus[:R,r]`.
    #[arg(long)]
    pub shape: Option<String>,
    /// Point count; fit-test accepts a comma-separated list.
    #[arg(long)]
    pub n_points: Option<String>,
    /// Core points per patch; fit-test accepts a comma-separated list.
    #[arg(long)]
    pub mc: Option<String>,
    /// Overlap points per patch.
    #[arg(long)]
    pub mb: Option<String>,
    #[arg(long)]
    pub degree: Option<String>,
    #[arg(long)]
    pub dt: Option<String>,
    #[arg(long)]
    pub t_final: Option<String>,
    /// Greville deviation tolerance: a fraction of the patch diagonal, or `abs:<length>`.
    #[arg(long)]
    pub eps_tol: Option<String>,
    /// Interpolation tolerance: a fraction of the patch diagonal, or `abs:<length>`.
    #[arg(long)]
    pub tau: Option<String>,
    /// Gauss–Seidel step: `exact` or a fixed step size.
    #[arg(long)]
    pub alpha: Option<String>,
    /// Minimum spacing: a multiple of the initial median spacing, or `abs:<length>`.
    #[arg(long)]
    pub dmin: Option<String>,
    /// Maximum spacing: a multiple of the initial median spacing, or `abs:<length>`.
    #[arg(long)]
    pub dmax: Option<String>,
    #[arg(long)]
    pub omega_candidates: Option<String>,
    #[arg(long)]
    pub epsilon: Option<String>,
    #[arg(long)]
    pub delta: Option<String>,
    /// `none`, `constant:<u>`, `bump[:amplitude,width,decay]` or `tumor`.
    #[arg(long)]
    pub field: Option<String>,
    #[arg(long)]
    pub snapshot_every: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// `key=value` file; flags given on the command line take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Also write binary PLY snapshots with normals.
    #[arg(long)]
    pub ply: bool,
}

/// A usage problem: bad flag value, unknown config key, unsupported shape.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

type Usage<T> = Result<T, UsageError>;

fn usage<T>(msg: impl Into<String>) -> Usage<T> {
    Err(UsageError(msg.into()))
}

const KEYS: [&str; 19] = [
    "shape",
    "n-points",
    "mc",
    "mb",
    "degree",
    "dt",
    "t-final",
    "eps-tol",
    "tau",
    "alpha",
    "dmin",
    "dmax",
    "omega-candidates",
    "epsilon",
    "delta",
    "field",
    "snapshot-every",
    "seed",
    "out-dir",
];

/// Parse `key = value` lines; `#` starts a comment. Keys may use `-` or `_`.
pub fn parse_config_text(text: &str) -> Usage<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return usage(format!("config line {}: expected key=value", k + 1));
        };
        let key = key.trim().replace('_', "-");
        if !KEYS.contains(&key.as_str()) {
            return usage(format!("config line {}: unknown key `{key}`", k + 1));
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

fn read_config(path: &Path) -> Usage<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
    parse_config_text(&text)
}

/// Flags merged with the config file, still as text.
pub struct Merged(BTreeMap<String, String>);

impl Merged {
    pub fn new(flags: &Flags) -> Usage<Self> {
        let mut map = match &flags.config {
            Some(p) => read_config(p)?,
            None => BTreeMap::new(),
        };
        let given = [
            ("shape", &flags.shape),
            ("n-points", &flags.n_points),
            ("mc", &flags.mc),
            ("mb", &flags.mb),
            ("degree", &flags.degree),
            ("dt", &flags.dt),
            ("t-final", &flags.t_final),
            ("eps-tol", &flags.eps_tol),
            ("tau", &flags.tau),
            ("alpha", &flags.alpha),
            ("dmin", &flags.dmin),
            ("dmax", &flags.dmax),
            ("omega-candidates", &flags.omega_candidates),
            ("epsilon", &flags.epsilon),
            ("delta", &flags.delta),
            ("field", &flags.field),
            ("snapshot-every", &flags.snapshot_every),
            ("seed", &flags.seed),
        ];
        for (k, v) in given {
            if let Some(v) = v {
                map.insert(k.to_string(), v.clone());
            }
        }
        if let Some(d) = &flags.out_dir {
            map.insert("out-dir".into(), d.display().to_string());
        }
        Ok(Self(map))
    }

    fn get<T: FromStr>(&self, key: &str) -> Usage<Option<T>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| UsageError(format!("invalid value `{v}` for --{key}"))),
        }
    }

    fn list<T: FromStr>(&self, key: &str) -> Usage<Option<Vec<T>>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|x| x.trim().parse().map_err(|_| UsageError(format!("invalid value `{v}` for --{key}"))))
                .collect::<Usage<Vec<T>>>()
                .map(Some),
        }
    }

    fn tolerance(&self, key: &str) -> Usage<Option<Tolerance>> {
        let Some(v) = self.0.get(key) else { return Ok(None) };
        let bad = || UsageError(format!("invalid value `{v}` for --{key}"));
        let t = match v.strip_prefix("abs:") {
            Some(x) => Tolerance::Absolute(x.parse().map_err(|_| bad())?),
            None => Tolerance::Relative(v.parse().map_err(|_| bad())?),
        };
        Ok(Some(t))
    }
}

fn numbers(text: &str, what: &str) -> Usage<Vec<f64>> {
    text.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| UsageError(format!("invalid {what} parameter `{x}`"))))
        .collect()
}

/// `sphere[:r]`, `ellipsoid[:a,b,c]`, `torus[:R,r]`.
pub fn parse_shape(text: &str) -> Usage<Shape> {
    let (name, params) = match text.split_once(':') {
        Some((n, p)) => (n, Some(numbers(p, n)?)),
        None => (text, None),
    };
    let shape = match (name, params.as_deref()) {
        ("sphere", None) => Shape::Sphere { radius: 1.0 },
        ("sphere", Some(&[r])) => Shape::Sphere { radius: r },
        ("ellipsoid", None) => Shape::Ellipsoid { a: 2.0, b: 1.0, c: 1.5 },
        ("ellipsoid", Some(&[a, b, c])) => Shape::Ellipsoid { a, b, c },
        ("torus", None) => Shape::Torus { major: 1.0, minor: 0.3 },
        ("torus", Some(&[major, minor])) => Shape::Torus { major, minor },
        _ => return usage(format!("unknown shape `{text}`")),
    };
    shape.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(shape)
}

/// `none`, `constant:<u>`, `bump[:amplitude,width,decay]`, `tumor`.
pub fn parse_field(text: &str) -> Usage<Option<FieldProvider>> {
    let bump = |amplitude, width, decay| Bump { amplitude, center: [1.0, 0.0, 0.0], width, decay };
    let (name, params) = match text.split_once(':') {
        Some((n, p)) => (n, Some(numbers(p, n)?)),
        None => (text, None),
    };
    let f = match (name, params.as_deref()) {
        ("none", None) => return Ok(None),
        ("constant", Some(&[u])) => FieldProvider::Constant { value: u },
        ("bump", None) => FieldProvider::Bump(bump(1.0, 0.5, Some(0.5))),
        ("bump", Some(&[a, w, t0])) => FieldProvider::Bump(bump(a, w, Some(t0))),
        ("tumor", None) => FieldProvider::TumorPair {
            u: Bump { amplitude: 1.0, center: [0.0, 0.0, 1.0], width: 0.6, decay: Some(0.1) },
            w: Bump { amplitude: 0.5, center: [0.0, 0.0, -1.0], width: 0.6, decay: Some(0.1) },
        },
        _ => return usage(format!("unknown field `{text}`")),
    };
    f.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(Some(f))
}

/// Fully resolved inputs of one run; serialized into the manifest.
#[derive(Debug, Clone, Serialize)]
pub struct RunSettings {
    pub shape: Shape,
    pub n_points: Vec<usize>,
    pub m_c: Vec<usize>,
    pub seed: u64,
    pub field: Option<FieldProvider>,
    pub evolution: EvolutionConfig,
    /// Not hashed: where outputs go does not change what they contain.
    #[serde(skip)]
    pub out_dir: PathBuf,
    pub ply: bool,
}

impl RunSettings {
    pub fn spec(&self, n_points: usize) -> ShapeSpec {
        ShapeSpec { shape: self.shape, n_points, seed: self.seed }
    }
}

/// Apply per-command defaults, then the merged flags.
pub fn resolve(command: &Command) -> Usage<RunSettings> {
    let flags = command.flags();
    let m = Merged::new(flags)?;
    let name = command.name();
    let shape = parse_shape(m.0.get("shape").map_or(
        match command {
            Command::Coupled(_) => "torus",
            _ => "sphere",
        },
        String::as_str,
    ))?;
    match (command, &shape) {
        (Command::Evolve(_), Shape::Torus { .. }) => return usage("evolve supports sphere and ellipsoid"),
        (Command::Coupled(_), Shape::Ellipsoid { .. }) => return usage("coupled supports torus and sphere"),
        _ => {}
    }
    let mut cfg = EvolutionConfig::default();
    let (t_final, snapshot_every) = match (command, &shape) {
        (Command::Evolve(_), Shape::Ellipsoid { .. }) => (0.8, 200),
        (Command::Evolve(_), _) => (0.25, 50),
        (Command::Coupled(_), Shape::Sphere { .. }) => (0.05, 25),
        (Command::Coupled(_), _) => (0.5, 250),
        (Command::FitTest(_), _) => (0.0, 1),
    };
    cfg.t_final = t_final;
    cfg.snapshot_every = snapshot_every;

    let n_points = match command {
        Command::FitTest(_) => m.list("n-points")?.unwrap_or_else(|| vec![948, 1806, 2964, 3816, 4890]),
        _ => vec![m.get("n-points")?.unwrap_or(4890)],
    };
    let m_c = match command {
        Command::FitTest(_) => m.list("mc")?.unwrap_or_else(|| vec![25, 49]),
        _ => vec![m.get("mc")?.unwrap_or(cfg.m_c)],
    };
    if n_points.iter().chain(&m_c).any(|&x| x == 0) {
        return usage("point and core counts must be positive");
    }
    cfg.m_c = m_c[0];
    if let Some(v) = m.get("mb")? {
        cfg.m_b = v;
    }
    if let Some(v) = m.get("degree")? {
        cfg.fit.degree = v;
    }
    if let Some(v) = m.get("omega-candidates")? {
        cfg.fit.omega_candidates = v;
    }
    if let Some(v) = m.get("dt")? {
        cfg.dt = v;
    }
    if let Some(v) = m.get("t-final")? {
        cfg.t_final = v;
    }
    if let Some(v) = m.get("snapshot-every")? {
        cfg.snapshot_every = v;
    }
    if let Some(t) = m.tolerance("eps-tol")? {
        cfg.refine.eps_tol = t;
    }
    if let Some(t) = m.tolerance("tau")? {
        cfg.refine.tau = t;
    }
    if let Some(t) = m.tolerance("dmin")? {
        cfg.refine.d_min = t;
    }
    if let Some(t) = m.tolerance("dmax")? {
        cfg.refine.d_max = t;
    }
    if let Some(a) = m.0.get("alpha") {
        cfg.refine.alpha = match a.as_str() {
            "exact" => StepRule::Exact,
            x => StepRule::Global(x.parse().map_err(|_| UsageError(format!("invalid value `{x}` for --alpha")))?),
        };
    }
    let (default_eps, default_delta) = (0.01, 0.4);
    let epsilon = m.get("epsilon")?;
    let delta = m.get("delta")?;
    let mut field = None;
    if let Command::Coupled(_) = command {
        let default_field = if matches!(shape, Shape::Sphere { .. }) { "tumor" } else { "bump" };
        field = parse_field(m.0.get("field").map_or(default_field, String::as_str))?;
        if field.is_none() {
            return usage("coupled needs a field provider");
        }
        cfg.law = VelocityLaw::Coupled { epsilon: epsilon.unwrap_or(default_eps), delta: delta.unwrap_or(default_delta) };
    } else if epsilon.is_some() || delta.is_some() || m.0.contains_key("field") {
        return usage(format!("--epsilon, --delta and --field apply to coupled runs only, not {name}"));
    }
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    let out_dir = PathBuf::from(m.0.get("out-dir").map_or(format!("out/{name}"), Clone::clone));
    Ok(RunSettings {
        shape,
        n_points,
        m_c,
        seed: m.get("seed")?.unwrap_or(0),
        field,
        evolution: cfg,
        out_dir,
        ply: flags.ply,
    })
}

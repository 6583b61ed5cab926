//! Experiment configuration: TOML with a closed key set, merged over per-scenario defaults.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use psido_core::funcalc::ScalarFunction;
use psido_core::symbols::Family;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config does not parse: {0}")]
    Parse(String),
    #[error("config has {} validation error(s):\n  - {}", .0.len(), .0.join("\n  - "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    SymbolCheck,
    ComposeCheck,
    Parametrix,
    EllipticEstimate,
    Waveprop,
    FuncalcDefect,
    QuasilocScan,
    FredholmCheck,
    HomotopyScan,
    FullSuite,
}

impl Scenario {
    pub const ALL: [Scenario; 10] = [
        Scenario::SymbolCheck,
        Scenario::ComposeCheck,
        Scenario::Parametrix,
        Scenario::EllipticEstimate,
        Scenario::Waveprop,
        Scenario::FuncalcDefect,
        Scenario::QuasilocScan,
        Scenario::FredholmCheck,
        Scenario::HomotopyScan,
        Scenario::FullSuite,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::SymbolCheck => "symbol-check",
            Scenario::ComposeCheck => "compose-check",
            Scenario::Parametrix => "parametrix",
            Scenario::EllipticEstimate => "elliptic-estimate",
            Scenario::Waveprop => "waveprop",
            Scenario::FuncalcDefect => "funcalc-defect",
            Scenario::QuasilocScan => "quasiloc-scan",
            Scenario::FredholmCheck => "fredholm-check",
            Scenario::HomotopyScan => "homotopy-scan",
            Scenario::FullSuite => "full-suite",
        }
    }

    /// Every scenario run by `full-suite`, in order.
    pub fn suite() -> &'static [Scenario] {
        &Scenario::ALL[..9]
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Scenario::ALL
            .iter()
            .find(|sc| sc.name() == s)
            .copied()
            .ok_or_else(|| format!("unknown scenario `{s}` (known: {})", Scenario::ALL.map(|s| s.name()).join(", ")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: Option<usize>,
    /// `N` or an `N`-ladder.
    pub n: Option<OneOrMany<usize>>,
    /// `L` or an `L`-ladder.
    pub l: Option<OneOrMany<f64>>,
    pub r: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub t_list: Option<Vec<f64>>,
    #[serde(rename = "R_list")]
    pub r_list: Option<Vec<f64>>,
    pub eps_list: Option<Vec<f64>>,
    pub t_steps: Option<Vec<usize>>,
    pub j_list: Option<Vec<usize>>,
    pub s_list: Option<Vec<f64>>,
    pub n_quad: Option<Vec<usize>>,
    pub probes: Option<usize>,
    pub cutoff_width: Option<f64>,
    pub region_radius: Option<f64>,
    pub excision_radius: Option<f64>,
    pub excision_width: Option<f64>,
}

/// The file format. Every field is optional; missing ones come from the scenario defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub grid: Option<GridConfig>,
    /// Symbol families with parameters, e.g. `"drift(1)"`.
    pub symbols: Option<Vec<String>>,
    pub pairs: Option<Vec<(String, String)>>,
    /// Scalar function specs, e.g. `"gaussian(1)"`.
    pub functions: Option<Vec<String>>,
    /// Multiplication functions `cos(k)`, `sin(k)`, `expcos(k)` meaning `cos(kx/L)` etc.
    pub multipliers: Option<Vec<String>>,
    pub scan: Option<ScanConfig>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::from_toml(&text)
    }

    pub fn for_scenario(s: Scenario) -> Self {
        ExperimentConfig { scenario: Some(s.name().to_string()), ..Default::default() }
    }
}

/// A smooth periodic multiplication function of `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Multiplier {
    Cos(f64),
    Sin(f64),
    ExpCos(f64),
}

impl Multiplier {
    pub fn eval(&self, x: f64, l: f64) -> f64 {
        match *self {
            Multiplier::Cos(k) => (k * x / l).cos(),
            Multiplier::Sin(k) => (k * x / l).sin(),
            Multiplier::ExpCos(k) => (k * x / l).cos().exp(),
        }
    }
}

impl FromStr for Multiplier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (head, args) = psido_core::funcalc::parse_call(s).map_err(|e| e.to_string())?;
        let k = match args.as_slice() {
            [k] if k.fract() == 0.0 && *k != 0.0 => *k,
            _ => return Err(format!("multiplier `{s}` needs one nonzero integer frequency")),
        };
        match head.as_str() {
            "cos" => Ok(Multiplier::Cos(k)),
            "sin" => Ok(Multiplier::Sin(k)),
            "expcos" => Ok(Multiplier::ExpCos(k)),
            _ => Err(format!("unknown multiplier `{head}`")),
        }
    }
}

impl fmt::Display for Multiplier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Multiplier::Cos(k) => write!(f, "cos({k})"),
            Multiplier::Sin(k) => write!(f, "sin({k})"),
            Multiplier::ExpCos(k) => write!(f, "expcos({k})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    pub dim: usize,
    pub n: Vec<usize>,
    pub l: Vec<f64>,
    pub r: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scan {
    pub t_list: Vec<f64>,
    #[serde(rename = "R_list")]
    pub r_list: Vec<f64>,
    pub eps_list: Vec<f64>,
    pub t_steps: Vec<usize>,
    pub j_list: Vec<usize>,
    pub s_list: Vec<f64>,
    pub n_quad: Vec<usize>,
    pub probes: usize,
    pub cutoff_width: f64,
    pub region_radius: f64,
    pub excision_radius: f64,
    pub excision_width: f64,
}

/// A validated configuration with every field filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub scenario: Scenario,
    pub seed: u64,
    pub grid: Grid,
    pub symbols: Vec<String>,
    pub pairs: Vec<(String, String)>,
    pub functions: Vec<String>,
    pub multipliers: Vec<String>,
    pub scan: Scan,
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[serde(skip)]
    pub threads: Option<usize>,
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn pairs(v: &[(&str, &str)]) -> Vec<(String, String)> {
    v.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
}

/// The configuration each scenario runs with when the file leaves a key out.
pub fn defaults(s: Scenario) -> Resolved {
    let grid = |n: &[usize], l: f64, r: usize| Grid { dim: 1, n: n.to_vec(), l: vec![l], r };
    let scan = Scan {
        t_list: vec![],
        r_list: vec![],
        eps_list: vec![],
        t_steps: vec![],
        j_list: vec![],
        s_list: vec![],
        n_quad: vec![],
        probes: 2,
        cutoff_width: 0.5,
        region_radius: 1.0,
        excision_radius: 8.0,
        excision_width: 4.0,
    };
    let base = Resolved {
        scenario: s,
        seed: 1,
        grid: grid(&[64], 1.0, 1),
        symbols: vec![],
        pairs: vec![],
        functions: vec![],
        multipliers: vec![],
        scan: scan.clone(),
        out: None,
        threads: None,
    };
    match s {
        Scenario::SymbolCheck => Resolved {
            grid: grid(&[16, 64, 256], 1.0, 1),
            symbols: strings(&["laplace+1", "schrodinger(1)", "drift(1)", "graded-dirac"]),
            ..base
        },
        Scenario::ComposeCheck => Resolved {
            grid: grid(&[256, 512, 1024], 1.0, 1),
            symbols: strings(&["laplace+1", "schrodinger(1)", "varcoef(0.5)"]),
            pairs: pairs(&[
                ("inverse-bessel", "schrodinger(1)"),
                ("sqrt-drift(0.5)", "potential(1)"),
                ("sqrt-drift(0.5)", "varcoef(0.5)"),
                ("resolvent(0.5)", "drift(1)"),
                ("sign-drift(0.5)", "magnetic(0.5)"),
            ]),
            multipliers: strings(&["cos(1)", "sin(2)", "expcos(1)"]),
            scan: Scan { j_list: vec![0, 1, 2], s_list: vec![0.0, 1.0], ..scan },
            ..base
        },
        Scenario::Parametrix => Resolved {
            grid: grid(&[256, 512, 1024], 1.0, 1),
            symbols: strings(&["schrodinger(1)", "laplace+1"]),
            scan: Scan { j_list: vec![0, 1, 2, 3], s_list: vec![0.0, 1.0, 2.0], ..scan },
            ..base
        },
        Scenario::EllipticEstimate => Resolved {
            grid: grid(&[256, 512, 1024], 1.0, 1),
            symbols: strings(&["schrodinger(1)", "varcoef(0.5)", "drift(1)"]),
            scan: Scan { s_list: vec![2.0], probes: 8, ..scan },
            ..base
        },
        Scenario::Waveprop => Resolved {
            grid: grid(&[2048], 8.0, 1),
            symbols: strings(&["laplace+1"]),
            scan: Scan {
                t_list: vec![0.1, 0.2, 0.4],
                r_list: vec![4.0, 6.0, 8.0, 12.0, 16.0],
                s_list: vec![1.0],
                probes: 2,
                cutoff_width: 0.5,
                region_radius: 1.0,
                ..scan
            },
            ..base
        },
        Scenario::FuncalcDefect => Resolved {
            grid: grid(&[64, 128, 256], 1.0, 1),
            symbols: strings(&["laplace+1", "schrodinger(1)", "varcoef(0.5)"]),
            pairs: pairs(&[
                ("dirac", "bessel(1)"),
                ("laplace+1", "resolvent(0)"),
                ("bessel(1)", "sqrt-drift(0)"),
                ("dirac", "drift(0.5)"),
                ("bessel(1)", "sqrt-drift(0.5)"),
                ("dirac", "sqrt-drift(0.25)"),
            ]),
            functions: strings(&["gaussian(1)", "chi_rational", "tanh(1)", "fejer(1)"]),
            scan: Scan { n_quad: vec![32, 64, 128, 256, 512], s_list: vec![0.0, 1.0, 2.0, 3.0], ..scan },
            ..base
        },
        Scenario::QuasilocScan => Resolved {
            grid: grid(&[256, 512, 1024], 1.0, 1),
            symbols: strings(&["inverse-bessel", "weighted-inverse-bessel(0.5)", "sign-drift(0)"]),
            scan: Scan {
                eps_list: vec![0.1, 0.03, 0.01],
                r_list: vec![0.5, 1.0, 1.5, 2.0, 3.0, 4.0],
                cutoff_width: 0.25,
                region_radius: 0.5,
                probes: 2,
                ..scan
            },
            ..base
        },
        Scenario::FredholmCheck => Resolved {
            grid: grid(&[32], 1.0, 2),
            symbols: strings(&["graded-dirac", "gapped-dirac(1)"]),
            functions: strings(&["chi_rational", "sign_gap(0.5)"]),
            scan: Scan { eps_list: vec![0.1, 0.01], n_quad: vec![4096], ..scan },
            ..base
        },
        Scenario::HomotopyScan => Resolved {
            grid: grid(&[32], 1.0, 1),
            functions: strings(&["chi_rational"]),
            scan: Scan { t_steps: vec![2, 4, 8], probes: 4, ..scan },
            ..base
        },
        Scenario::FullSuite => base,
    }
}

impl Resolved {
    /// Merges `cfg` over the defaults of its scenario (or `scenario`, when given) and
    /// validates the result, listing every problem found.
    pub fn from_config(cfg: &ExperimentConfig, scenario: Option<&str>) -> Result<Self, ConfigError> {
        let mut errors = Vec::new();
        let name = scenario.map(str::to_string).or_else(|| cfg.scenario.clone());
        let sc = match name.as_deref().map(Scenario::from_str) {
            None => {
                errors.push("no scenario given (config key `scenario` or `--scenario`)".to_string());
                Scenario::SymbolCheck
            }
            Some(Err(e)) => {
                errors.push(e);
                Scenario::SymbolCheck
            }
            Some(Ok(s)) => s,
        };
        let mut r = defaults(sc);
        if let Some(s) = cfg.seed {
            r.seed = s;
        }
        r.out = cfg.out.clone();
        r.threads = cfg.threads;
        if let Some(g) = &cfg.grid {
            if let Some(d) = g.dim {
                r.grid.dim = d;
            }
            if let Some(n) = &g.n {
                r.grid.n = n.to_vec();
            }
            if let Some(l) = &g.l {
                r.grid.l = l.to_vec();
            }
            if let Some(fr) = g.r {
                r.grid.r = fr;
            }
        }
        if let Some(v) = &cfg.symbols {
            r.symbols = v.clone();
        }
        if let Some(v) = &cfg.pairs {
            r.pairs = v.clone();
        }
        if let Some(v) = &cfg.functions {
            r.functions = v.clone();
        }
        if let Some(v) = &cfg.multipliers {
            r.multipliers = v.clone();
        }
        if let Some(s) = &cfg.scan {
            macro_rules! take {
                ($($f:ident),*) => {$(if let Some(v) = &s.$f { r.scan.$f = v.clone(); })*};
            }
            take!(t_list, r_list, eps_list, t_steps, j_list, s_list, n_quad, probes, cutoff_width, region_radius, excision_radius, excision_width);
        }
        if sc == Scenario::FullSuite && (cfg.grid.is_some() || cfg.symbols.is_some() || cfg.pairs.is_some() || cfg.functions.is_some() || cfg.multipliers.is_some() || cfg.scan.is_some()) {
            errors.push("full-suite runs every scenario with its defaults; only `seed`, `out` and `threads` may be set".into());
        }
        r.validate(&mut errors);
        if errors.is_empty() {
            Ok(r)
        } else {
            Err(ConfigError::Invalid(errors))
        }
    }

    fn validate(&self, errors: &mut Vec<String>) {
        let g = &self.grid;
        if !(1..=2).contains(&g.dim) {
            errors.push(format!("grid.dim = {} must be 1 or 2", g.dim));
        }
        if g.n.is_empty() {
            errors.push("grid.n is empty".into());
        }
        for &n in &g.n {
            if n < 4 || n % 2 == 1 {
                errors.push(format!("grid.n = {n} must be even and at least 4"));
            }
        }
        if g.l.is_empty() {
            errors.push("grid.l is empty".into());
        }
        for &l in &g.l {
            if !(l > 0.0 && l.is_finite()) {
                errors.push(format!("grid.l = {l} must be positive"));
            }
        }
        if g.r == 0 {
            errors.push("grid.r must be positive".into());
        }
        for s in &self.symbols {
            if let Err(e) = s.parse::<Family>() {
                errors.push(format!("symbols: {e}"));
            }
        }
        for (a, b) in &self.pairs {
            for s in [a, b] {
                if let Err(e) = s.parse::<Family>() {
                    errors.push(format!("pairs: {e}"));
                }
            }
        }
        for f in &self.functions {
            if let Err(e) = f.parse::<ScalarFunction>() {
                errors.push(format!("functions: {e}"));
            }
        }
        for m in &self.multipliers {
            if let Err(e) = m.parse::<Multiplier>() {
                errors.push(format!("multipliers: {e}"));
            }
        }
        let sc = &self.scan;
        for &e in &sc.eps_list {
            if !(e > 0.0) {
                errors.push(format!("scan.eps_list: {e} must be positive"));
            }
        }
        for &r in &sc.r_list {
            if !(r > 0.0) {
                errors.push(format!("scan.R_list: {r} must be positive"));
            }
        }
        for &n in &sc.n_quad {
            if n < 4 || n % 2 == 1 {
                errors.push(format!("scan.n_quad: {n} must be even and at least 4"));
            }
        }
        if let Some(&m) = sc.t_steps.iter().max() {
            for &s in &sc.t_steps {
                if s == 0 || m % s != 0 {
                    errors.push(format!("scan.t_steps: {s} must be positive and divide {m}"));
                }
            }
        }
        if sc.probes == 0 {
            errors.push("scan.probes must be at least 1".into());
        }
        for (k, v) in [("cutoff_width", sc.cutoff_width), ("region_radius", sc.region_radius)] {
            if !(v > 0.0) {
                errors.push(format!("scan.{k} = {v} must be positive"));
            }
        }
        for (k, v) in [("excision_radius", sc.excision_radius), ("excision_width", sc.excision_width)] {
            if !(v >= 0.0) {
                errors.push(format!("scan.{k} = {v} must be nonnegative"));
            }
        }
        self.validate_scenario(errors);
    }

    fn validate_scenario(&self, errors: &mut Vec<String>) {
        let need = |errors: &mut Vec<String>, ok: bool, what: &str| {
            if !ok {
                errors.push(format!("{}: {what}", self.scenario));
            }
        };
        let sc = &self.scan;
        match self.scenario {
            Scenario::ComposeCheck => {
                need(errors, !self.pairs.is_empty() || !self.symbols.is_empty(), "needs `pairs` or `symbols`");
                need(errors, !sc.j_list.is_empty() && !sc.s_list.is_empty(), "needs scan.j_list and scan.s_list");
                need(errors, self.symbols.is_empty() || !self.multipliers.is_empty(), "commutator checks need `multipliers`");
            }
            Scenario::Parametrix => {
                need(errors, !self.symbols.is_empty(), "needs `symbols`");
                need(errors, !sc.j_list.is_empty() && !sc.s_list.is_empty(), "needs scan.j_list and scan.s_list");
            }
            Scenario::EllipticEstimate => need(errors, sc.s_list.len() == 1, "needs exactly one Sobolev index in scan.s_list"),
            Scenario::Waveprop => {
                need(errors, self.symbols.len() == 1, "needs exactly one symbol");
                need(errors, !sc.t_list.is_empty() && !sc.r_list.is_empty(), "needs scan.t_list and scan.R_list");
                need(errors, sc.s_list.len() == 1, "needs the Sobolev index l as the single entry of scan.s_list");
                need(errors, self.grid.n.len() == 1 && self.grid.l.len() == 1, "runs on a single grid");
            }
            Scenario::FuncalcDefect => {
                need(errors, !sc.n_quad.is_empty(), "needs scan.n_quad");
                need(errors, !self.functions.is_empty(), "needs `functions`");
            }
            Scenario::QuasilocScan => {
                need(errors, !sc.eps_list.is_empty(), "needs scan.eps_list");
                for s in &self.symbols {
                    if let Ok(f) = s.parse::<Family>() {
                        need(errors, f.order() <= 0, &format!("`{s}` must have order ≤ 0"));
                    }
                }
            }
            Scenario::FredholmCheck => {
                need(errors, self.symbols.len() == self.functions.len(), "needs one function per symbol");
                for s in &self.symbols {
                    if let Ok(f) = s.parse::<Family>() {
                        need(errors, matches!(f, Family::GradedDirac | Family::GappedDirac(_)), &format!("`{s}` has no multigrading model"));
                    }
                }
                need(errors, self.grid.r == 2, "graded models need grid.r = 2");
                need(errors, !sc.eps_list.is_empty(), "needs scan.eps_list");
            }
            Scenario::HomotopyScan => {
                need(errors, self.functions.len() == 1, "needs exactly one normalizing function");
                need(errors, !sc.t_steps.is_empty(), "needs scan.t_steps");
            }
            _ => {}
        }
    }

    /// Canonical JSON of the resolved configuration; its SHA-256 is the config hash.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn config_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let d = Sha256::digest(self.canonical_json().as_bytes());
        d.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn families(&self) -> Vec<Family> {
        self.symbols.iter().map(|s| s.parse().expect("validated")).collect()
    }

    pub fn family_pairs(&self) -> Vec<(Family, Family)> {
        self.pairs.iter().map(|(a, b)| (a.parse().expect("validated"), b.parse().expect("validated"))).collect()
    }

    pub fn scalar_functions(&self) -> Vec<ScalarFunction> {
        self.functions.iter().map(|s| s.parse().expect("validated")).collect()
    }

    pub fn multiplier_fns(&self) -> Vec<Multiplier> {
        self.multipliers.iter().map(|s| s.parse().expect("validated")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        for s in Scenario::ALL {
            let r = Resolved::from_config(&ExperimentConfig::for_scenario(s), None);
            assert!(r.is_ok(), "{s}: {r:?}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("scenario = \"waveprop\"\nsed = 3\n").is_err());
        assert!(ExperimentConfig::from_toml("[grid]\nN = 3\n").is_err());
        assert!(ExperimentConfig::from_toml("[scan]\nR_list = [1.0]\nr_list = [2.0]\n").is_err());
        let c = ExperimentConfig::from_toml("scenario = \"waveprop\"\n[grid]\nn = 512\nl = [2.0]\n[scan]\nR_list = [1.0, 2.0]\n").unwrap();
        let r = Resolved::from_config(&c, None).unwrap();
        assert_eq!(r.grid.n, vec![512]);
        assert_eq!(r.scan.r_list, vec![1.0, 2.0]);
    }

    #[test]
    fn validation_lists_every_problem() {
        let c = ExperimentConfig::from_toml(
            "scenario = \"quasiloc-scan\"\nsymbols = [\"nope\", \"laplace+1\"]\n[grid]\nn = [7]\nl = -1.0\n[scan]\neps_list = [0.0]\nprobes = 0\n",
        )
        .unwrap();
        let Err(ConfigError::Invalid(errs)) = Resolved::from_config(&c, None) else { panic!() };
        let text = errs.join("\n");
        for needle in ["grid.n = 7", "grid.l = -1", "nope", "eps_list", "probes", "`laplace+1` must have order"] {
            assert!(text.contains(needle), "missing {needle} in {text}");
        }
        let Err(ConfigError::Invalid(errs)) = Resolved::from_config(&ExperimentConfig::default(), Some("bogus")) else { panic!() };
        assert!(errs[0].contains("unknown scenario `bogus`"));
    }

    #[test]
    fn hash_tracks_content() {
        let a = Resolved::from_config(&ExperimentConfig::for_scenario(Scenario::Waveprop), None).unwrap();
        let mut b = a.clone();
        assert_eq!(a.config_hash(), b.config_hash());
        b.seed = 2;
        assert_ne!(a.config_hash(), b.config_hash());
        b.seed = 1;
        b.threads = Some(4);
        assert_eq!(a.config_hash(), b.config_hash());
    }
}

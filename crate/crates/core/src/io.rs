//! Run-config files, trace CSVs, and their JSON side files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::benchlab::{NoiseFamily, NoiseSpec, ObjectiveKind};
use crate::domain::{CandidateSpec, Domain};
use crate::engine::{
    BoundDiagnostics, CheckMode, InitialPoint, IterationRecord, Policy, RunConfig, RunTrace,
};
use crate::error::{Error, Result};
use crate::hypercontrol::{ControllerConfig, HyperBounds, MlSearchConfig};
use crate::kernel::{KernelFamily, LengthScales};

/// Column order of the per-run trace CSV.
pub const TRACE_COLUMNS: [&str; 14] = [
    "t",
    "x",
    "y",
    "f_noiseless",
    "theta",
    "nu",
    "xi",
    "var_before",
    "mu_plus",
    "E",
    "shrink",
    "r_t",
    "R_t",
    "lemma10_slack",
];

/// The JSON run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub domain: Vec<[f64; 2]>,
    pub horizon: usize,
    pub n0: usize,
    pub kernel: KernelFamily,
    pub t_sigma: f64,
    pub p: f64,
    pub c1: f64,
    pub c2: f64,
    pub e_threshold: u32,
    pub delta: f64,
    pub sigma: f64,
    pub theta_lower: Vec<f64>,
    pub theta_upper: Vec<f64>,
    #[serde(default)]
    pub theta_init: Option<Vec<f64>>,
    pub candidate_points: usize,
    pub seed: u64,
    pub policy: Policy,
    pub objective: ObjectiveKind,
    /// Box the initial design is drawn from; defaults to the domain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_region: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub noise: NoiseFamily,
    #[serde(default)]
    pub check_mode: CheckMode,
}

impl ConfigFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Trap defaults: unit interval, 60 rounds, three initial points,
    /// `θ ∈ [0.01, 0.5]`, σ = 0.01.
    pub fn trap_default() -> Self {
        let c = ControllerConfig::default();
        ConfigFile {
            domain: vec![[0.0, 1.0]],
            horizon: 60,
            n0: 3,
            kernel: KernelFamily::SquaredExponential,
            t_sigma: c.t_sigma,
            p: c.p,
            c1: c.c1,
            c2: c.c2,
            e_threshold: c.e_threshold,
            delta: c.delta,
            sigma: 0.01,
            theta_lower: vec![0.01],
            theta_upper: vec![0.5],
            theta_init: None,
            candidate_points: CandidateSpec::GRID_POINTS_1D,
            seed: 0,
            policy: Policy::Algorithm1,
            objective: ObjectiveKind::Trap,
            initial_region: None,
            noise: NoiseFamily::Gaussian,
            check_mode: CheckMode::Record,
        }
    }

    pub fn noise_spec(&self) -> Result<NoiseSpec> {
        NoiseSpec::new(self.noise, self.sigma).map_err(config_err)
    }

    pub fn to_run_config(&self) -> Result<RunConfig> {
        let domain = Domain::try_from(self.domain.clone()).map_err(config_err)?;
        let d = domain.dim();
        if self.theta_lower.len() != d || self.theta_upper.len() != d {
            return Err(Error::Config(format!(
                "theta_lower and theta_upper need {d} entries to match the domain"
            )));
        }
        let lower = LengthScales::new(self.theta_lower.clone()).map_err(config_err)?;
        let upper = LengthScales::new(self.theta_upper.clone()).map_err(config_err)?;
        let bounds = HyperBounds::new(lower, upper).map_err(config_err)?;
        let theta_init = self
            .theta_init
            .clone()
            .map(LengthScales::new)
            .transpose()
            .map_err(config_err)?;
        let initial_region = self
            .initial_region
            .clone()
            .map(Domain::try_from)
            .transpose()
            .map_err(config_err)?;
        let mut candidates = CandidateSpec::default_for_dim(d);
        candidates.points = self.candidate_points;
        let cfg = RunConfig {
            domain,
            horizon: self.horizon,
            n0: self.n0,
            initial_region,
            family: self.kernel,
            controller: ControllerConfig {
                t_sigma: self.t_sigma,
                p: self.p,
                c1: self.c1,
                c2: self.c2,
                e_threshold: self.e_threshold,
                delta: self.delta,
            },
            bounds,
            theta_init,
            candidates,
            ml_search: MlSearchConfig::default(),
            seed: self.seed,
            noise_std: self.sigma,
            check_mode: self.check_mode,
            policy: self.policy,
        };
        cfg.validate().map_err(config_err)?;
        if self.candidate_points == 0 {
            return Err(Error::Config("candidate_points must be >= 1".into()));
        }
        if self.objective_dim() != d {
            return Err(Error::Config(format!(
                "objective {:?} is one-dimensional but the domain has {d} dimensions",
                self.objective
            )));
        }
        Ok(cfg)
    }

    fn objective_dim(&self) -> usize {
        match self.objective {
            ObjectiveKind::Trap | ObjectiveKind::WidePeak => 1,
        }
    }
}

fn config_err(e: Error) -> Error {
    match e {
        Error::InvalidArgument(m) => Error::Config(m),
        other => other,
    }
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(";")
}

pub fn write_trace_csv<W: std::io::Write>(trace: &RunTrace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_COLUMNS)?;
    for r in &trace.records {
        w.write_record([
            r.t.to_string(),
            fmt_vec(&r.x),
            fmt_f64(r.y),
            fmt_opt(r.f_noiseless),
            fmt_vec(&r.theta),
            fmt_f64(r.nu),
            fmt_f64(r.xi),
            fmt_f64(r.var_before),
            fmt_f64(r.mu_plus),
            r.e_counter.to_string(),
            u8::from(r.shrink).to_string(),
            fmt_opt(r.r_t),
            fmt_opt(r.cumulative_regret),
            fmt_opt(r.lemma10_slack),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One parsed row of a trace CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub x: Vec<f64>,
    pub y: f64,
    pub f_noiseless: Option<f64>,
    pub theta: Vec<f64>,
    pub nu: f64,
    pub xi: f64,
    pub var_before: f64,
    pub mu_plus: f64,
    pub e_counter: u32,
    pub shrink: bool,
    pub r_t: Option<f64>,
    pub cumulative_regret: Option<f64>,
    pub lemma10_slack: Option<f64>,
}

fn parse_f64(s: &str, col: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Io(format!("column {col}: cannot parse {s:?}")))
}

fn parse_opt(s: &str, col: &str) -> Result<Option<f64>> {
    if s.trim().is_empty() {
        Ok(None)
    } else {
        parse_f64(s, col).map(Some)
    }
}

fn parse_vec(s: &str, col: &str) -> Result<Vec<f64>> {
    s.split(';').map(|v| parse_f64(v, col)).collect()
}

pub fn read_trace_csv<R: std::io::Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut rd = csv::Reader::from_reader(input);
    let headers = rd.headers()?.clone();
    if headers.iter().ne(TRACE_COLUMNS.iter().copied()) {
        return Err(Error::Io(format!("unexpected trace header: {headers:?}")));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let col = |i: usize| rec.get(i).unwrap_or("");
        rows.push(TraceRow {
            t: col(0).parse().map_err(|_| Error::Io(format!("bad round index {:?}", col(0))))?,
            x: parse_vec(col(1), "x")?,
            y: parse_f64(col(2), "y")?,
            f_noiseless: parse_opt(col(3), "f_noiseless")?,
            theta: parse_vec(col(4), "theta")?,
            nu: parse_f64(col(5), "nu")?,
            xi: parse_f64(col(6), "xi")?,
            var_before: parse_f64(col(7), "var_before")?,
            mu_plus: parse_f64(col(8), "mu_plus")?,
            e_counter: col(9).parse().map_err(|_| Error::Io(format!("bad E {:?}", col(9))))?,
            shrink: col(10) == "1",
            r_t: parse_opt(col(11), "r_t")?,
            cumulative_regret: parse_opt(col(12), "R_t")?,
            lemma10_slack: parse_opt(col(13), "lemma10_slack")?,
        });
    }
    Ok(rows)
}

/// Everything about a run that the trace CSV does not carry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub policy: Policy,
    pub seed: u64,
    pub family: KernelFamily,
    pub noise_std: f64,
    pub domain: Domain,
    pub theta_lower: LengthScales,
    pub theta_upper: LengthScales,
    pub initial: Vec<InitialPoint>,
    pub f_star: Option<f64>,
    pub rkhs_norm_estimate: Option<f64>,
    pub diagnostics: Option<BoundDiagnostics>,
    pub error: Option<String>,
}

impl RunMeta {
    pub fn from_trace(trace: &RunTrace, error: Option<String>) -> Self {
        RunMeta {
            policy: trace.policy,
            seed: trace.seed,
            family: trace.family,
            noise_std: trace.noise_std,
            domain: trace.domain.clone(),
            theta_lower: trace.theta_lower.clone(),
            theta_upper: trace.theta_upper.clone(),
            initial: trace.initial.clone(),
            f_star: trace.f_star,
            rkhs_norm_estimate: trace.rkhs_norm_estimate,
            diagnostics: trace.diagnostics.clone(),
            error,
        }
    }

    /// Rebuilds a trace from this side file and the CSV rows.
    pub fn to_trace(&self, rows: &[TraceRow]) -> RunTrace {
        RunTrace {
            policy: self.policy,
            seed: self.seed,
            family: self.family,
            noise_std: self.noise_std,
            domain: self.domain.clone(),
            theta_lower: self.theta_lower.clone(),
            theta_upper: self.theta_upper.clone(),
            initial: self.initial.clone(),
            records: rows
                .iter()
                .map(|r| IterationRecord {
                    t: r.t,
                    x: r.x.clone(),
                    y: r.y,
                    f_noiseless: r.f_noiseless,
                    theta: r.theta.clone(),
                    theta_upper: Vec::new(),
                    nu: r.nu,
                    xi: r.xi,
                    var_before: r.var_before,
                    mean_at_x: f64::NAN,
                    mu_plus: r.mu_plus,
                    e_counter: r.e_counter,
                    shrink: r.shrink,
                    r_t: r.r_t,
                    cumulative_regret: r.cumulative_regret,
                    lemma10_slack: r.lemma10_slack,
                })
                .collect(),
            f_star: self.f_star,
            rkhs_norm_estimate: self.rkhs_norm_estimate,
            diagnostics: self.diagnostics.clone(),
        }
    }
}

/// Writes `<stem>.csv` and `<stem>.json` into `dir`.
pub fn write_run_files(dir: &Path, stem: &str, trace: &RunTrace, error: Option<String>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let csv_file = fs::File::create(dir.join(format!("{stem}.csv")))?;
    write_trace_csv(trace, std::io::BufWriter::new(csv_file))?;
    let meta = RunMeta::from_trace(trace, error);
    fs::write(
        dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(&meta)? + "\n",
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_key_is_named() {
        let mut v = serde_json::to_value(ConfigFile::trap_default()).unwrap();
        v.as_object_mut().unwrap().remove("c1");
        let err = ConfigFile::from_json(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("c1"), "{err}");
    }

    #[test]
    fn bad_constants_cite_constraint() {
        let mut c = ConfigFile::trap_default();
        c.c1 = 2.0;
        let err = c.to_run_config().unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("c2 > c1 > 0"));
    }

    #[test]
    fn default_round_trips() {
        let c = ConfigFile::trap_default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(ConfigFile::from_json(&text).unwrap(), c);
        let rc = c.to_run_config().unwrap();
        assert_eq!(rc.horizon, 60);
        assert_eq!(rc.candidates.points, 2001);
    }

    #[test]
    fn float_format_has_17_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(4.0), "4.0000000000000000e0");
        assert_eq!("1.0000000000000001e-1".parse::<f64>().unwrap(), 0.1);
    }
}

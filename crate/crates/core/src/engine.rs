//! The optimization loop: EI selection, over-confidence control of the
//! length-scale bounds, constrained re-estimation of θ and ν, and the
//! per-round diagnostics that go with it.

use std::f64::consts::PI;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{maximize_acquisition, AcquisitionQuery, IncumbentMode};
use crate::domain::{uniform_grid_1d, scrambled_halton, CandidateSet, CandidateSpec, Domain};
use crate::error::{Error, Result};
use crate::gp::{Dataset, Posterior};
use crate::hypercontrol::{
    choose_nu, estimate_theta_constrained, ControllerConfig, HyperBounds, HyperState,
    MlSearchConfig,
};
use crate::infogain::{info_gain_logdet, sequential_variances, xi_statistic};
use crate::kernel::{KernelFamily, KernelSpec, LengthScales};
use crate::linalg::Cholesky;

/// Length-scale range the maximum-likelihood baseline searches over.
pub const BASELINE_THETA_RANGE: (f64, f64) = (1e-4, 1e2);

/// Tolerance of the runtime inequality checks.
pub const CHECK_TOLERANCE: f64 = 1e-8;

/// Grid size of the finite-sample RKHS norm proxy.
pub const RKHS_GRID_POINTS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub y: f64,
    /// Noise-free value, when the objective is synthetic.
    pub f_noiseless: Option<f64>,
}

/// A black-box function to maximize.
pub trait Objective: Sync {
    fn dim(&self) -> usize;

    fn evaluate(&self, x: &[f64], rng: &mut dyn RngCore) -> Result<Observation>;

    fn noiseless(&self, _x: &[f64]) -> Option<f64> {
        None
    }

    /// Global maximum of the noise-free function, when known.
    fn optimum(&self) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Bounded length scales with adaptive upper-bound shrinkage and ν
    /// constrained to `[c1·ξ, c2·ξ]`.
    Algorithm1,
    /// Plain maximum-likelihood length scales over a wide range, ν = 1.
    BaselineMl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CheckMode {
    Off,
    #[default]
    Record,
    Assert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub domain: Domain,
    pub horizon: usize,
    pub n0: usize,
    /// Where the initial design is drawn from; the whole domain if `None`.
    pub initial_region: Option<Domain>,
    pub family: KernelFamily,
    pub controller: ControllerConfig,
    pub bounds: HyperBounds,
    pub theta_init: Option<LengthScales>,
    pub candidates: CandidateSpec,
    pub ml_search: MlSearchConfig,
    pub seed: u64,
    pub noise_std: f64,
    pub check_mode: CheckMode,
    pub policy: Policy,
}

impl RunConfig {
    /// Defaults for a `dim`-dimensional unit box: `θ^L = 0.01`, `θ^U = 1`,
    /// three initial points.
    pub fn new(domain: Domain, horizon: usize, noise_std: f64) -> Self {
        let d = domain.dim();
        RunConfig {
            horizon,
            n0: 3,
            initial_region: None,
            family: KernelFamily::SquaredExponential,
            controller: ControllerConfig::default(),
            bounds: HyperBounds::new(
                LengthScales::isotropic(0.01, d).expect("positive"),
                LengthScales::isotropic(1.0, d).expect("positive"),
            )
            .expect("ordered"),
            theta_init: None,
            candidates: CandidateSpec::default_for_dim(d),
            ml_search: MlSearchConfig::default(),
            seed: 0,
            noise_std,
            check_mode: CheckMode::Record,
            policy: Policy::Algorithm1,
            domain,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.domain.dim();
        if self.horizon == 0 {
            return Err(Error::invalid("horizon must be >= 1"));
        }
        if !(self.noise_std.is_finite() && self.noise_std > 0.0) {
            return Err(Error::invalid(format!("sigma must be > 0, got {}", self.noise_std)));
        }
        self.controller.validate()?;
        if self.bounds.dim() != d {
            return Err(Error::invalid("length-scale bounds do not match the domain dimension"));
        }
        if let Some(t) = &self.theta_init {
            if !self.bounds.contains(t) {
                return Err(Error::invalid(
                    "theta_init must satisfy theta_lower <= theta_init <= theta_upper",
                ));
            }
        }
        if let Some(r) = &self.initial_region {
            if r.dim() != d {
                return Err(Error::invalid("initial region dimension differs from the domain"));
            }
        }
        Ok(())
    }

    fn effective_bounds(&self) -> HyperBounds {
        match self.policy {
            Policy::Algorithm1 => self.bounds.clone(),
            Policy::BaselineMl => {
                let d = self.domain.dim();
                HyperBounds::new(
                    LengthScales::isotropic(BASELINE_THETA_RANGE.0, d).expect("positive"),
                    LengthScales::isotropic(BASELINE_THETA_RANGE.1, d).expect("positive"),
                )
                .expect("ordered")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialPoint {
    pub x: Vec<f64>,
    pub y: f64,
    pub f_noiseless: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    pub x: Vec<f64>,
    pub y: f64,
    pub f_noiseless: Option<f64>,
    pub theta: Vec<f64>,
    /// Upper bounds in effect when `theta` was chosen, before any shrink
    /// triggered this round.
    pub theta_upper: Vec<f64>,
    pub nu: f64,
    pub xi: f64,
    /// Posterior variance at `x` before it was queried.
    pub var_before: f64,
    pub mean_at_x: f64,
    pub mu_plus: f64,
    /// Over-confidence counter after this round's update.
    pub e_counter: u32,
    pub shrink: bool,
    pub r_t: Option<f64>,
    pub cumulative_regret: Option<f64>,
    /// Right minus left side of the incumbent-gap bound; absent when there
    /// was no data to condition on or checks are off.
    pub lemma10_slack: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceSumCheck {
    pub variance_sum: f64,
    pub bound: f64,
}

impl VarianceSumCheck {
    pub fn holds(&self) -> bool {
        self.variance_sum <= self.bound + CHECK_TOLERANCE * self.bound.max(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundDiagnostics {
    /// Information gain of all observations under `θ^L`.
    pub info_gain_realized: f64,
    /// Information gain under `θ^L` after each round.
    pub info_gain_series: Vec<f64>,
    pub c2: f64,
    pub rkhs_norm_estimate: f64,
    pub delta: f64,
    pub phi_t: Vec<f64>,
    pub beta_t: Vec<f64>,
    pub beta_final: f64,
    /// `β_t·√(γ_t·t)` per round.
    pub bound_curve: Vec<f64>,
    pub variance_sum: VarianceSumCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub policy: Policy,
    pub seed: u64,
    pub family: KernelFamily,
    pub noise_std: f64,
    pub domain: Domain,
    pub theta_lower: LengthScales,
    /// Upper bounds at the end of the run.
    pub theta_upper: LengthScales,
    pub initial: Vec<InitialPoint>,
    pub records: Vec<IterationRecord>,
    pub f_star: Option<f64>,
    pub rkhs_norm_estimate: Option<f64>,
    pub diagnostics: Option<BoundDiagnostics>,
}

impl RunTrace {
    pub fn all_points(&self) -> Vec<Vec<f64>> {
        self.initial
            .iter()
            .map(|p| p.x.clone())
            .chain(self.records.iter().map(|r| r.x.clone()))
            .collect()
    }

    /// Largest noise-free value among the queried points (initial design
    /// included), if the objective exposes one.
    pub fn best_f(&self) -> Option<f64> {
        self.initial
            .iter()
            .map(|p| p.f_noiseless)
            .chain(self.records.iter().map(|r| r.f_noiseless))
            .collect::<Option<Vec<f64>>>()
            .and_then(|v| v.into_iter().reduce(f64::max))
    }

    pub fn shrink_events(&self) -> usize {
        self.records.iter().filter(|r| r.shrink).count()
    }

    pub fn final_cumulative_regret(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.cumulative_regret)
    }

    /// Average regret `R_t / t` after round `t` (1-based).
    pub fn average_regret_at(&self, t: usize) -> Option<f64> {
        self.records
            .get(t.checked_sub(1)?)
            .and_then(|r| r.cumulative_regret)
            .map(|rt| rt / t as f64)
    }
}

/// A run that stopped early, with everything recorded up to the failure.
#[derive(Debug, Clone)]
pub struct RunFailure {
    pub error: Error,
    pub partial: Box<RunTrace>,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "run aborted after {} rounds: {}", self.partial.records.len(), self.error)
    }
}

impl std::error::Error for RunFailure {}

/// `RHS − LHS` of `|μ(x_t) − μ⁺| ≤ √(log(n+σ²) − log σ²)·ν·σ_{t−1}(x_t)`,
/// where `n` is the number of observations the posterior conditions on.
/// `None` without observations, where the bound is vacuous.
pub fn lemma10_slack(mean_at_x: f64, var_at_x: f64, mu_plus: f64, nu: f64, n_obs: usize, sigma: f64) -> Option<f64> {
    if n_obs == 0 {
        return None;
    }
    let s2 = sigma * sigma;
    let factor = ((n_obs as f64 + s2).ln() - s2.ln()).max(0.0).sqrt();
    Some(factor * nu * var_at_x.max(0.0).sqrt() - (mean_at_x - mu_plus).abs())
}

/// [`lemma10_slack`] evaluated against a fitted posterior.
pub fn lemma10_check(p: &Posterior, x_t: &[f64], mu_plus: f64, nu: f64) -> Result<Option<f64>> {
    let (m, v) = p.mean_var(x_t)?;
    Ok(lemma10_slack(m, v, mu_plus, nu, p.data().len(), p.data().noise_std()))
}

struct Loop<'a> {
    cfg: &'a RunConfig,
    trace: RunTrace,
}

impl Loop<'_> {
    fn fail(self, error: Error) -> RunFailure {
        RunFailure {
            error,
            partial: Box::new(self.trace),
        }
    }
}

/// Runs the configured policy for `cfg.horizon` rounds.
pub fn run(objective: &dyn Objective, cfg: &RunConfig) -> Result<RunTrace, RunFailure> {
    let bounds = cfg.effective_bounds();
    let mut lp = Loop {
        cfg,
        trace: RunTrace {
            policy: cfg.policy,
            seed: cfg.seed,
            family: cfg.family,
            noise_std: cfg.noise_std,
            domain: cfg.domain.clone(),
            theta_lower: bounds.lower().clone(),
            theta_upper: bounds.upper().clone(),
            initial: Vec::new(),
            records: Vec::new(),
            f_star: objective.optimum(),
            rkhs_norm_estimate: None,
            diagnostics: None,
        },
    };
    if let Err(e) = cfg.validate() {
        return Err(lp.fail(e));
    }
    if objective.dim() != cfg.domain.dim() {
        return Err(lp.fail(Error::invalid("objective and domain dimensions differ")));
    }
    match run_inner(objective, &mut lp, bounds) {
        Ok(()) => Ok(lp.trace),
        Err(e) => Err(lp.fail(e)),
    }
}

fn run_inner(objective: &dyn Objective, lp: &mut Loop<'_>, bounds: HyperBounds) -> Result<()> {
    let cfg = lp.cfg;
    let sigma = cfg.noise_std;
    let ctrl = &cfg.controller;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let candidates = CandidateSet::build(&cfg.domain, &cfg.candidates)?;
    let mut data = Dataset::empty(sigma)?;

    let region = cfg.initial_region.as_ref().unwrap_or(&cfg.domain);
    for _ in 0..cfg.n0 {
        let x = region.sample_uniform(&mut rng);
        let obs = objective.evaluate(&x, &mut rng)?;
        data.push(x.clone(), obs.y)?;
        lp.trace.initial.push(InitialPoint {
            x,
            y: obs.y,
            f_noiseless: obs.f_noiseless,
        });
    }

    let theta = match (cfg.policy, &cfg.theta_init) {
        (Policy::Algorithm1, Some(t)) => t.clone(),
        (Policy::Algorithm1, None) => bounds.geometric_midpoint(),
        (Policy::BaselineMl, _) => {
            estimate_theta_constrained(&data, &bounds, cfg.family, &cfg.ml_search)?
        }
    };
    let mut xi = xi_for(&data, cfg.family, &theta, 1, ctrl.delta)?;
    let nu = match cfg.policy {
        Policy::Algorithm1 => {
            choose_nu(xi, 1.0, &data, &KernelSpec::new(cfg.family, theta.clone()), ctrl)?
        }
        Policy::BaselineMl => 1.0,
    };
    let mut state = HyperState::new(bounds, theta, nu)?;
    let mut cumulative = 0.0;

    for t in 1..=cfg.horizon {
        let spec = KernelSpec::new(cfg.family, state.theta.clone());
        let posterior = Posterior::fit(spec, data.clone())?;
        let sel = maximize_acquisition(&AcquisitionQuery {
            posterior: &posterior,
            nu: state.nu,
            incumbent_mode: IncumbentMode::BestPosteriorMean,
            candidates: &candidates,
        })?;

        let slack = match cfg.check_mode {
            CheckMode::Off => None,
            _ => lemma10_slack(sel.mean, sel.var, sel.incumbent, state.nu, data.len(), sigma),
        };
        if cfg.check_mode == CheckMode::Assert {
            if let Some(s) = slack.filter(|s| *s < -CHECK_TOLERANCE) {
                return Err(Error::CheckFailed(format!(
                    "incumbent-gap bound violated at round {t} (slack {s:e})"
                )));
            }
            check_hyper_invariants(&state, xi, cfg, t)?;
        }

        let obs = objective.evaluate(&sel.point, &mut rng)?;
        data.push(sel.point.clone(), obs.y)?;

        let upper_in_effect = state.bounds.upper().values().to_vec();
        state.update_confidence_counter(sel.var, sigma, ctrl);
        let shrink = match cfg.policy {
            Policy::Algorithm1 => state.apply_shrink_if_due(ctrl),
            Policy::BaselineMl => {
                if state.e_counter >= ctrl.e_threshold {
                    state.e_counter = 0;
                }
                false
            }
        };

        let r_t = match (lp.trace.f_star, obs.f_noiseless) {
            (Some(fs), Some(f)) => Some((fs - f).max(0.0)),
            _ => None,
        };
        if let Some(r) = r_t {
            cumulative += r;
        }
        log::debug!(
            "round {t}: x={:?} y={:.4} var_before={:.3e} theta={:?} nu={:.4} E={}",
            sel.point,
            obs.y,
            sel.var,
            state.theta.values(),
            state.nu,
            state.e_counter
        );
        lp.trace.records.push(IterationRecord {
            t,
            x: sel.point,
            y: obs.y,
            f_noiseless: obs.f_noiseless,
            theta: spec_theta(&posterior),
            theta_upper: upper_in_effect,
            nu: state.nu,
            xi,
            var_before: sel.var,
            mean_at_x: sel.mean,
            mu_plus: sel.incumbent,
            e_counter: state.e_counter,
            shrink,
            r_t,
            cumulative_regret: r_t.map(|_| cumulative),
            lemma10_slack: slack,
        });

        if t < cfg.horizon {
            state.theta =
                estimate_theta_constrained(&data, &state.bounds, cfg.family, &cfg.ml_search)?;
            xi = xi_for(&data, cfg.family, &state.theta, t + 1, ctrl.delta)?;
            state.nu = match cfg.policy {
                Policy::Algorithm1 => choose_nu(
                    xi,
                    state.nu,
                    &data,
                    &KernelSpec::new(cfg.family, state.theta.clone()),
                    ctrl,
                )?,
                Policy::BaselineMl => 1.0,
            };
        }
    }

    lp.trace.theta_upper = state.bounds.upper().clone();
    lp.trace.rkhs_norm_estimate = estimate_rkhs_norm(
        objective,
        &cfg.domain,
        &KernelSpec::new(cfg.family, state.bounds.upper().clone()),
    );
    if cfg.check_mode != CheckMode::Off {
        let norm = lp.trace.rkhs_norm_estimate.unwrap_or(0.0);
        let diag = compute_bound_diagnostics(&lp.trace, norm, ctrl.delta)?;
        if cfg.check_mode == CheckMode::Assert && !diag.variance_sum.holds() {
            return Err(Error::CheckFailed(format!(
                "variance-sum bound violated: {} > {}",
                diag.variance_sum.variance_sum, diag.variance_sum.bound
            )));
        }
        lp.trace.diagnostics = Some(diag);
    }
    Ok(())
}

fn spec_theta(p: &Posterior) -> Vec<f64> {
    p.spec().lengthscales.values().to_vec()
}

fn check_hyper_invariants(state: &HyperState, xi: f64, cfg: &RunConfig, t: usize) -> Result<()> {
    if !state.bounds.contains(&state.theta) {
        return Err(Error::CheckFailed(format!("theta left its bounds at round {t}")));
    }
    if cfg.policy == Policy::Algorithm1 {
        let (lo, hi) = (cfg.controller.c1 * xi, cfg.controller.c2 * xi);
        if !(state.nu >= lo && state.nu <= hi) {
            return Err(Error::CheckFailed(format!(
                "nu = {} outside [{lo}, {hi}] at round {t}",
                state.nu
            )));
        }
    }
    Ok(())
}

/// ξ for round `t` from the information gain of all data so far.
fn xi_for(data: &Dataset, family: KernelFamily, theta: &LengthScales, t: usize, delta: f64) -> Result<f64> {
    let info = if data.is_empty() {
        0.0
    } else {
        info_gain_logdet(&KernelSpec::new(family, theta.clone()), data.inputs(), data.noise_std())?
    };
    xi_statistic(info, t, delta)
}

/// `√(f_gridᵀ K⁻¹ f_grid)` over a fixed 64-point design of the noise-free
/// objective; a lower bound on the RKHS norm under `spec`.
pub fn estimate_rkhs_norm(objective: &dyn Objective, domain: &Domain, spec: &KernelSpec) -> Option<f64> {
    let grid: Vec<Vec<f64>> = if domain.dim() == 1 {
        uniform_grid_1d(domain, RKHS_GRID_POINTS)
    } else {
        scrambled_halton(domain.dim(), RKHS_GRID_POINTS, 0)
            .iter()
            .map(|u| domain.from_unit(u))
            .collect()
    };
    let f: Vec<f64> = grid
        .iter()
        .map(|x| objective.noiseless(x))
        .collect::<Option<_>>()?;
    let k = spec.matrix(&grid).ok()?;
    let chol = Cholesky::factor(&k).ok()?;
    let mut v = f;
    chol.solve_lower_in_place(&mut v);
    Some(v.iter().map(|a| a * a).sum::<f64>().sqrt())
}

/// Theoretical-bound quantities for a finished trace. The information gain
/// stands in for γ and is measured under `θ^L`.
pub fn compute_bound_diagnostics(trace: &RunTrace, rkhs_norm: f64, delta: f64) -> Result<BoundDiagnostics> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(rkhs_norm.is_finite() && rkhs_norm >= 0.0) {
        return Err(Error::invalid(format!("rkhs norm must be finite and >= 0, got {rkhs_norm}")));
    }
    let sigma = trace.noise_std;
    let s2 = sigma * sigma;
    let spec_low = KernelSpec::new(trace.family, trace.theta_lower.clone());
    let points = trace.all_points();
    let n0 = trace.initial.len();
    let vars = sequential_variances(&spec_low, &points, sigma)?;
    // prefix[n] = information gain of the first n observations
    let mut prefix = Vec::with_capacity(points.len() + 1);
    prefix.push(0.0);
    for v in &vars {
        let last = *prefix.last().unwrap();
        prefix.push(last + 0.5 * (v / s2).ln_1p());
    }

    let c2 = trace
        .theta_upper
        .values()
        .iter()
        .zip(trace.theta_lower.values())
        .map(|(u, l)| u / l)
        .product::<f64>();
    let norm = rkhs_norm;
    let norm_theta = c2.sqrt() * norm;

    let rounds = trace.records.len();
    let mut phi_t = Vec::with_capacity(rounds);
    let mut beta_t = Vec::with_capacity(rounds);
    let mut bound_curve = Vec::with_capacity(rounds);
    let mut info_gain_series = Vec::with_capacity(rounds);
    for t in 1..=rounds {
        let tf = t as f64;
        let gamma_prev = prefix[n0 + t - 1];
        let gamma = prefix[n0 + t];
        let l1 = (tf * tf * PI * PI / (3.0 * delta)).ln();
        let l2 = (2.0 * tf * tf * PI * PI / (3.0 * delta)).ln();
        let phi2 = norm_theta * norm_theta
            + (8.0 * gamma_prev * l1).sqrt()
            + (2.0 * l2).sqrt() * norm_theta
            + 2.0 * gamma_prev
            + 2.0 * sigma * l1;
        phi_t.push(phi2.max(0.0).sqrt());
        let beta = beta_formula(tf, s2, gamma_prev, c2, norm, delta);
        beta_t.push(beta);
        bound_curve.push(beta * (gamma * tf).sqrt());
        info_gain_series.push(gamma);
    }

    let variance_sum: f64 = trace.records.iter().map(|r| r.var_before).sum();
    let info_gain_realized = *prefix.last().unwrap();
    let bound = 2.0 / (1.0 / s2).ln_1p() * info_gain_realized;

    Ok(BoundDiagnostics {
        info_gain_realized,
        info_gain_series,
        c2,
        rkhs_norm_estimate: norm,
        delta,
        beta_final: beta_t.last().copied().unwrap_or(0.0),
        phi_t,
        beta_t,
        bound_curve,
        variance_sum: VarianceSumCheck {
            variance_sum,
            bound,
        },
    })
}

/// `β_T = 2 log(T/σ²) γ + √8 log(T/σ²) √(log(4T²π²/(6δ))) (√C₂‖f‖ + √γ) + C₂‖f‖²`.
pub fn beta_formula(horizon: f64, noise_var: f64, gamma: f64, c2: f64, norm: f64, delta: f64) -> f64 {
    let lt = (horizon / noise_var).ln();
    let lconf = (4.0 * horizon * horizon * PI * PI / (6.0 * delta)).ln();
    2.0 * lt * gamma
        + 8f64.sqrt() * lt * lconf.sqrt() * (c2.sqrt() * norm + gamma.sqrt())
        + c2 * norm * norm
}

/// Instantaneous and cumulative regret against a supplied optimum.
pub fn regret_series(trace: &RunTrace, f_star: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut r = Vec::with_capacity(trace.records.len());
    let mut cum = Vec::with_capacity(trace.records.len());
    let mut total = 0.0;
    for rec in &trace.records {
        let f = rec.f_noiseless.ok_or_else(|| {
            Error::invalid(format!("round {} has no noise-free value", rec.t))
        })?;
        if f > f_star + 1e-9 {
            return Err(Error::invalid(format!(
                "supplied optimum {f_star} is below the observed value {f} at round {}",
                rec.t
            )));
        }
        let rt = (f_star - f).max(0.0);
        total += rt;
        r.push(rt);
        cum.push(total);
    }
    Ok((r, cum))
}

//! The alternating fit: initialization, E-step (Viterbi + RTS smoothing +
//! contextual posteriors), the closed-form and graphical-lasso M-steps, the
//! contextual-matrix refresh, and convergence control.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{gaussian_mixture, MixtureConfig};
use crate::contextual::{
    infer_contextual_factors, partial_correlation_matrix, update_observation_matrix,
    ContextualPosterior, RowUpdate,
};
use crate::error::{Error, Result};
use crate::glasso::{empirical_moments, graphical_lasso, off_diagonal_l1, penalized_objective, GlassoConfig, WarmStart};
use crate::linalg::{cholesky_jittered, log_det, select_rows, symmetrized};
use crate::scalar::{ln_2pi, Real};
use crate::ssm::{filter_along_path, rts_smooth, viterbi_decode, FilteredPath};
use crate::synth::add_tuning_mask;
use crate::types::{
    Hyperparams, LatentFactors, ModelParams, Network, PartialSeries, PathInit, RegimePath,
    SmoothedPosterior,
};

/// Floor applied to every variance update.
pub const VARIANCE_FLOOR: f64 = 1e-8;
/// Laplace pseudo-count for the regime chain.
pub const MARKOV_SMOOTHING: f64 = 1e-3;
/// Consecutive empty iterations after which a regime is re-seeded.
pub const EMPTY_REGIME_PATIENCE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub iterations: usize,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub regime_counts: Vec<usize>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult<T: Real> {
    pub params: ModelParams<T>,
    pub latents: LatentFactors<T>,
    pub smoothed: SmoothedPosterior<T>,
    /// `N x T` completed series; observed entries are passed through untouched.
    pub imputed: DMatrix<T>,
    pub report: FitReport,
}

/// Starting point of the fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Initialization<T: Real> {
    pub params: ModelParams<T>,
    pub latents: LatentFactors<T>,
    pub imputed: DMatrix<T>,
    pub warnings: Vec<String>,
}

/// Per-feature linear interpolation of the observed entries, held constant
/// beyond the first and last observation. Features without any observation
/// are filled with zeros; their indices are returned alongside.
pub fn linear_interpolation<T: Real>(series: &PartialSeries<T>) -> (DMatrix<T>, Vec<usize>) {
    let (n, len) = (series.num_features(), series.len());
    let values = series.values();
    let mut out = DMatrix::zeros(n, len);
    let mut empty = Vec::new();
    for i in 0..n {
        let obs: Vec<usize> = (0..len).filter(|&t| series.is_observed(i, t)).collect();
        let (Some(&first), Some(&last)) = (obs.first(), obs.last()) else {
            empty.push(i);
            continue;
        };
        for t in 0..=first {
            out[(i, t)] = values[(i, first)];
        }
        for t in last..len {
            out[(i, t)] = values[(i, last)];
        }
        for w in obs.windows(2) {
            let (a, b) = (w[0], w[1]);
            out[(i, a)] = values[(i, a)];
            let (va, vb) = (values[(i, a)], values[(i, b)]);
            let span = T::from_usize_lossy(b - a);
            for t in (a + 1)..b {
                let frac = T::from_usize_lossy(t - a) / span;
                out[(i, t)] = va + (vb - va) * frac;
            }
        }
        out[(i, last)] = values[(i, last)];
    }
    (out, empty)
}

/// Random starting point drawn from `seed`.
pub fn initialize<T: Real>(series: &PartialSeries<T>, hyper: &Hyperparams, seed: u64) -> Result<Initialization<T>> {
    hyper.validate()?;
    let (n, len) = (series.num_features(), series.len());
    if len < 2 {
        return Err(Error::Dimension("series needs at least two timesteps".into()));
    }
    let (l, k) = (hyper.latent_dim, hyper.num_regimes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut warnings = Vec::new();

    let (imputed, empty) = linear_interpolation(series);
    for i in empty {
        warnings.push(format!("feature {i} has no observed values; filled with zeros"));
    }

    let jitter = Normal::new(0.0, 0.01).expect("valid normal");
    let transition = DMatrix::from_fn(l, l, |i, j| {
        let base = if i == j { 1.0 } else { 0.0 };
        T::lit(base + jitter.sample(&mut rng))
    });
    let loading = Normal::new(0.0, (1.0 / l as f64).sqrt()).expect("valid normal");
    let u: Vec<DMatrix<T>> = (0..k)
        .map(|_| DMatrix::from_fn(n, l, |_, _| T::lit(loading.sample(&mut rng))))
        .collect();

    let mean = imputed.column_mean();
    let networks = vec![Network::identity(mean); k];
    let pi = DVector::from_element(k, T::one() / T::from_usize_lossy(k));
    let markov = if k == 1 {
        DMatrix::from_element(1, 1, T::one())
    } else {
        let off = T::lit(0.1 / (k - 1) as f64);
        DMatrix::from_fn(k, k, |a, b| if a == b { T::lit(0.9) } else { off })
    };

    let path = match hyper.path_init {
        PathInit::Blocks => RegimePath::contiguous_blocks(len, k),
        PathInit::Mixture => {
            let fit = gaussian_mixture(&imputed, k, &MixtureConfig::default(), &mut rng)?;
            RegimePath::new(fit.labels, k)?
        }
    };
    let params = ModelParams {
        transition,
        z0: DVector::zeros(l),
        psi0: DMatrix::identity(l, l),
        var_z: T::one(),
        var_x: vec![T::one(); k],
        var_s: vec![T::one(); k],
        var_v: vec![T::one(); k],
        networks,
        pi,
        markov,
    };
    let latents = LatentFactors {
        z: DMatrix::zeros(l, len),
        v: vec![DMatrix::zeros(l, n); k],
        u,
        s: vec![DMatrix::identity(n, n); k],
        path,
    };
    Ok(Initialization {
        params,
        latents,
        imputed,
        warnings,
    })
}

/// Everything the M-step reads from the E-step.
#[derive(Debug, Clone, Copy)]
pub struct MStepInputs<'a, T: Real> {
    pub series: &'a PartialSeries<T>,
    pub smoothed: &'a SmoothedPosterior<T>,
    pub path: &'a RegimePath,
    /// Already-updated observation matrices.
    pub u: &'a [DMatrix<T>],
    pub ctx: &'a [ContextualPosterior<T>],
    pub s: &'a [DMatrix<T>],
}

/// Closed-form updates of the latent dynamics and the noise levels.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsUpdate<T: Real> {
    pub transition: DMatrix<T>,
    pub z0: DVector<T>,
    pub psi0: DMatrix<T>,
    pub var_z: T,
    pub var_x: Vec<T>,
    pub var_s: Vec<T>,
    pub var_v: Vec<T>,
}

impl<T: Real> DynamicsUpdate<T> {
    pub fn apply(self, params: &mut ModelParams<T>) {
        params.transition = self.transition;
        params.z0 = self.z0;
        params.psi0 = self.psi0;
        params.var_z = self.var_z;
        params.var_x = self.var_x;
        params.var_s = self.var_s;
        params.var_v = self.var_v;
    }
}

fn floor_var<T: Real>(v: T) -> T {
    let floor = T::lit(VARIANCE_FLOOR);
    if v.finite() && v > floor {
        v
    } else {
        floor
    }
}

pub fn m_step_dynamics<T: Real>(
    inp: &MStepInputs<'_, T>,
    prev: &ModelParams<T>,
) -> Result<(DynamicsUpdate<T>, Vec<String>)> {
    let sm = inp.smoothed;
    let len = sm.len();
    let l = prev.latent_dim();
    let n = inp.series.num_features();
    let k_count = prev.num_regimes();
    let mut warnings = Vec::new();

    let transition = if len >= 2 {
        let mut prev_second = DMatrix::<T>::zeros(l, l);
        let mut cross = DMatrix::<T>::zeros(l, l);
        for t in 1..len {
            prev_second += &sm.second[t - 1];
            cross += &sm.cross[t];
        }
        let chol = cholesky_jittered(&symmetrized(prev_second))?;
        chol.solve(&cross.transpose()).transpose()
    } else {
        prev.transition.clone()
    };

    let z0 = sm.mean_at(0);
    let psi0 = symmetrized(&sm.second[0] - &z0 * z0.transpose());

    let var_z = if len >= 2 {
        let mut second = DMatrix::<T>::zeros(l, l);
        let mut cross = DMatrix::<T>::zeros(l, l);
        for t in 1..len {
            second += &sm.second[t];
            cross += &sm.cross[t];
        }
        let resid = second - &transition * cross.transpose();
        floor_var(resid.trace() / T::from_usize_lossy((len - 1) * l))
    } else {
        prev.var_z
    };

    let mut var_x = prev.var_x.clone();
    let mut sums = vec![T::zero(); k_count];
    let mut counts = vec![0usize; k_count];
    for t in 0..len {
        let k = inp.path.get(t);
        let (idx, x) = inp.series.observed_slice(t);
        if idx.is_empty() {
            continue;
        }
        let u_obs = select_rows(&inp.u[k], idx);
        let mu = sm.mean.column(t);
        let fitted = &u_obs * mu;
        sums[k] += x.dot(&x) - T::lit(2.0) * x.dot(&fitted)
            + (&u_obs * &sm.second[t] * u_obs.transpose()).trace();
        counts[k] += idx.len();
    }
    for k in 0..k_count {
        if counts[k] == 0 {
            warnings.push(format!("regime {k} has no observed entries; var_x kept"));
        } else {
            var_x[k] = floor_var(sums[k] / T::from_usize_lossy(counts[k]));
        }
    }

    let mut var_s = prev.var_s.clone();
    let mut var_v = prev.var_v.clone();
    for k in 0..k_count {
        let u = &inp.u[k];
        let ctx = &inp.ctx[k];
        let s = &inp.s[k];
        let second_sum = ctx.second_sum();
        let mut acc = (u * &second_sum * u.transpose()).trace();
        for j in 0..n {
            let sj = s.column(j);
            let fitted = u * ctx.mean.column(j);
            acc += sj.dot(&sj) - T::lit(2.0) * sj.dot(&fitted);
        }
        var_s[k] = floor_var(acc / T::from_usize_lossy(n * n));
        var_v[k] = floor_var(second_sum.trace() / T::from_usize_lossy(n * l));
    }

    Ok((
        DynamicsUpdate {
            transition,
            z0,
            psi0,
            var_z,
            var_x,
            var_s,
            var_v,
        },
        warnings,
    ))
}

/// Initial distribution and column-stochastic transition matrix from a
/// decoded path, with Laplace smoothing.
pub fn m_step_regimes<T: Real>(path: &RegimePath) -> (DVector<T>, DMatrix<T>) {
    let k = path.num_regimes();
    let eps = MARKOV_SMOOTHING;
    let mut pi = vec![eps; k];
    if let Some(&first) = path.assignments().first() {
        pi[first] += 1.0;
    }
    let total: f64 = pi.iter().sum();
    let pi = DVector::from_iterator(k, pi.into_iter().map(|p| T::lit(p / total)));

    let mut counts = DMatrix::from_element(k, k, eps);
    for w in path.assignments().windows(2) {
        counts[(w[1], w[0])] += 1.0;
    }
    let mut markov = DMatrix::zeros(k, k);
    for l in 0..k {
        let col_sum: f64 = counts.column(l).sum();
        for to in 0..k {
            markov[(to, l)] = T::lit(counts[(to, l)] / col_sum);
        }
    }
    (pi, markov)
}

/// Observed entries pass through; missing ones come from `U^(F_t) E[z_t]`.
pub fn impute<T: Real>(
    series: &PartialSeries<T>,
    path: &RegimePath,
    u: &[DMatrix<T>],
    smoothed_mean: &DMatrix<T>,
) -> DMatrix<T> {
    let (n, len) = (series.num_features(), series.len());
    let mut out = series.values().clone();
    for t in 0..len {
        if series.observed_indices(t).len() == n {
            continue;
        }
        let recon = &u[path.get(t)] * smoothed_mean.column(t);
        for i in 0..n {
            if !series.is_observed(i, t) {
                out[(i, t)] = recon[i];
            }
        }
    }
    out
}

/// Per-regime network re-estimation.
///
/// `lambda` weighs the penalty against the log-likelihood summed over the
/// regime's timesteps, so the normalized solver sees `2 lambda / n_k`.
/// Regimes without timesteps keep their previous network. `rho` holds one
/// ADMM penalty per regime; each solve resumes from it and writes back the
/// value it ended with.
pub fn m_step_networks<T: Real>(
    imputed: &DMatrix<T>,
    path: &RegimePath,
    lambda: f64,
    cfg: &GlassoConfig,
    previous: &[Network<T>],
    rho: &mut [f64],
) -> Result<(Vec<Network<T>>, Vec<String>)> {
    let k_count = path.num_regimes();
    if previous.len() != k_count || rho.len() != k_count {
        return Err(Error::Dimension("one previous network and rho per regime required".into()));
    }
    let members: Vec<Vec<usize>> = (0..k_count)
        .map(|k| (0..path.len()).filter(|&t| path.get(t) == k).collect())
        .collect();
    type Solved<T> = Result<Option<(Network<T>, f64, bool)>>;
    let solved: Vec<Solved<T>> = (0..k_count)
        .into_par_iter()
        .map(|k| {
            let cols = &members[k];
            if cols.is_empty() {
                return Ok(None);
            }
            let samples = imputed.select_columns(cols.iter());
            let (mean, cov) = empirical_moments(&samples)?;
            let penalty = T::lit(2.0 * lambda / cols.len() as f64);
            let warm = WarmStart {
                precision: &previous[k].precision,
                rho: rho[k],
            };
            let res = graphical_lasso(&cov, penalty, cfg, Some(warm))?;
            let fresh = symmetrized(res.precision);
            // ADMM is not a descent method: an inexact warm-started solve can
            // land above the previous estimate, so keep whichever scores better.
            let previous_score = penalized_objective(&cov, &previous[k].precision, penalty);
            let fresh_score = penalized_objective(&cov, &fresh, penalty);
            let precision = match (fresh_score, previous_score) {
                (Some(f), Some(p)) if p < f => previous[k].precision.clone(),
                _ => fresh,
            };
            Ok(Some((Network { precision, mean }, res.rho, res.converged)))
        })
        .collect();
    let mut out = Vec::with_capacity(k_count);
    let mut warnings = Vec::new();
    for (k, r) in solved.into_iter().enumerate() {
        match r? {
            Some((net, r, converged)) => {
                if !converged {
                    warnings.push(format!("regime {k}: graphical lasso stopped at the iteration cap"));
                }
                out.push(net);
                rho[k] = r;
            }
            None => {
                warnings.push(format!("regime {k} is empty; network kept"));
                out.push(previous[k].clone());
            }
        }
    }
    Ok((out, warnings))
}

/// Output of one E-step.
#[derive(Debug, Clone, PartialEq)]
pub struct EStep<T: Real> {
    pub path: RegimePath,
    pub smoothed: SmoothedPosterior<T>,
    pub ctx: Vec<ContextualPosterior<T>>,
    /// Negative Viterbi path cost.
    pub path_log_lik: T,
    /// `sum_k sum_j log N(s_j; 0, var_v U U' + var_s I)`
    pub contextual_log_lik: T,
    pub penalty: T,
    pub objective: T,
}

/// Marginal log-likelihood of the contextual matrix columns.
fn contextual_log_lik<T: Real>(s: &DMatrix<T>, u: &DMatrix<T>, var_s: T, var_v: T) -> Result<T> {
    let n = s.nrows();
    let mut c = u * u.transpose() * var_v;
    for i in 0..n {
        c[(i, i)] += var_s;
    }
    let chol = cholesky_jittered(&symmetrized(c))?;
    let solved = chol.solve(s);
    let quad = s.component_mul(&solved).sum();
    let half = T::lit(0.5);
    let nn = T::from_usize_lossy(n);
    Ok(-half * quad - half * nn * log_det(&chol) - half * nn * nn * ln_2pi::<T>())
}

/// E-step with Viterbi decoding of the regime path.
pub fn e_step<T: Real>(
    series: &PartialSeries<T>,
    params: &ModelParams<T>,
    u: &[DMatrix<T>],
    s: &[DMatrix<T>],
    imputed: &DMatrix<T>,
    lambda: f64,
) -> Result<EStep<T>> {
    let vit = viterbi_decode(series, params, u, imputed)?;
    finish_e_step(vit.path, vit.filtered, vit.total_cost, params, u, s, lambda)
}

/// E-step with the regime path held fixed.
pub fn e_step_on_path<T: Real>(
    series: &PartialSeries<T>,
    params: &ModelParams<T>,
    u: &[DMatrix<T>],
    s: &[DMatrix<T>],
    imputed: &DMatrix<T>,
    lambda: f64,
    path: &RegimePath,
) -> Result<EStep<T>> {
    let (filtered, cost) = filter_along_path(series, params, u, imputed, path)?;
    finish_e_step(path.clone(), filtered, cost, params, u, s, lambda)
}

fn finish_e_step<T: Real>(
    path: RegimePath,
    filtered: FilteredPath<T>,
    path_cost: T,
    params: &ModelParams<T>,
    u: &[DMatrix<T>],
    s: &[DMatrix<T>],
    lambda: f64,
) -> Result<EStep<T>> {
    let smoothed = rts_smooth(&filtered, params)?;
    let k_count = params.num_regimes();
    let ctx = (0..k_count)
        .map(|k| infer_contextual_factors(&s[k], &u[k], params.var_s[k], params.var_v[k]))
        .collect::<Result<Vec<_>>>()?;
    let mut ctx_ll = T::zero();
    for k in 0..k_count {
        ctx_ll += contextual_log_lik(&s[k], &u[k], params.var_s[k], params.var_v[k])?;
    }
    let penalty = params
        .networks
        .iter()
        .fold(T::zero(), |acc, net| acc + off_diagonal_l1(&net.precision))
        * T::lit(lambda);
    let path_log_lik = -path_cost;
    let objective = path_log_lik + ctx_ll - penalty;
    if !objective.finite() {
        return Err(Error::NonFinite("penalized objective".into()));
    }
    Ok(EStep {
        path,
        smoothed,
        ctx,
        path_log_lik,
        contextual_log_lik: ctx_ll,
        penalty,
        objective,
    })
}

/// Snapshot handed to fit observers after every iteration.
#[derive(Debug, Clone, Copy)]
pub struct IterationView<'a, T: Real> {
    pub restart: usize,
    pub iteration: usize,
    pub objective: T,
    pub params: &'a ModelParams<T>,
    pub latents: &'a LatentFactors<T>,
    pub smoothed: &'a SmoothedPosterior<T>,
}

/// Stateful EM loop over one restart.
#[derive(Debug, Clone)]
pub struct Fitter<'a, T: Real> {
    series: &'a PartialSeries<T>,
    hyper: Hyperparams,
    params: ModelParams<T>,
    latents: LatentFactors<T>,
    imputed: DMatrix<T>,
    estep: EStep<T>,
    iteration: usize,
    empty_streak: Vec<usize>,
    glasso_rho: Vec<f64>,
    rng: ChaCha8Rng,
    warnings: Vec<String>,
}

impl<'a, T: Real> Fitter<'a, T> {
    pub fn new(series: &'a PartialSeries<T>, hyper: &Hyperparams, seed: u64) -> Result<Self> {
        let init = initialize(series, hyper, seed)?;
        Self::from_initialization(series, hyper, init, seed)
    }

    pub fn from_initialization(
        series: &'a PartialSeries<T>,
        hyper: &Hyperparams,
        init: Initialization<T>,
        seed: u64,
    ) -> Result<Self> {
        hyper.validate()?;
        init.params.validate(series.num_features())?;
        // The first M-step trains each regime on its initial block; decoding
        // with still-random parameters tends to hand one regime everything.
        let estep = e_step_on_path(
            series,
            &init.params,
            &init.latents.u,
            &init.latents.s,
            &init.imputed,
            hyper.lambda,
            &init.latents.path,
        )
        .map_err(|e| e.at_iteration(0))?;
        let k = hyper.num_regimes;
        let mut fitter = Self {
            series,
            hyper: hyper.clone(),
            params: init.params,
            latents: init.latents,
            imputed: init.imputed,
            estep,
            iteration: 0,
            empty_streak: vec![0; k],
            glasso_rho: vec![hyper.glasso.rho; k],
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_7e9a),
            warnings: Vec::new(),
        };
        for w in init.warnings {
            fitter.warn(w);
        }
        Ok(fitter)
    }

    fn warn(&mut self, w: String) {
        if !self.warnings.contains(&w) {
            log::warn!("{w}");
            self.warnings.push(w);
        }
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn objective(&self) -> T {
        self.estep.objective
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn latents(&self) -> &LatentFactors<T> {
        &self.latents
    }

    pub fn estep(&self) -> &EStep<T> {
        &self.estep
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Latents and completed series consistent with the latest E-step.
    pub fn current_latents(&self) -> LatentFactors<T> {
        LatentFactors {
            z: self.estep.smoothed.mean.clone(),
            v: self.estep.ctx.iter().map(|c| c.mean.clone()).collect(),
            u: self.latents.u.clone(),
            s: self.latents.s.clone(),
            path: self.estep.path.clone(),
        }
    }

    pub fn current_imputation(&self) -> DMatrix<T> {
        impute(
            self.series,
            &self.estep.path,
            &self.latents.u,
            &self.estep.smoothed.mean,
        )
    }

    /// One M-step from the current E-step followed by a fresh E-step.
    /// Returns the objective of the updated model.
    pub fn step(&mut self) -> Result<T> {
        let it = self.iteration + 1;
        self.m_step().map_err(|e| e.at_iteration(it))?;
        self.estep = e_step(
            self.series,
            &self.params,
            &self.latents.u,
            &self.latents.s,
            &self.imputed,
            self.hyper.lambda,
        )
        .map_err(|e| e.at_iteration(it))?;
        self.iteration = it;
        Ok(self.estep.objective)
    }

    fn m_step(&mut self) -> Result<()> {
        let k_count = self.hyper.num_regimes;
        let alpha = T::lit(self.hyper.alpha);
        let e = &self.estep;
        let counts = e.path.counts();

        let mut new_u = Vec::with_capacity(k_count);
        let mut warnings = Vec::new();
        for k in 0..k_count {
            if counts[k] == 0 {
                new_u.push(self.latents.u[k].clone());
                continue;
            }
            let upd = update_observation_matrix(
                &RowUpdate {
                    regime: k,
                    alpha,
                    series: self.series,
                    smoothed: &e.smoothed,
                    path: &e.path,
                    ctx: &e.ctx[k],
                    s: &self.latents.s[k],
                    var_x: self.params.var_x[k],
                    var_s: self.params.var_s[k],
                },
                &self.latents.u[k],
            )?;
            if !upd.frozen_rows.is_empty() {
                warnings.push(format!(
                    "regime {k}: {} observation rows kept (singular update)",
                    upd.frozen_rows.len()
                ));
            }
            new_u.push(upd.u);
        }

        let inputs = MStepInputs {
            series: self.series,
            smoothed: &e.smoothed,
            path: &e.path,
            u: &new_u,
            ctx: &e.ctx,
            s: &self.latents.s,
        };
        let (dyn_update, w) = m_step_dynamics(&inputs, &self.params)?;
        warnings.extend(w);
        let mut params = self.params.clone();
        dyn_update.apply(&mut params);
        for k in 0..k_count {
            if counts[k] == 0 {
                params.var_x[k] = self.params.var_x[k];
                params.var_s[k] = self.params.var_s[k];
                params.var_v[k] = self.params.var_v[k];
            }
        }
        let (pi, markov) = m_step_regimes(&e.path);
        params.pi = pi;
        params.markov = markov;

        let imputed = impute(self.series, &e.path, &new_u, &e.smoothed.mean);
        let (networks, w) = m_step_networks(
            &imputed,
            &e.path,
            self.hyper.lambda,
            &self.hyper.glasso,
            &self.params.networks,
            &mut self.glasso_rho,
        )?;
        warnings.extend(w);
        params.networks = networks;

        let mut s = Vec::with_capacity(k_count);
        for k in 0..k_count {
            if counts[k] == 0 {
                s.push(self.latents.s[k].clone());
            } else {
                s.push(partial_correlation_matrix(&params.networks[k].precision)?);
            }
        }

        let mut latents = LatentFactors {
            z: e.smoothed.mean.clone(),
            v: e.ctx.iter().map(|c| c.mean.clone()).collect(),
            u: new_u,
            s,
            path: e.path.clone(),
        };

        for k in 0..k_count {
            if counts[k] == 0 {
                self.empty_streak[k] += 1;
            } else {
                self.empty_streak[k] = 0;
            }
        }
        for k in 0..k_count {
            if self.empty_streak[k] >= EMPTY_REGIME_PATIENCE {
                let donor = (0..k_count)
                    .max_by_key(|&j| (counts[j], std::cmp::Reverse(j)))
                    .unwrap_or(0);
                self.reseed(k, donor, &mut params, &mut latents);
                self.empty_streak[k] = 0;
                warnings.push(format!("regime {k} re-seeded from regime {donor}"));
            }
        }

        for w in warnings {
            self.warn(w);
        }
        self.params = params;
        self.latents = latents;
        self.imputed = imputed;
        Ok(())
    }

    /// Copies the donor regime's parameters into `k` with a perturbed `U`.
    fn reseed(&mut self, k: usize, donor: usize, params: &mut ModelParams<T>, latents: &mut LatentFactors<T>) {
        let u = &latents.u[donor];
        let scale = (u.norm_squared().as_f64() / u.len().max(1) as f64).sqrt().max(1e-3);
        let noise = Normal::new(0.0, 0.1 * scale).expect("valid normal");
        let rng = &mut self.rng;
        latents.u[k] = u.map(|v| v + T::lit(noise.sample(rng)));
        latents.s[k] = latents.s[donor].clone();
        params.networks[k] = params.networks[donor].clone();
        self.glasso_rho[k] = self.glasso_rho[donor];
        params.var_x[k] = params.var_x[donor];
        params.var_s[k] = params.var_s[donor];
        params.var_v[k] = params.var_v[donor];
    }
}

fn relative_change(prev: f64, cur: f64) -> f64 {
    (cur - prev).abs() / prev.abs().max(f64::MIN_POSITIVE)
}

/// Fits the model, returning the best iterate across all restarts.
pub fn fit<T: Real>(series: &PartialSeries<T>, hyper: &Hyperparams) -> Result<FitResult<T>> {
    fit_with_observer(series, hyper, |_| {})
}

/// [`fit`] with a callback invoked after every completed iteration.
pub fn fit_with_observer<T: Real>(
    series: &PartialSeries<T>,
    hyper: &Hyperparams,
    mut observer: impl FnMut(&IterationView<'_, T>),
) -> Result<FitResult<T>> {
    hyper.validate()?;
    let mut best: Option<(f64, FitResult<T>)> = None;
    for restart in 0..hyper.restarts {
        let seed = hyper.seed.wrapping_add(restart as u64);
        let (score, result) = fit_once(series, hyper, seed, restart, &mut observer)?;
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, result));
        }
    }
    Ok(best.expect("at least one restart").1)
}

fn fit_once<T: Real>(
    series: &PartialSeries<T>,
    hyper: &Hyperparams,
    seed: u64,
    restart: usize,
    observer: &mut impl FnMut(&IterationView<'_, T>),
) -> Result<(f64, FitResult<T>)> {
    let mut fitter = Fitter::new(series, hyper, seed)?;
    let mut trace = Vec::with_capacity(hyper.max_iter);
    type Snapshot<T> = (f64, ModelParams<T>, LatentFactors<T>, SmoothedPosterior<T>, DMatrix<T>);
    let mut best: Option<Snapshot<T>> = None;
    let mut converged = false;

    for _ in 0..hyper.max_iter {
        let objective = fitter.step()?.as_f64();
        let latents = fitter.current_latents();
        observer(&IterationView {
            restart,
            iteration: fitter.iteration(),
            objective: fitter.objective(),
            params: fitter.params(),
            latents: &latents,
            smoothed: &fitter.estep().smoothed,
        });
        if best.as_ref().is_none_or(|b| objective > b.0) {
            best = Some((
                objective,
                fitter.params().clone(),
                latents,
                fitter.estep().smoothed.clone(),
                fitter.current_imputation(),
            ));
        }
        let done = trace
            .last()
            .is_some_and(|&prev| relative_change(prev, objective) < hyper.tol);
        trace.push(objective);
        if done {
            converged = true;
            break;
        }
    }

    let (score, params, latents, smoothed, imputed) = best.expect("max_iter >= 1");
    let report = FitReport {
        iterations: trace.len(),
        objective_trace: trace,
        converged,
        regime_counts: latents.path.counts(),
        warnings: fitter.warnings().to_vec(),
    };
    Ok((
        score,
        FitResult {
            params,
            latents,
            smoothed,
            imputed,
            report,
        },
    ))
}

/// One row of a regime-count sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSweepRow {
    pub num_regimes: usize,
    pub validation_rmse: f64,
    pub objective: f64,
}

/// Refits for every candidate regime count after hiding an extra
/// `holdout_rate` of the observed entries, and scores each fit on them.
pub fn sweep_num_regimes<T: Real>(
    series: &PartialSeries<T>,
    hyper: &Hyperparams,
    candidates: &[usize],
    holdout_rate: f64,
) -> Result<Vec<RegimeSweepRow>> {
    let (train, held_out) = add_tuning_mask(series, holdout_rate, hyper.seed ^ 0x7e57)?;
    candidates
        .iter()
        .map(|&k| {
            let h = Hyperparams {
                num_regimes: k,
                ..hyper.clone()
            };
            let res = fit(&train, &h)?;
            let rmse = crate::eval::rmse(series.values(), &res.imputed, &held_out)?;
            Ok(RegimeSweepRow {
                num_regimes: k,
                validation_rmse: rmse.as_f64(),
                objective: res
                    .report
                    .objective_trace
                    .iter()
                    .copied()
                    .fold(f64::NEG_INFINITY, f64::max),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_ramp_and_flat_ends() {
        let s = PartialSeries::from_options(2, 5, |i, t| match (i, t) {
            (0, 0) => Some(0.0),
            (0, 4) => Some(1.0),
            (1, 2) => Some(3.0),
            _ => None,
        })
        .unwrap();
        let (x, empty) = linear_interpolation(&s);
        assert!(empty.is_empty());
        let ramp: Vec<f64> = x.row(0).iter().copied().collect();
        assert_eq!(ramp, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(x.row(1).iter().all(|&v| v == 3.0));
    }

    #[test]
    fn interpolation_all_missing_feature() {
        let s = PartialSeries::from_options(2, 3, |i, _| if i == 0 { Some(1.0) } else { None }).unwrap();
        let init = initialize(&s, &Hyperparams { latent_dim: 1, ..Hyperparams::default() }, 1).unwrap();
        assert!(init.imputed.row(1).iter().all(|&v| v == 0.0));
        assert_eq!(init.warnings.len(), 1);
    }

    #[test]
    fn fully_observed_init_is_input() {
        let v = DMatrix::from_fn(3, 6, |i, t| (i * 7 + t) as f64 * 0.3);
        let s = PartialSeries::fully_observed(v.clone()).unwrap();
        let init = initialize(&s, &Hyperparams::default(), 3).unwrap();
        assert_eq!(init.imputed, v);
        init.params.validate(3).unwrap();
    }

    #[test]
    fn markov_all_one_regime() {
        let path = RegimePath::constant(10, 0, 2).unwrap();
        let (pi, m) = m_step_regimes::<f64>(&path);
        let d = 1e-3 / (9.0 + 2e-3);
        assert!((m[(0, 0)] - (1.0 - d)).abs() < 1e-15);
        assert!((m[(1, 0)] - d).abs() < 1e-15);
        assert!((m[(0, 1)] - 0.5).abs() < 1e-15);
        assert!((pi.sum() - 1.0).abs() < 1e-15);
        assert!(pi[0] > 0.99);
    }

    #[test]
    fn markov_alternating() {
        let path = RegimePath::new((0..11).map(|t| t % 2).collect(), 2).unwrap();
        let (_, m) = m_step_regimes::<f64>(&path);
        assert!(m[(1, 0)] > 0.999 && m[(0, 1)] > 0.999);
    }

    #[test]
    fn markov_single_regime() {
        let path = RegimePath::constant(4, 0, 1).unwrap();
        let (pi, m) = m_step_regimes::<f64>(&path);
        assert_eq!(pi[0], 1.0);
        assert_eq!(m[(0, 0)], 1.0);
    }

    #[test]
    fn impute_blends_by_mask() {
        let s = PartialSeries::from_options(3, 3, |i, t| match t {
            0 => Some(i as f64),
            1 => if i == 1 { Some(10.0) } else { None },
            _ => None,
        })
        .unwrap();
        let path = RegimePath::new(vec![0, 1, 1], 2).unwrap();
        let u = vec![
            DMatrix::from_element(3, 1, 1.0),
            DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]),
        ];
        let mean = DMatrix::from_row_slice(1, 3, &[5.0, 0.5, -1.0]);
        let x = impute(&s, &path, &u, &mean);
        assert_eq!(x.column(0).as_slice(), &[0.0, 1.0, 2.0]);
        assert_eq!(x.column(1).as_slice(), &[0.5, 10.0, 1.5]);
        assert_eq!(x.column(2).as_slice(), &[-1.0, -2.0, -3.0]);
    }

    #[test]
    fn empty_regime_keeps_network() {
        let x = DMatrix::from_fn(2, 4, |i, t| (i + t) as f64);
        let path = RegimePath::constant(4, 0, 2).unwrap();
        let prev = vec![
            Network::identity(DVector::zeros(2)),
            Network::new(DMatrix::identity(2, 2) * 3.0, DVector::from_element(2, 1.0)).unwrap(),
        ];
        let (nets, warnings) = m_step_networks(&x, &path, 1.0, &GlassoConfig::default(), &prev, &mut [1.0; 2]).unwrap();
        assert_eq!(nets[1], prev[1]);
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn network_step_never_raises_the_penalized_objective() {
        let x = DMatrix::from_fn(3, 12, |i, t| {
            let t = t as f64;
            let base = (0.7 * t).sin();
            match i {
                0 => base,
                1 => base + 0.3 * (1.3 * t).cos(),
                _ => -base + 0.2 * (2.9 * t).sin(),
            }
        });
        let path = RegimePath::constant(12, 0, 1).unwrap();
        let (_, cov) = empirical_moments(&x).unwrap();
        let penalty = 2.0 * 0.3 / 12.0;
        let tight = GlassoConfig {
            abs_tol: 1e-12,
            rel_tol: 1e-11,
            max_admm_iter: 50_000,
            ..GlassoConfig::default()
        };
        let best = graphical_lasso(&cov, penalty, &tight, None).unwrap().precision;
        let prev = vec![Network::new(symmetrized(best), DVector::zeros(3)).unwrap()];
        let before = penalized_objective(&cov, &prev[0].precision, penalty).unwrap();
        // Restarted at the optimum, one ADMM step can only drift upward; the
        // drift must be rejected.
        let sloppy = GlassoConfig {
            max_admm_iter: 1,
            ..GlassoConfig::default()
        };
        let (nets, _) = m_step_networks(&x, &path, 0.3, &sloppy, &prev, &mut [1.0]).unwrap();
        let after = penalized_objective(&cov, &nets[0].precision, penalty).unwrap();
        assert!(after <= before, "{after} > {before}");
    }

    #[test]
    fn single_column_regime_is_diagonal() {
        let x = DMatrix::from_fn(3, 4, |i, t| (i * t) as f64);
        let path = RegimePath::new(vec![0, 0, 0, 1], 2).unwrap();
        let prev = vec![Network::identity(DVector::zeros(3)); 2];
        for lambda in [0.0, 1.0] {
            let (nets, _) = m_step_networks(&x, &path, lambda, &GlassoConfig::default(), &prev, &mut [1.0; 2]).unwrap();
            let p = &nets[1].precision;
            for i in 0..3 {
                for j in 0..3 {
                    if i != j {
                        assert!(p[(i, j)].abs() < 1e-9 * p[(i, i)]);
                    }
                }
            }
            assert_eq!(nets[1].mean.as_slice(), x.column(3).as_slice());
        }
    }

    #[test]
    fn scalar_transition_update() {
        // T = 2, L = 1: B = cross / second of the first step.
        let sm = SmoothedPosterior {
            mean: DMatrix::from_row_slice(1, 2, &[1.0f64, 2.0]),
            cov: vec![DMatrix::from_element(1, 1, 0.5); 2],
            cross: vec![DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, 2.4)],
            second: vec![DMatrix::from_element(1, 1, 1.5), DMatrix::from_element(1, 1, 4.5)],
        };
        let s = PartialSeries::fully_observed(DMatrix::from_row_slice(1, 2, &[1.0, 2.0])).unwrap();
        let path = RegimePath::constant(2, 0, 1).unwrap();
        let init = initialize(&s, &Hyperparams { latent_dim: 1, ..Hyperparams::default() }, 0).unwrap();
        let ctx = vec![infer_contextual_factors(&init.latents.s[0], &init.latents.u[0], 1.0, 1.0).unwrap()];
        let inp = MStepInputs {
            series: &s,
            smoothed: &sm,
            path: &path,
            u: &init.latents.u,
            ctx: &ctx,
            s: &init.latents.s,
        };
        let (upd, _) = m_step_dynamics(&inp, &init.params).unwrap();
        assert!((upd.transition[(0, 0)] - 2.4 / 1.5).abs() < 1e-12);
        assert_eq!(upd.z0[0], 1.0);
        assert!((upd.psi0[(0, 0)] - 0.5).abs() < 1e-12);
        let expected_q = 4.5 - 1.6 * 2.4;
        assert!((upd.var_z - expected_q).abs() < 1e-12);
    }
}

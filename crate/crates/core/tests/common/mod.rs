//! Reference implementations and random-instance builders shared by the
//! integration tests. The oracles use plain dense formulas and LU inverses
//! and share no code with the library's inference routines.

#![allow(dead_code, clippy::needless_range_loop)]

use missnet::{ModelParams, Network, PartialSeries};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| scale * normal(rng))
}

/// `A A' / n + floor I` for a Gaussian `A`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let a = random_matrix(rng, n, n, 1.0);
    let mut m = &a * a.transpose() / n as f64;
    for i in 0..n {
        m[(i, i)] += floor;
    }
    0.5 * (&m + m.transpose())
}

/// Column-stochastic matrix with entries bounded away from zero.
pub fn random_stochastic(rng: &mut ChaCha8Rng, k: usize) -> DMatrix<f64> {
    let mut m = DMatrix::from_fn(k, k, |_, _| rng.random_range(0.1..1.0));
    for mut col in m.column_iter_mut() {
        let s = col.sum();
        col /= s;
    }
    m
}

pub fn random_series(rng: &mut ChaCha8Rng, n: usize, len: usize, missing_prob: f64) -> PartialSeries<f64> {
    PartialSeries::from_options(n, len, |_, _| {
        let v = 2.0 * normal(rng);
        (rng.random::<f64>() >= missing_prob).then_some(v)
    })
    .unwrap()
}

/// Random model with `k` regimes; the transition is scaled to spectral norm
/// at most 0.95.
pub fn random_params(rng: &mut ChaCha8Rng, n: usize, l: usize, k: usize) -> (ModelParams<f64>, Vec<DMatrix<f64>>) {
    let mut b = random_matrix(rng, l, l, 1.0);
    let norm = b.clone().svd(false, false).singular_values.max();
    b *= 0.95 / norm.max(0.95);
    let pi = {
        let v = DVector::from_fn(k, |_, _| rng.random_range(0.1..1.0));
        let s = v.sum();
        v / s
    };
    let networks = (0..k)
        .map(|_| Network::new(random_spd(rng, n, 0.5), random_matrix(rng, n, 1, 1.0).column(0).into_owned()).unwrap())
        .collect();
    let params = ModelParams {
        transition: b,
        z0: random_matrix(rng, l, 1, 1.0).column(0).into_owned(),
        psi0: random_spd(rng, l, 0.2),
        var_z: rng.random_range(0.1..1.0),
        var_x: (0..k).map(|_| rng.random_range(0.1..1.0)).collect(),
        var_s: vec![1.0; k],
        var_v: vec![1.0; k],
        networks,
        pi,
        markov: random_stochastic(rng, k),
    };
    let u = (0..k).map(|_| random_matrix(rng, n, l, 1.0)).collect();
    (params, u)
}

fn inv(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().lu().try_inverse().expect("oracle matrix is invertible")
}

/// Posterior of all latent states of a single-regime model, obtained by
/// conditioning the joint Gaussian of `(z_0..z_{T-1}, observed x)`.
pub struct DensePosterior {
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
    /// `Cov(z_t, z_{t-1} | x)`; entry 0 unused.
    pub lag_covs: Vec<DMatrix<f64>>,
}

pub fn dense_posterior(series: &PartialSeries<f64>, params: &ModelParams<f64>, u: &DMatrix<f64>) -> DensePosterior {
    let (n, len) = (series.num_features(), series.len());
    let l = params.latent_dim();
    let b = &params.transition;
    let dim = l * len;

    let mut prior_mean = DVector::zeros(dim);
    let mut marg = vec![params.psi0.clone()];
    let mut m = params.z0.clone();
    prior_mean.rows_mut(0, l).copy_from(&m);
    for t in 1..len {
        m = b * m;
        prior_mean.rows_mut(t * l, l).copy_from(&m);
        let p = b * &marg[t - 1] * b.transpose() + DMatrix::identity(l, l) * params.var_z;
        marg.push(p);
    }
    let mut cov = DMatrix::zeros(dim, dim);
    for s in 0..len {
        let mut block = marg[s].clone();
        for t in s..len {
            if t > s {
                block = b * block;
            }
            cov.view_mut((t * l, s * l), (l, l)).copy_from(&block);
            cov.view_mut((s * l, t * l), (l, l)).copy_from(&block.transpose());
        }
    }

    let obs: Vec<(usize, usize)> = (0..len)
        .flat_map(|t| (0..n).filter(move |&i| series.is_observed(i, t)).map(move |i| (i, t)))
        .collect();
    let (post_mean, post_cov) = if obs.is_empty() {
        (prior_mean, cov)
    } else {
        let mut h = DMatrix::zeros(obs.len(), dim);
        let mut y = DVector::zeros(obs.len());
        for (r, &(i, t)) in obs.iter().enumerate() {
            h.view_mut((r, t * l), (1, l)).copy_from(&u.row(i));
            y[r] = series.values()[(i, t)];
        }
        let s = &h * &cov * h.transpose() + DMatrix::identity(obs.len(), obs.len()) * params.var_x[0];
        let gain = &cov * h.transpose() * inv(&s);
        let mean = &prior_mean + &gain * (y - &h * &prior_mean);
        let c = &cov - &gain * &h * &cov;
        (mean, c)
    };
    DensePosterior {
        means: (0..len).map(|t| post_mean.rows(t * l, l).into_owned()).collect(),
        covs: (0..len).map(|t| post_cov.view((t * l, t * l), (l, l)).into_owned()).collect(),
        lag_covs: (0..len)
            .map(|t| {
                if t == 0 {
                    DMatrix::zeros(l, l)
                } else {
                    post_cov.view((t * l, (t - 1) * l), (l, l)).into_owned()
                }
            })
            .collect(),
    }
}

/// Parameters of a plain linear dynamical system with isotropic noise.
#[derive(Debug, Clone)]
pub struct Lds {
    pub b: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub z0: DVector<f64>,
    pub psi0: DMatrix<f64>,
    pub var_z: f64,
    pub var_x: f64,
}

struct Smoothed {
    mean: Vec<DVector<f64>>,
    cov: Vec<DMatrix<f64>>,
    /// `Cov(z_t, z_{t-1})`, entry 0 unused.
    lag: Vec<DMatrix<f64>>,
}

fn kalman_rts(series: &PartialSeries<f64>, p: &Lds) -> Smoothed {
    let len = series.len();
    let l = p.z0.len();
    let eye = DMatrix::<f64>::identity(l, l);
    let mut fm = Vec::with_capacity(len);
    let mut fc = Vec::with_capacity(len);
    let mut pc = Vec::with_capacity(len);
    for t in 0..len {
        let (mut m, mut c) = if t == 0 {
            (p.z0.clone(), p.psi0.clone())
        } else {
            let m: DVector<f64> = &p.b * &fm[t - 1];
            let c = &p.b * &fc[t - 1] * p.b.transpose() + &eye * p.var_z;
            (m, c)
        };
        pc.push(c.clone());
        let idx = series.observed_indices(t);
        if !idx.is_empty() {
            let uo = DMatrix::from_fn(idx.len(), l, |r, j| p.u[(idx[r], j)]);
            let y = DVector::from_fn(idx.len(), |r, _| series.values()[(idx[r], t)]);
            let s = &uo * &c * uo.transpose() + DMatrix::identity(idx.len(), idx.len()) * p.var_x;
            let k = &c * uo.transpose() * inv(&s);
            m = &m + &k * (y - &uo * &m);
            c = (&eye - &k * &uo) * &c;
            c = 0.5 * (&c + c.transpose());
        }
        fm.push(m);
        fc.push(c);
    }
    let mut mean = fm.clone();
    let mut cov = fc.clone();
    let mut lag = vec![DMatrix::zeros(l, l); len];
    for t in (0..len - 1).rev() {
        let j = &fc[t] * p.b.transpose() * inv(&pc[t + 1]);
        mean[t] = &fm[t] + &j * (&mean[t + 1] - &p.b * &fm[t]);
        cov[t] = &fc[t] + &j * (&cov[t + 1] - &pc[t + 1]) * j.transpose();
        lag[t + 1] = &cov[t + 1] * j.transpose();
    }
    Smoothed { mean, cov, lag }
}

fn em_step(series: &PartialSeries<f64>, p: &Lds, sm: &Smoothed) -> Lds {
    let (n, len) = (series.num_features(), series.len());
    let l = p.z0.len();
    let second: Vec<DMatrix<f64>> = (0..len).map(|t| &sm.cov[t] + &sm.mean[t] * sm.mean[t].transpose()).collect();

    let mut u = p.u.clone();
    for i in 0..n {
        let mut lhs = DMatrix::zeros(l, l);
        let mut rhs = DVector::zeros(l);
        let mut any = false;
        for t in 0..len {
            if series.is_observed(i, t) {
                lhs += &second[t];
                rhs += &sm.mean[t] * series.values()[(i, t)];
                any = true;
            }
        }
        if any {
            u.set_row(i, &(inv(&lhs) * rhs).transpose());
        }
    }

    let mut cross = DMatrix::zeros(l, l);
    let mut prev = DMatrix::zeros(l, l);
    let mut cur = DMatrix::zeros(l, l);
    for t in 1..len {
        cross += &sm.lag[t] + &sm.mean[t] * sm.mean[t - 1].transpose();
        prev += &second[t - 1];
        cur += &second[t];
    }
    let b = &cross * inv(&prev);
    let var_z = (cur - &b * cross.transpose()).trace() / ((len - 1) * l) as f64;

    let mut sq = 0.0;
    let mut count = 0usize;
    for t in 0..len {
        for i in 0..n {
            if series.is_observed(i, t) {
                let x = series.values()[(i, t)];
                let ui = u.row(i).transpose();
                sq += x * x - 2.0 * x * ui.dot(&sm.mean[t]) + (ui.transpose() * &second[t] * &ui)[(0, 0)];
                count += 1;
            }
        }
    }
    Lds {
        b,
        u,
        z0: sm.mean[0].clone(),
        psi0: sm.cov[0].clone(),
        var_z,
        var_x: sq / count as f64,
    }
}

/// Missing-data EM for a linear dynamical system: smooth, then update the
/// loading rows, transition, initial state and both noise variances. Returns
/// the completed series after `iterations` rounds.
pub fn lds_em_impute(series: &PartialSeries<f64>, init: &Lds, iterations: usize) -> DMatrix<f64> {
    let mut p = init.clone();
    let mut sm = kalman_rts(series, &p);
    for _ in 0..iterations {
        p = em_step(series, &p, &sm);
        sm = kalman_rts(series, &p);
    }
    let mut out = series.values().clone();
    for t in 0..series.len() {
        let recon = &p.u * &sm.mean[t];
        for i in 0..series.num_features() {
            if !series.is_observed(i, t) {
                out[(i, t)] = recon[i];
            }
        }
    }
    out
}

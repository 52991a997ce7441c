use serde::{Deserialize, Serialize};

use crate::pomdp::Episode;
use crate::{Error, Result};

use super::model::{log_softmax, EmissionMode, LearnedWorldModel, ModelShape, Params, Table};

const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_8;

/// Argument order of the two KL terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlOrder {
    /// `KL(q ‖ p)`
    #[default]
    PosteriorPrior,
    /// `KL(p ‖ q)`
    PriorPosterior,
}

/// Terms switched off for ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveSwitches {
    pub use_reward_term: bool,
    pub use_kl_terms: bool,
    pub asymmetric_emission: bool,
    pub kl_order: KlOrder,
}

impl Default for ObjectiveSwitches {
    fn default() -> Self {
        ObjectiveSwitches {
            use_reward_term: true,
            use_kl_terms: true,
            asymmetric_emission: true,
            kl_order: KlOrder::PosteriorPrior,
        }
    }
}

impl ObjectiveSwitches {
    pub fn emission(&self) -> EmissionMode {
        if self.asymmetric_emission {
            EmissionMode::Asymmetric
        } else {
            EmissionMode::Symmetric
        }
    }
}

/// Loss terms summed over time and averaged over episodes. `total` is the
/// negative ELBO; disabled terms read 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    /// `−E log p(o | codes)`
    pub recon_o: f64,
    /// `−E log N(r; θ_r, 1)`
    pub recon_r: f64,
    pub kl_s: f64,
    pub kl_z: f64,
}

fn kl(order: KlOrder, q: &[f64], lq: &[f64], p: &[f64], lp: &[f64]) -> f64 {
    let (a, la, lb) = match order {
        KlOrder::PosteriorPrior => (q, lq, lp),
        KlOrder::PriorPosterior => (p, lp, lq),
    };
    a.iter()
        .zip(la.iter().zip(lb))
        .filter(|(&x, _)| x > 0.0)
        .map(|(&x, (&l1, &l2))| x * (l1 - l2))
        .sum()
}

fn log_table(t: &Table) -> Table {
    let mut out = t.clone();
    for r in 0..t.rows {
        let l = log_softmax(t.row(r));
        out.row_mut(r).copy_from_slice(&l);
    }
    out
}


struct Weights {
    reward: f64,
    state_kl: f64,
    noise_kl: f64,
    kl_on: bool,
}

fn weights(model: &LearnedWorldModel, switches: &ObjectiveSwitches) -> Weights {
    let kl_on = switches.use_kl_terms;
    Weights {
        reward: if switches.use_reward_term { 1.0 } else { 0.0 },
        state_kl: if kl_on { model.alpha } else { 0.0 },
        noise_kl: if kl_on { model.beta } else { 0.0 },
        kl_on,
    }
}

/// Everything the passes need, precomputed once per evaluation. Joint codes are
/// numbered `j · K_z + l`; a transition block for `(a, o)` is an `N × N` matrix
/// from the previous joint code to the next.
struct Tables {
    sh: ModelShape,
    p: Params,
    lp: Params,
    /// `[o][c]`: `log p(o | c)`
    emit: Vec<f64>,
    /// `[a][o][prev][next]`: `q_s(j | …) · q_z(l | …)`
    trans: Vec<f64>,
    /// `[a][o][prev]`: weighted KL penalty of leaving `prev`
    penalty: Vec<f64>,
    /// `[a][o][prev]`: unweighted state and noise KL
    kl_s: Vec<f64>,
    kl_z: Vec<f64>,
    /// `[a][o][prev]`: first two moments of the reward mean under `q_s`
    mean_mu: Vec<f64>,
    mean_mu2: Vec<f64>,
    /// `[o]`: KL of the first-step posteriors
    kl_s_init: Vec<f64>,
    kl_z_init: Vec<f64>,
}

impl Tables {
    fn new(m: &LearnedWorldModel, order: KlOrder, w: &Weights) -> Self {
        let sh = m.shape;
        let mut p = m.params.clone();
        let mut lp = m.params.clone();
        for ((dst, ldst), (_, src)) in p
            .tables_mut()
            .into_iter()
            .zip(lp.tables_mut())
            .zip(m.params.tables())
            .take(10)
        {
            *ldst = log_table(src);
            *dst = ldst.clone();
            dst.values.iter_mut().for_each(|x| *x = x.exp());
        }
        let (ks, kz, na, no) = (sh.state_codes, sh.noise_codes, sh.actions, sh.observations());
        let n = sh.joint_codes();

        let mut emit = vec![0.0; no * n];
        for o in 0..no {
            let (c1, c2) = sh.split(o);
            for j in 0..ks {
                for l in 0..kz {
                    let (rs, rz) = sh.decoder_row(j, l);
                    emit[o * n + j * kz + l] = lp.decoder_state.row(rs)[c1] + lp.decoder_noise.row(rz)[c2];
                }
            }
        }

        let blocks = na * no;
        let mut trans = vec![0.0; blocks * n * n];
        let mut penalty = vec![0.0; blocks * n];
        let mut kl_s = vec![0.0; blocks * n];
        let mut kl_z = vec![0.0; blocks * n];
        let mut mean_mu = vec![0.0; blocks * n];
        let mut mean_mu2 = vec![0.0; blocks * n];
        for a in 0..na {
            for o in 0..no {
                let block = a * no + o;
                for i in 0..ks {
                    let pr = sh.prior_state_row(i, a);
                    let mu = m.params.reward.row(pr);
                    for k in 0..kz {
                        let prev = i * kz + k;
                        let idx = block * n + prev;
                        let rs = sh.posterior_state_row(i, a, o, k);
                        let rz = sh.posterior_noise_row(k, o, i, a);
                        let (qs, qz) = (p.posterior_state.row(rs), p.posterior_noise.row(rz));
                        let row = &mut trans[idx * n..(idx + 1) * n];
                        for j in 0..ks {
                            for l in 0..kz {
                                row[j * kz + l] = qs[j] * qz[l];
                            }
                        }
                        kl_s[idx] = kl(order, qs, lp.posterior_state.row(rs), p.prior_state.row(pr), lp.prior_state.row(pr));
                        kl_z[idx] = kl(order, qz, lp.posterior_noise.row(rz), p.prior_noise.row(k), lp.prior_noise.row(k));
                        penalty[idx] = w.state_kl * kl_s[idx] + w.noise_kl * kl_z[idx];
                        mean_mu[idx] = qs.iter().zip(mu).map(|(q, x)| q * x).sum();
                        mean_mu2[idx] = qs.iter().zip(mu).map(|(q, x)| q * x * x).sum();
                    }
                }
            }
        }
        let kl_s_init = (0..no)
            .map(|o| {
                kl(
                    order,
                    p.posterior_state_init.row(o),
                    lp.posterior_state_init.row(o),
                    p.prior_state_init.row(0),
                    lp.prior_state_init.row(0),
                )
            })
            .collect();
        let kl_z_init = (0..no)
            .map(|o| {
                kl(
                    order,
                    p.posterior_noise_init.row(o),
                    lp.posterior_noise_init.row(o),
                    p.prior_noise_init.row(0),
                    lp.prior_noise_init.row(0),
                )
            })
            .collect();
        Tables {
            sh,
            p,
            lp,
            emit,
            trans,
            penalty,
            kl_s,
            kl_z,
            mean_mu,
            mean_mu2,
            kl_s_init,
            kl_z_init,
        }
    }

    fn block(&self, a: usize, o: usize) -> usize {
        a * self.sh.observations() + o
    }

    fn first(&self, o: usize, out: &mut [f64]) {
        let kz = self.sh.noise_codes;
        let (qs, qz) = (self.p.posterior_state_init.row(o), self.p.posterior_noise_init.row(o));
        for (c, x) in out.iter_mut().enumerate() {
            *x = qs[c / kz] * qz[c % kz];
        }
    }

    /// `next = prevᵀ · K[a][o]`
    fn advance(&self, a: usize, o: usize, prev: &[f64], next: &mut [f64]) {
        let n = prev.len();
        let base = self.block(a, o) * n;
        next.iter_mut().for_each(|x| *x = 0.0);
        for (c, &w) in prev.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let row = &self.trans[(base + c) * n..(base + c + 1) * n];
            for (x, &k) in next.iter_mut().zip(row) {
                *x += w * k;
            }
        }
    }
}

fn check(model: &LearnedWorldModel, episodes: &[Episode], switches: &ObjectiveSwitches) -> Result<()> {
    model.validate()?;
    if episodes.is_empty() || episodes.iter().all(|e| e.is_empty()) {
        return Err(Error::EmptyData);
    }
    if model.shape.emission != switches.emission() {
        return Err(Error::Model("emission switch disagrees with the model's decoders".into()));
    }
    let sh = &model.shape;
    for e in episodes {
        for s in &e.steps {
            if s.observation >= sh.observations() || s.action >= sh.actions {
                return Err(Error::Model(format!(
                    "step (o={}, a={}) outside the model's {} observations / {} actions",
                    s.observation,
                    s.action,
                    sh.observations(),
                    sh.actions
                )));
            }
        }
    }
    Ok(())
}

/// Filtered joint-code masses, one row of `N` per step, flattened.
fn forward(t: &Tables, e: &Episode, out: &mut Vec<f64>) {
    let n = t.sh.joint_codes();
    out.clear();
    out.resize(e.len() * n, 0.0);
    for (idx, step) in e.steps.iter().enumerate() {
        let (done, rest) = out.split_at_mut(idx * n);
        let cur = &mut rest[..n];
        if idx == 0 {
            t.first(step.observation, cur);
        } else {
            t.advance(e.steps[idx - 1].action, step.observation, &done[(idx - 1) * n..], cur);
        }
    }
}

pub(crate) fn marginals(sh: &ModelShape, joint: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut s = vec![0.0; sh.state_codes];
    let mut z = vec![0.0; sh.noise_codes];
    for j in 0..sh.state_codes {
        for l in 0..sh.noise_codes {
            let p = joint[j * sh.noise_codes + l];
            s[j] += p;
            z[l] += p;
        }
    }
    (s, z)
}

fn switches_for(model: &LearnedWorldModel) -> ObjectiveSwitches {
    ObjectiveSwitches {
        asymmetric_emission: model.shape.emission == EmissionMode::Asymmetric,
        ..ObjectiveSwitches::default()
    }
}

/// Per-step marginals `(q(ŝ_t), q(ẑ_t))` of the structured posterior, with earlier
/// codes summed out exactly.
pub fn filter_posterior(model: &LearnedWorldModel, episode: &Episode) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    if episode.is_empty() {
        return Ok(Vec::new());
    }
    let sw = switches_for(model);
    check(model, std::slice::from_ref(episode), &sw)?;
    let t = Tables::new(model, sw.kl_order, &weights(model, &sw));
    let mut filt = Vec::new();
    forward(&t, episode, &mut filt);
    Ok(filt.chunks(model.shape.joint_codes()).map(|m| marginals(&model.shape, m)).collect())
}

/// Online version of the posterior filter, for acting.
#[derive(Clone, Debug)]
pub struct CodeFilter {
    shape: ModelShape,
    posterior_state_init: Table,
    posterior_noise_init: Table,
    posterior_state: Table,
    posterior_noise: Table,
    joint: Vec<f64>,
}

impl CodeFilter {
    pub fn new(model: &LearnedWorldModel) -> Result<Self> {
        model.validate()?;
        let p = &model.params;
        Ok(CodeFilter {
            shape: model.shape,
            posterior_state_init: p.posterior_state_init.softmax(),
            posterior_noise_init: p.posterior_noise_init.softmax(),
            posterior_state: p.posterior_state.softmax(),
            posterior_noise: p.posterior_noise.softmax(),
            joint: Vec::new(),
        })
    }

    /// First observation of an episode.
    pub fn start(&mut self, o: usize) -> &[f64] {
        let sh = self.shape;
        let (qs, qz) = (self.posterior_state_init.row(o), self.posterior_noise_init.row(o));
        self.joint = (0..sh.joint_codes())
            .map(|c| qs[c / sh.noise_codes] * qz[c % sh.noise_codes])
            .collect();
        &self.joint
    }

    /// Update after taking `a` and then seeing `o`.
    pub fn step(&mut self, a: usize, o: usize) -> &[f64] {
        let sh = self.shape;
        let kz = sh.noise_codes;
        let mut next = vec![0.0; sh.joint_codes()];
        for i in 0..sh.state_codes {
            for k in 0..kz {
                let w = self.joint[i * kz + k];
                let qs = self.posterior_state.row(sh.posterior_state_row(i, a, o, k));
                let qz = self.posterior_noise.row(sh.posterior_noise_row(k, o, i, a));
                for j in 0..sh.state_codes {
                    for l in 0..kz {
                        next[j * kz + l] += w * qs[j] * qz[l];
                    }
                }
            }
        }
        self.joint = next;
        &self.joint
    }

    pub fn joint(&self) -> &[f64] {
        &self.joint
    }

    pub fn marginals(&self) -> (Vec<f64>, Vec<f64>) {
        marginals(&self.shape, &self.joint)
    }
}

/// Raw sums of the ELBO pieces over every episode.
#[derive(Default)]
struct Sums {
    log_o: f64,
    log_r: f64,
    kl_s: f64,
    kl_z: f64,
    episodes: usize,
}

impl Sums {
    fn breakdown(&self, w: &Weights) -> LossBreakdown {
        let n = self.episodes as f64;
        let recon_o = -self.log_o / n;
        let recon_r = if w.reward != 0.0 { -self.log_r / n } else { 0.0 };
        let (kl_s, kl_z) = if w.kl_on { (self.kl_s / n, self.kl_z / n) } else { (0.0, 0.0) };
        LossBreakdown {
            total: recon_o + recon_r + w.state_kl * kl_s + w.noise_kl * kl_z,
            recon_o,
            recon_r,
            kl_s,
            kl_z,
        }
    }
}

#[cfg(test)]
fn log_gauss(r: f64, mean: f64) -> f64 {
    -0.5 * (r - mean) * (r - mean) - HALF_LN_TWO_PI
}

/// Expected `log N(r; μ, 1)` when `μ` has the given first two moments.
fn expected_log_gauss(r: f64, mu: f64, mu2: f64) -> f64 {
    -0.5 * (r * r - 2.0 * r * mu + mu2) - HALF_LN_TWO_PI
}

fn accumulate_terms(t: &Tables, e: &Episode, filt: &[f64], sums: &mut Sums) {
    let n = t.sh.joint_codes();
    for (idx, step) in e.steps.iter().enumerate() {
        let o = step.observation;
        let m = &filt[idx * n..(idx + 1) * n];
        sums.log_o += m.iter().zip(&t.emit[o * n..(o + 1) * n]).map(|(w, x)| if *w > 0.0 { w * x } else { 0.0 }).sum::<f64>();
        if idx == 0 {
            sums.kl_s += t.kl_s_init[o];
            sums.kl_z += t.kl_z_init[o];
            continue;
        }
        let prev = &e.steps[idx - 1];
        let base = t.block(prev.action, o) * n;
        for (c, &w) in filt[(idx - 1) * n..idx * n].iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let at = base + c;
            sums.log_r += w * expected_log_gauss(prev.reward, t.mean_mu[at], t.mean_mu2[at]);
            sums.kl_s += w * t.kl_s[at];
            sums.kl_z += w * t.kl_z[at];
        }
    }
    sums.episodes += 1;
}

/// Negative ELBO, summed over time and averaged over episodes, with every
/// expectation taken exactly under the filtered posterior. The reward of an
/// episode's last step has no following observation and is not scored.
pub fn elbo(model: &LearnedWorldModel, episodes: &[Episode], switches: &ObjectiveSwitches) -> Result<LossBreakdown> {
    check(model, episodes, switches)?;
    let w = weights(model, switches);
    let t = Tables::new(model, switches.kl_order, &w);
    let mut sums = Sums::default();
    let mut filt = Vec::new();
    for e in episodes.iter().filter(|e| !e.is_empty()) {
        forward(&t, e, &mut filt);
        accumulate_terms(&t, e, &filt, &mut sums);
    }
    Ok(sums.breakdown(&w))
}

/// Accumulated linear gradients and visit weights for each posterior row.
struct RowAcc {
    lin: Table,
    weight: Vec<f64>,
}

impl RowAcc {
    fn new(rows: usize, cols: usize) -> Self {
        RowAcc {
            lin: Table::zeros(rows, cols),
            weight: vec![0.0; rows],
        }
    }
}

/// Per `(a, o, previous code)` totals over every transition: filtered mass, its
/// first two reward moments and the mass-weighted future value of each next code.
struct BlockStats {
    mass: Vec<f64>,
    mass_r: Vec<f64>,
    mass_r2: Vec<f64>,
    future: Vec<f64>,
}

impl BlockStats {
    fn new(len: usize, n: usize) -> Self {
        BlockStats {
            mass: vec![0.0; len],
            mass_r: vec![0.0; len],
            mass_r2: vec![0.0; len],
            future: vec![0.0; len * n],
        }
    }
}

/// Turns accumulated row gradients into logit gradients for one posterior table
/// and the prior rows it is compared with.
struct RowFinish<'a> {
    q: &'a Table,
    lq: &'a Table,
    p: &'a Table,
    lpr: &'a Table,
    kl_weight: f64,
    order: KlOrder,
}

impl RowFinish<'_> {
    fn apply(&self, acc: &RowAcc, prior_of: impl Fn(usize) -> usize, gq: &mut Table, gp: &mut Table) {
        for r in 0..self.q.rows {
            let (qr, lqr) = (self.q.row(r), self.lq.row(r));
            let lin = acc.lin.row(r);
            let mean: f64 = qr.iter().zip(lin).map(|(a, b)| a * b).sum();
            let out = gq.row_mut(r);
            for c in 0..self.q.cols {
                out[c] += qr[c] * (lin[c] - mean);
            }
            let wsum = acc.weight[r];
            if wsum == 0.0 || self.kl_weight == 0.0 {
                continue;
            }
            let pi = prior_of(r);
            let (pr, lpr) = (self.p.row(pi), self.lpr.row(pi));
            let k = kl(self.order, qr, lqr, pr, lpr);
            let gprior = gp.row_mut(pi);
            for c in 0..self.q.cols {
                let (dq, dp) = match self.order {
                    KlOrder::PosteriorPrior => (qr[c] * (lqr[c] - lpr[c] - k), pr[c] - qr[c]),
                    KlOrder::PriorPosterior => (qr[c] - pr[c], pr[c] * (lpr[c] - lqr[c] - k)),
                };
                out[c] -= self.kl_weight * wsum * dq;
                gprior[c] -= self.kl_weight * wsum * dp;
            }
        }
    }
}

/// Gradient of the loss (negative ELBO per episode) with respect to every table,
/// together with the loss itself.
pub fn elbo_gradients(
    model: &LearnedWorldModel,
    episodes: &[Episode],
    switches: &ObjectiveSwitches,
) -> Result<(LossBreakdown, Params)> {
    check(model, episodes, switches)?;
    let sh = model.shape;
    let (ks, kz, no) = (sh.state_codes, sh.noise_codes, sh.observations());
    let n = sh.joint_codes();
    let w = weights(model, switches);
    let t = Tables::new(model, switches.kl_order, &w);
    let mut grad = Params::zeros(&sh);
    let mut sums = Sums::default();

    let mut acc_s0 = RowAcc::new(no, ks);
    let mut acc_z0 = RowAcc::new(no, kz);
    let mut acc_s = RowAcc::new(t.p.posterior_state.rows, ks);
    let mut acc_z = RowAcc::new(t.p.posterior_noise.rows, kz);
    // Expected visits of each joint code at each observation, for the decoders.
    let mut code_counts = vec![0.0; no * n];

    let mut stats = BlockStats::new(sh.actions * no * n, n);
    let mut filt = Vec::new();
    let mut v = vec![0.0; n];
    let mut v_prev = vec![0.0; n];
    let mut u = vec![0.0; n];
    for e in episodes.iter().filter(|e| !e.is_empty()) {
        forward(&t, e, &mut filt);
        accumulate_terms(&t, e, &filt, &mut sums);
        for (idx, step) in e.steps.iter().enumerate() {
            let o = step.observation;
            for (x, &m) in code_counts[o * n..(o + 1) * n].iter_mut().zip(&filt[idx * n..(idx + 1) * n]) {
                *x += m;
            }
        }

        // v[c]: derivative of everything after the current step with respect to
        // the current filtered mass on c.
        v.iter_mut().for_each(|x| *x = 0.0);
        for idx in (1..e.len()).rev() {
            let o = e.steps[idx].observation;
            let prev = &e.steps[idx - 1];
            let (a, r) = (prev.action, prev.reward);
            for ((x, &em), &vv) in u.iter_mut().zip(&t.emit[o * n..(o + 1) * n]).zip(&v) {
                *x = em + vv;
            }
            let base = t.block(a, o) * n;
            let masses = &filt[(idx - 1) * n..idx * n];
            for (c, &mass) in masses.iter().enumerate() {
                let at = base + c;
                let row = &t.trans[at * n..(at + 1) * n];
                v_prev[c] = w.reward * expected_log_gauss(r, t.mean_mu[at], t.mean_mu2[at]) - t.penalty[at]
                    + row.iter().zip(&u).map(|(k, x)| k * x).sum::<f64>();
                if mass == 0.0 {
                    continue;
                }
                for (s, &x) in stats.future[at * n..(at + 1) * n].iter_mut().zip(&u) {
                    *s += mass * x;
                }
                stats.mass[at] += mass;
                stats.mass_r[at] += mass * r;
                stats.mass_r2[at] += mass * r * r;
            }
            std::mem::swap(&mut v, &mut v_prev);
        }

        let o0 = e.steps[0].observation;
        let qs = t.p.posterior_state_init.row(o0);
        let qz = t.p.posterior_noise_init.row(o0);
        for j in 0..ks {
            for l in 0..kz {
                let x = t.emit[o0 * n + j * kz + l] + v[j * kz + l];
                acc_s0.lin.row_mut(o0)[j] += qz[l] * x;
                acc_z0.lin.row_mut(o0)[l] += qs[j] * x;
            }
        }
        acc_s0.weight[o0] += 1.0;
        acc_z0.weight[o0] += 1.0;
    }

    // Everything the backward pass collected is linear in the posterior rows, so
    // each row's linear gradient follows from its block totals.
    let mut lr = vec![0.0; ks];
    let mut gs = vec![0.0; ks];
    let mut gz = vec![0.0; kz];
    for a in 0..sh.actions {
        for o in 0..no {
            let base = t.block(a, o) * n;
            for i in 0..ks {
                let pr = sh.prior_state_row(i, a);
                let mu = model.params.reward.row(pr);
                for k in 0..kz {
                    let at = base + i * kz + k;
                    let mass = stats.mass[at];
                    if mass == 0.0 {
                        continue;
                    }
                    let (mr, mr2) = (stats.mass_r[at], stats.mass_r2[at]);
                    let fut = &stats.future[at * n..(at + 1) * n];
                    let rs = sh.posterior_state_row(i, a, o, k);
                    let rz = sh.posterior_noise_row(k, o, i, a);
                    let (qs, qz) = (t.p.posterior_state.row(rs), t.p.posterior_noise.row(rz));
                    for (x, &m) in lr.iter_mut().zip(mu) {
                        *x = -0.5 * (mr2 - 2.0 * m * mr + m * m * mass) - HALF_LN_TWO_PI * mass;
                    }
                    gz.iter_mut().for_each(|x| *x = 0.0);
                    for j in 0..ks {
                        let fj = &fut[j * kz..(j + 1) * kz];
                        gs[j] = w.reward * lr[j] + qz.iter().zip(fj).map(|(q, x)| q * x).sum::<f64>();
                        for (g, &x) in gz.iter_mut().zip(fj) {
                            *g += qs[j] * x;
                        }
                    }
                    for (g, &x) in acc_s.lin.row_mut(rs).iter_mut().zip(&gs) {
                        *g += x;
                    }
                    for (g, &x) in acc_z.lin.row_mut(rz).iter_mut().zip(&gz) {
                        *g += x;
                    }
                    acc_s.weight[rs] += mass;
                    acc_z.weight[rz] += mass;
                    if w.reward != 0.0 {
                        let gr = grad.reward.row_mut(pr);
                        for j in 0..ks {
                            gr[j] += w.reward * qs[j] * (mr - mass * mu[j]);
                        }
                    }
                }
            }
        }
    }

    // Decoders: the objective holds count(o, c) · log p(o | c).
    for o in 0..no {
        let (c1, c2) = sh.split(o);
        for j in 0..ks {
            for l in 0..kz {
                let m = code_counts[o * n + j * kz + l];
                if m == 0.0 {
                    continue;
                }
                let (rs, rz) = sh.decoder_row(j, l);
                let ps = t.p.decoder_state.row(rs);
                for (c, g) in grad.decoder_state.row_mut(rs).iter_mut().enumerate() {
                    *g += m * ((c == c1) as u8 as f64 - ps[c]);
                }
                let pz = t.p.decoder_noise.row(rz);
                for (c, g) in grad.decoder_noise.row_mut(rz).iter_mut().enumerate() {
                    *g += m * ((c == c2) as u8 as f64 - pz[c]);
                }
            }
        }
    }

    let order = switches.kl_order;
    let finish = |q: &'static str| {
        let (q, lq, p, lpr, kl_weight) = match q {
            "s0" => (&t.p.posterior_state_init, &t.lp.posterior_state_init, &t.p.prior_state_init, &t.lp.prior_state_init, w.state_kl),
            "z0" => (&t.p.posterior_noise_init, &t.lp.posterior_noise_init, &t.p.prior_noise_init, &t.lp.prior_noise_init, w.noise_kl),
            "s" => (&t.p.posterior_state, &t.lp.posterior_state, &t.p.prior_state, &t.lp.prior_state, w.state_kl),
            _ => (&t.p.posterior_noise, &t.lp.posterior_noise, &t.p.prior_noise, &t.lp.prior_noise, w.noise_kl),
        };
        RowFinish {
            q,
            lq,
            p,
            lpr,
            kl_weight,
            order,
        }
    };
    finish("s0").apply(&acc_s0, |_| 0, &mut grad.posterior_state_init, &mut grad.prior_state_init);
    finish("z0").apply(&acc_z0, |_| 0, &mut grad.posterior_noise_init, &mut grad.prior_noise_init);
    // Posterior rows are laid out ((i · A + a) · O + o) · K_z + k and ((k · O + o) · K_s + i) · A + a.
    finish("s").apply(&acc_s, |r| r / (no * kz), &mut grad.posterior_state, &mut grad.prior_state);
    finish("z").apply(&acc_z, |r| r / (no * ks * sh.actions), &mut grad.posterior_noise, &mut grad.prior_noise);

    // Everything above differentiates the summed ELBO; the loss is its negated episode mean.
    let scale = -1.0 / sums.episodes as f64;
    for tbl in grad.tables_mut() {
        tbl.values.iter_mut().for_each(|x| *x *= scale);
    }
    Ok((sums.breakdown(&w), grad))
}

/// Expected channel-1 log-likelihood per step under the model's own filter, with
/// the decoder rows read at `(ŝ, perm[ẑ])`. Unchanged for every `perm` exactly
/// when channel 1 ignores `ẑ`.
pub fn channel1_log_likelihood(model: &LearnedWorldModel, episodes: &[Episode], noise_perm: &[usize]) -> Result<f64> {
    let sw = switches_for(model);
    check(model, episodes, &sw)?;
    let sh = model.shape;
    if noise_perm.len() != sh.noise_codes {
        return Err(Error::Model("noise permutation has the wrong length".into()));
    }
    let t = Tables::new(model, sw.kl_order, &weights(model, &sw));
    let n = sh.joint_codes();
    let (mut total, mut steps) = (0.0, 0usize);
    let mut filt = Vec::new();
    for e in episodes.iter().filter(|e| !e.is_empty()) {
        forward(&t, e, &mut filt);
        for (idx, step) in e.steps.iter().enumerate() {
            let (c1, _) = sh.split(step.observation);
            for j in 0..sh.state_codes {
                for l in 0..sh.noise_codes {
                    let (rs, _) = sh.decoder_row(j, noise_perm[l]);
                    total += filt[idx * n + j * sh.noise_codes + l] * t.lp.decoder_state.row(rs)[c1];
                }
            }
        }
        steps += e.len();
    }
    Ok(total / steps as f64)
}

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::pomdp::{Channels, FactoredPomdp};
use crate::rng::{stream_rng, streams};
use crate::{Error, Result};

/// Logit magnitude used for near-deterministic rows of hand-built models.
pub const SHARP_LOGIT: f64 = 40.0;

/// How observations are reconstructed from the two codes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmissionMode {
    /// Channel 1 from `ŝ` alone, channel 2 from `ẑ` alone.
    #[default]
    Asymmetric,
    /// Both channels from the joint code `(ŝ, ẑ)`.
    Symmetric,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub state_codes: usize,
    pub noise_codes: usize,
    pub actions: usize,
    pub state_symbols: usize,
    pub noise_symbols: usize,
    #[serde(default)]
    pub emission: EmissionMode,
}

impl ModelShape {
    /// Shape for a POMDP. Without declared channels every symbol goes to channel 1.
    pub fn for_pomdp(p: &FactoredPomdp, state_codes: usize, noise_codes: usize, emission: EmissionMode) -> Self {
        let channels = p.channels.unwrap_or(Channels {
            state_symbols: p.sizes.observations,
            noise_symbols: 1,
        });
        ModelShape {
            state_codes,
            noise_codes,
            actions: p.sizes.actions,
            state_symbols: channels.state_symbols,
            noise_symbols: channels.noise_symbols,
            emission,
        }
    }

    pub fn observations(&self) -> usize {
        self.state_symbols * self.noise_symbols
    }

    pub fn joint_codes(&self) -> usize {
        self.state_codes * self.noise_codes
    }

    pub fn split(&self, o: usize) -> (usize, usize) {
        (o / self.noise_symbols, o % self.noise_symbols)
    }

    fn decoder_rows(&self) -> (usize, usize) {
        match self.emission {
            EmissionMode::Asymmetric => (self.state_codes, self.noise_codes),
            EmissionMode::Symmetric => (self.joint_codes(), self.joint_codes()),
        }
    }

    /// Decoder rows used for joint code `(j, l)`.
    pub fn decoder_row(&self, j: usize, l: usize) -> (usize, usize) {
        match self.emission {
            EmissionMode::Asymmetric => (j, l),
            EmissionMode::Symmetric => {
                let c = j * self.noise_codes + l;
                (c, c)
            }
        }
    }

    pub fn prior_state_row(&self, i: usize, a: usize) -> usize {
        i * self.actions + a
    }

    /// Row of the state posterior for `(ŝ_{t−1}, a_{t−1}, o_t, ẑ_{t−1})`.
    pub fn posterior_state_row(&self, i: usize, a: usize, o: usize, k: usize) -> usize {
        ((i * self.actions + a) * self.observations() + o) * self.noise_codes + k
    }

    /// Row of the noise posterior for `(ẑ_{t−1}, o_t, ŝ_{t−1}, a_{t−1})`.
    pub fn posterior_noise_row(&self, k: usize, o: usize, i: usize, a: usize) -> usize {
        ((k * self.observations() + o) * self.state_codes + i) * self.actions + a
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("state codes", self.state_codes),
            ("noise codes", self.noise_codes),
            ("actions", self.actions),
            ("state symbols", self.state_symbols),
            ("noise symbols", self.noise_symbols),
        ];
        match fields.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(Error::Model(format!("{} must be at least 1", name))),
            None => Ok(()),
        }
    }
}

/// A flat table of logit rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl Table {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Table {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.values[r * self.cols..(r + 1) * self.cols]
    }

    /// Row-wise softmax.
    pub fn softmax(&self) -> Table {
        let mut out = self.clone();
        for r in 0..self.rows {
            softmax_in_place(out.row_mut(r));
        }
        out
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

pub(crate) fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

/// Every learnable table. Gradients use the same layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    /// `p(ŝ_0)`
    pub prior_state_init: Table,
    /// `p(ẑ_0)`
    pub prior_noise_init: Table,
    /// `ψ_s[ŝ][a] → ŝ'`
    pub prior_state: Table,
    /// `ψ_z[ẑ] → ẑ'`
    pub prior_noise: Table,
    /// `q(ŝ_0 | o_0)`
    pub posterior_state_init: Table,
    /// `q(ẑ_0 | o_0)`
    pub posterior_noise_init: Table,
    /// `q(ŝ_t | ŝ_{t−1}, a_{t−1}, o_t, ẑ_{t−1})`
    pub posterior_state: Table,
    /// `q(ẑ_t | ẑ_{t−1}, o_t, ŝ_{t−1}, a_{t−1})`
    pub posterior_noise: Table,
    /// `θ_s[row] → channel-1 symbol`
    pub decoder_state: Table,
    /// `θ_z[row] → channel-2 symbol`
    pub decoder_noise: Table,
    /// Reward means `θ_r[ŝ][a][ŝ']`, unit variance.
    pub reward: Table,
}

impl Params {
    pub fn zeros(shape: &ModelShape) -> Self {
        let (ks, kz, na, no) = (shape.state_codes, shape.noise_codes, shape.actions, shape.observations());
        let (rs, rz) = shape.decoder_rows();
        Params {
            prior_state_init: Table::zeros(1, ks),
            prior_noise_init: Table::zeros(1, kz),
            prior_state: Table::zeros(ks * na, ks),
            prior_noise: Table::zeros(kz, kz),
            posterior_state_init: Table::zeros(no, ks),
            posterior_noise_init: Table::zeros(no, kz),
            posterior_state: Table::zeros(ks * na * no * kz, ks),
            posterior_noise: Table::zeros(kz * no * ks * na, kz),
            decoder_state: Table::zeros(rs, shape.state_symbols),
            decoder_noise: Table::zeros(rz, shape.noise_symbols),
            reward: Table::zeros(ks * na, ks),
        }
    }

    pub fn tables(&self) -> [(&'static str, &Table); 11] {
        [
            ("prior_state_init", &self.prior_state_init),
            ("prior_noise_init", &self.prior_noise_init),
            ("prior_state", &self.prior_state),
            ("prior_noise", &self.prior_noise),
            ("posterior_state_init", &self.posterior_state_init),
            ("posterior_noise_init", &self.posterior_noise_init),
            ("posterior_state", &self.posterior_state),
            ("posterior_noise", &self.posterior_noise),
            ("decoder_state", &self.decoder_state),
            ("decoder_noise", &self.decoder_noise),
            ("reward", &self.reward),
        ]
    }

    pub fn tables_mut(&mut self) -> [&mut Table; 11] {
        [
            &mut self.prior_state_init,
            &mut self.prior_noise_init,
            &mut self.prior_state,
            &mut self.prior_noise,
            &mut self.posterior_state_init,
            &mut self.posterior_noise_init,
            &mut self.posterior_state,
            &mut self.posterior_noise,
            &mut self.decoder_state,
            &mut self.decoder_noise,
            &mut self.reward,
        ]
    }

    pub fn len(&self) -> usize {
        self.tables().iter().map(|(_, t)| t.values.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every parameter in table order.
    pub fn flat(&self) -> Vec<f64> {
        self.tables().iter().flat_map(|(_, t)| t.values.iter().copied()).collect()
    }

    pub fn get_mut(&mut self, mut index: usize) -> &mut f64 {
        for t in self.tables_mut() {
            if index < t.values.len() {
                return &mut t.values[index];
            }
            index -= t.values.len();
        }
        panic!("parameter index out of range");
    }

    /// `self += scale · other`
    pub fn add_scaled(&mut self, other: &Params, scale: f64) {
        for (t, (_, o)) in self.tables_mut().into_iter().zip(other.tables()) {
            for (x, y) in t.values.iter_mut().zip(&o.values) {
                *x += scale * y;
            }
        }
    }

    fn shapes_match(&self, shape: &ModelShape) -> bool {
        let expected = Params::zeros(shape);
        let ok = self
            .tables()
            .iter()
            .zip(expected.tables())
            .all(|((_, a), (_, b))| a.rows == b.rows && a.cols == b.cols && a.values.len() == a.rows * a.cols);
        ok
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnedWorldModel {
    pub shape: ModelShape,
    /// Weight on the state KL term.
    pub alpha: f64,
    /// Weight on the noise KL term.
    pub beta: f64,
    pub params: Params,
}

pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_BETA: f64 = 0.25;

/// Logits drawn i.i.d. from `U[−0.01, 0.01]`; reward means start at 0.
pub fn init_model(shape: ModelShape, seed: u64) -> Result<LearnedWorldModel> {
    shape.validate()?;
    let mut params = Params::zeros(&shape);
    let mut rng = stream_rng(seed, streams::MODEL_INIT);
    for t in params.tables_mut().into_iter().take(10) {
        for x in &mut t.values {
            *x = rng.random_range(-0.01..=0.01);
        }
    }
    Ok(LearnedWorldModel {
        shape,
        alpha: DEFAULT_ALPHA,
        beta: DEFAULT_BETA,
        params,
    })
}

impl LearnedWorldModel {
    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        if !self.params.shapes_match(&self.shape) {
            return Err(Error::Model("table sizes disagree with the model shape".into()));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Model(format!("KL weights must be nonnegative, got {} and {}", self.alpha, self.beta)));
        }
        if self.params.flat().iter().any(|x| !x.is_finite()) {
            return Err(Error::Model("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn with_weights(mut self, alpha: f64, beta: f64) -> Self {
        self.alpha = alpha;
        self.beta = beta;
        self
    }

    /// TB1-shaped model: exact dynamics, decoders, rewards and point-mass posteriors
    /// reading the codes straight off the observation.
    pub fn tb1_ground_truth(p: &FactoredPomdp) -> Result<Self> {
        let inverse = p.emission_inverse().ok_or(Error::NonInvertibleEmission)?;
        let channels = p.channels.ok_or_else(|| Error::Model("POMDP declares no channels".into()))?;
        let (ns, nz) = (p.sizes.states, p.sizes.noises);
        if channels.state_symbols != ns || channels.noise_symbols != nz {
            return Err(Error::Model("channels must carry one symbol per latent value".into()));
        }
        let shape = ModelShape::for_pomdp(p, ns, nz, EmissionMode::Asymmetric);
        let mut m = Params::zeros(&shape);
        let sharp = |row: &mut [f64], target: usize| {
            for (c, x) in row.iter_mut().enumerate() {
                *x = if c == target { SHARP_LOGIT } else { -SHARP_LOGIT };
            }
        };
        let logs = |row: &mut [f64], probs: &[f64]| {
            for (x, &q) in row.iter_mut().zip(probs) {
                *x = if q > 0.0 { q.ln() } else { -2.0 * SHARP_LOGIT };
            }
        };

        let mut state0 = vec![0.0; ns];
        let mut noise0 = vec![0.0; nz];
        for (idx, &b) in p.initial_belief.iter().enumerate() {
            let (s, z) = p.split_joint(idx);
            state0[s] += b;
            noise0[z] += b;
        }
        logs(m.prior_state_init.row_mut(0), &state0);
        logs(m.prior_noise_init.row_mut(0), &noise0);
        for i in 0..ns {
            for a in 0..shape.actions {
                logs(m.prior_state.row_mut(shape.prior_state_row(i, a)), &p.state_transition[a][i]);
                m.reward.row_mut(shape.prior_state_row(i, a)).copy_from_slice(&p.reward[i][a]);
            }
        }
        for k in 0..nz {
            logs(m.prior_noise.row_mut(k), p.noise_row(0, k, 0, 0));
        }
        for (o, &(s, z)) in inverse.iter().enumerate() {
            sharp(m.posterior_state_init.row_mut(o), s);
            sharp(m.posterior_noise_init.row_mut(o), z);
            for i in 0..ns {
                for a in 0..shape.actions {
                    for k in 0..nz {
                        sharp(m.posterior_state.row_mut(shape.posterior_state_row(i, a, o, k)), s);
                        sharp(m.posterior_noise.row_mut(shape.posterior_noise_row(k, o, i, a)), z);
                    }
                }
            }
        }
        for s in 0..ns {
            sharp(m.decoder_state.row_mut(s), s);
        }
        for z in 0..nz {
            sharp(m.decoder_noise.row_mut(z), z);
        }
        Ok(LearnedWorldModel {
            shape,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            params: m,
        })
    }

    /// The same model with `ŝ` codes renamed `i ↦ perm[i]` in every table.
    pub fn permute_state_codes(&self, perm: &[usize]) -> Result<Self> {
        self.permute(perm, &(0..self.shape.noise_codes).collect::<Vec<_>>())
    }

    /// The same model with `ẑ` codes renamed `k ↦ perm[k]` in every table.
    pub fn permute_noise_codes(&self, perm: &[usize]) -> Result<Self> {
        self.permute(&(0..self.shape.state_codes).collect::<Vec<_>>(), perm)
    }

    fn permute(&self, ps: &[usize], pz: &[usize]) -> Result<Self> {
        let sh = self.shape;
        let is_perm = |p: &[usize], n: usize| {
            let mut seen = vec![false; n];
            p.len() == n && p.iter().all(|&x| x < n && !std::mem::replace(&mut seen[x], true))
        };
        if !is_perm(ps, sh.state_codes) || !is_perm(pz, sh.noise_codes) {
            return Err(Error::Model("not a permutation of the codes".into()));
        }
        let src = &self.params;
        let mut out = src.clone();
        let (ks, kz, na, no) = (sh.state_codes, sh.noise_codes, sh.actions, sh.observations());
        let copy_cols = |dst: &mut [f64], from: &[f64], perm: &[usize]| {
            for (c, &x) in from.iter().enumerate() {
                dst[perm[c]] = x;
            }
        };

        copy_cols(out.prior_state_init.row_mut(0), src.prior_state_init.row(0), ps);
        copy_cols(out.prior_noise_init.row_mut(0), src.prior_noise_init.row(0), pz);
        for o in 0..no {
            copy_cols(out.posterior_state_init.row_mut(o), src.posterior_state_init.row(o), ps);
            copy_cols(out.posterior_noise_init.row_mut(o), src.posterior_noise_init.row(o), pz);
        }
        for i in 0..ks {
            for a in 0..na {
                let (from, to) = (sh.prior_state_row(i, a), sh.prior_state_row(ps[i], a));
                copy_cols(out.prior_state.row_mut(to), src.prior_state.row(from), ps);
                copy_cols(out.reward.row_mut(to), src.reward.row(from), ps);
                for o in 0..no {
                    for k in 0..kz {
                        let from = sh.posterior_state_row(i, a, o, k);
                        let to = sh.posterior_state_row(ps[i], a, o, pz[k]);
                        copy_cols(out.posterior_state.row_mut(to), src.posterior_state.row(from), ps);
                        let from = sh.posterior_noise_row(k, o, i, a);
                        let to = sh.posterior_noise_row(pz[k], o, ps[i], a);
                        copy_cols(out.posterior_noise.row_mut(to), src.posterior_noise.row(from), pz);
                    }
                }
            }
        }
        for k in 0..kz {
            copy_cols(out.prior_noise.row_mut(pz[k]), src.prior_noise.row(k), pz);
        }
        for j in 0..ks {
            for l in 0..kz {
                let (fs, fz) = sh.decoder_row(j, l);
                let (ts, tz) = sh.decoder_row(ps[j], pz[l]);
                out.decoder_state.row_mut(ts).copy_from_slice(src.decoder_state.row(fs));
                out.decoder_noise.row_mut(tz).copy_from_slice(src.decoder_noise.row(fz));
            }
        }
        Ok(LearnedWorldModel {
            params: out,
            ..self.clone()
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: LearnedWorldModel = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pomdp::{make_fixture, Fixture};

    fn shape(ks: usize, kz: usize) -> ModelShape {
        ModelShape {
            state_codes: ks,
            noise_codes: kz,
            actions: 2,
            state_symbols: 2,
            noise_symbols: 2,
            emission: EmissionMode::Asymmetric,
        }
    }

    #[test]
    fn init_is_deterministic_and_near_uniform() {
        let a = init_model(shape(2, 2), 0).unwrap();
        assert_eq!(a, init_model(shape(2, 2), 0).unwrap());
        assert_ne!(a, init_model(shape(2, 2), 1).unwrap());
        for (_, t) in a.params.tables().into_iter().take(10) {
            let sm = t.softmax();
            for r in 0..t.rows {
                for &p in sm.row(r) {
                    assert!((p - 1.0 / t.cols as f64).abs() <= 0.01);
                }
            }
        }
        assert!(a.params.reward.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_codes_are_rejected() {
        assert!(init_model(shape(0, 2), 0).is_err());
        assert!(init_model(shape(2, 0), 0).is_err());
    }

    #[test]
    fn checkpoint_round_trips() {
        let m = init_model(shape(3, 2), 4).unwrap();
        let back = LearnedWorldModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
        let mut bad = m.clone();
        bad.params.reward.values.pop();
        assert!(LearnedWorldModel::from_json(&bad.to_json().unwrap()).is_err());
    }

    #[test]
    fn tb1_model_is_sharp() {
        let p = make_fixture(Fixture::Tb1, 0).unwrap();
        let m = LearnedWorldModel::tb1_ground_truth(&p).unwrap();
        m.validate().unwrap();
        let dec = m.params.decoder_state.softmax();
        assert!(dec.row(1)[1] >= 1.0 - 1e-15);
        let prior = m.params.prior_noise.softmax();
        assert!((prior.row(0)[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn permutations_compose_back() {
        let m = init_model(shape(3, 2), 2).unwrap();
        let p = m.permute_state_codes(&[2, 0, 1]).unwrap();
        assert_ne!(p, m);
        assert_eq!(p.permute_state_codes(&[1, 2, 0]).unwrap(), m);
        let q = m.permute_noise_codes(&[1, 0]).unwrap();
        assert_eq!(q.permute_noise_codes(&[1, 0]).unwrap(), m);
        assert!(m.permute_state_codes(&[0, 0, 1]).is_err());
    }
}

use serde::{Deserialize, Serialize};

use crate::pomdp::FactoredPomdp;
use crate::{Error, Result};

/// Observation-level estimator `g: O → Ŝ × Ẑ`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObservationEstimator {
    pub state_codes: usize,
    pub noise_codes: usize,
    /// `map[o] = (ŝ, ẑ)`
    pub map: Vec<(usize, usize)>,
}

impl ObservationEstimator {
    pub fn new(state_codes: usize, noise_codes: usize, map: Vec<(usize, usize)>) -> Result<Self> {
        if state_codes == 0 || noise_codes == 0 {
            return Err(Error::Estimator("factor sizes must be positive".into()));
        }
        if let Some(o) = map.iter().position(|&(s, z)| s >= state_codes || z >= noise_codes) {
            return Err(Error::Estimator(format!("observation {} maps outside {}x{}", o, state_codes, noise_codes)));
        }
        let g = ObservationEstimator {
            state_codes,
            noise_codes,
            map,
        };
        if state_codes * noise_codes == g.map.len() && !g.is_bijective() {
            return Err(Error::Estimator("map is not a bijection onto Ŝ x Ẑ".into()));
        }
        Ok(g)
    }

    pub fn is_bijective(&self) -> bool {
        if self.state_codes * self.noise_codes != self.map.len() {
            return false;
        }
        let mut seen = vec![false; self.map.len()];
        for &(s, z) in &self.map {
            let i = s * self.noise_codes + z;
            if seen[i] {
                return false;
            }
            seen[i] = true;
        }
        true
    }

    pub fn observations(&self) -> usize {
        self.map.len()
    }

    pub fn state_of(&self, o: usize) -> usize {
        self.map[o].0
    }

    pub fn noise_of(&self, o: usize) -> usize {
        self.map[o].1
    }

    /// `o` for a code pair, if the map is a bijection.
    pub fn inverse(&self) -> Option<Vec<usize>> {
        if !self.is_bijective() {
            return None;
        }
        let mut inv = vec![0; self.map.len()];
        for (o, &(s, z)) in self.map.iter().enumerate() {
            inv[s * self.noise_codes + z] = o;
        }
        Some(inv)
    }

    fn from_latent(p: &FactoredPomdp, sizes: (usize, usize), f: impl Fn(usize, usize) -> (usize, usize)) -> Result<Self> {
        let inverse = p.emission_inverse().ok_or(Error::NonInvertibleEmission)?;
        Self::new(sizes.0, sizes.1, inverse.into_iter().map(|(s, z)| f(s, z)).collect())
    }

    /// `ŝ = s`, `ẑ = z`.
    pub fn identity(p: &FactoredPomdp) -> Result<Self> {
        Self::from_latent(p, (p.sizes.states, p.sizes.noises), |s, z| (s, z))
    }

    /// `ŝ = z`, `ẑ = s`.
    pub fn swap(p: &FactoredPomdp) -> Result<Self> {
        Self::from_latent(p, (p.sizes.noises, p.sizes.states), |s, z| (z, s))
    }

    /// `ŝ = (s + z) mod |S|`, `ẑ = z`. Only an adversary when `|Z| ≥ 2`.
    pub fn xor(p: &FactoredPomdp) -> Result<Self> {
        let n = p.sizes.states;
        Self::from_latent(p, (n, p.sizes.noises), |s, z| ((s + z) % n, z))
    }

    /// Relabels codes: `ŝ ↦ state_perm[ŝ]`, `ẑ ↦ noise_perm[ẑ]`.
    pub fn relabel(&self, state_perm: &[usize], noise_perm: &[usize]) -> Result<Self> {
        if state_perm.len() != self.state_codes || noise_perm.len() != self.noise_codes {
            return Err(Error::Estimator("relabeling has wrong length".into()));
        }
        Self::new(
            self.state_codes,
            self.noise_codes,
            self.map.iter().map(|&(s, z)| (state_perm[s], noise_perm[z])).collect(),
        )
    }

    /// Representative of the relabeling class: codes numbered in order of first
    /// appearance as `o` increases.
    pub fn canonical(&self) -> Self {
        let mut s_label = vec![usize::MAX; self.state_codes];
        let mut z_label = vec![usize::MAX; self.noise_codes];
        let (mut ns, mut nz) = (0, 0);
        let map = self
            .map
            .iter()
            .map(|&(s, z)| {
                if s_label[s] == usize::MAX {
                    s_label[s] = ns;
                    ns += 1;
                }
                if z_label[z] == usize::MAX {
                    z_label[z] = nz;
                    nz += 1;
                }
                (s_label[s], z_label[z])
            })
            .collect();
        ObservationEstimator {
            state_codes: self.state_codes,
            noise_codes: self.noise_codes,
            map,
        }
    }

    pub fn same_up_to_relabeling(&self, other: &Self) -> bool {
        self.state_codes == other.state_codes
            && self.noise_codes == other.noise_codes
            && self.canonical() == other.canonical()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pomdp::{make_fixture, Fixture};

    #[test]
    fn adversaries_are_bijections() {
        let p = make_fixture(Fixture::Tb1, 0).unwrap();
        for g in [
            ObservationEstimator::identity(&p).unwrap(),
            ObservationEstimator::swap(&p).unwrap(),
            ObservationEstimator::xor(&p).unwrap(),
        ] {
            assert!(g.is_bijective());
        }
        assert_eq!(ObservationEstimator::xor(&p).unwrap().map, vec![(0, 0), (1, 1), (1, 0), (0, 1)]);
    }

    #[test]
    fn non_bijective_square_map_is_rejected() {
        assert!(ObservationEstimator::new(2, 2, vec![(0, 0), (0, 0), (1, 0), (1, 1)]).is_err());
        assert!(ObservationEstimator::new(2, 2, vec![(0, 2), (0, 1), (1, 0), (1, 1)]).is_err());
    }

    #[test]
    fn relabeling_keeps_canonical_form() {
        let p = make_fixture(Fixture::GridNoise, 1).unwrap();
        let g = ObservationEstimator::identity(&p).unwrap();
        let h = g.relabel(&[2, 0, 3, 1], &[1, 2, 0]).unwrap();
        assert_ne!(g, h);
        assert!(g.same_up_to_relabeling(&h));
        assert_eq!(g.canonical(), g);
        assert!(!g.same_up_to_relabeling(&ObservationEstimator::xor(&p).unwrap()));
    }

    #[test]
    fn noisy_emission_has_no_observation_estimator() {
        let p = make_fixture(Fixture::Tb2, 0).unwrap();
        assert!(matches!(ObservationEstimator::identity(&p), Err(Error::NonInvertibleEmission)));
    }
}

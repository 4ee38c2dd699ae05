//! Pairwise additive masks and the masked gradient.
//!
//! Client `i` adds `s_ij` for every `j > i` and subtracts `s_ji` for every
//! `j < i`, so the masks cancel in the sum over all clients. Masks are
//! expanded from per-pair seeds, which in turn come from one global seed;
//! this stands in for a pairwise key agreement.
//!
//! Expansion: the 64-bit pair seed keys a ChaCha20 stream
//! (`ChaCha20Rng::seed_from_u64`) and each coordinate is drawn with
//! `gen_range(0..q)`.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::ffield::{Field, FieldVec};

const PAIR_DOMAIN: u64 = 0x7061_6972_5f6d_736b;
const NOISE_DOMAIN: u64 = 0x6e6f_6973_655f_7a00;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed shared by clients `i < j`.
pub fn derive_pair_seed(global_seed: u64, i: usize, j: usize) -> Result<u64> {
    if i >= j {
        return Err(Error::BadPairOrder(i, j));
    }
    let h = mix64(global_seed ^ PAIR_DOMAIN);
    let h = mix64(h ^ i as u64);
    Ok(mix64(h ^ (j as u64).rotate_left(32)))
}

/// Seed for client `i`'s private noise stream.
pub fn derive_noise_seed(global_seed: u64, i: usize) -> u64 {
    mix64(mix64(global_seed ^ NOISE_DOMAIN) ^ i as u64)
}

pub fn expand_mask(field: &Field, pair_seed: u64, len: usize) -> FieldVec {
    let mut rng = ChaCha20Rng::seed_from_u64(pair_seed);
    field.uniform_vec(len, &mut rng)
}

/// `T_h` noise vectors of length `width` for client `i`.
pub fn client_noise(
    field: &Field,
    global_seed: u64,
    i: usize,
    t_h: usize,
    width: usize,
) -> Vec<FieldVec> {
    let mut rng = ChaCha20Rng::seed_from_u64(derive_noise_seed(global_seed, i));
    (0..t_h).map(|_| field.uniform_vec(width, &mut rng)).collect()
}

/// All pairwise masks `s_ij`, keyed by `(i, j)` with `i < j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskSet {
    clients: usize,
    len: usize,
    masks: BTreeMap<(usize, usize), FieldVec>,
}

impl MaskSet {
    pub fn from_seed(field: &Field, global_seed: u64, clients: usize, len: usize) -> Self {
        let mut masks = BTreeMap::new();
        for i in 0..clients {
            for j in i + 1..clients {
                let seed = derive_pair_seed(global_seed, i, j).expect("i < j");
                masks.insert((i, j), expand_mask(field, seed, len));
            }
        }
        MaskSet {
            clients,
            len,
            masks,
        }
    }

    /// All-zero masks, i.e. masking switched off.
    pub fn zeros(clients: usize, len: usize) -> Self {
        let masks = pairs(clients)
            .map(|pair| (pair, FieldVec::zeros(len)))
            .collect();
        MaskSet {
            clients,
            len,
            masks,
        }
    }

    /// Explicit masks; the key set must be exactly the ordered pairs.
    pub fn from_masks(
        clients: usize,
        len: usize,
        masks: BTreeMap<(usize, usize), FieldVec>,
    ) -> Result<Self> {
        if !masks.keys().copied().eq(pairs(clients)) {
            return Err(Error::Parse(format!(
                "mask keys must be every pair i < j over {clients} clients"
            )));
        }
        if let Some(bad) = masks.values().find(|m| m.len() != len) {
            return Err(Error::Dimension {
                expected: len,
                got: bad.len(),
            });
        }
        Ok(MaskSet {
            clients,
            len,
            masks,
        })
    }

    pub fn clients(&self) -> usize {
        self.clients
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<&FieldVec> {
        self.masks.get(&(i, j))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, usize), &FieldVec)> {
        self.masks.iter()
    }

    /// Masks that client `i` knows: every pair it belongs to.
    pub fn involving(&self, i: usize) -> BTreeMap<(usize, usize), FieldVec> {
        self.masks
            .iter()
            .filter(|((a, b), _)| *a == i || *b == i)
            .map(|(k, v)| (*k, v.clone()))
            .collect()
    }
}

fn pairs(clients: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..clients).flat_map(move |i| (i + 1..clients).map(move |j| (i, j)))
}

/// `y_i = g_i + sum_{j > i} s_ij - sum_{j < i} s_ji`.
pub fn mask_gradient(field: &Field, i: usize, gradient: &FieldVec, masks: &MaskSet) -> Result<FieldVec> {
    if gradient.len() != masks.len() {
        return Err(Error::Dimension {
            expected: masks.len(),
            got: gradient.len(),
        });
    }
    let mut y = gradient.clone();
    for j in 0..masks.clients() {
        if j > i {
            y = field.add_vec(&y, &masks.masks[&(i, j)])?;
        } else if j < i {
            y = field.sub_vec(&y, &masks.masks[&(j, i)])?;
        }
    }
    Ok(y)
}

/// Everything client `i` holds before encoding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientSecret {
    pub client_id: usize,
    pub gradient: FieldVec,
    pub masked: FieldVec,
    pub noise: Vec<FieldVec>,
}

impl ClientSecret {
    pub fn new(
        field: &Field,
        client_id: usize,
        gradient: FieldVec,
        masks: &MaskSet,
        noise: Vec<FieldVec>,
    ) -> Result<Self> {
        let masked = mask_gradient(field, client_id, &gradient, masks)?;
        Ok(ClientSecret {
            client_id,
            gradient,
            masked,
            noise,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ffield::DEFAULT_PRIME;
    use proptest::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pair_seeds() {
        assert_eq!(derive_pair_seed(9, 0, 1), derive_pair_seed(9, 0, 1));
        assert_ne!(
            derive_pair_seed(9, 0, 1).unwrap(),
            derive_pair_seed(9, 1, 2).unwrap()
        );
        assert_ne!(
            derive_pair_seed(9, 0, 1).unwrap(),
            derive_pair_seed(10, 0, 1).unwrap()
        );
        assert_eq!(derive_pair_seed(9, 2, 1), Err(Error::BadPairOrder(2, 1)));
        assert_eq!(derive_pair_seed(9, 1, 1), Err(Error::BadPairOrder(1, 1)));
    }

    #[test]
    fn pair_seeds_do_not_collide_on_small_grid() {
        let mut seen = std::collections::HashSet::new();
        for g in 0..8 {
            for i in 0..30 {
                for j in i + 1..30 {
                    assert!(seen.insert(derive_pair_seed(g, i, j).unwrap()));
                }
            }
        }
    }

    #[test]
    fn expansion() {
        let f = Field::new(DEFAULT_PRIME).unwrap();
        assert!(expand_mask(&f, 3, 0).is_empty());
        assert_eq!(expand_mask(&f, 3, 5), expand_mask(&f, 3, 5));
        assert_ne!(expand_mask(&f, 3, 5), expand_mask(&f, 4, 5));
    }

    #[test]
    fn expansion_uniform_across_seeds() {
        let f = Field::new(3).unwrap();
        let n = 10_000;
        let mut counts = [0usize; 3];
        for seed in 0..n as u64 {
            counts[expand_mask(&f, seed, 1)[0].value() as usize] += 1;
        }
        let mean = n as f64 / 3.0;
        let sigma = (n as f64 * 2.0 / 9.0).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() < 5.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn two_client_masks() {
        let f = Field::new(101).unwrap();
        let masks = MaskSet::from_seed(&f, 77, 2, 3);
        let g1 = f.vec_from_u64(&[1, 2, 3]);
        let g2 = f.vec_from_u64(&[4, 5, 6]);
        let y1 = mask_gradient(&f, 0, &g1, &masks).unwrap();
        let y2 = mask_gradient(&f, 1, &g2, &masks).unwrap();
        let s = masks.get(0, 1).unwrap();
        assert_eq!(y1, f.add_vec(&g1, s).unwrap());
        assert_eq!(y2, f.sub_vec(&g2, s).unwrap());
        assert_eq!(f.add_vec(&y1, &y2).unwrap(), f.add_vec(&g1, &g2).unwrap());
    }

    #[test]
    fn middle_client_of_three() {
        // client 2 (1-based) adds s_23 and subtracts s_12
        let f = Field::new(101).unwrap();
        let masks = MaskSet::from_seed(&f, 5, 3, 2);
        let g = f.vec_from_u64(&[9, 9]);
        let y = mask_gradient(&f, 1, &g, &masks).unwrap();
        let expect = f
            .sub_vec(&f.add_vec(&g, masks.get(1, 2).unwrap()).unwrap(), masks.get(0, 1).unwrap())
            .unwrap();
        assert_eq!(y, expect);
    }

    #[test]
    fn zero_masks_are_identity() {
        let f = Field::new(101).unwrap();
        let masks = MaskSet::zeros(4, 2);
        let g = f.vec_from_u64(&[3, 4]);
        for i in 0..4 {
            assert_eq!(mask_gradient(&f, i, &g, &masks).unwrap(), g);
        }
        assert!(matches!(
            mask_gradient(&f, 0, &f.vec_from_u64(&[1]), &masks),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn explicit_masks_validated() {
        let f = Field::new(7).unwrap();
        let mut m = BTreeMap::new();
        m.insert((0, 1), f.vec_from_u64(&[1]));
        assert!(MaskSet::from_masks(2, 1, m.clone()).is_ok());
        assert!(MaskSet::from_masks(3, 1, m.clone()).is_err());
        assert!(MaskSet::from_masks(2, 2, m).is_err());
    }

    #[test]
    fn noise_streams_are_per_client() {
        let f = Field::new(DEFAULT_PRIME).unwrap();
        let a = client_noise(&f, 1, 0, 2, 4);
        assert_eq!(a, client_noise(&f, 1, 0, 2, 4));
        assert_ne!(a, client_noise(&f, 1, 1, 2, 4));
        assert_eq!(a.len(), 2);
        assert!(client_noise(&f, 1, 0, 0, 4).is_empty());
    }

    proptest! {
        #[test]
        fn masks_cancel_in_the_sum(seed in any::<u64>(), clients in 2usize..7, len in 0usize..6) {
            let f = Field::new(DEFAULT_PRIME).unwrap();
            let masks = MaskSet::from_seed(&f, seed, clients, len);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
            let grads: Vec<_> = (0..clients).map(|_| f.uniform_vec(len, &mut rng)).collect();
            let masked: Vec<_> = grads.iter().enumerate()
                .map(|(i, g)| mask_gradient(&f, i, g, &masks).unwrap())
                .collect();
            prop_assert_eq!(f.sum_vecs(len, &masked).unwrap(), f.sum_vecs(len, &grads).unwrap());
        }

        #[test]
        fn mask_set_is_pure_in_seed(seed in any::<u64>()) {
            let f = Field::new(101).unwrap();
            prop_assert_eq!(MaskSet::from_seed(&f, seed, 4, 3), MaskSet::from_seed(&f, seed, 4, 3));
        }
    }
}

//! Rademacher and Gaussian perturbation vectors and the packed bit codec.
//!
//! Wire format for binary perturbations: `ceil(d/8)` bytes, entry `i`
//! (0-based) stored at bit `i % 8` of byte `i / 8` (least significant bit
//! first), 1 encodes +1 and 0 encodes -1, trailing pad bits are 0.

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamVector, Partition};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationKind {
    #[default]
    Binary,
    Gaussian,
}

impl PerturbationKind {
    /// Bits needed to ship one `d`-dimensional perturbation.
    /// Gaussian entries travel as IEEE-754 doubles.
    pub fn wire_bits(self, d: usize) -> u64 {
        match self {
            PerturbationKind::Binary => d as u64,
            PerturbationKind::Gaussian => 64 * d as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Perturbation {
    Binary(Vec<i8>),
    Gaussian(Vec<f64>),
}

impl Perturbation {
    pub fn sample(kind: PerturbationKind, d: usize, rng: &mut RngStream) -> Result<Self> {
        match kind {
            PerturbationKind::Binary => sample_rademacher(d, rng),
            PerturbationKind::Gaussian => sample_gaussian(d, rng),
        }
    }

    pub fn kind(&self) -> PerturbationKind {
        match self {
            Perturbation::Binary(_) => PerturbationKind::Binary,
            Perturbation::Gaussian(_) => PerturbationKind::Gaussian,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Perturbation::Binary(s) => s.len(),
            Perturbation::Gaussian(g) => g.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> f64 {
        match self {
            Perturbation::Binary(s) => f64::from(s[i]),
            Perturbation::Gaussian(g) => g[i],
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.get(i)).collect()
    }
}

/// i.i.d. uniform signs, 64 entries per generator word.
pub fn sample_rademacher(d: usize, rng: &mut RngStream) -> Result<Perturbation> {
    if d == 0 {
        return Err(Error::invalid("perturbation dimension must be at least 1"));
    }
    let mut signs = Vec::with_capacity(d);
    while signs.len() < d {
        let word = rng.next_u64();
        let take = (d - signs.len()).min(64);
        signs.extend((0..take).map(|b| if (word >> b) & 1 == 1 { 1i8 } else { -1i8 }));
    }
    Ok(Perturbation::Binary(signs))
}

/// i.i.d. standard normal entries, unit variance, no renormalization.
pub fn sample_gaussian(d: usize, rng: &mut RngStream) -> Result<Perturbation> {
    if d == 0 {
        return Err(Error::invalid("perturbation dimension must be at least 1"));
    }
    Ok(Perturbation::Gaussian(
        (0..d).map(|_| StandardNormal.sample(rng)).collect(),
    ))
}

pub fn encode_bits(v: &Perturbation) -> Result<Vec<u8>> {
    let Perturbation::Binary(signs) = v else {
        return Err(Error::invalid(
            "only binary perturbations have a bit encoding",
        ));
    };
    let mut out = vec![0u8; signs.len().div_ceil(8)];
    for (i, &s) in signs.iter().enumerate() {
        if s > 0 {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    Ok(out)
}

/// Inverse of [`encode_bits`]. Rejects wrong lengths and set pad bits so
/// every accepted input is the canonical encoding of its vector.
pub fn decode_bits(bytes: &[u8], d: usize) -> Result<Perturbation> {
    if d == 0 {
        return Err(Error::Decode("dimension must be at least 1".into()));
    }
    let expected = d.div_ceil(8);
    if bytes.len() != expected {
        return Err(Error::Decode(format!(
            "expected {expected} bytes for d = {d}, got {}",
            bytes.len()
        )));
    }
    let pad = expected * 8 - d;
    if pad > 0 && bytes[expected - 1] >> (8 - pad) != 0 {
        return Err(Error::Decode("non-zero pad bits".into()));
    }
    Ok(Perturbation::Binary(
        (0..d)
            .map(|i| {
                if (bytes[i / 8] >> (i % 8)) & 1 == 1 {
                    1
                } else {
                    -1
                }
            })
            .collect(),
    ))
}

/// `v ∘ e_{I_k}`: entries outside block `k` set to 0.
pub fn mask_perturbation(v: &Perturbation, p: &Partition, k: usize) -> Result<ParamVector> {
    if v.len() != p.dim() {
        return Err(Error::invalid(format!(
            "perturbation has dimension {}, partition covers {}",
            v.len(),
            p.dim()
        )));
    }
    p.check_block(k)?;
    let mut out = vec![0.0; v.len()];
    for &i in p.block(k) {
        out[i] = v.get(i);
    }
    ParamVector::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::dot;
    use crate::rng::Role;
    use proptest::prelude::*;

    fn rng(i: u64) -> RngStream {
        RngStream::at(11, i, Role::Test, 0)
    }

    #[test]
    fn rademacher_codomain_and_determinism() {
        let v = sample_rademacher(8, &mut rng(0)).unwrap();
        let Perturbation::Binary(s) = &v else {
            panic!()
        };
        assert_eq!(s.len(), 8);
        assert!(s.iter().all(|&x| x == 1 || x == -1));
        assert_eq!(v, sample_rademacher(8, &mut rng(0)).unwrap());
        assert!(sample_rademacher(0, &mut rng(0)).is_err());
        assert!(sample_gaussian(0, &mut rng(0)).is_err());
    }

    #[test]
    fn rademacher_mean_is_zero() {
        // 3-sigma bound 3/sqrt(n) with n = 1e6 entries.
        let v = sample_rademacher(1_000_000, &mut rng(1)).unwrap();
        let mean = v.to_f64().iter().sum::<f64>() / 1e6;
        assert!(mean.abs() < 0.005, "mean = {mean}");
    }

    #[test]
    fn gaussian_moments() {
        let v = sample_gaussian(1_000_000, &mut rng(2)).unwrap().to_f64();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.005, "mean = {mean}");
        assert!((var - 1.0).abs() < 0.01, "var = {var}");
        assert_eq!(
            sample_gaussian(5, &mut rng(3)).unwrap(),
            sample_gaussian(5, &mut rng(3)).unwrap()
        );
        assert!(sample_gaussian(1, &mut rng(4)).unwrap().get(0).is_finite());
    }

    #[test]
    fn encoding_examples() {
        let all_up = Perturbation::Binary(vec![1; 8]);
        assert_eq!(encode_bits(&all_up).unwrap(), vec![0xFF]);
        let all_down = Perturbation::Binary(vec![-1; 8]);
        assert_eq!(encode_bits(&all_down).unwrap(), vec![0x00]);
        let mixed = Perturbation::Binary(vec![1, -1, 1]);
        assert_eq!(encode_bits(&mixed).unwrap(), vec![0x05]);
        assert!(encode_bits(&Perturbation::Gaussian(vec![0.1])).is_err());
    }

    #[test]
    fn decode_rejects_non_canonical() {
        assert!(decode_bits(&[0x05], 3).is_ok());
        assert!(decode_bits(&[0x0D], 3).is_err());
        assert!(decode_bits(&[0x05, 0x00], 3).is_err());
        assert!(decode_bits(&[], 0).is_err());
    }

    #[test]
    fn masking_examples() {
        let v = Perturbation::Binary(vec![1, -1, 1, -1]);
        let p = Partition::contiguous(4, 2).unwrap();
        let m1 = mask_perturbation(&v, &p, 0).unwrap();
        let m2 = mask_perturbation(&v, &p, 1).unwrap();
        assert_eq!(m1.as_slice(), &[1.0, -1.0, 0.0, 0.0]);
        assert_eq!(m2.as_slice(), &[0.0, 0.0, 1.0, -1.0]);
        assert_eq!(dot(m1.as_slice(), m2.as_slice()), 0.0);
        assert_eq!(dot(m1.as_slice(), m1.as_slice()), 2.0);
        assert!(mask_perturbation(&v, &p, 2).is_err());
    }

    #[test]
    fn wire_bits() {
        assert_eq!(PerturbationKind::Binary.wire_bits(10), 10);
        assert_eq!(PerturbationKind::Gaussian.wire_bits(10), 640);
    }

    proptest! {
        #[test]
        fn bit_codec_round_trips(d in 1usize..=257, seed: u64) {
            let mut r = RngStream::at(seed, 0, Role::Test, 0);
            let v = sample_rademacher(d, &mut r).unwrap();
            let bytes = encode_bits(&v).unwrap();
            prop_assert_eq!(bytes.len(), d.div_ceil(8));
            prop_assert_eq!(decode_bits(&bytes, d).unwrap(), v);
        }

        #[test]
        fn masked_blocks_orthogonal_and_fill_d(d in 1usize..120, k_frac in 0.0f64..1.0, seed: u64) {
            let k = 1 + ((d - 1) as f64 * k_frac) as usize;
            let mut r = RngStream::at(seed, 0, Role::Test, 0);
            let p = Partition::shuffled(d, k, &mut r).unwrap();
            let v = sample_rademacher(d, &mut r).unwrap();
            let masked: Vec<ParamVector> =
                (0..k).map(|b| mask_perturbation(&v, &p, b).unwrap()).collect();
            let mut total = 0.0;
            for (a, ma) in masked.iter().enumerate() {
                let sq = dot(ma.as_slice(), ma.as_slice());
                prop_assert_eq!(sq, p.block_size(a) as f64);
                total += sq;
                for mb in masked.iter().skip(a + 1) {
                    prop_assert_eq!(dot(ma.as_slice(), mb.as_slice()), 0.0);
                }
            }
            prop_assert_eq!(total, d as f64);
        }
    }
}

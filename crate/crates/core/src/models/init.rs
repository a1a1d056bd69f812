//! Weight initialization for Poincare FC and convolutional layers.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::layers::{beta_ratio, ConvSpec, FcParams};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum InitScheme {
    /// `Z = 1/2 [I_m | O]`, which makes the layer the identity (m = n) or a
    /// zero-padding embedding (m < n).
    #[default]
    Identity,
    /// Entries i.i.d. `N(0, 1/(2mn))`.
    Normal,
}

impl InitScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            InitScheme::Identity => "identity",
            InitScheme::Normal => "normal",
        }
    }
}

impl std::str::FromStr for InitScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identity" => Ok(InitScheme::Identity),
            "normal" | "normal_baseline" => Ok(InitScheme::Normal),
            _ => Err(Error::Config(format!("unknown init scheme `{s}`"))),
        }
    }
}

pub fn identity_init(m: usize, n: usize) -> Result<FcParams> {
    if m == 0 || m > n {
        return Err(Error::contract(format!(
            "identity init needs 0 < m <= n, got m = {m}, n = {n}"
        )));
    }
    let mut z = vec![0.0; m * n];
    for i in 0..m {
        z[i * n + i] = 0.5;
    }
    FcParams::new(Tensor::new(z, vec![m, n])?, Tensor::zeros(&[n]))
}

pub fn normal_init<R: Rng + ?Sized>(m: usize, n: usize, rng: &mut R) -> Result<FcParams> {
    if m == 0 || n == 0 {
        return Err(Error::contract("normal init of an empty layer"));
    }
    let std = (1.0 / (2.0 * m as f64 * n as f64)).sqrt();
    let dist = Normal::new(0.0, std).map_err(|e| Error::contract(e.to_string()))?;
    let z = (0..m * n).map(|_| dist.sample(rng)).collect();
    FcParams::new(Tensor::new(z, vec![m, n])?, Tensor::zeros(&[n]))
}

/// Identity-style initialization of a convolution.
///
/// For `K = 1` this is [`identity_init`]. For larger kernels the fan-in
/// `K^2 C_in` exceeds `C_out`, so only the centre tap is connected, with
/// column norm `1/2` divided by the beta-concatenation shrink factor. Near
/// the origin the layer then passes the centre pixel through unchanged.
pub fn conv_identity_init(spec: &ConvSpec) -> Result<FcParams> {
    if spec.kernel == 1 {
        return identity_init(spec.c_in, spec.c_out);
    }
    if spec.c_in > spec.c_out {
        return Err(Error::contract(format!(
            "centre-tap identity needs C_in <= C_out, got {} > {}",
            spec.c_in, spec.c_out
        )));
    }
    let (m, n) = (spec.fan_in(), spec.c_out);
    let centre = (spec.kernel * spec.kernel) / 2;
    let scale = 0.5 / beta_ratio(m, spec.c_in);
    let mut z = vec![0.0; m * n];
    for j in 0..spec.c_in {
        z[(centre * spec.c_in + j) * n + j] = scale;
    }
    FcParams::new(Tensor::new(z, vec![m, n])?, Tensor::zeros(&[n]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_matrices() {
        let p = identity_init(3, 3).unwrap();
        let expect = [0.5, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.5];
        assert_eq!(p.z.data(), &expect);
        assert_eq!(p.r.data(), &[0.0; 3]);
        let p = identity_init(2, 4).unwrap();
        assert_eq!(p.z.data(), &[0.5, 0.0, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0]);
        assert!(matches!(identity_init(4, 2), Err(Error::Contract(_))));
    }

    #[test]
    fn normal_variance_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (m, n) = (250, 400);
        let p = normal_init(m, n, &mut rng).unwrap();
        let var = p.z.data().iter().map(|v| v * v).sum::<f64>() / (m * n) as f64;
        let target = 1.0 / (2.0 * (m * n) as f64);
        assert!((var / target - 1.0).abs() < 0.05, "{var} vs {target}");
        assert_eq!(p.r.max_abs(), 0.0);
        let a = normal_init(5, 6, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = normal_init(5, 6, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn centre_tap_layout() {
        let spec = ConvSpec::same(3, 1, 2, 3).unwrap();
        let p = conv_identity_init(&spec).unwrap();
        let k = 0.5 / beta_ratio(18, 2);
        let nonzero: Vec<(usize, f64)> =
            p.z.data()
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (i, *v))
                .collect();
        assert_eq!(nonzero, vec![(8 * 3, k), (9 * 3 + 1, k)]);
        let shrink = ConvSpec::same(3, 1, 4, 2).unwrap();
        assert!(conv_identity_init(&shrink).is_err());
    }
}

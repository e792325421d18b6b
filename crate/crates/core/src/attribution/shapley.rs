//! Shapley values of a coalition game: brute-force enumeration and KernelSHAP.
//!
//! A game is a value function over presence vectors (`present[i]` is true
//! when feature `i` keeps its real token). On a prompt, absent features are
//! replaced by the padding token and the value is the target label's logit.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{check_mask, AttributionError, AttributionVector, Method, SpanMask};
use crate::backend::{Backend, EncodedPrompt};

pub const DEFAULT_N_SAMPLES: usize = 350;

/// Largest mask the exact explainer will enumerate.
pub const MAX_ENUMERATION: usize = 12;

const MAX_KERNEL_ENUMERATION: usize = 20;
const RIDGE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplingPlan {
    /// Every coalition once.
    Enumerate,
    /// `n_samples` draws including the forced empty and full coalitions.
    Sample { n_samples: usize, seed: u64 },
}

impl Default for SamplingPlan {
    fn default() -> Self {
        SamplingPlan::Sample { n_samples: DEFAULT_N_SAMPLES, seed: 0 }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `(m-1) / (C(m,s) · s · (m-s))`; infinite for the empty and full coalitions.
pub fn shapley_kernel_weight(m: usize, s: usize) -> f64 {
    if s == 0 || s == m {
        return f64::INFINITY;
    }
    (m - 1) as f64 / (binomial(m, s) * s as f64 * (m - s) as f64)
}

fn presence(bits: u64, m: usize) -> Vec<bool> {
    (0..m).map(|i| bits >> i & 1 == 1).collect()
}

/// Shapley values by summing weighted marginal contributions over all `2^m`
/// coalitions.
pub fn exact_shapley_values<F, E>(m: usize, value: F) -> Result<Vec<f64>, E>
where
    F: Fn(&[bool]) -> Result<f64, E> + Sync,
    E: Send,
{
    assert!(m <= MAX_ENUMERATION, "exact enumeration limited to {MAX_ENUMERATION} features");
    let values: Vec<f64> = (0..1u64 << m).into_par_iter().map(|bits| value(&presence(bits, m))).collect::<Result<_, E>>()?;
    let mut fact = vec![1.0f64; m + 1];
    for i in 1..=m {
        fact[i] = fact[i - 1] * i as f64;
    }
    let mut phi = vec![0.0; m];
    for (i, phi_i) in phi.iter_mut().enumerate() {
        let bit = 1u64 << i;
        for bits in 0..1u64 << m {
            if bits & bit == 0 {
                let s = bits.count_ones() as usize;
                let w = fact[s] * fact[m - s - 1] / fact[m];
                *phi_i += w * (values[(bits | bit) as usize] - values[bits as usize]);
            }
        }
    }
    Ok(phi)
}

fn coalitions(m: usize, plan: SamplingPlan) -> Result<Vec<Vec<bool>>, AttributionError> {
    match plan {
        SamplingPlan::Enumerate => {
            if m > MAX_KERNEL_ENUMERATION {
                return Err(AttributionError::MaskTooLarge { m, max: MAX_KERNEL_ENUMERATION });
            }
            Ok((0..1u64 << m).map(|bits| presence(bits, m)).collect())
        }
        SamplingPlan::Sample { n_samples, seed } => {
            if n_samples < m + 2 {
                return Err(AttributionError::DegenerateDesign { n_samples, m });
            }
            let mut out = vec![vec![false; m], vec![true; m]];
            if m < 2 {
                return Ok(out);
            }
            let mut seen: HashSet<Vec<bool>> = out.iter().cloned().collect();
            // coalition sizes follow the kernel mass C(m,s)·w(s) ∝ 1/(s(m-s))
            let sizes = WeightedIndex::new((1..m).map(|s| 1.0 / (s * (m - s)) as f64)).expect("positive weights");
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 2..n_samples {
                let s = sizes.sample(&mut rng) + 1;
                let mut z = vec![false; m];
                for i in index::sample(&mut rng, m, s) {
                    z[i] = true;
                }
                if seen.insert(z.clone()) {
                    out.push(z);
                }
            }
            Ok(out)
        }
    }
}

/// KernelSHAP: weighted least squares on coalition values with the Shapley
/// kernel, constrained so the attributions sum to `v(full) - v(empty)`.
///
/// The constraint is eliminated by substituting the last coefficient:
/// `v(z) - v(∅) - z_m Δ = Σ_{i<m} φ_i (z_i - z_m)`.
pub fn kernel_shap_values<F>(m: usize, plan: SamplingPlan, value: F) -> Result<Vec<f64>, AttributionError>
where
    F: Fn(&[bool]) -> Result<f64, AttributionError> + Sync,
{
    if m == 0 {
        return Err(AttributionError::EmptyMask);
    }
    let zs = coalitions(m, plan)?;
    let values: Vec<f64> = zs.par_iter().map(|z| value(z)).collect::<Result<_, _>>()?;
    let v_empty = values[zs.iter().position(|z| z.iter().all(|&b| !b)).expect("empty coalition")];
    let v_full = values[zs.iter().position(|z| z.iter().all(|&b| b)).expect("full coalition")];
    let delta = v_full - v_empty;
    if m == 1 {
        return Ok(vec![delta]);
    }
    let p = m - 1;
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    for (z, &v) in zs.iter().zip(&values) {
        let s = z.iter().filter(|&&b| b).count();
        if s == 0 || s == m {
            continue;
        }
        let w = shapley_kernel_weight(m, s);
        let last = z[p] as u8 as f64;
        let x: Vec<f64> = (0..p).map(|i| z[i] as u8 as f64 - last).collect();
        let y = v - v_empty - last * delta;
        for i in 0..p {
            if x[i] == 0.0 {
                continue;
            }
            rhs[i] += w * x[i] * y;
            for j in 0..p {
                gram[(i, j)] += w * x[i] * x[j];
            }
        }
    }
    let beta = match gram.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => {
            log::warn!("singular KernelSHAP design ({} coalitions, {m} features); adding ridge {RIDGE}", zs.len());
            let ridged = gram + DMatrix::identity(p, p) * RIDGE;
            match ridged.clone().cholesky() {
                Some(c) => c.solve(&rhs),
                None => ridged.pseudo_inverse(1e-12).map_err(|e| AttributionError::InvalidMask(e.to_string()))? * rhs,
            }
        }
    };
    let mut phi: Vec<f64> = beta.iter().copied().collect();
    phi.push(delta - phi.iter().sum::<f64>());
    Ok(phi)
}

fn masked_game<'a>(
    backend: &'a dyn Backend,
    prompt: &'a EncodedPrompt,
    mask: &'a SpanMask,
    target: &'a str,
) -> impl Fn(&[bool]) -> Result<f64, AttributionError> + Sync + 'a {
    move |present: &[bool]| {
        let absent: Vec<usize> =
            mask.positions().iter().zip(present).filter(|(_, &keep)| !keep).map(|(&p, _)| p).collect();
        Ok(backend.masked_score(prompt, &absent, target)?)
    }
}

pub fn kernel_shap(
    backend: &dyn Backend,
    prompt: &EncodedPrompt,
    mask: &SpanMask,
    target: &str,
    plan: SamplingPlan,
) -> Result<AttributionVector, AttributionError> {
    check_mask(prompt, mask)?;
    let phi = kernel_shap_values(mask.len(), plan, masked_game(backend, prompt, mask, target))?;
    Ok(AttributionVector::from_masked(&phi, mask, target, Method::KernelShap))
}

pub fn exact_shapley(
    backend: &dyn Backend,
    prompt: &EncodedPrompt,
    mask: &SpanMask,
    target: &str,
) -> Result<AttributionVector, AttributionError> {
    check_mask(prompt, mask)?;
    if mask.len() > MAX_ENUMERATION {
        return Err(AttributionError::MaskTooLarge { m: mask.len(), max: MAX_ENUMERATION });
    }
    let phi = exact_shapley_values(mask.len(), masked_game(backend, prompt, mask, target))?;
    Ok(AttributionVector::from_masked(&phi, mask, target, Method::ExactShapley))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn additive(w: &[f64]) -> impl Fn(&[bool]) -> Result<f64, AttributionError> + Sync + '_ {
        move |z| Ok(w.iter().zip(z).filter(|(_, &p)| p).map(|(w, _)| w).sum::<f64>() + 0.25)
    }

    #[test]
    fn additive_game_gives_marginals() {
        let w = [0.5, -1.25, 2.0];
        let exact = exact_shapley_values(3, additive(&w)).unwrap();
        let kernel = kernel_shap_values(3, SamplingPlan::Enumerate, additive(&w)).unwrap();
        for i in 0..3 {
            assert!((exact[i] - w[i]).abs() < 1e-12);
            assert!((kernel[i] - w[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_players_share_equally() {
        // value depends on players 0 and 1 only through their count
        let game = |z: &[bool]| -> Result<f64, AttributionError> {
            let pair = z[0] as u8 + z[1] as u8;
            Ok((pair as f64).powi(2) + if z[2] { 0.7 * pair as f64 } else { 0.0 })
        };
        let phi = exact_shapley_values(3, game).unwrap();
        assert!((phi[0] - phi[1]).abs() < 1e-12);
    }

    #[test]
    fn too_few_samples_is_degenerate() {
        let err = kernel_shap_values(6, SamplingPlan::Sample { n_samples: 3, seed: 0 }, additive(&[1.0; 6])).unwrap_err();
        assert!(matches!(err, AttributionError::DegenerateDesign { n_samples: 3, m: 6 }));
    }

    #[test]
    fn kernel_weight_values() {
        assert_eq!(shapley_kernel_weight(4, 1), 3.0 / (4.0 * 3.0));
        assert_eq!(shapley_kernel_weight(4, 2), 3.0 / (6.0 * 4.0));
        assert!(shapley_kernel_weight(4, 0).is_infinite());
    }

    #[test]
    fn sampled_coalitions_force_empty_and_full() {
        let zs = coalitions(5, SamplingPlan::Sample { n_samples: 10, seed: 1 }).unwrap();
        assert!(zs[0].iter().all(|b| !b));
        assert!(zs[1].iter().all(|&b| b));
    }

    proptest! {
        #[test]
        fn sampled_kernel_shap_is_efficient(w in prop::collection::vec(-3.0f64..3.0, 2..8), seed in 0u64..1000) {
            let m = w.len();
            let game = |z: &[bool]| -> Result<f64, AttributionError> {
                let s: f64 = w.iter().zip(z).filter(|(_, &p)| p).map(|(w, _)| w).sum();
                Ok(s.tanh())
            };
            let phi = kernel_shap_values(m, SamplingPlan::Sample { n_samples: 3 * m + 2, seed }, game).unwrap();
            let total: f64 = phi.iter().sum();
            let delta = w.iter().sum::<f64>().tanh();
            prop_assert!((total - delta).abs() < 1e-9);
        }

        #[test]
        fn exact_shapley_is_efficient(w in prop::collection::vec(-3.0f64..3.0, 1..7)) {
            let m = w.len();
            let game = |z: &[bool]| -> Result<f64, AttributionError> {
                let s: f64 = w.iter().zip(z).filter(|(_, &p)| p).map(|(w, _)| w * w).sum();
                Ok(s.sqrt())
            };
            let phi = exact_shapley_values(m, game).unwrap();
            let full = w.iter().map(|w| w * w).sum::<f64>().sqrt();
            prop_assert!((phi.iter().sum::<f64>() - full).abs() < 1e-9);
        }
    }
}

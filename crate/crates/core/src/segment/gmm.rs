//! Two-component 1-D Gaussian mixture fitted by EM, used to initialize the
//! HMM emissions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EmissionParams, SegmentationError};
use crate::num::Float;

pub const VARIANCE_FLOOR: f64 = 1e-6;
const KMEANS_MAX_ITER: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GmmOptions {
    pub seed: u64,
    pub max_iter: usize,
    /// Convergence threshold on the change in mean per-sample log-likelihood.
    pub tol: f64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        GmmOptions {
            seed: 0,
            max_iter: 200,
            tol: 1e-6,
        }
    }
}

/// Fitted mixture before relabeling into E/X.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mixture<F> {
    pub weights: [F; 2],
    pub means: [F; 2],
    pub variances: [F; 2],
    pub log_likelihood: F,
    pub iterations: usize,
}

fn log_normal_pdf<F: Float>(x: F, mean: F, var: F) -> F {
    let two_pi = F::lit(std::f64::consts::TAU);
    let d = x - mean;
    -F::lit(0.5) * ((two_pi * var).ln() + d * d / var)
}

fn log_add_exp<F: Float>(a: F, b: F) -> F {
    let m = if a > b { a } else { b };
    if m == F::neg_infinity() {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// k-means++ seeding followed by Lloyd iterations; returns the two centers.
fn kmeans_init<F: Float>(z: &[F], rng: &mut ChaCha8Rng) -> [F; 2] {
    let n = z.len();
    let first = z[rng.random_range(0..n)];
    let d2: Vec<F> = z.iter().map(|&x| (x - first) * (x - first)).collect();
    let total: F = d2.iter().copied().sum();
    let target = F::lit(rng.random::<f64>()) * total;
    let mut acc = F::zero();
    let mut second = z[n - 1];
    for (i, &d) in d2.iter().enumerate() {
        acc = acc + d;
        if acc > target && d > F::zero() {
            second = z[i];
            break;
        }
    }
    if second == first {
        // Only reachable through round-off in the cumulative draw.
        second = *z.iter().find(|&&x| x != first).unwrap_or(&first);
    }

    let mut centers = [first, second];
    let mut labels = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (label, &x) in labels.iter_mut().zip(z) {
            let l = usize::from((x - centers[1]).abs() < (x - centers[0]).abs());
            if *label != l {
                *label = l;
                changed = true;
            }
        }
        let mut sums = [F::zero(); 2];
        let mut counts = [0usize; 2];
        for (&l, &x) in labels.iter().zip(z) {
            sums[l] = sums[l] + x;
            counts[l] += 1;
        }
        for c in 0..2 {
            if counts[c] > 0 {
                centers[c] = sums[c] / F::from_usize_lossy(counts[c]);
            }
        }
        if !changed {
            break;
        }
    }
    centers
}

fn m_step<F: Float>(
    z: &[F],
    resp: &[[F; 2]],
    weights: &mut [F; 2],
    means: &mut [F; 2],
    variances: &mut [F; 2],
) {
    let floor = F::lit(VARIANCE_FLOOR);
    let nf = F::from_usize_lossy(z.len());
    for c in 0..2 {
        let nk: F = resp.iter().map(|r| r[c]).sum();
        if nk <= F::zero() {
            // Empty component keeps its parameters with negligible weight.
            weights[c] = F::epsilon();
            continue;
        }
        weights[c] = nk / nf;
        let mu = resp.iter().zip(z).map(|(r, &x)| r[c] * x).sum::<F>() / nk;
        let var = resp
            .iter()
            .zip(z)
            .map(|(r, &x)| r[c] * (x - mu) * (x - mu))
            .sum::<F>()
            / nk;
        means[c] = mu;
        variances[c] = if var > floor { var } else { floor };
    }
}

/// Fits a 2-component diagonal mixture. Errors if every observation is equal.
pub fn fit_two_component<F: Float>(
    z: &[F],
    opts: &GmmOptions,
) -> Result<Mixture<F>, SegmentationError> {
    if z.len() < 2 {
        return Err(SegmentationError::TooShort { rows: z.len() });
    }
    if z.iter().all(|&x| x == z[0]) {
        return Err(SegmentationError::DegenerateSeries);
    }
    let nf = F::from_usize_lossy(z.len());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let centers = kmeans_init(z, &mut rng);

    // Hard responsibilities from the k-means partition.
    let mut resp: Vec<[F; 2]> = z
        .iter()
        .map(|&x| {
            if (x - centers[1]).abs() < (x - centers[0]).abs() {
                [F::zero(), F::one()]
            } else {
                [F::one(), F::zero()]
            }
        })
        .collect();

    let mut weights = [F::lit(0.5); 2];
    let mut means = centers;
    let mut variances = [F::one(); 2];
    m_step(z, &resp, &mut weights, &mut means, &mut variances);

    let mut prev_ll = F::neg_infinity();
    let mut ll = F::neg_infinity();
    let mut iterations = 0;
    for iter in 0..opts.max_iter {
        let mut total = F::zero();
        for (r, &x) in resp.iter_mut().zip(z) {
            let l0 = weights[0].ln() + log_normal_pdf(x, means[0], variances[0]);
            let l1 = weights[1].ln() + log_normal_pdf(x, means[1], variances[1]);
            let norm = log_add_exp(l0, l1);
            *r = [(l0 - norm).exp(), (l1 - norm).exp()];
            total = total + norm;
        }
        ll = total / nf;
        m_step(z, &resp, &mut weights, &mut means, &mut variances);
        iterations = iter + 1;
        if (ll - prev_ll).abs() < F::lit(opts.tol) {
            break;
        }
        prev_ll = ll;
    }

    Ok(Mixture {
        weights,
        means,
        variances,
        log_likelihood: ll,
        iterations,
    })
}

/// Fits the mixture and relabels so that E is the larger-mean component.
/// On exactly equal means the first component is E.
pub fn init_emissions<F: Float>(
    z: &[F],
    opts: &GmmOptions,
) -> Result<EmissionParams<F>, SegmentationError> {
    let m = fit_two_component(z, opts)?;
    let (e, x) = if m.means[1] > m.means[0] { (1, 0) } else { (0, 1) };
    Ok(EmissionParams {
        mean_explore: m.means[e],
        mean_exploit: m.means[x],
        var_explore: m.variances[e],
        var_exploit: m.variances[x],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn separated_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let hi = Normal::new(3.0, 0.5).unwrap();
        let lo = Normal::new(-3.0, 0.5).unwrap();
        let mut z: Vec<f64> = (0..50).map(|_| hi.sample(&mut rng)).collect();
        let upper_mean = z.iter().sum::<f64>() / 50.0;
        let lower: Vec<f64> = (0..50).map(|_| lo.sample(&mut rng)).collect();
        let lower_mean = lower.iter().sum::<f64>() / 50.0;
        z.extend(lower);
        let em = init_emissions(&z, &GmmOptions::default()).unwrap();
        assert!((em.mean_explore - 3.0).abs() < 0.5);
        assert!((em.mean_exploit + 3.0).abs() < 0.5);
        // Well separated: EM lands on the per-component sample means.
        assert!((em.mean_explore - upper_mean).abs() < 1e-6);
        assert!((em.mean_exploit - lower_mean).abs() < 1e-6);
    }

    #[test]
    fn two_point_values() {
        let z: Vec<f64> = (0..20).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let em = init_emissions(&z, &GmmOptions::default()).unwrap();
        assert!((em.mean_explore - 1.0).abs() < 1e-3);
        assert!((em.mean_exploit + 1.0).abs() < 1e-3);
        assert_eq!(em.var_explore, VARIANCE_FLOOR);
    }

    #[test]
    fn identical_values_are_degenerate() {
        assert_eq!(
            init_emissions(&[0.3f64; 8], &GmmOptions::default()),
            Err(SegmentationError::DegenerateSeries)
        );
    }

    #[test]
    fn seeded_fit_is_reproducible() {
        let z: Vec<f64> = (0..40).map(|i| ((i * 37) % 11) as f64 / 3.0).collect();
        let a = fit_two_component(&z, &GmmOptions { seed: 5, ..Default::default() }).unwrap();
        let b = fit_two_component(&z, &GmmOptions { seed: 5, ..Default::default() }).unwrap();
        assert_eq!(a, b);
    }
}

use super::Real;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// One reparameterized draw `a = tanh(mean + std * noise)` together with
/// what the backward pass needs.
#[derive(Clone, Debug)]
pub struct SquashedSample<T> {
    pub action: Vec<T>,
    pub log_prob: T,
    pre_tanh: Vec<T>,
    std: Vec<T>,
    noise: Vec<T>,
    /// Whether the raw log-std was inside the clamp range (gradient passes).
    unclamped: Vec<bool>,
}

fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// `log(1 - tanh(u)^2)`, stable for large `|u|`.
fn log_one_minus_tanh_sq<T: Real>(u: T) -> T {
    T::of(2.0) * (T::of(std::f64::consts::LN_2) - u - softplus(T::of(-2.0) * u))
}

pub fn squashed_gaussian_sample<T: Real>(
    mean: &[T],
    raw_log_std: &[T],
    noise: &[T],
) -> SquashedSample<T> {
    assert_eq!(mean.len(), raw_log_std.len());
    assert_eq!(mean.len(), noise.len());
    let (lo, hi) = (T::of(LOG_STD_MIN), T::of(LOG_STD_MAX));
    let d = mean.len();
    let mut out = SquashedSample {
        action: Vec::with_capacity(d),
        log_prob: T::zero(),
        pre_tanh: Vec::with_capacity(d),
        std: Vec::with_capacity(d),
        noise: noise.to_vec(),
        unclamped: Vec::with_capacity(d),
    };
    let mut log_prob = T::zero();
    for j in 0..d {
        let raw = raw_log_std[j];
        out.unclamped.push(raw >= lo && raw <= hi);
        let ls = raw.max(lo).min(hi);
        let std = ls.exp();
        let u = mean[j] + std * noise[j];
        log_prob = log_prob
            - T::of(0.5) * noise[j] * noise[j]
            - ls
            - T::of(HALF_LN_2PI)
            - log_one_minus_tanh_sq(u);
        out.pre_tanh.push(u);
        out.std.push(std);
        out.action.push(u.tanh());
    }
    out.log_prob = log_prob;
    out
}

/// Pulls `d_action` (gradient w.r.t. the squashed action) and `d_log_prob`
/// back to the raw head outputs. Returns `(d_mean, d_raw_log_std)`.
pub fn squashed_gaussian_backward<T: Real>(
    s: &SquashedSample<T>,
    d_action: &[T],
    d_log_prob: T,
) -> (Vec<T>, Vec<T>) {
    let d = s.action.len();
    let mut d_mean = Vec::with_capacity(d);
    let mut d_ls = Vec::with_capacity(d);
    let two = T::of(2.0);
    for j in 0..d {
        let a = s.action[j];
        // d/du of [action, log_prob]
        let du = d_action[j] * (T::one() - a * a) + d_log_prob * two * s.pre_tanh[j].tanh();
        d_mean.push(du);
        if s.unclamped[j] {
            d_ls.push(du * s.std[j] * s.noise[j] - d_log_prob);
        } else {
            d_ls.push(T::zero());
        }
    }
    (d_mean, d_ls)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    #[test]
    fn standard_draw_at_origin() {
        let s = squashed_gaussian_sample(&[0.0f64], &[0.0], &[0.0]);
        assert_eq!(s.action, vec![0.0]);
        let expected = (1.0 / (2.0 * std::f64::consts::PI).sqrt()).ln();
        assert!((s.log_prob - expected).abs() < 1e-12);
        assert!((s.log_prob + 0.918_938_5).abs() < 1e-6);
    }

    #[test]
    fn vanishing_std_gives_tanh_mean() {
        let s = squashed_gaussian_sample(&[0.3f64, -1.2], &[-20.0, -20.0], &[1.7, -0.4]);
        assert!((s.action[0] - 0.3f64.tanh()).abs() < 1e-8);
        assert!((s.action[1] - (-1.2f64).tanh()).abs() < 1e-8);
    }

    #[test]
    fn log_std_is_clamped() {
        let a = squashed_gaussian_sample(&[0.1f64], &[9.0], &[0.5]);
        let b = squashed_gaussian_sample(&[0.1f64], &[LOG_STD_MAX], &[0.5]);
        assert_eq!(a.action, b.action);
        assert_eq!(a.log_prob, b.log_prob);
        let (_, dls) = squashed_gaussian_backward(&a, &[1.0], 1.0);
        assert_eq!(dls, vec![0.0]);
    }

    #[test]
    fn density_integrates_to_one() {
        // Monte-Carlo over a uniform proposal on (-1, 1): E[p(a) / (1/2)] = 1.
        // p(a) evaluated through the sampler by inverting a = tanh(mean + std*eps).
        let (mean, log_std) = (0.4f64, -0.3f64);
        let std = log_std.exp();
        let mut rng = Stream::from_seed(42);
        let n = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let a: f64 = 2.0 * rng.uniform() - 1.0;
            let a = a.clamp(-1.0 + 1e-12, 1.0 - 1e-12);
            let eps = (a.atanh() - mean) / std;
            let s = squashed_gaussian_sample(&[mean], &[log_std], &[eps]);
            acc += s.log_prob.exp() * 2.0;
        }
        let integral = acc / n as f64;
        assert!((integral - 1.0).abs() < 0.01, "integral {integral}");
    }

    #[test]
    fn backward_matches_central_differences() {
        let mut rng = Stream::from_seed(8);
        for _ in 0..50 {
            let d = 3;
            let mean: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            let ls: Vec<f64> = (0..d).map(|_| rng.normal() * 0.5).collect();
            let eps: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            let w: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            let wl = rng.normal();
            let f = |m: &[f64], l: &[f64]| {
                let s = squashed_gaussian_sample(m, l, &eps);
                s.action.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + wl * s.log_prob
            };
            let s = squashed_gaussian_sample(&mean, &ls, &eps);
            let (dm, dl) = squashed_gaussian_backward(&s, &w, wl);
            let h = 1e-6;
            for j in 0..d {
                let mut p = mean.clone();
                p[j] += h;
                let mut m = mean.clone();
                m[j] -= h;
                let fd = (f(&p, &ls) - f(&m, &ls)) / (2.0 * h);
                assert!((fd - dm[j]).abs() < 1e-6 * (1.0 + fd.abs()));
                let mut p = ls.clone();
                p[j] += h;
                let mut m = ls.clone();
                m[j] -= h;
                let fd = (f(&mean, &p) - f(&mean, &m)) / (2.0 * h);
                assert!((fd - dl[j]).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn no_nan_for_extreme_inputs() {
        let mut rng = Stream::from_seed(77);
        for _ in 0..100_000 {
            let m = (rng.uniform() - 0.5) * 200.0;
            let l = (rng.uniform() - 0.5) * 100.0;
            let e = rng.normal() * 10.0;
            let s = squashed_gaussian_sample(&[m as f32], &[l as f32], &[e as f32]);
            assert!(s.action[0].is_finite() && s.log_prob.is_finite());
            assert!(s.action[0].abs() <= 1.0);
            let (a, b) = squashed_gaussian_backward(&s, &[1.0], 1.0);
            assert!(a[0].is_finite() && b[0].is_finite());
        }
    }
}

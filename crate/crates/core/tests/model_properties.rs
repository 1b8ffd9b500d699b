use seqrmc::model::{gbm_transition, GbmParams, ModelSpec, Simulator, State, SvDiffusion, SvParams};
use seqrmc::rng::{stream, Purpose};
use statrs::distribution::{ContinuousCDF, Normal};

/// Kolmogorov-Smirnov statistic of `xs` against the standard normal.
fn ks_normal(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let phi = Normal::standard();
    xs.iter()
        .enumerate()
        .map(|(i, x)| {
            let f = phi.cdf(*x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn ks_two_sample(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

fn gbm(vol: f64) -> GbmParams {
    GbmParams { spot: vec![40.0], rate: 0.06, vol }
}

#[test]
fn gbm_log_returns_are_normal() {
    let p = gbm(0.2);
    let dt = 0.04;
    let n = 5000;
    let z: Vec<f64> = (0..n)
        .map(|i| {
            let mut rng = stream(3, Purpose::Test, 0, i);
            let x = gbm_transition(&State(vec![40.0]), dt, &p, &mut rng).unwrap();
            ((x.0[0] / 40.0).ln() - (p.rate - 0.5 * p.vol * p.vol) * dt) / (p.vol * dt.sqrt())
        })
        .collect();
    let d = ks_normal(z);
    // 1% critical value
    assert!(d < 1.63 / (n as f64).sqrt(), "KS statistic {d}");
}

#[test]
fn gbm_chapman_kolmogorov() {
    let initial = State(vec![40.0]);
    let fine = Simulator::new(ModelSpec::Gbm(gbm(0.3)), 0.04, &initial).unwrap();
    let coarse = Simulator::new(ModelSpec::Gbm(gbm(0.3)), 0.08, &initial).unwrap();
    let n = 4000;
    let two: Vec<f64> = (0..n)
        .map(|i| {
            let mut rng = stream(5, Purpose::Test, 1, i);
            let mut x = vec![40.0];
            fine.advance(&mut x, &mut rng);
            fine.advance(&mut x, &mut rng);
            x[0]
        })
        .collect();
    let one: Vec<f64> = (0..n)
        .map(|i| {
            let mut rng = stream(5, Purpose::Test, 2, i);
            let mut x = vec![40.0];
            coarse.advance(&mut x, &mut rng);
            x[0]
        })
        .collect();
    let d = ks_two_sample(two, one);
    let crit = 1.63 * (2.0 / n as f64).sqrt();
    assert!(d < crit, "two-sample KS {d} >= {crit}");
    assert_eq!(fine.transitions(), 2 * n);
}

#[test]
fn gbm_martingale_after_discounting() {
    let p = GbmParams { spot: vec![1.0; 3], rate: 0.05, vol: 0.2 };
    let sim = Simulator::new(ModelSpec::Gbm(p), 0.25, &State(vec![1.0; 3])).unwrap();
    let n = 20000;
    let mut sum = [0.0; 3];
    let mut sq = [0.0; 3];
    for i in 0..n {
        let mut rng = stream(7, Purpose::Test, 0, i);
        let mut x = vec![1.0; 3];
        for _ in 0..4 {
            sim.advance(&mut x, &mut rng);
        }
        for j in 0..3 {
            let v = x[j] * (-0.05f64).exp();
            sum[j] += v;
            sq[j] += v * v;
        }
    }
    for j in 0..3 {
        let m = sum[j] / n as f64;
        let se = ((sq[j] / n as f64 - m * m) / n as f64).sqrt();
        assert!((m - 1.0).abs() < 4.0 * se, "coordinate {j}: mean {m} se {se}");
    }
}

fn sv(volvol: f64, diffusion: SvDiffusion) -> SvParams {
    SvParams { rate: 0.055, meanrev: 3.3, level: -0.583, volvol, corr: -0.055, euler_step: 0.001, diffusion }
}

#[test]
fn sv_log_volatility_reverts_to_level() {
    let p = sv(0.5, SvDiffusion::Multiplicative);
    let y0 = p.level + 1.0;
    let horizon = 0.5;
    let sim = Simulator::new(ModelSpec::Sv(p.clone()), horizon, &State(vec![20.0, y0])).unwrap();
    let n = 4000;
    let ys: Vec<f64> = (0..n)
        .map(|i| {
            let mut rng = stream(11, Purpose::Test, 0, i);
            let mut x = vec![20.0, y0];
            sim.advance(&mut x, &mut rng);
            x[1]
        })
        .collect();
    let m = ys.iter().sum::<f64>() / n as f64;
    let sd = (ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    // Euler mean of the OU component: level + (1 - k h)^steps (y0 - level).
    let steps = (horizon / p.euler_step).round() as i32;
    let expect = p.level + (1.0 - p.meanrev * p.euler_step).powi(steps);
    assert!((m - expect).abs() < 4.0 * sd / (n as f64).sqrt(), "mean {m} vs {expect}");
    // Stationary sd is volvol / sqrt(2 k).
    let stationary = p.volvol / (2.0 * p.meanrev).sqrt();
    assert!((sd - stationary).abs() < 0.1 * stationary, "sd {sd} vs {stationary}");
}

#[test]
fn sv_discounted_price_is_a_martingale() {
    for diffusion in [SvDiffusion::Multiplicative, SvDiffusion::Additive] {
        let p = sv(0.5, diffusion);
        let dt = 0.1;
        let sim = Simulator::new(ModelSpec::Sv(p.clone()), dt, &State(vec![20.0, -0.7])).unwrap();
        let n = 20000;
        let vals: Vec<f64> = (0..n)
            .map(|i| {
                let mut rng = stream(13, Purpose::Test, 0, i);
                let mut x = vec![20.0, -0.7];
                sim.advance(&mut x, &mut rng);
                x[0] * (-p.rate * dt).exp()
            })
            .collect();
        let m = vals.iter().sum::<f64>() / n as f64;
        let se = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64 / n as f64).sqrt();
        assert!((m - 20.0).abs() < 4.0 * se + 1e-3, "{diffusion:?}: mean {m} se {se}");
        assert!(vals.iter().all(|v| *v > 0.0));
    }
}

#[test]
fn simulator_rejects_bad_inputs() {
    let initial = State(vec![40.0]);
    assert!(Simulator::new(ModelSpec::Gbm(gbm(0.2)), 0.0, &initial).is_err());
    assert!(Simulator::new(ModelSpec::Gbm(gbm(0.2)), 0.04, &State(vec![40.0, 1.0])).is_err());
    // Interval not a multiple of the Euler step.
    assert!(Simulator::new(ModelSpec::Sv(sv(0.5, SvDiffusion::Multiplicative)), 0.0015, &State(vec![20.0, -0.7])).is_err());
    let mut rng = stream(1, Purpose::Test, 0, 0);
    assert!(gbm_transition(&State(vec![-1.0]), 0.04, &gbm(0.2), &mut rng).is_err());
}

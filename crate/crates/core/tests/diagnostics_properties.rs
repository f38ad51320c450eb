use fairquant::dataset::{GroupedDataset, Split};
use fairquant::diagnostics::{
    diagnose, diagnostics_sweep, group_gradient_norm, lambda_max, power_iteration, PowerIterationConfig,
};
use fairquant::nn::{gradient, hvp_exact, HvpMethod, Objective};
use fairquant::quant::{quantize, PrecisionSpec};
use fairquant::{ClassWeights, Exec, Network, Rng, Tensor};
use proptest::prelude::*;

/// `½ θᵀAθ` with `A = Q diag(λ) Qᵀ` assembled from an explicit spectrum.
struct Quadratic {
    a: Vec<Vec<f64>>,
}

impl Quadratic {
    /// Random orthogonal basis from Gram–Schmidt over Gaussian columns.
    fn with_spectrum(spectrum: &[f64], rng: &mut Rng) -> Self {
        let n = spectrum.len();
        let mut q: Vec<Vec<f64>> = Vec::with_capacity(n);
        while q.len() < n {
            let mut v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
            for _ in 0..2 {
                for b in &q {
                    let p = dot(&v, b);
                    v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
                }
            }
            let nv = dot(&v, &v).sqrt();
            if nv > 1e-8 {
                q.push(v.into_iter().map(|x| x / nv).collect());
            }
        }
        let a = (0..n)
            .map(|i| (0..n).map(|j| (0..n).map(|k| spectrum[k] * q[k][i] * q[k][j]).sum()).collect())
            .collect();
        Self { a }
    }
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.a.len()
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        self.a.iter().map(|row| dot(row, theta)).collect()
    }

    fn hvp(&self, _theta: &[f64], v: &[f64]) -> fairquant::Result<Vec<f64>> {
        Ok(self.gradient(v))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_setup(seed: u64) -> (Network, GroupedDataset) {
    let mut rng = Rng::new(seed);
    let d = 1 + rng.below(4);
    let c = 2 + rng.below(3);
    let mut net = Network::init(&[d, 2 + rng.below(6), c], &mut rng).unwrap();
    let mut flat = net.flatten();
    flat.values.iter_mut().for_each(|v| *v = 0.8 * rng.normal());
    net = Network::from_flat(&flat).unwrap();
    let m = 2 + rng.below(40);
    let x = Tensor::new(vec![m, d], (0..m * d).map(|_| rng.normal()).collect()).unwrap();
    let y: Vec<usize> = (0..m).map(|_| rng.below(c)).collect();
    let groups: Vec<usize> = (0..m).map(|i| if i < c { i } else { rng.below(c) }).collect();
    let ds = GroupedDataset::new(x, y, groups, (0..c).map(|g| format!("g{g}")).collect(), c, Split::Test).unwrap();
    (net, ds)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn power_iteration_finds_the_dominant_eigenvalue(seed in any::<u64>(), n in 2usize..=50) {
        let mut rng = Rng::new(seed);
        let mut spectrum: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let runner_up = spectrum[1..].iter().fold(0.0_f64, |m, l| m.max(l.abs()));
        let sign = if rng.below(2) == 0 { 1.0 } else { -1.0 };
        spectrum[0] = sign * runner_up.max(0.1) * rng.uniform(1.1, 3.0);
        let q = Quadratic::with_spectrum(&spectrum, &mut rng);
        let cfg = PowerIterationConfig { max_iters: 10_000, tol: 1e-6, seed, hvp: HvpMethod::Exact };
        let r = power_iteration(&q, &vec![0.0; n], &cfg, "prop").unwrap();
        prop_assert!(r.converged);
        prop_assert!((r.lambda - spectrum[0]).abs() <= 1e-2 * spectrum[0].abs(), "{} vs {}", r.lambda, spectrum[0]);
    }

    #[test]
    fn reported_residual_is_recomputable(seed in any::<u64>()) {
        let (net, ds) = random_setup(seed);
        let cfg = PowerIterationConfig { max_iters: 50, ..PowerIterationConfig::default() };
        let r = lambda_max(&net, &ds, 0, &cfg).unwrap();
        prop_assume!(!r.degenerate);
        let view = ds.group_view(0).unwrap();
        let hv = hvp_exact(Exec::Sequential, &net, view.features(), view.labels(), &ClassWeights::Uniform, &r.vector).unwrap();
        prop_assert!((dot(&r.vector, &hv) - r.lambda).abs() <= 1e-10 * (1.0 + r.lambda.abs()));
        let res: Vec<f64> = hv.iter().zip(&r.vector).map(|(h, v)| h - r.lambda * v).collect();
        prop_assert!((dot(&res, &res).sqrt() - r.residual).abs() <= 1e-10 * (1.0 + r.residual));
        prop_assert!((dot(&r.vector, &r.vector) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn gradient_of_the_union_is_the_size_weighted_mix(seed in any::<u64>()) {
        let (net, ds) = random_setup(seed);
        let m = ds.len();
        let cut = 1 + (seed as usize) % (m - 1);
        let x = ds.features();
        let rows = |r: std::ops::Range<usize>| {
            Tensor::new(vec![r.len(), x.shape()[1]], x.data()[r.start * x.shape()[1]..r.end * x.shape()[1]].to_vec()).unwrap()
        };
        let w = ClassWeights::Uniform;
        let whole = gradient(&net, x, ds.labels(), &w).unwrap().values;
        let a = gradient(&net, &rows(0..cut), &ds.labels()[..cut], &w).unwrap().values;
        let b = gradient(&net, &rows(cut..m), &ds.labels()[cut..], &w).unwrap().values;
        let (fa, fb) = (cut as f64 / m as f64, (m - cut) as f64 / m as f64);
        for i in 0..whole.len() {
            prop_assert!((whole[i] - (fa * a[i] + fb * b[i])).abs() <= 1e-10 * (1.0 + whole[i].abs()));
        }
    }

    #[test]
    fn diagnostics_leave_the_model_untouched(seed in any::<u64>()) {
        let (net, ds) = random_setup(seed);
        let before = net.clone();
        let cfg = PowerIterationConfig { max_iters: 20, ..PowerIterationConfig::default() };
        let r = diagnose(&net, &ds, "fp32", Some(seed), &cfg, Exec::Sequential).unwrap();
        prop_assert_eq!(&net, &before);
        prop_assert_eq!(r.failed_cells(), 0);
        let norms = group_gradient_norm(&net, &ds).unwrap();
        for (g, n) in r.groups.iter().zip(norms) {
            prop_assert_eq!(g.gradient_norm, n);
        }
        let back = fairquant::diagnostics::DiagnosticsReport::from_json(&r.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, r);
    }

    #[test]
    fn sweep_cells_match_single_model_diagnostics(seed in any::<u64>(), bits in 2u8..=8) {
        let (net, ds) = random_setup(seed);
        let cfg = PowerIterationConfig { max_iters: 20, ..PowerIterationConfig::default() };
        let models = vec![
            quantize(&net, PrecisionSpec::Float32).unwrap(),
            quantize(&net, PrecisionSpec::Int(bits)).unwrap(),
        ];
        let seq = diagnostics_sweep(&net, &models, &ds, Some(seed), &cfg, Exec::Sequential).unwrap();
        let par = diagnostics_sweep(&net, &models, &ds, Some(seed), &cfg, Exec::Parallel).unwrap();
        prop_assert_eq!(&seq, &par);
        for (qm, rep) in models.iter().zip(&seq) {
            let single = diagnose(&qm.to_network(), &ds, &qm.precision.label(), Some(seed), &cfg, Exec::Sequential).unwrap();
            prop_assert_eq!(&single, rep);
        }
    }
}

#[test]
fn diagonal_quadratic_hand_example() {
    let q = Quadratic { a: vec![vec![3.0, 0.0], vec![0.0, 1.0]] };
    let cfg = PowerIterationConfig { max_iters: 1000, tol: 1e-10, seed: 0, hvp: HvpMethod::Exact };
    let r = power_iteration(&q, &[0.0, 0.0], &cfg, "hand").unwrap();
    assert!((r.lambda - 3.0).abs() < 1e-9);
    assert!(r.vector[0].abs() > 0.999_999);
}

#[test]
fn zero_hessian_is_reported_as_degenerate() {
    let q = Quadratic { a: vec![vec![0.0; 3]; 3] };
    let r = power_iteration(&q, &[0.0; 3], &PowerIterationConfig::default(), "zero").unwrap();
    assert!(r.degenerate);
    assert_eq!(r.lambda, 0.0);
    assert_eq!(r.iterations, 3);
}

#[test]
fn invalid_settings_are_rejected() {
    let q = Quadratic { a: vec![vec![1.0]] };
    let bad = PowerIterationConfig { max_iters: 0, ..PowerIterationConfig::default() };
    assert!(power_iteration(&q, &[0.0], &bad, "x").is_err());
    let bad = PowerIterationConfig { tol: f64::NAN, ..PowerIterationConfig::default() };
    assert!(power_iteration(&q, &[0.0], &bad, "x").is_err());
    assert!(power_iteration(&q, &[0.0, 1.0], &PowerIterationConfig::default(), "x").is_err());
}

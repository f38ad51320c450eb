use fairquant::audit::{audit, AuditMeta};
use fairquant::dataset::{SamplerConfig, SamplerMode};
use fairquant::experiment::{mitigate, train_base, ExperimentConfig, RunSeeds};
use fairquant::quant::{quantize, MixedPrecisionMap, PrecisionSpec};
use fairquant::trainer::{
    fair_qat_pipeline, train_erm, train_qat, QatConfig, TrainConfig, BENCHMARK_WCR_WEIGHTS,
};
use fairquant::{ClassWeights, Exec, Network, Rng};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const MINORITY: usize = 4;

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn accuracy_report(net: &Network, test: &fairquant::dataset::GroupedDataset) -> fairquant::audit::AuditReport {
    audit(net, None, test, &AuditMeta::default()).unwrap()
}

#[test]
fn weighted_loss_lifts_minority_accuracy_on_average() {
    let cfg = ExperimentConfig::benchmark();
    let mut plain = Vec::new();
    let mut weighted = Vec::new();
    for seed in SEEDS {
        let (train, test) = cfg.data.load(RunSeeds::new(seed).data).unwrap();
        let (a, _) = train_base(&cfg, &train, seed, None, None).unwrap();
        let w = ClassWeights::PerClass(BENCHMARK_WCR_WEIGHTS.to_vec());
        let (b, _) = train_base(&cfg, &train, seed, None, Some(&w)).unwrap();
        plain.push(accuracy_report(&a, &test).groups[MINORITY].accuracy.unwrap());
        weighted.push(accuracy_report(&b, &test).groups[MINORITY].accuracy.unwrap());
    }
    assert!(
        mean(&weighted) > mean(&plain),
        "weighted {weighted:?} vs plain {plain:?}"
    );
}

#[test]
fn int4_qat_overall_accuracy_at_least_ptq_on_average() {
    let cfg = ExperimentConfig::benchmark();
    let mut ptq = Vec::new();
    let mut qat = Vec::new();
    for seed in SEEDS {
        let (train, test) = cfg.data.load(RunSeeds::new(seed).data).unwrap();
        let (orig, _) = train_base(&cfg, &train, seed, None, None).unwrap();
        let p = quantize(&orig, PrecisionSpec::Int(4)).unwrap().to_network();
        let qc = QatConfig {
            base: TrainConfig {
                seed: RunSeeds::new(seed).qat,
                ..cfg.mitigation.qat.clone()
            },
            precision_map: MixedPrecisionMap::uniform(PrecisionSpec::Int(4)),
            dampening_coefficient: cfg.mitigation.dampening_coefficient,
            dampening_start_fraction: cfg.mitigation.dampening_start_fraction,
        };
        let (q, _) = train_qat(&orig, &train, &qc).unwrap();
        ptq.push(accuracy_report(&p, &test).overall_accuracy);
        qat.push(accuracy_report(&q.to_network(), &test).overall_accuracy);
    }
    assert!(mean(&qat) >= mean(&ptq), "qat {qat:?} vs ptq {ptq:?}");
}

#[test]
fn strong_dampening_pulls_latent_weights_onto_the_grid() {
    let cfg = ExperimentConfig::benchmark();
    let (train, _) = cfg.data.load(RunSeeds::new(0).data).unwrap();
    let net = Network::init(&cfg.widths(train.dim(), train.num_classes()), &mut Rng::new(7)).unwrap();
    let base = TrainConfig {
        epochs: 30,
        batch_size: train.len(),
        learning_rate: 1e-4,
        momentum: 0.0,
        shuffle: false,
        ..TrainConfig::default()
    };
    let qc = QatConfig {
        base,
        precision_map: MixedPrecisionMap::uniform(PrecisionSpec::Int(4)),
        dampening_coefficient: 1e3,
        dampening_start_fraction: 0.0,
    };
    let (_, trace) = train_qat(&net, &train, &qc).unwrap();
    let d: Vec<f64> = trace.epochs.iter().map(|e| e.grid_distance.unwrap()).collect();
    let tail = &d[d.len() - 11..];
    assert!(tail.windows(2).all(|w| w[1] <= w[0]), "grid distance tail {tail:?}");
}

#[test]
fn mitigation_is_a_no_op_on_balanced_easy_data() {
    let cfg = ExperimentConfig::balanced_easy();
    let out = mitigate(&cfg, Exec::default()).unwrap();
    assert!(out.failures.is_empty());
    for s in &out.seeds {
        for a in &s.arms {
            let f = a.audit.fvo.unwrap();
            assert!(f < 0.05, "seed {} arm {} FVO {f}", s.seed, a.arm.name());
        }
    }
}

#[test]
fn pipeline_matches_plain_qat_on_balanced_easy_data() {
    let cfg = ExperimentConfig::balanced_easy();
    for seed in SEEDS {
        let (train, test) = cfg.data.load(RunSeeds::new(seed).data).unwrap();
        let (orig, _) = train_base(&cfg, &train, seed, None, None).unwrap();
        let qc = cfg
            .mitigation
            .qat_config(orig.num_layers(), ClassWeights::Uniform, RunSeeds::new(seed).qat);
        let sampler = SamplerConfig::new(SamplerMode::UnderOver, RunSeeds::new(seed).sampler);
        let (fair, _) = fair_qat_pipeline(&orig, &train, &qc, &sampler).unwrap();
        let (plain, _) = train_qat(&orig, &train, &qc).unwrap();
        let a = accuracy_report(&fair.to_network(), &test).fvo.unwrap();
        let b = accuracy_report(&plain.to_network(), &test).fvo.unwrap();
        assert!((a - b).abs() < 0.05, "seed {seed}: pipeline FVO {a}, plain QAT FVO {b}");
    }
}

#[test]
fn training_is_bit_deterministic() {
    let cfg = ExperimentConfig::benchmark();
    let (train, _) = cfg.data.load(RunSeeds::new(3).data).unwrap();
    let net = Network::init(&cfg.widths(train.dim(), train.num_classes()), &mut Rng::new(3)).unwrap();
    let tc = TrainConfig {
        epochs: 3,
        seed: 11,
        ..cfg.train.clone()
    };
    let (a, ta) = train_erm(&net, &train, &tc).unwrap();
    let (b, tb) = train_erm(&net, &train, &tc).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta, tb);
    let bits = |n: &Network| n.flatten().values.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

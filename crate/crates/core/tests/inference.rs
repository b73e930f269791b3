use latent_replay::autodiff::{Optimizer, ParamStore};
use latent_replay::generator::{Generator, GeneratorConfig};
use latent_replay::inference::{InferenceConfig, InferenceNet, InferenceTrainConfig};
use latent_replay::prior::LangevinConfig;
use latent_replay::seed;
use latent_replay::tasks::suite::{make_synthetic_suite, SuiteSizes, POLARITY};
use latent_replay::tasks::{QaExample, Task, Vocab};
use latent_replay::trainer::{run, Method, Model, ModelConfig, Schedule};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn row_times(x: &[f64], store: &ParamStore, name: &str) -> Vec<f64> {
    let w = store.value(name).unwrap();
    let cols = w.shape()[1];
    (0..cols)
        .map(|j| x.iter().enumerate().map(|(k, xk)| xk * w.data()[k * cols + j]).sum())
        .collect()
}

/// Encoder, pooling and head with plain loops.
fn logits_by_hand(psi: &ParamStore, question: &[usize]) -> Vec<f64> {
    let embed = psi.value("embed").unwrap();
    let h_dim = embed.shape()[1];
    let b = psi.value("enc/b").unwrap().data();
    let mut h = vec![0.0; h_dim];
    let mut pooled = vec![0.0; h_dim];
    for &t in question {
        let x = embed.row(t);
        let gx: Vec<f64> = row_times(x, psi, "enc/wx").iter().zip(b).map(|(a, c)| a + c).collect();
        let gh = row_times(&h, psi, "enc/wh");
        h = (0..h_dim)
            .map(|i| {
                let r = sigmoid(gx[i] + gh[i]);
                let u = sigmoid(gx[h_dim + i] + gh[h_dim + i]);
                let n = (gx[2 * h_dim + i] + r * gh[2 * h_dim + i]).tanh();
                n + u * (h[i] - n)
            })
            .collect();
        pooled.iter_mut().zip(x).for_each(|(p, v)| *p += v);
    }
    let mut features = h;
    features.extend(pooled.iter().map(|p| p / question.len() as f64));
    let hb = psi.value("head/b").unwrap().data();
    row_times(&features, psi, "head/w").iter().zip(hb).map(|(a, c)| a + c).collect()
}

#[test]
fn logits_match_hand_evaluation() {
    for s in 0..5 {
        let net = InferenceNet::new(
            &InferenceConfig {
                vocab_size: 9,
                hidden: 6,
                slots: 3,
            },
            &mut seed::rng(s),
        )
        .unwrap();
        let q = [4, 7, 2, 8, 5];
        let got = net.infer(&q).unwrap();
        assert_eq!(got.shape(), &[3, 9]);
        for (a, b) in got.data().iter().zip(logits_by_hand(&net.psi, &q)) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }
}

fn polarity(seed_v: u64, train: usize) -> (Vocab, Task) {
    let (vocab, tasks) = make_synthetic_suite(seed_v, SuiteSizes { train, test: 30 }).unwrap();
    let task = tasks.into_iter().find(|t| t.name == POLARITY).unwrap();
    (vocab, task)
}

#[test]
fn energy_training_lowers_mean_energy() {
    let (vocab, task) = polarity(11, 20);
    let data: Vec<QaExample> = task.train;
    let mut lower = 0;
    for s in 0..10 {
        let gen = Generator::new(
            &GeneratorConfig {
                vocab_size: vocab.len(),
                hidden: 10,
                latent_dim: 3,
            },
            &mut seed::rng(100 + s),
        )
        .unwrap();
        let mut net = InferenceNet::new(
            &InferenceConfig {
                vocab_size: vocab.len(),
                hidden: 8,
                slots: 2,
            },
            &mut seed::rng(200 + s),
        )
        .unwrap();
        let before = net.mean_energy(&gen, &data).unwrap();
        let cfg = InferenceTrainConfig {
            lr: 1e-2,
            epochs: 50,
            batch_size: 5,
            optimizer: Optimizer::default(),
            seed: s,
        };
        let after = net.train(&gen, &data, &cfg).unwrap();
        if after < before {
            lower += 1;
        }
    }
    assert!(lower >= 9, "energy fell in {lower}/10 seeds");
}

#[test]
fn trained_network_beats_untrained_exact_match() {
    let (vocab, task) = polarity(4, 40);
    let cfg = ModelConfig {
        hidden: 12,
        latent_dim: 3,
        sigma2: 1.0,
        ebm_hidden: vec![8],
        inference_hidden: 12,
    };
    let chain = LangevinConfig {
        steps: 5,
        step_size: 0.05,
        seed: 0,
    };
    let mut better = 0;
    for s in 0..10 {
        let sch = Schedule {
            order: vec![POLARITY.into()],
            epochs: 3,
            inference_warmup_epochs: 15,
            inference_epochs: 1,
            posterior: chain,
            prior: chain,
            seed: s,
            ..Schedule::default()
        };
        let untrained = Model::new(&cfg, vocab.len(), 2, s).unwrap().evaluate(&task, &vocab).unwrap();
        let (report, _) = run(Method::Replay, &sch, &cfg, std::slice::from_ref(&task), &vocab).unwrap();
        if report.final_average > untrained {
            better += 1;
        }
    }
    assert!(better >= 9, "trained beat untrained in {better}/10 seeds");
}

use latent_replay::prior::LangevinConfig;
use latent_replay::tasks::suite::{make_synthetic_suite, SuiteSizes, POLARITY, SPAN, STATE};
use latent_replay::tasks::{Task, Vocab};
use latent_replay::trainer::{
    baseline, generate_replay, mean_std, run_permutations, train_sequence, Method, ModelConfig, Schedule,
    REPLAY_TASK,
};

fn suite(train: usize) -> (Vocab, Vec<Task>) {
    make_synthetic_suite(5, SuiteSizes { train, test: 20 }).unwrap()
}

fn model() -> ModelConfig {
    ModelConfig {
        hidden: 12,
        latent_dim: 3,
        sigma2: 1.0,
        ebm_hidden: vec![8],
        inference_hidden: 12,
    }
}

fn schedule(order: &[&str]) -> Schedule {
    let chain = LangevinConfig {
        steps: 5,
        step_size: 0.05,
        seed: 0,
    };
    Schedule {
        order: order.iter().map(|s| s.to_string()).collect(),
        epochs: 2,
        inference_warmup_epochs: 2,
        inference_epochs: 1,
        posterior: chain,
        prior: chain,
        ..Schedule::default()
    }
}

#[test]
fn trained_generator_replays_well_formed_pairs() {
    let (vocab, tasks) = suite(40);
    let mut sch = schedule(&[POLARITY]);
    sch.epochs = 40;
    let cfg = ModelConfig {
        hidden: 32,
        latent_dim: 4,
        ebm_hidden: vec![16],
        ..model()
    };
    let (_, m) = train_sequence(&sch, &cfg, &tasks, &vocab).unwrap();
    let chain = LangevinConfig {
        steps: 10,
        step_size: 0.1,
        seed: 3,
    };
    let batch = generate_replay(&m.prior, &m.generator, 50, 40, &chain).unwrap();
    assert!(batch.well_formed_rate() >= 0.6, "rate {}", batch.well_formed_rate());
    assert!(batch.examples.iter().all(|e| e.task_id == REPLAY_TASK && e.validate().is_ok()));
}

#[test]
fn single_task_methods_agree() {
    let (vocab, tasks) = suite(20);
    let sch = schedule(&[SPAN]);
    let (ft, _) = baseline(Method::Finetune, &sch, &model(), &tasks, &vocab).unwrap();
    let (mt, _) = baseline(Method::Multitask, &sch, &model(), &tasks, &vocab).unwrap();
    assert_eq!(ft.scores.len(), 1);
    assert_eq!(ft.scores[0].len(), 1);
    assert_eq!(ft.scores, mt.scores);
    assert_eq!(ft.stages, mt.stages);
}

#[test]
fn real_replay_without_replay_is_finetune() {
    let (vocab, tasks) = suite(20);
    let mut sch = schedule(&[POLARITY, STATE]);
    sch.gamma = 0.0;
    let (ft, a) = baseline(Method::Finetune, &sch, &model(), &tasks, &vocab).unwrap();
    let (rr, b) = baseline(Method::RealReplay, &sch, &model(), &tasks, &vocab).unwrap();
    assert_eq!(ft.scores, rr.scores);
    assert_eq!(a.to_tensors(), b.to_tensors());
}

#[test]
fn real_replay_draws_past_examples() {
    let (vocab, tasks) = suite(20);
    let mut sch = schedule(&[POLARITY, SPAN, STATE]);
    sch.gamma = 0.5;
    let (r, _) = baseline(Method::RealReplay, &sch, &model(), &tasks, &vocab).unwrap();
    let achieved: Vec<usize> = r.stages.iter().map(|s| s.replay_achieved).collect();
    assert_eq!(achieved, vec![0, 10, 10]);
    assert_eq!(r.stages[2].train_examples, 30);
}

#[test]
fn score_matrix_is_lower_triangular() {
    let (vocab, tasks) = suite(20);
    let (r, _) = train_sequence(&schedule(&[STATE, POLARITY, SPAN]), &model(), &tasks, &vocab).unwrap();
    let lens: Vec<usize> = r.scores.iter().map(Vec::len).collect();
    assert_eq!(lens, vec![1, 2, 3]);
    let last = r.scores.last().unwrap();
    assert!((r.final_average - last.iter().sum::<f64>() / 3.0).abs() < 1e-12);
    assert!(r.scores.iter().flatten().all(|s| (0.0..=100.0).contains(s)));
}

#[test]
fn per_task_priors_split_the_replay_budget() {
    let (vocab, tasks) = suite(20);
    let mut sch = schedule(&[POLARITY, SPAN, STATE]);
    sch.gamma = 0.5;
    sch.prior_per_task = true;
    let (per_task, m_a) = train_sequence(&sch, &model(), &tasks, &vocab).unwrap();
    sch.prior_per_task = false;
    let (shared, m_b) = train_sequence(&sch, &model(), &tasks, &vocab).unwrap();
    let req = |r: &latent_replay::trainer::RunReport| r.stages.iter().map(|s| s.replay_requested).collect::<Vec<_>>();
    assert_eq!(req(&per_task), vec![0, 10, 10]);
    assert_eq!(req(&per_task), req(&shared));
    assert!(per_task.stages.iter().all(|s| s.replay_achieved <= s.replay_requested));
    assert_ne!(m_a.prior.alpha.tensors(), m_b.prior.alpha.tensors());

    let (ft_a, _) = baseline(Method::Finetune, &sch, &model(), &tasks, &vocab).unwrap();
    sch.prior_per_task = true;
    let (ft_b, _) = baseline(Method::Finetune, &sch, &model(), &tasks, &vocab).unwrap();
    assert_eq!(ft_a.scores, ft_b.scores);
}

#[test]
fn permutation_summary_matches_reports() {
    let (vocab, tasks) = suite(20);
    let two: Vec<Task> = tasks.into_iter().filter(|t| t.name != STATE).collect();
    let base = schedule(&[]);
    let res = run_permutations(Method::Replay, &base, &model(), &two, &vocab, &[0.0, 0.25], &[0, 1]).unwrap();
    assert_eq!(res.reports.len(), 8);
    assert_eq!(res.rows.len(), 8);
    assert_eq!(res.stats.len(), 4);
    for st in &res.stats {
        let finals: Vec<f64> = res
            .reports
            .iter()
            .filter(|r| r.gamma == st.gamma && r.seed == st.seed)
            .map(|r| r.final_average)
            .collect();
        assert_eq!(finals.len(), 2);
        let (m, s) = mean_std(&finals);
        assert!((st.mean - m).abs() < 1e-12 && (st.std - s).abs() < 1e-12);
        assert!((m - (finals[0] + finals[1]) / 2.0).abs() < 1e-12);
    }
    for (row, rep) in res.rows.iter().zip(&res.reports) {
        for (name, score) in rep.final_scores() {
            let j = res.task_names.iter().position(|n| *n == name).unwrap();
            assert_eq!(row.task_scores[j], score);
        }
    }
    let csv = res.to_csv();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    assert_eq!(header.len(), 4 + 2);
    assert_eq!(csv.lines().count(), 9);
}

#[test]
fn unknown_task_is_a_config_error() {
    let (vocab, tasks) = suite(20);
    let err = train_sequence(&schedule(&["nope"]), &model(), &tasks, &vocab).unwrap_err();
    assert!(matches!(err.root(), latent_replay::Error::Config { field, .. } if field == "order"));
}

use mhdetr::checkpoint::Checkpoint;
use mhdetr::config::Config;
use mhdetr::data::synthetic::{generate, SyntheticSpec};
use mhdetr::data::AnnotatedSample;
use mhdetr::loss::compute_loss;
use mhdetr::nn::Ctx;
use mhdetr::trainer::Trainer;
use mhdetr::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_cfg() -> Config {
    let mut c = Config::default();
    let m = &mut c.model;
    m.video_dim = 16;
    m.text_dim = 12;
    m.hidden = 16;
    m.heads = 2;
    m.dec_layers = 2;
    m.num_queries = 4;
    m.max_video_len = 16;
    m.max_text_len = 6;
    c.train.lr = 1e-3;
    c.train.batch_size = 4;
    c.train.epochs = 1000;
    c
}

fn small_data(n: usize, noise_std: f64, seed: u64) -> Vec<AnnotatedSample> {
    generate(&SyntheticSpec {
        n_samples: n,
        video_len: 16,
        text_len: 6,
        video_dim: 16,
        text_dim: 12,
        code_dim: 4,
        noise_std,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn weights(m: &mhdetr::MhDetr) -> Vec<(String, Vec<f64>)> {
    m.params.iter().map(|(_, n, t)| (n.to_string(), t.data().to_vec())).collect()
}

#[test]
fn resume_matches_uninterrupted_run() {
    let data = small_data(10, 0.1, 7);
    let mut cfg = small_cfg();
    cfg.train.max_steps = Some(8);
    let mut full = Trainer::new(cfg.clone()).unwrap();
    let all = full.fit(&data, &[], &mut |_| {}).unwrap().losses;

    let mut first = cfg.clone();
    first.train.max_steps = Some(5);
    let mut a = Trainer::new(first).unwrap();
    a.fit(&data, &[], &mut |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.ckpt");
    a.checkpoint().save(&path).unwrap();

    let mut b = Trainer::resume(cfg, &Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(b.step, 5);
    let rest = b.fit(&data, &[], &mut |_| {}).unwrap().losses;
    assert_eq!(rest.len(), 3);
    for (x, y) in rest.iter().zip(&all[5..]) {
        assert!((x.total - y.total).abs() <= 1e-10, "{} vs {}", x.total, y.total);
    }
    assert_eq!(weights(&b.model), weights(&full.model));
}

#[test]
fn save_load_save_is_byte_identical() {
    let data = small_data(4, 0.1, 3);
    let mut cfg = small_cfg();
    cfg.train.max_steps = Some(2);
    let mut t = Trainer::new(cfg).unwrap();
    t.fit(&data, &[], &mut |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p1 = dir.path().join("a.ckpt");
    let p2 = dir.path().join("b.ckpt");
    t.checkpoint().save(&p1).unwrap();
    let loaded = Checkpoint::load(&p1).unwrap();
    loaded.save(&p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    assert_eq!(weights(&loaded.to_model().unwrap()), weights(&t.model));
}

#[test]
fn mismatched_architecture_is_rejected() {
    let t = Trainer::new(small_cfg()).unwrap();
    let ck = t.checkpoint();
    let mut other = small_cfg();
    other.model.dec_layers = 3;
    assert!(matches!(Trainer::resume(other.clone(), &ck), Err(Error::Config(_))));
    let mut m = mhdetr::MhDetr::new(&other.model).unwrap();
    let err = ck.restore_params(&mut m).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn truncated_checkpoint_is_a_data_error() {
    let bytes = Trainer::new(small_cfg()).unwrap().checkpoint().to_bytes().unwrap();
    let err = Checkpoint::from_bytes(&bytes[..bytes.len() - 9]).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn single_sample_loss_decreases_monotonically() {
    let mut monotone = 0;
    for seed in 0..10 {
        let data = generate(&SyntheticSpec { n_samples: 1, noise_std: 0.0, seed: 100 + seed, ..Default::default() }).unwrap();
        let mut cfg = Config::default();
        let m = &mut cfg.model;
        m.video_dim = 64;
        m.text_dim = 64;
        m.hidden = 64;
        m.heads = 4;
        m.dec_layers = 2;
        m.num_queries = 5;
        m.max_video_len = 32;
        m.max_text_len = 8;
        m.dropout = 0.0;
        m.drop_path = 0.0;
        m.video_input_dropout = 0.0;
        m.text_input_dropout = 0.0;
        m.init_seed = seed;
        cfg.train.seed = seed;
        cfg.train.lr = 1e-5;
        let mut t = Trainer::new(cfg).unwrap();
        let losses: Vec<f64> = (0..50).map(|_| t.train_step(&[&data[0]]).unwrap().total).collect();
        assert!(losses[49] < 0.8 * losses[0], "seed {seed}: {} -> {}", losses[0], losses[49]);
        if losses.windows(2).all(|w| w[1] <= w[0]) {
            monotone += 1;
        }
    }
    assert!(monotone >= 9, "{monotone}/10 seeds decreased monotonically");
}

#[test]
fn padded_batch_loss_is_mean_of_single_losses() {
    // Shorter in both modalities, so the batch pads video and text.
    let short = generate(&SyntheticSpec {
        n_samples: 1,
        video_len: 11,
        text_len: 4,
        video_dim: 16,
        text_dim: 12,
        code_dim: 4,
        seed: 5,
        ..Default::default()
    })
    .unwrap()
    .remove(0);
    let long = small_data(1, 0.1, 6).remove(0);
    let mut cfg = small_cfg();
    cfg.loss.use_rank = false;
    cfg.model.dropout = 0.0;
    cfg.model.drop_path = 0.0;
    cfg.model.video_input_dropout = 0.0;
    cfg.model.text_input_dropout = 0.0;
    let t = Trainer::new(cfg.clone()).unwrap();
    let (batch, grads) = t.batch_gradients(&[&short, &long], 0).unwrap();

    let mut mean = 0.0;
    let mut want: Vec<Vec<f64>> = t.model.params.iter().map(|(_, _, p)| vec![0.0; p.len()]).collect();
    for s in [&short, &long] {
        let mut ctx = Ctx::deterministic_with_grads(&t.model.params);
        let out = t.model.forward(&mut ctx, &s.video, &s.text).unwrap();
        let (loss, bd, _) = compute_loss(&mut ctx, &out, &s.gt, &cfg.loss, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        ctx.backward(loss).unwrap();
        for (id, g) in ctx.param_grads() {
            want[id.index()].iter_mut().zip(&g).for_each(|(a, b)| *a += 0.5 * b);
        }
        mean += 0.5 * bd.total;
    }
    assert!((batch.total - mean).abs() <= 1e-8, "{} vs {mean}", batch.total);
    let worst = grads.iter().flatten().zip(want.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst <= 1e-8, "{worst}");
}

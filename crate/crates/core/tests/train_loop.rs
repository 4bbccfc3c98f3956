//! End-to-end training-loop checks that go beyond single steps: memorizing
//! a corpus under the likelihood objective and the non-finite abort path.

use std::fs;
use std::path::PathBuf;

use bootchat_core::corpus::encode_corpus;
use bootchat_core::corpus::read_corpus_file;
use bootchat_core::graph::Graph;
use bootchat_core::metrics::bleu2;
use bootchat_core::model::{DecodeMode, DecodeSettings, Encoder, Generator};
use bootchat_core::objectives::SpecialCase;
use bootchat_core::trainer::{
    dims_from_params, eval_pairs, load_run, run_training, EvalDecode, TrainingConfig,
};
use bootchat_core::Error;

fn scratch_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("bootchat-loop-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    dir
}

fn small_mle_config() -> TrainingConfig {
    let mut cfg = TrainingConfig::default();
    cfg.h_dim = 16;
    cfg.layers = 1;
    cfg.vocab_size = 30;
    cfg.batch_size = 1;
    cfg.lr = 0.5;
    cfg.max_steps = 400;
    cfg.max_decode_len = 10;
    cfg.special_case = Some(SpecialCase::Mle);
    cfg.split = false;
    cfg.validate_every = 0;
    cfg.checkpoint_every = 0;
    cfg.seed = 3;
    cfg
}

fn write_corpus(dir: &PathBuf, text: &str) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    let path = dir.join("corpus.txt");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn memorizes_a_single_example() {
    let dir = scratch_dir("memorize");
    let corpus = write_corpus(&dir, "how are you\ti am doing quite fine today\n");
    let out = dir.join("out");
    let cfg = small_mle_config();
    run_training(&cfg, &corpus, &out, None).unwrap();

    let run = load_run(&out.join("model.ckpt")).unwrap();
    let raw = read_corpus_file(&corpus).unwrap();
    let examples = encode_corpus(&raw, &run.vocab, &run.cfg.limits()).unwrap();
    let dims = dims_from_params(&run.params, &run.cfg).unwrap();

    let mut log_prob_sum = 0.0;
    let mut tokens = 0usize;
    for ex in &examples {
        let mut g = Graph::new();
        let enc = Encoder::bind(&mut g, &run.params, &dims).unwrap();
        let gen = Generator::bind(&mut g, &run.params, &dims).unwrap();
        let turns: Vec<&[u32]> = ex.context.iter().map(|t| t.as_slice()).collect();
        let ctx = enc.encode_context(&mut g, &turns).unwrap();
        let settings =
            DecodeSettings { temperature: run.cfg.tau, max_len: run.cfg.max_decode_len };
        let tf = gen
            .decode(
                &mut g,
                ctx.state,
                &ctx.memory,
                DecodeMode::TeacherForcing { target: &ex.target },
                &settings,
                None,
            )
            .unwrap();
        for lp in &tf.step_log_probs {
            log_prob_sum += g.value(*lp).item();
        }
        tokens += tf.step_log_probs.len();
    }
    let nll = -log_prob_sum / tokens as f64;
    assert!(nll < 0.1, "teacher-forcing NLL {nll:.4} nats/token after {} steps", cfg.max_steps);

    let pairs = eval_pairs(
        &run.params,
        &run.cfg,
        &run.vocab,
        &examples,
        EvalDecode::Greedy,
        "loop-eval",
        &[],
    )
    .unwrap();
    assert_eq!(pairs[0].hypothesis, pairs[0].reference);
    assert_eq!(bleu2(&pairs).unwrap(), 1.0);

    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn aborts_and_dumps_diagnostics_when_losses_blow_up() {
    let dir = scratch_dir("blowup");
    let corpus = write_corpus(&dir, "how are you\ti am doing quite fine today\n");
    let out = dir.join("out");
    let mut cfg = small_mle_config();
    cfg.lr = 1e300;
    cfg.max_steps = 10;
    let err = run_training(&cfg, &corpus, &out, None).unwrap_err();
    assert!(matches!(err, Error::NonFinite { .. }), "got {err}");
    assert!(out.join("diagnostics.txt").exists());

    let _ = fs::remove_dir_all(&dir);
}

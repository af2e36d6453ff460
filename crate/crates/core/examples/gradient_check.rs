//! Finite-difference check of every trainable piece: word embeddings, the
//! gated cell stack, a linear layer, and the single and joint models end to
//! end (encoder, fusion layer and both heads).
//!
//! ```text
//! cargo run --example gradient_check
//! ```

use ntp_anomaly::models::{joint_loss, JointModel, ModelConfig, SingleModel};
use ntp_anomaly::neural::gradcheck::DEFAULT_EPS;
use ntp_anomaly::neural::tensor::dot;
use ntp_anomaly::neural::{
    check_gradients, cross_entropy, CellStack, Embedding, Linear, Parameters, Tensor2,
};
use ntp_anomaly::template_miner::{MinerConfig, MinerState};
use ntp_anomaly::vocab::{TemplateBank, WordDictionary};
use ntp_anomaly::{Modality, TemplateId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bank(modality: Modality, lines: &[&str]) -> (TemplateBank, usize) {
    let cfg = match modality {
        Modality::Span => MinerConfig::for_spans(),
        Modality::Log => MinerConfig::for_logs(),
    };
    let mut miner = MinerState::new(cfg, modality).expect("valid config");
    for l in lines {
        miner.mine(l);
    }
    let dict = WordDictionary::build(miner.templates(), modality).expect("non-empty");
    (TemplateBank::build(miner.templates(), &dict, 4), dict.len())
}

fn report(name: &str, r: ntp_anomaly::neural::GradCheckReport) {
    println!(
        "{name:<10} {:>5} params  max rel error {:.2e}",
        r.checked, r.max_rel_error
    );
}

fn main() -> ntp_anomaly::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut randv =
        |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };

    let emb = Embedding::new(6, 4, &mut ChaCha8Rng::seed_from_u64(1));
    let idx = [0, 3, 3, 5];
    let w = Tensor2::from_vec(4, 4, randv(16))?;
    let emb_loss = |e: &Embedding| dot(&e.lookup(&idx).expect("in range").data, &w.data);
    let mut g = emb.zeros_like();
    Embedding::backward(&idx, &w, &mut g);
    report(
        "embedding",
        check_gradients(&emb, &g, emb_loss, DEFAULT_EPS),
    );

    let stack = CellStack::new(3, 4, 2, &mut ChaCha8Rng::seed_from_u64(2));
    let xs: Vec<Vec<f64>> = (0..4).map(|_| randv(3)).collect();
    let r = randv(4);
    let cell_loss = |s: &CellStack| dot(&s.forward(&xs).0, &r);
    let mut g = stack.zeros_like();
    let (_, cache) = stack.forward(&xs);
    stack.backward(&cache, &r, &mut g);
    report("cell", check_gradients(&stack, &g, cell_loss, DEFAULT_EPS));

    let lin = Linear::new(5, 3, &mut ChaCha8Rng::seed_from_u64(3));
    let x = randv(5);
    let r = randv(3);
    let lin_loss = |l: &Linear| dot(&l.forward(&x), &r);
    let mut g = lin.zeros_like();
    lin.backward(&x, &r, &mut g);
    report("linear", check_gradients(&lin, &g, lin_loss, DEFAULT_EPS));

    let (spans, span_words) = bank(
        Modality::Span,
        &[
            "GET nova /servers",
            "POST glance /images",
            "DELETE neutron /ports",
        ],
    );
    let (logs, log_words) = bank(
        Modality::Log,
        &[
            "nova.api boot 1",
            "glance.store put 2",
            "neutron.agent bind 3",
        ],
    );
    let cfg = ModelConfig {
        embedding_dim: 4,
        hidden_dim: 3,
        layers: 2,
        fusion_dim: 5,
        ..ModelConfig::default()
    };

    let single = SingleModel::new(
        spans.clone(),
        span_words,
        &cfg,
        &mut ChaCha8Rng::seed_from_u64(4),
    );
    let inputs = [TemplateId(1), TemplateId(3), TemplateId(2)];
    let single_loss = |m: &SingleModel| {
        cross_entropy(&m.forward(&inputs).expect("known ids"), 2).expect("finite")
    };
    let mut g = single.zeros_like();
    single.loss_and_grad(&inputs, TemplateId(2), &mut g)?;
    report(
        "single",
        check_gradients(&single, &g, single_loss, DEFAULT_EPS),
    );

    let joint = JointModel::new(
        spans,
        span_words,
        logs,
        log_words,
        &cfg,
        &mut ChaCha8Rng::seed_from_u64(5),
    );
    let block = [TemplateId(2), TemplateId(1), TemplateId::NOLOG];
    let joint_loss_of = |m: &JointModel| {
        let (ps, pl) = m.forward(&inputs, &block).expect("known ids");
        joint_loss(&ps, &pl, TemplateId(1), TemplateId(3)).expect("finite")
    };
    let mut g = joint.zeros_like();
    joint.loss_and_grad(&inputs, &block, TemplateId(1), TemplateId(3), &mut g)?;
    report(
        "joint",
        check_gradients(&joint, &g, joint_loss_of, DEFAULT_EPS),
    );
    Ok(())
}

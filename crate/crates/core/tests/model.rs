mod common;

use common::{random_batch, synthetic, tiny_config, tiny_model};
use fairlm::corpus::{AnnotatedSequence, GenderLexicon, Vocabulary, annotate, tokenize};
use fairlm::memory::GenderTag;
use fairlm::model::*;
use fairlm::numerics::{norm, Rng};
use fairlm::parallel::Execution;

fn train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        fair_n: 2,
        memory_capacity: 24,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn empty_corpus_epoch_is_a_no_op() {
    let model = tiny_model(Variant::Seq2SeqFairRegion, 1);
    let before = model.clone();
    let mut t = Trainer::new(model, train_config(1)).unwrap();
    let s = t.train_epoch(&[]).unwrap();
    assert_eq!(s.batches, 0);
    assert_eq!(t.model(), &before);
}

#[test]
fn epochs_are_reproducible() {
    let data = synthetic(0.9, 30, 5);
    let cfg = ModelConfig { vocab_size: data.vocab.len(), ..tiny_config() };
    let run = || {
        let m = Model::new(Variant::Seq2SeqFairRegion, cfg.clone(), 2).unwrap();
        let mut t = Trainer::new(m, train_config(2)).unwrap();
        let losses: Vec<f64> = (0..2).map(|_| t.train_epoch(&data.examples).unwrap().mean_loss).collect();
        (losses, t.into_model())
    };
    let (a, ma) = run();
    let (b, mb) = run();
    assert_eq!(a, b);
    assert_eq!(ma, mb);
}

#[test]
fn execution_modes_agree() {
    let data = synthetic(0.9, 40, 6);
    let cfg = ModelConfig { vocab_size: data.vocab.len(), ..tiny_config() };
    for v in Variant::ALL {
        let m = Model::new(v, cfg.clone(), 3).unwrap();
        let seq = m.corpus_nll(&data.examples, 8, Execution::Sequential).unwrap();
        let par = m.corpus_nll(&data.examples, 8, Execution::Parallel).unwrap();
        assert_eq!(seq, par);
        let run = |exec| {
            let mut t = Trainer::new(m.clone(), train_config(3)).unwrap().with_execution(exec);
            t.train_epoch(&data.examples).unwrap();
            t.into_model()
        };
        assert_eq!(run(Execution::Sequential), run(Execution::Parallel));
    }
}

#[test]
fn memory_tags_match_counting_oracle() {
    let data = synthetic(0.9, 30, 7);
    let cfg = ModelConfig { vocab_size: data.vocab.len(), ..tiny_config() };
    let mut m = Model::new(Variant::Seq2SeqFairRegion, cfg, 4).unwrap();
    let initial = m.memory().unwrap().tags().to_vec();
    m.memory_mut().unwrap().enable_journal();
    let mut t = Trainer::new(m, train_config(4)).unwrap();
    let stats = t.train_epoch(&data.examples).unwrap();
    let mem = t.model().memory().unwrap();
    let journal = mem.journal().unwrap();

    let mut gold = [0usize; 3];
    for e in &data.examples {
        for tag in e.output_tags() {
            gold[tag.code() as usize] += 1;
        }
    }
    let mut written = [0usize; 3];
    for (_, tag) in journal {
        written[tag.code() as usize] += 1;
    }
    assert_eq!(written, gold);
    assert_eq!(stats.writes, journal.len());

    let mut expected = initial;
    for &(slot, tag) in journal {
        expected[slot] = tag;
    }
    assert_eq!(mem.tags(), expected.as_slice());
    assert!(mem.keys().data().chunks(mem.dim()).all(|k| (norm(k) - 1.0).abs() < 1e-9));
}

#[test]
fn fair_loss_stays_finite_over_random_batches() {
    let mut rng = Rng::new(11);
    let m = tiny_model(Variant::Seq2SeqFairRegion, 11);
    for _ in 0..100 {
        let batch = random_batch(20, 3, &mut rng);
        let g = m.batch_gradients(&batch, None, Execution::Sequential).unwrap();
        assert!(g.loss.is_finite());
        assert!(g.params.iter().all(|t| t.is_finite()));
        assert!(g.keys.unwrap().is_finite());
    }
}

#[test]
fn generation_bounds_and_determinism() {
    for v in Variant::ALL {
        let m = tiny_model(v, 12);
        assert!(generate(&m, &[4, 5], 0).unwrap().is_empty());
        let a = generate(&m, &[4, 5], 6).unwrap();
        assert_eq!(a, generate(&m, &[4, 5], 6).unwrap());
        assert!(a.len() <= 6);
    }
}

#[test]
fn overfit_model_reproduces_continuations() {
    let pairs = [
        ("who is the doctor ?", "the doctor is my mother ."),
        ("who is the nurse ?", "the nurse is a man ."),
        ("where is he ?", "he went to the office ."),
        ("what did she say ?", "she said nothing at all ."),
        ("is it late ?", "yes , it is very late ."),
    ];
    let lex = GenderLexicon::default();
    let ann: Vec<_> = pairs
        .iter()
        .flat_map(|(x, y)| [annotate(&tokenize(x), &lex), annotate(&tokenize(y), &lex)])
        .collect();
    let vocab = Vocabulary::build(ann.iter().map(|a| a.tokens.as_slice()), 1000).unwrap();
    let enc: Vec<AnnotatedSequence> = ann.iter().map(|a| vocab.encode(a)).collect();
    let pairs: Vec<_> = enc.chunks(2).map(|c| (c[0].clone(), c[1].clone())).collect();
    let examples = examples_from_pairs(&pairs).unwrap();

    let cfg = ModelConfig {
        vocab_size: vocab.len(),
        embed_dim: 32,
        state_size: 32,
        // With the default +-0.01 init the source signal through two
        // encoder layers starts far below Adam's epsilon; a wider init lets
        // this short run find it.
        init_scale: 0.5,
        ..ModelConfig::new(vocab.len())
    };
    let m = Model::new(Variant::Seq2Seq, cfg, 5).unwrap();
    let tc = TrainConfig {
        learning_rate: 0.01,
        keep_prob: 1.0,
        batch_size: 5,
        epochs: 300,
        seed: 5,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(m, tc).unwrap();
    t.fit(&examples, |_, _| {}).unwrap();
    let hits = examples
        .iter()
        .filter(|e| generate(t.model(), &e.source, 20).unwrap() == e.target.ids)
        .count();
    assert!(hits >= 4, "{hits}/5 continuations reproduced");
}

#[test]
fn fair_embeddings_are_unit_and_deterministic() {
    for v in Variant::ALL {
        let m = tiny_model(v, 13);
        for w in 0..20 {
            let e = fair_embedding(&m, w).unwrap();
            assert!((norm(&e) - 1.0).abs() < 1e-6);
            assert_eq!(e, fair_embedding(&m, w).unwrap());
        }
    }
}

#[test]
fn zero_model_embeds_every_word_alike() {
    for v in [Variant::Seq2Seq, Variant::Seq2SeqAttention, Variant::Seq2SeqFairRegion] {
        let mut m = tiny_model(v, 14);
        m.zero_parameters();
        let first = fair_embedding(&m, 4).unwrap();
        for w in 5..20 {
            assert_eq!(fair_embedding(&m, w).unwrap(), first);
        }
    }
}

#[test]
fn contextual_embeddings_cover_corpus_words() {
    let data = synthetic(0.9, 20, 8);
    let cfg = ModelConfig { vocab_size: data.vocab.len(), ..tiny_config() };
    let m = Model::new(Variant::Seq2SeqFairRegion, cfg, 6).unwrap();
    let look = contextual_embeddings(&m, &data.examples, 8, Execution::default()).unwrap();
    let doctor = data.vocab.id("doctor");
    if look.occurrences(doctor) > 0 {
        assert!((norm(&look.get(doctor).unwrap()) - 1.0).abs() < 1e-9);
    }
    let seq = contextual_embeddings(&m, &data.examples, 8, Execution::Sequential).unwrap();
    assert_eq!(look, seq);
    let _ = GenderTag::Male;
}

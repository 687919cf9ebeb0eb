use super::*;
use crate::linalg::dot;
use crate::models::{InitScheme, LinearMap, LogisticHead, MlpStack};
use crate::patterns::{PatternKind, PatternRegistry, PatternSpec};

const STATE: [f64; 4] = [0.8, -0.5, 0.3, 0.1];
const EVEN: ObjectiveWeights = ObjectiveWeights { main: 0.5, side: 0.5 };

/// Noiseless realizable task: `z = s = w·x`, `y = [s > 0]`.
fn realizable(n: usize, seed: u64) -> Dataset {
    let mut rng = Rng::new(seed);
    let x: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| rng.normal(0.0, 1.0)).collect()).collect();
    let s: Vec<f64> = x.iter().map(|xi| dot(xi, &STATE)).collect();
    let y = s.iter().map(|v| if *v > 0.0 { 1.0 } else { 0.0 }).collect();
    Dataset::new(x, Some(y), SideInfo::PerSample(s.iter().map(|v| vec![*v]).collect())).unwrap()
}

fn linear_stack(seed: u64, beta: Option<Map>) -> ModelStack {
    let mut stack = ModelStack::new(
        Map::Linear(LinearMap::new(4, 1, true)),
        LogisticHead::new(1, true),
        beta,
    )
    .unwrap();
    stack.init(&mut Rng::new(seed), InitScheme::ScaledUniform);
    stack
}

fn side(kind: PatternKind) -> Box<dyn SideObjective> {
    PatternRegistry::default().build(&PatternSpec::new(kind)).unwrap()
}

fn config(procedure: ProcedureKind) -> TrainConfig {
    TrainConfig {
        procedure,
        epochs: 15,
        seed: 42,
        ..TrainConfig::default()
    }
}

fn params(stack: &ModelStack) -> Vec<u64> {
    all_blocks(stack)
        .iter()
        .flat_map(|b| stack.block_params(*b))
        .map(f64::to_bits)
        .collect()
}

#[test]
fn zero_side_weight_reproduces_supervised_training() {
    let data = realizable(50, 1);
    let mut plain = linear_stack(7, None);
    let mut joint = plain.clone();
    train_supervised(&mut plain, &data, &config(ProcedureKind::Simultaneous)).unwrap();
    let weights = ObjectiveWeights { main: 1.0, side: 0.0 };
    Simultaneous
        .train(
            &mut joint,
            side(PatternKind::Direct).as_ref(),
            weights,
            &data,
            &config(ProcedureKind::Simultaneous),
        )
        .unwrap();
    assert_eq!(params(&plain), params(&joint));
}

#[test]
fn zero_main_weight_leaves_the_head_alone() {
    let data = realizable(60, 2);
    let mut stack = linear_stack(3, None);
    let head = stack.block_params(Block::Psi);
    let cfg = TrainConfig {
        epochs: 200,
        ..config(ProcedureKind::Simultaneous)
    };
    let weights = ObjectiveWeights { main: 0.0, side: 1.0 };
    let report = Simultaneous
        .train(&mut stack, side(PatternKind::Direct).as_ref(), weights, &data, &cfg)
        .unwrap();
    assert_eq!(stack.block_params(Block::Psi), head);
    assert!(report.side_loss < 1e-6, "{}", report.side_loss);
}

#[test]
fn decoupled_head_phase_freezes_the_representation() {
    let data = realizable(40, 3);
    let beta = Map::Linear(LinearMap::new(1, 1, true));
    let start = linear_stack(5, Some(beta));
    let objective = side(PatternKind::MultiTask);
    let cfg = config(ProcedureKind::Decoupled);

    // phase 1 alone, replayed with the procedure's own RNG stream
    let mut pretrained = start.clone();
    let phase = Phase {
        objective: StepObjective {
            side: Some(objective.as_ref()),
            main_weight: 0.0,
            side_weight: 1.0,
        },
        blocks: objective.side_blocks(),
        lr: cfg.learning_rate,
        epochs: cfg.epochs,
        main_batches: false,
    };
    phase
        .run(
            &mut pretrained,
            &data,
            &cfg,
            &mut Rng::new(cfg.seed).fork("shuffle-side"),
            SideSchedule::None,
            &mut None,
        )
        .unwrap();

    let mut full = start.clone();
    Decoupled
        .train(&mut full, objective.as_ref(), EVEN, &data, &cfg)
        .unwrap();
    for block in [Block::Phi, Block::Beta] {
        let a: Vec<u64> = pretrained.block_params(block).iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = full.block_params(block).iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b, "{block:?}");
    }
    assert_ne!(pretrained.block_params(Block::Psi), full.block_params(Block::Psi));
}

#[test]
fn empty_finetune_schedule_is_decoupled() {
    let data = realizable(40, 4);
    let objective = side(PatternKind::Direct);
    let mut decoupled = linear_stack(9, None);
    let mut finetuned = decoupled.clone();
    Decoupled
        .train(
            &mut decoupled,
            objective.as_ref(),
            EVEN,
            &data,
            &config(ProcedureKind::Decoupled),
        )
        .unwrap();
    let cfg = TrainConfig {
        finetune_epochs: 0,
        ..config(ProcedureKind::PretrainFinetune)
    };
    let report = PretrainFinetune
        .train(&mut finetuned, objective.as_ref(), EVEN, &data, &cfg)
        .unwrap();
    assert_eq!(params(&decoupled), params(&finetuned));
    assert!(!report.warnings.is_empty(), "linear phi should be flagged");
}

#[test]
fn finetuning_adapts_the_representation() {
    let data = realizable(40, 5);
    let objective = side(PatternKind::Direct);
    let mut phi = Map::Mlp(MlpStack::new(&[4, 3, 1]).unwrap());
    phi.init(&mut Rng::new(1), InitScheme::ScaledUniform);
    let mut psi = LogisticHead::new(1, true);
    psi.init(&mut Rng::new(2), InitScheme::ScaledUniform);
    let start = ModelStack::new(phi, psi, None).unwrap();
    let mut decoupled = start.clone();
    let mut finetuned = start;
    Decoupled
        .train(
            &mut decoupled,
            objective.as_ref(),
            EVEN,
            &data,
            &config(ProcedureKind::Decoupled),
        )
        .unwrap();
    let report = PretrainFinetune
        .train(
            &mut finetuned,
            objective.as_ref(),
            EVEN,
            &data,
            &config(ProcedureKind::PretrainFinetune),
        )
        .unwrap();
    assert_ne!(decoupled.block_params(Block::Phi), finetuned.block_params(Block::Phi));
    assert!(report.warnings.is_empty());
}

#[test]
fn training_is_deterministic() {
    let data = realizable(45, 6);
    let beta = Map::Linear(LinearMap::new(1, 1, true));
    for procedure in [
        ProcedureKind::Simultaneous,
        ProcedureKind::Decoupled,
        ProcedureKind::PretrainFinetune,
    ] {
        let run = || {
            let mut stack = linear_stack(11, Some(beta.clone()));
            train(
                &mut stack,
                side(PatternKind::MultiTask).as_ref(),
                EVEN,
                &data,
                &config(procedure),
            )
            .unwrap();
            params(&stack)
        };
        assert_eq!(run(), run(), "{procedure}");
    }
}

#[test]
fn step_gradient_is_the_weighted_sum_of_its_parts() {
    let data = realizable(30, 7);
    let beta = Map::Linear(LinearMap::new(1, 1, true));
    let stack = linear_stack(13, Some(beta));
    let objective = side(PatternKind::MultiTask);
    let blocks = all_blocks(&stack);
    let idx: Vec<usize> = (3..23).collect();
    let grad = |main_weight, side_weight| {
        StepObjective {
            side: Some(objective.as_ref()),
            main_weight,
            side_weight,
        }
        .gradient(&stack, &blocks, &data, &idx, &idx)
        .unwrap()
    };
    let main = grad(1.0, 0.0);
    let side_only = grad(0.0, 1.0);
    let joint = grad(0.3, 0.7);
    for i in 0..joint.len() {
        let want = 0.3 * main[i] + 0.7 * side_only[i];
        assert!((joint[i] - want).abs() <= 1e-15 * want.abs().max(1.0), "component {i}");
    }
}

// With momentum 0.9 the descent is only monotone while overdamped, i.e. for
// lr·curvature below about (1 − √0.9)²; the curvature here is ≈ 2.
#[test]
fn pretraining_loss_keeps_falling() {
    let data = realizable(80, 8);
    let cfg = TrainConfig {
        epochs: 150,
        learning_rate: 0.001,
        trace: true,
        ..config(ProcedureKind::Decoupled)
    };
    let report = Decoupled
        .train(
            &mut linear_stack(17, None),
            side(PatternKind::Direct).as_ref(),
            EVEN,
            &data,
            &cfg,
        )
        .unwrap();
    let phase1: Vec<f64> = report.trace[..cfg.epochs].iter().map(|r| r.side_loss).collect();
    for (e, w) in phase1.windows(2).enumerate().skip(3) {
        assert!(w[1] <= w[0], "epoch {}: {} -> {}", e + 2, w[0], w[1]);
    }
    let z = match &data.side {
        SideInfo::PerSample(z) => z.iter().map(|r| r[0]).collect::<Vec<_>>(),
        _ => unreachable!(),
    };
    let mean = z.iter().sum::<f64>() / z.len() as f64;
    let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / z.len() as f64;
    assert!(phase1[cfg.epochs - 1] < 1e-3 * var);
    assert_eq!(report.trace.len(), 2 * cfg.epochs);
    assert!(report.trace_csv().starts_with("epoch,main_loss,side_loss"));
}

#[test]
fn decoupled_direct_pattern_separates_the_classes() {
    let data = realizable(80, 9);
    let mut stack = linear_stack(19, None);
    let cfg = TrainConfig {
        epochs: 100,
        ..config(ProcedureKind::Decoupled)
    };
    Decoupled
        .train(&mut stack, side(PatternKind::Direct).as_ref(), EVEN, &data, &cfg)
        .unwrap();
    let test = realizable(500, 10);
    let y = test.labels().unwrap();
    let correct = test
        .x
        .iter()
        .zip(y)
        .filter(|(x, y)| (stack.predict(x).unwrap() > 0.5) == (**y == 1.0))
        .count();
    assert!(correct as f64 / 500.0 > 0.97, "{correct}/500");
}

#[test]
fn decoupling_a_label_dependent_pattern_is_rejected() {
    let data = realizable(20, 11);
    let beta = Map::Linear(LinearMap::new(1, 1, true));
    let mut stack = linear_stack(1, Some(beta));
    for procedure in [ProcedureKind::Decoupled, ProcedureKind::PretrainFinetune] {
        let err = train(
            &mut stack,
            side(PatternKind::MultiViewPred).as_ref(),
            EVEN,
            &data,
            &config(procedure),
        );
        assert!(matches!(err, Err(Error::InvalidConfig(_))), "{procedure}");
    }
}

#[test]
fn mismatched_side_information_is_rejected() {
    let data = realizable(20, 12);
    let mut stack = linear_stack(1, None);
    let err = train(
        &mut stack,
        side(PatternKind::PairwiseTransform).as_ref(),
        EVEN,
        &data,
        &config(ProcedureKind::Simultaneous),
    );
    assert!(matches!(err, Err(Error::Inapplicable { .. })));
}

#[test]
fn invalid_configs_are_rejected() {
    for cfg in [
        TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            momentum: 1.0,
            ..TrainConfig::default()
        },
        TrainConfig {
            learning_rate: -0.1,
            ..TrainConfig::default()
        },
    ] {
        assert!(cfg.validate().is_err(), "{cfg:?}");
    }
    let bad = ObjectiveWeights { main: 0.6, side: 0.6 };
    let data = realizable(20, 13);
    let err = Simultaneous.train(
        &mut linear_stack(1, None),
        side(PatternKind::Direct).as_ref(),
        bad,
        &data,
        &TrainConfig::default(),
    );
    assert!(err.is_err());
}

#[test]
fn registry_names_every_procedure() {
    let names: Vec<&str> = ProcedureRegistry::default().names().collect();
    assert_eq!(names, ["decoupled", "pretrain-finetune", "simultaneous"]);
    for name in names {
        let kind: ProcedureKind = name.parse().unwrap();
        assert_eq!(ProcedureRegistry::default().get(name).unwrap().kind(), kind);
    }
    assert!(ProcedureRegistry::default().get("alternating").is_err());
}

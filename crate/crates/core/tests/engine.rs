mod common;

use common::*;
use magc_core::*;

fn setup(nl: usize, d: usize, heads: usize, n: usize, s: usize, seed: u64) -> (SsdModel64, Tensor64, Tensor64) {
    let cfg = ModelConfig::new(nl, d, heads, n).unwrap();
    let model = init_params::<f64>(&cfg, seed).unwrap();
    let mut r = rng(seed);
    let x = random_tensor(&mut r, s, d);
    let t = random_tensor(&mut r, s, d);
    (model, x, t)
}

#[test]
fn store_holds_expected_checkpoints() {
    let (model, x, _) = setup(4, 2, 1, 2, 8, 0);
    let mut ledger = ActivationLedger::new();
    let (_, _, store) =
        forward_checkpointed(&model, &x, &CheckpointPlan::new(2, 4), &mut ledger, &mut StepEvalCounter::default()).unwrap();
    assert_eq!(store.num_cells, (2, 2));
    assert_eq!(store.l_ckpt_positions(), 8);
    assert_eq!(store.s_ckpt_states(), 4);
    let sl = model.state_len();
    assert_eq!(ledger.subtotal(Tag::LCkpt), (8 * 2 * 8) as u64);
    assert_eq!(ledger.subtotal(Tag::SCkpt), (4 * sl * 8) as u64);
    assert_eq!(ledger.subtotal(Tag::Io), (8 * 2 * 8) as u64);
    assert_eq!(ledger.subtotal(Tag::Frontier), 0);
    store.discard(&mut ledger).unwrap();
    assert_eq!(ledger.live(), 0);
}

#[test]
fn store_sizes_follow_block_counts() {
    for &(nl, s, l, sc) in &[(5, 13, 2, 4), (3, 7, 3, 7), (6, 20, 1, 3), (1, 9, 1, 1)] {
        let (model, x, _) = setup(nl, 2, 1, 1, s, 1);
        let plan = CheckpointPlan::new(l, sc);
        let (_, _, store) =
            forward_checkpointed(&model, &x, &plan, &mut ActivationLedger::new(), &mut StepEvalCounter::default()).unwrap();
        assert_eq!(store.l_ckpt_positions(), s * (nl.div_ceil(l) - 1));
        assert_eq!(store.s_ckpt_states(), nl * (s.div_ceil(sc) - 1));
    }
}

#[test]
fn recomputed_cells_reproduce_full_cache_regions() {
    let (model, x, _) = setup(4, 4, 2, 2, 16, 2);
    let plan = CheckpointPlan::new(2, 4);
    let mut counter = StepEvalCounter::default();
    let (_, _, full) = model_forward_full(&model, &x, &mut ActivationLedger::new(), &mut counter).unwrap();
    let mut ledger = ActivationLedger::new();
    let (_, _, store) = forward_checkpointed(&model, &x, &plan, &mut ledger, &mut counter).unwrap();
    let (d, h, hn) = (4, 2, 4);
    let mut cells = 0;
    for i in 0..4 {
        for j in 0..2 {
            let before = ledger.live();
            let cell = recompute_cell(&model, &store, (i, j), &mut ledger, &mut counter).unwrap();
            assert_eq!(ledger.live() - before, (cell.elements() * 8) as u64);
            for (off, cache) in cell.layers.iter().enumerate() {
                let reference = &full.layers[2 * j + off];
                let t = 4 * i..4 * i + 4;
                assert_eq!(cache.x, reference.x[t.start * d..t.end * d]);
                assert_eq!(cache.a, reference.a[t.start * h..t.end * h]);
                assert_eq!(cache.b, reference.b[t.start * hn..t.end * hn]);
                assert_eq!(cache.c, reference.c[t.start * hn..t.end * hn]);
            }
            ledger.release(Tag::CellCache, (cell.elements() * 8) as u64).unwrap();
            cells += 1;
        }
    }
    assert_eq!(cells, 8);
    assert!(recompute_cell(&model, &store, (4, 0), &mut ledger, &mut counter).is_err());
}

#[test]
fn missing_checkpoint_is_reported() {
    let (model, x, _) = setup(4, 2, 1, 1, 8, 3);
    let mut ledger = ActivationLedger::new();
    let mut counter = StepEvalCounter::default();
    let (_, _, mut store) = forward_checkpointed(&model, &x, &CheckpointPlan::new(2, 4), &mut ledger, &mut counter).unwrap();
    store.l_ckpt.remove(&(1, 1));
    store.s_ckpt.remove(&(1, 0));
    assert!(matches!(
        recompute_cell(&model, &store, (1, 1), &mut ledger, &mut counter),
        Err(Error::MissingCheckpoint { seq_block: 1, layer_block: 1, .. })
    ));
    assert!(matches!(
        recompute_cell(&model, &store, (1, 0), &mut ledger, &mut counter),
        Err(Error::MissingCheckpoint { seq_block: 1, layer_block: 0, .. })
    ));
}

#[test]
fn mismatched_plan_is_rejected() {
    let (model, x, t) = setup(4, 2, 1, 1, 8, 4);
    let mut ledger = ActivationLedger::new();
    let mut counter = StepEvalCounter::default();
    let (_, _, store) = forward_checkpointed(&model, &x, &CheckpointPlan::new(2, 4), &mut ledger, &mut counter).unwrap();
    let res = backward_grid(&model, store, &t, &model.zero_states(), &CheckpointPlan::new(1, 4), &mut ledger, &mut counter);
    assert!(matches!(res, Err(Error::Plan(_))));
}

#[test]
fn grid_runs_every_step_twice() {
    for &(nl, s, l, sc) in &[(4, 16, 2, 4), (3, 10, 2, 3), (8, 64, 8, 64), (8, 64, 1, 1)] {
        let (model, x, t) = setup(nl, 2, 1, 2, s, 5);
        let out = run_strategy(&model, &x, &t, Strategy::Magc(CheckpointPlan::new(l, sc)), &mut ActivationLedger::new()).unwrap();
        assert_eq!(out.metrics.step_evals, (2 * nl * s) as u64);
        assert_eq!(out.metrics.counter.forward_evals, (nl * s) as u64);
        let off = run_strategy(&model, &x, &t, Strategy::GcOff, &mut ActivationLedger::new()).unwrap();
        assert_eq!(off.metrics.step_evals, (nl * s) as u64);
    }
}

#[test]
fn cell_backward_stays_below_full_cache() {
    let (model, x, t) = setup(8, 4, 2, 2, 256, 6);
    let grid = run_strategy(&model, &x, &t, Strategy::Magc(CheckpointPlan::new(4, 64)), &mut ActivationLedger::new()).unwrap();
    let full = run_strategy(&model, &x, &t, Strategy::GcOff, &mut ActivationLedger::new()).unwrap();
    assert!(grid.metrics.peak_units < full.metrics.peak_units);
    assert!(!grid.metrics.leak && !full.metrics.leak);
}

#[test]
fn full_cache_peak_by_hand() {
    // L=2, S=8, d=2, one head, P=2, N=2: per-step cache 2+1+2+2 = 7,
    // state 4. Peak during the top layer's backward:
    //   caches 2*8*7 + grad states 2*4 + grad_y 8*2 + replay 8*4 + grad_x 8*2
    let (model, x, t) = setup(2, 2, 1, 2, 8, 7);
    let out = run_strategy(&model, &x, &t, Strategy::GcOff, &mut ActivationLedger::new()).unwrap();
    assert_eq!(out.metrics.peak_units, 184 * 8);
    assert_eq!(out.metrics.baseline_units, 0);
}

#[test]
fn grid_peak_matches_cost_model() {
    // dividing intervals: the peak is reached as the first cell starts its backward
    for &(nl, d, heads, n, s, l, sc) in &[
        (4, 4, 2, 2, 64, 2, 8),
        (8, 4, 1, 3, 128, 4, 16),
        (6, 6, 3, 2, 96, 3, 12),
        (8, 8, 2, 4, 256, 8, 32),
    ] {
        let (model, x, t) = setup(nl, d, heads, n, s, 8);
        let cfg = model.config;
        let out = run_strategy(&model, &x, &t, Strategy::Magc(CheckpointPlan::new(l, sc)), &mut ActivationLedger::new()).unwrap();
        let predicted = weighted_memory(l as f64, sc as f64, nl as f64, s as f64, &CostConstants::for_model(&cfg)).unwrap();
        assert_eq!(out.metrics.peak_units as f64, predicted, "L={nl} S={s} l={l} s={sc}");
    }
}

#[test]
fn full_cache_peak_matches_cost_model() {
    for &(nl, d, heads, n, s) in &[(2, 2, 1, 2, 8), (4, 4, 2, 2, 32), (3, 6, 3, 1, 17)] {
        let (model, x, t) = setup(nl, d, heads, n, s, 9);
        let out = run_strategy(&model, &x, &t, Strategy::GcOff, &mut ActivationLedger::new()).unwrap();
        let predicted = strategy_memory(&Strategy::GcOff, nl, s, &CostConstants::for_model(&model.config)).unwrap();
        assert_eq!(out.metrics.peak_units as f64, predicted);
    }
}

#[test]
fn baselines_order_on_deep_stacks() {
    let (model, x, t) = setup(16, 4, 2, 2, 1024, 10);
    let peak = |s: Strategy| {
        run_strategy(&model, &x, &t, s, &mut ActivationLedger::new())
            .unwrap()
            .metrics
            .overhead_units
    };
    let report = optimal_plan(16, 1024, &CostConstants::for_model(&model.config), 1).unwrap();
    let magc = peak(Strategy::Magc(report.plan(1)));
    let (sq, on, off) = (peak(Strategy::SqrtGc), peak(Strategy::GcOn), peak(Strategy::GcOff));
    assert!(magc < sq && sq < on && on < off, "{magc} {sq} {on} {off}");
    // l* = 14 does not divide L = 16: the planner divides exactly, the
    // engine stores whole blocks
    assert_eq!((report.l_star, report.s_star), (14, 25));
    let gap = magc as f64 / report.predicted_units;
    assert!((1.0..1.25).contains(&gap), "{gap}");
}

#[test]
fn baseline_is_excluded_from_overhead() {
    let (model, x, t) = setup(2, 2, 1, 1, 16, 11);
    let mut ledger = ActivationLedger::new();
    ledger.charge_elems::<f64>(Tag::Io, 64).unwrap();
    let a = run_strategy(&model, &x, &t, Strategy::GcOn, &mut ledger).unwrap();
    let b = run_strategy(&model, &x, &t, Strategy::GcOn, &mut ActivationLedger::new()).unwrap();
    assert_eq!(a.metrics.baseline_units, 512);
    assert_eq!(a.metrics.overhead_units, b.metrics.overhead_units);
    assert_eq!(ledger.live(), 512);
}

#[test]
fn budget_stops_oversized_runs() {
    let (model, x, t) = setup(4, 4, 2, 2, 64, 12);
    let off = run_strategy(&model, &x, &t, Strategy::GcOff, &mut ActivationLedger::new()).unwrap();
    let mut tight = ActivationLedger::with_budget(off.metrics.overhead_units - 1);
    assert!(matches!(
        run_strategy(&model, &x, &t, Strategy::GcOff, &mut tight),
        Err(Error::Ledger(LedgerError::BudgetExceeded { .. }))
    ));
    let mut exact = ActivationLedger::with_budget(off.metrics.overhead_units);
    assert!(run_strategy(&model, &x, &t, Strategy::GcOff, &mut exact).is_ok());
    let mut grid = ActivationLedger::with_budget(off.metrics.overhead_units / 2);
    assert!(run_strategy(&model, &x, &t, Strategy::Magc(CheckpointPlan::new(2, 8)), &mut grid).is_ok());
}

#[test]
fn sequence_limit_is_enforced() {
    let cfg = ModelConfig::new(2, 2, 1, 1).unwrap().with_max_seq(8);
    let model = init_params::<f64>(&cfg, 0).unwrap();
    let x = Tensor64::zeros(&[9, 2]);
    assert!(matches!(
        run_strategy(&model, &x, &x, Strategy::GcOff, &mut ActivationLedger::new()),
        Err(Error::SequenceTooLong { len: 9, max: 8 })
    ));
}

#[test]
fn out_of_range_plans_are_rejected() {
    let (model, x, t) = setup(4, 2, 1, 1, 8, 13);
    for plan in [CheckpointPlan::new(0, 4), CheckpointPlan::new(5, 4), CheckpointPlan::new(2, 9), CheckpointPlan::new(2, 0)] {
        assert!(run_strategy(&model, &x, &t, Strategy::Magc(plan), &mut ActivationLedger::new()).is_err());
    }
}

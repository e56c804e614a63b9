use std::collections::BTreeMap;

use worldprog::bench::{
    conway_table, run_conway_benchmark, score_physics, load_boards, load_physics_dataset, write_random_boards, write_toy_dataset,
    BenchScene, FramePipeline, GtReplay, PipelineOutput, ProgramPipeline, StaticFrame, CONWAY_CELL_PX, CONWAY_PROGRAM,
};
use worldprog::config::PipelineConfig;
use worldprog::core::conway::{evolve, render_board, BinaryGrid, Rules};
use worldprog::core::metrics::{Combiner, MotionParams};

#[test]
fn reference_conway_program_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    write_random_boards(tmp.path(), 3, 12, 10, 0.35, 7).unwrap();
    let mut boards = load_boards(tmp.path()).unwrap();
    let glider = BinaryGrid::from_cells(8, 8, (0..64).map(|i| [1, 10, 16, 17, 18].contains(&i)).collect()).unwrap();
    boards.push(("glider".into(), glider));
    let pipeline = ProgramPipeline::new("reference", CONWAY_PROGRAM, PipelineConfig::default());
    let report = run_conway_benchmark(&boards, &pipeline, 6, &Rules::conway()).unwrap();
    assert_eq!(report.perfect_boards, 4, "{}", conway_table(&report));
    assert_eq!(report.f1_curve, vec![1.0; 6]);
}

#[test]
fn gt_replay_beats_static_baseline() {
    let tmp = tempfile::tempdir().unwrap();
    write_toy_dataset(tmp.path(), &["fall", "drop"], 2, 10, 3).unwrap();
    let scenes = load_physics_dataset(tmp.path(), 30.0).unwrap();
    assert_eq!(scenes.len(), 4);
    let gt: BTreeMap<_, _> = scenes.iter().map(|s| (format!("{}/{}", s.scene.category, s.scene.name), s.gt.clone())).collect();
    let replay = score_physics(&GtReplay { gt }, &scenes, 3, 30.0, MotionParams::default(), Combiner::Mean).unwrap();
    let still = score_physics(&StaticFrame, &scenes, 3, 30.0, MotionParams::default(), Combiner::Mean).unwrap();
    assert!((replay.overall - 100.0).abs() <= 1e-9);
    assert!(still.overall < replay.overall);
    assert_eq!(replay.categories.len(), 2);
}

struct Frozen;

impl FramePipeline for Frozen {
    fn name(&self) -> &str {
        "frozen"
    }

    fn run(&self, scene: &BenchScene, _: usize) -> worldprog::Result<PipelineOutput> {
        Ok(PipelineOutput::ok(vec![scene.input.image.clone(); scene.input.frame_count()]))
    }
}

#[test]
fn frozen_blinker_loses_f1_at_first_step() {
    let blinker = BinaryGrid::from_cells(5, 5, (0..25).map(|i| [11, 12, 13].contains(&i)).collect()).unwrap();
    let report = run_conway_benchmark(&[("blinker".into(), blinker)], &Frozen, 4, &Rules::conway()).unwrap();
    // Horizontal vs vertical bar share only the centre cell: F1 = 2/(2+2+2).
    assert!((report.f1_curve[0] - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(report.f1_curve[1], 1.0);
}

#[test]
fn failed_pipeline_counts_as_all_dead() {
    struct Broken;
    impl FramePipeline for Broken {
        fn name(&self) -> &str {
            "broken"
        }
        fn run(&self, _: &BenchScene, _: usize) -> worldprog::Result<PipelineOutput> {
            Ok(PipelineOutput::failed("runtime_error"))
        }
    }
    let block = BinaryGrid::from_cells(4, 4, (0..16).map(|i| [5, 6, 9, 10].contains(&i)).collect()).unwrap();
    let empty = BinaryGrid::dead(4, 4).unwrap();
    let report = run_conway_benchmark(&[("block".into(), block), ("empty".into(), empty)], &Broken, 2, &Rules::conway()).unwrap();
    assert_eq!(report.f1_curve, vec![0.5, 0.5]);
    assert_eq!(report.boards[0].status, "runtime_error");
}

#[test]
fn missing_ground_truth_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    write_toy_dataset(tmp.path(), &["fall"], 1, 4, 0).unwrap();
    std::fs::remove_dir_all(tmp.path().join("fall/scene00/gt")).unwrap();
    assert!(load_physics_dataset(tmp.path(), 30.0).is_err());
}

/// Renders the true evolution but flips one cell per frame.
struct OneFlip {
    board: BinaryGrid,
}

impl FramePipeline for OneFlip {
    fn name(&self) -> &str {
        "one-flip"
    }

    fn run(&self, scene: &BenchScene, _: usize) -> worldprog::Result<PipelineOutput> {
        let frames = evolve(&self.board, &Rules::conway(), scene.input.frame_count())
            .into_iter()
            .enumerate()
            .map(|(t, mut g)| {
                let (r, c) = (t % g.rows(), (3 * t) % g.cols());
                let live = g.get(r, c);
                g.set(r, c, !live);
                render_board(&g, CONWAY_CELL_PX, [255, 255, 255], [0, 0, 0])
            })
            .collect();
        Ok(PipelineOutput::ok(frames))
    }
}

#[test]
fn single_flip_loss_matches_direct_count() {
    // 10x10 board with exactly 20 live cells.
    let board = BinaryGrid::from_cells(10, 10, (0..100).map(|i| (i * 7) % 100 < 20).collect()).unwrap();
    assert_eq!(board.live_count(), 20);
    let steps = 5;
    let report = run_conway_benchmark(&[("b".into(), board.clone())], &OneFlip { board: board.clone() }, steps, &Rules::conway()).unwrap();
    for (t, truth) in evolve(&board, &Rules::conway(), steps).iter().enumerate() {
        let (r, c) = (t % 10, (3 * t) % 10);
        let live = truth.live_count() as f64;
        // A flipped live cell is one false negative; a flipped dead cell is one false positive.
        let want = if truth.get(r, c) { 2.0 * (live - 1.0) / (2.0 * (live - 1.0) + 1.0) } else { 2.0 * live / (2.0 * live + 1.0) };
        assert!((report.f1_curve[t] - want).abs() <= 1e-12, "t={t}: {} vs {want}", report.f1_curve[t]);
        assert!(report.f1_curve[t] < 1.0);
    }
}

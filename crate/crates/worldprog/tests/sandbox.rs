use std::time::Instant;

use worldprog::config::BudgetConfig;
use worldprog::core::conway::{evolve, extract_grid, render_board, BinaryGrid, Rules};
use worldprog::core::prompt::SceneInput;
use worldprog::core::toolbox::synthetic::SyntheticFixture;
use worldprog::core::RgbImage;
use worldprog::perception::Toolbox;
use worldprog::sandbox::{ExecStatus, ExecutionBudget, Sandbox};

fn sandbox() -> Sandbox {
    Sandbox::from_config(&BudgetConfig::default())
}

fn scene(w: usize, h: usize, fps: f64, duration_s: f64, caption: &str) -> SceneInput {
    SceneInput {
        image: RgbImage::filled(w, h, [40, 40, 40]),
        caption: caption.into(),
        frame_size: (w, h),
        fps,
        duration_s,
        gt_video: None,
    }
}

fn budget(scene: &SceneInput, wall_clock_s: f64, memory_mb: u64) -> ExecutionBudget {
    ExecutionBudget { wall_clock_s, memory_mb, frame_count: scene.frame_count(), rng_seed: 0 }
}

fn program(body: &str) -> String {
    format!(
        "import numpy as np\n\nclass World(Simulator):\n    def __init__(self, frame_size=(1024, 576), api=None, fps=30):\n        super().__init__(frame_size=frame_size, api=api, fps=fps)\n        self.t = 0\n\n{body}"
    )
}

const GRAY: &str = "    def fit(self, image, text):\n        self.t = 0\n\n    def update_simulation(self, dt):\n        self.t += 1\n\n    def render_frame(self):\n        w, h = self.frame_size\n        return np.full((h, w, 3), 128, dtype=np.uint8)\n";

#[test]
fn gray_program_yields_sixty_frames() {
    let s = scene(32, 24, 30.0, 2.0, "gray");
    let r = sandbox().execute(&program(GRAY), &s, &budget(&s, 30.0, 2048), None).unwrap();
    assert_eq!(r.status, ExecStatus::Ok, "{}", r.traceback);
    assert_eq!(r.frames.len(), 60);
    assert!(r.frames.iter().all(|f| f.dims() == (32, 24) && f.data.iter().all(|v| *v == 128)));
    assert!(r.traceback.is_empty());
}

#[test]
fn division_by_zero_reports_program_line() {
    let body = GRAY.replace("self.t += 1", "self.t += 1 / 0");
    let s = scene(16, 16, 10.0, 1.0, "x");
    let r = sandbox().execute(&program(&body), &s, &budget(&s, 30.0, 2048), None).unwrap();
    assert_eq!(r.status, ExecStatus::RuntimeError);
    assert!(r.frames.is_empty());
    assert!(r.traceback.contains("ZeroDivisionError"), "{}", r.traceback);
    assert!(r.traceback.contains("world_program.py"), "{}", r.traceback);
    assert!(r.traceback.contains("update_simulation"), "{}", r.traceback);
    assert!(!r.traceback.contains("runner.py"), "{}", r.traceback);
}

#[test]
fn infinite_loop_times_out_promptly() {
    let body = GRAY.replace("self.t += 1", "while True:\n            pass");
    let s = scene(16, 16, 10.0, 1.0, "x");
    let started = Instant::now();
    let r = sandbox().execute(&program(&body), &s, &budget(&s, 2.0, 2048), None).unwrap();
    assert_eq!(r.status, ExecStatus::Timeout);
    assert!(started.elapsed().as_secs_f64() <= 12.0);
}

#[test]
fn memory_hog_is_oom() {
    let body = GRAY.replace("self.t += 1", "self.hog = np.ones((1 << 31,), dtype=np.uint8)");
    let s = scene(16, 16, 10.0, 1.0, "x");
    let r = sandbox().execute(&program(&body), &s, &budget(&s, 30.0, 512), None).unwrap();
    assert_eq!(r.status, ExecStatus::Oom, "{}", r.traceback);
}

#[test]
fn wrong_frame_shape_is_contract_violation() {
    let body = GRAY.replace("(h, w, 3)", "(h, w + 1, 3)");
    let s = scene(16, 16, 10.0, 1.0, "x");
    let r = sandbox().execute(&program(&body), &s, &budget(&s, 30.0, 2048), None).unwrap();
    assert_eq!(r.status, ExecStatus::ContractViolation);
    assert!(r.traceback.contains("ContractViolation"), "{}", r.traceback);
}

#[test]
fn runtime_import_of_disallowed_module_fails() {
    let body = GRAY.replace("self.t = 0\n\n    def update", "__import__('socket')\n\n    def update");
    let s = scene(16, 16, 10.0, 1.0, "x");
    let r = sandbox().execute(&program(&body), &s, &budget(&s, 30.0, 2048), None).unwrap();
    assert_eq!(r.status, ExecStatus::RuntimeError);
    assert!(r.traceback.contains("disallowed import: socket"), "{}", r.traceback);
}

#[test]
fn seeded_randomness_is_reproducible() {
    let body = GRAY.replace("np.full((h, w, 3), 128, dtype=np.uint8)", "np.random.randint(0, 256, (h, w, 3)).astype(np.uint8)");
    let s = scene(8, 8, 10.0, 0.5, "x");
    let a = sandbox().execute(&program(&body), &s, &budget(&s, 30.0, 2048), None).unwrap();
    let b = sandbox().execute(&program(&body), &s, &budget(&s, 30.0, 2048), None).unwrap();
    assert_eq!(a.status, ExecStatus::Ok, "{}", a.traceback);
    assert_eq!(a.frames, b.frames);
}

#[test]
fn glider_program_matches_oracle() {
    let glider = BinaryGrid::from_cells(8, 8, (0..64).map(|i| [1, 10, 16, 17, 18].contains(&i)).collect()).unwrap();
    let caption = "Game of Life on an 8x8 board";
    let mut s = scene(64, 64, 1.0, 4.0, caption);
    s.image = render_board(&glider, 8, [255, 255, 255], [0, 0, 0]);
    let r = sandbox().execute(worldprog::bench::CONWAY_PROGRAM, &s, &budget(&s, 30.0, 2048), None).unwrap();
    assert_eq!(r.status, ExecStatus::Ok, "{}", r.traceback);
    for (frame, want) in r.frames.iter().zip(evolve(&glider, &Rules::conway(), 4)) {
        assert_eq!(extract_grid(frame, 8, 8).unwrap().grid, want);
    }
}

const API_PROGRAM: &str = r#"import numpy as np

class World(Simulator):
    def __init__(self, frame_size=(1024, 576), api=None, fps=30):
        super().__init__(frame_size=frame_size, api=api, fps=fps)

    def fit(self, image, text):
        ball, dog = self.api.segment(image, ["ball", "dog"])
        assert dog is None
        assert ball["mask"].dtype == bool and ball["mask"].any()
        pts = self.api.pts3d(image)
        points, valid = pts["points"], pts["valid"]
        ground = self.api.segment(image, ["ground"])[0]["mask"]
        plane = self.api.predict_ground_plane(points[ground & valid])
        assert abs(abs(plane["normal"][1]) - 1.0) < 1e-6, plane
        sphere = self.api.fit_3d_shape(points[ball["mask"] & valid], "sphere")
        assert sphere["shape_class"] == "sphere"
        self.world = self.api.create_world(gravity=(0.0, -9.81, 0.0), ground=(plane["normal"], plane["offset"]))
        self.body = self.api.add_rigid_body(self.world, sphere, mass=1.0)
        self.heights = []

    def update_simulation(self, dt):
        self.api.step_world(self.world, dt)
        state = self.api.get_state(self.world)
        self.heights.append(float(state[self.body]["positions"][0][1]))

    def render_frame(self):
        w, h = self.frame_size
        frame = np.zeros((h, w, 3), dtype=np.uint8)
        frame[:, :, 0] = min(255, int(len(self.heights)))
        return frame
"#;

#[test]
fn toolbox_calls_round_trip_through_the_child() {
    let fx = SyntheticFixture::ball_on_ground(96, 64);
    let mut s = scene(32, 24, 10.0, 0.5, "a ball on the ground");
    s.image = RgbImage::filled(96, 64, [90, 90, 90]);
    let tb = Toolbox::synthetic(Some(fx));
    let r = sandbox().execute(API_PROGRAM, &s, &budget(&s, 60.0, 2048), Some(&tb)).unwrap();
    assert_eq!(r.status, ExecStatus::Ok, "{}\n{}", r.traceback, r.stderr);
    assert_eq!(r.frames.len(), 5);
    let r = sandbox().execute(API_PROGRAM, &s, &budget(&s, 60.0, 2048), None).unwrap();
    assert_eq!(r.status, ExecStatus::RuntimeError, "api=None must make toolbox calls fail");
}

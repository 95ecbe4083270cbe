use std::ffi::CString;

use pyo3::prelude::*;
use pyo3::types::PyDict;

fn run(script: &str) {
    Python::initialize();
    Python::attach(|py| {
        let module = pyo3::wrap_pymodule!(trajaudit_py::trajaudit_py)(py);
        let globals = PyDict::new(py);
        globals.set_item("ta", module).unwrap();
        let code = CString::new(script).unwrap();
        if let Err(e) = py.run(&code, Some(&globals), None) {
            e.print(py);
            panic!("python check failed");
        }
    });
}

#[test]
fn homography_round_trip() {
    run(r#"
h = ta.Homography.translation(3.0, -2.0)
assert h.apply(1.0, 1.0) == (4.0, -1.0)
assert h.inverse().apply(4.0, -1.0) == (1.0, 1.0)
try:
    ta.Homography([1.0, 2.0])
    raise AssertionError("short matrix accepted")
except ValueError:
    pass
"#);
}

#[test]
fn smoothing_and_annotations() {
    run(r#"
out = ta.smooth([2.0] * 20, method="lowess")
assert all(abs(v - 2.0) < 1e-12 for v in out)
boxes = [(1.0, 2.0, 3.0, 4.0), None]
assert ta.parse_annotations(ta.format_annotations(boxes)) == boxes
try:
    ta.smooth([1.0] * 20, method="median")
    raise AssertionError("unknown smoother accepted")
except ValueError:
    pass
"#);
}

#[test]
fn pipeline_on_a_small_scene() {
    run(r#"
import json
cfg = {"frames": 20, "width": 160, "height": 120, "jitter_sigma": 0.0, "outlier_prob": 0.0,
       "object_path": {"kind": "line", "start": [70.0, 60.0], "velocity": [0.0, 0.0]},
       "object_size": [30.0, 24.0], "seed": 5}
scene = ta.generate_scenario(json.dumps(cfg))
a = ta.align_scenario(scene)
assert a.failed_at is None and len(a) == 20
r = ta.qa(a, scene.annotations(), tau=5.0)
assert r.flagged_frames() == []
m = json.loads(ta.score(scene, a, r))
assert m["final_corner_error"] < 2.0
"#);
}

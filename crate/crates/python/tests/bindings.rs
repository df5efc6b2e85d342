//! Calls the extension module through an embedded interpreter.

use pyo3::ffi::c_str;
use pyo3::prelude::*;

#[test]
fn module_functions_and_errors() {
    use peercollab_py::peercollab_py as module;
    pyo3::append_to_inittab!(module);
    Python::attach(|py| {
        py.run(
            c_str!(
                r#"
import math
import peercollab_py as pc

assert pc.coefficient(0.2, 0.2, 30.0) == 0.5
assert abs(pc.coefficient(1.0, 0.0, 2.0) + pc.coefficient(0.0, 1.0, 2.0) - 1.0) < 1e-12
assert abs(pc.entropy([[i / 9.0 for i in range(10)]], bins=10) - math.log(10)) < 1e-12

a, b, mu = pc.lw_cooperate([[0.1, 0.2]], [[0.3, -0.4]], alpha=10.0, criterion="entropy")
assert a == b and mu == 0.5

assert pc.magnitude_prune([[0.3, -0.1, 0.2]], 0.34) == [[0.3, 0.0, 0.2]]
assert pc.rank_of_target([0.0, 0.0, 0.0], 2) == 3
assert pc.metrics_at_n([1], 5)["NDCG"] == 1.0

ds = pc.Dataset.synthetic(seed=1, users=60, items=40)
assert ds.n_users == 60 and len(ds.sequence(0)) >= 3

for bad in (lambda: pc.entropy([]), lambda: pc.lw_cooperate([[1.0]], [[1.0]], criterion="x"),
            lambda: ds.sequence(60), lambda: pc.pw_cooperate([[1.0]], [[1.0, 2.0]], 0.1)):
    try:
        bad()
    except ValueError:
        pass
    else:
        raise AssertionError("expected ValueError")
"#
            ),
            None,
            None,
        )
        .inspect_err(|e| e.print(py))
        .unwrap();
    });
}

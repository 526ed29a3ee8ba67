#!/usr/bin/env python3
"""Smoke test for the spatial_income extension module.

Builds the cdylib with cargo if needed, loads it, and exercises the main
types and operations end to end on a tiny problem.

Usage: python3 python/smoke_test.py
"""
import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def build_module() -> Path:
    subprocess.run(
        ["cargo", "build", "-p", "spatial-income-py", "--release"],
        cwd=ROOT,
        check=True,
    )
    lib = ROOT / "target" / "release" / "libspatial_income.so"
    if not lib.exists():  # macOS fallback
        lib = ROOT / "target" / "release" / "libspatial_income.dylib"
    if not lib.exists():
        sys.exit(f"built library not found under {ROOT / 'target' / 'release'}")
    stage = Path(tempfile.mkdtemp(prefix="spatial_income_py_"))
    target = stage / "spatial_income.so"
    shutil.copy2(lib, target)
    return stage


def approx(a, b, tol=1e-9):
    assert abs(a - b) <= tol * (1.0 + abs(b)), f"{a} != {b}"


def main() -> None:
    sys.path.insert(0, str(build_module()))
    import spatial_income as si

    # Family operations.
    eta = si.transform("ln", [0.3, 0.0])
    approx(eta[0], 0.3)
    approx(eta[1], 1.0)
    back = si.inverse_transform("ln", eta)
    approx(back[0], 0.3)
    approx(si.cdf("sm", [2.0, 3.0, 1.0], 3.0), 0.5)
    approx(si.density("dg", [1.0, 1.0, 1.0], 1.0), 0.25)
    approx(si.mean_income("ln", [0.5, 2.0]), math.exp(1.5))
    gini = si.gini("sm", [2.5, 4.0, 1.2])
    assert 0.0 < gini < 1.0
    try:
        si.mean_income("dg", [0.9, 1.0, 1.0])
    except ValueError as e:
        assert "a > 1" in str(e)
    else:
        raise AssertionError("missing-moment error not raised")

    # Data containers.
    data = si.GroupedData([[5, 9, 3], [2, 11, 7], [0, 0, 0]], [1.0, 3.0])
    assert data.m == 3 and data.n_bins == 3
    assert data.sampled == [True, True, False]
    assert data.row(0) == [5, 9, 3]
    graph = si.SpatialGraph(3, [(0, 1), (1, 2)])
    assert graph.edge_count == 2
    approx(graph.mean_degree(), 4.0 / 3.0, 1e-12)

    # Simulation and the two samplers.
    sim_data, sim_graph, truth = si.simulate_scenario("a", areas=10, seed=3)
    assert sim_data.m == 10 and len(truth) == 10 and len(truth[0]) == 2

    for prior in ("pwd", "pwl"):
        fit = si.fit(
            data,
            graph,
            family="ln",
            prior=prior,
            iterations=120,
            burn_in=20,
            seed=7,
            cstar_samples=20,
        )
        assert fit.n_draws == 100
        assert fit.prior == prior
        assert 0.0 < fit.accept_u <= 1.0
        rows = fit.summary()
        assert len(rows) == 3
        for row in rows:
            lo, mean, hi = row["mean_income"][1], row["mean_income"][0], row["mean_income"][2]
            assert lo <= hi and math.isfinite(mean)
            g = row["gini"][0]
            assert 0.0 <= g < 1.0
        # The imputed non-sampled area is present in the draws.
        assert not rows[2]["sampled"]
        loss = fit.ppl(data, seed=1)
        assert math.isfinite(loss) and loss >= 0.0

    # Determinism of the bindings path.
    a = si.fit(data, graph, iterations=60, burn_in=10, seed=5).u_draws()
    b = si.fit(data, graph, iterations=60, burn_in=10, seed=5).u_draws()
    assert a == b

    print("spatial_income python smoke test: OK")


if __name__ == "__main__":
    main()

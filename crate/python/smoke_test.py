"""Smoke test for the tokenset_lab extension module.

Build and install first:  maturin develop --release -m crates/python/Cargo.toml
"""

import math
import tempfile

import tokenset_lab as tl


def close(a, b, tol):
    return abs(a - b) <= tol


def main():
    g = tl.Tokenset.sample_graphon("constant", 60, seed=1, a=0.5)
    assert len(g) == 60
    adj = g.adjacency()
    assert all(adj[i][i] == 0.0 for i in range(60))
    assert close(sum(g.weights()), 1.0, 1e-12)

    rw = tl.random_walk_rpe(g, 3)
    # Rows of n P^k sum to n for vertices with at least one edge.
    for row in rw:
        s = sum(row)
        assert s == 0.0 or close(s, 60.0, 1e-9), s

    model = tl.Transformer("graph", seed=3)
    assert model.max_spectral_norm() <= 1.0 + 1e-9
    out = model.forward(g, "random_walk", 3)
    assert len(out) == 2 and all(math.isfinite(v) for v in out)
    for att in model.attention(g, "random_walk", 3):
        assert all(close(sum(r), 1.0, 1e-9) for r in att)

    ref = tl.Tokenset.sample_graphon("two_block_sine", 120, seed=5)
    sample = tl.Tokenset.sample_graphon("two_block_sine", 40, seed=6)
    trace = model.train_worst_case(ref, sample, "random_walk", 5, 0.1)
    assert len(trace) == 6
    assert model.max_spectral_norm() <= 1.0 + 1e-6

    with tempfile.TemporaryDirectory() as d:
        model.save(d, "m")
        again = tl.Transformer.load(d, "m")
        assert again.forward(g, "random_walk", 3) == model.forward(g, "random_walk", 3)

    assert close(tl.spectral_norm([[3.0, 0.0], [0.0, 1.0]]), 3.0, 1e-9)

    two = tl.Transformer.two_point(10.0)
    rep = tl.adversarial(10.0, 200, seed=1)
    assert abs(rep["continuous_output"] - 1.0) <= 5 * math.exp(-10)
    assert rep["all_a_output"] == -1.0
    pts = tl.Tokenset([[-1.0]], [[-1.0]])
    assert two.forward(pts, "displacement") == [-1.0]

    rows = tl.run_sweep("sp-instability", seed=2, config="n_grid = 100, 200\nreplicates = 3")
    assert len(rows) == 6
    slope, _ = tl.fit_slope(rows, "mismatch_fraction")
    assert abs(slope) < 0.1
    print("python smoke test passed")


if __name__ == "__main__":
    main()

"""Smoke test for the dpfaga extension module.

    cd crates/python && pip install -e . --no-build-isolation && python3 python/smoke_test.py
"""
import json
import math
import os
import random
import tempfile

import dpfaga


def main():
    case = dpfaga.GridCase.ieee14()
    assert case.n_buses == 14
    sol = case.solve()
    assert sol["max_mismatch"] < 1e-8 and sol["iterations"] <= 10
    p, q = case.base_loads()
    gen_buses = {g["bus"] for g in json.loads(case.to_json())["generators"]}
    for b in range(14):
        if b not in gen_buses:
            assert math.isclose(-sol["p_inj"][b], p[b], abs_tol=1e-8)
            assert math.isclose(-sol["q_inj"][b], q[b], abs_tol=1e-8)

    train = dpfaga.Dataset.generate(case, steps=120, seed=1, role="train")
    val = dpfaga.Dataset.generate(case, steps=40, seed=2, role="val")
    test = dpfaga.Dataset.generate(case, steps=40, seed=3, role="test")
    assert len(train) == 120 and train.n_buses == 14
    assert len(train.subsample(0.2, seed=4)) == 24
    lossy = test.perturb(loss_prob=0.5, seed=5)
    zeros = sum(v == 0.0 for row in lossy.x() for v in row)
    assert zeros > 0.3 * len(test) * 28

    model = dpfaga.Model.fit("gat", case, train, val, epochs=30, learning_rate=1e-2)
    assert len(model.train_loss) == 30 and model.train_loss[-1] < model.train_loss[0]
    metrics = model.evaluate(test)
    assert math.isfinite(metrics["mse"]) and len(metrics["per_sample_mse"]) == 40
    for layer in model.attention(test.x()[0]):
        assert all(math.isclose(sum(row), 1.0, abs_tol=1e-12) and row[i] > 0 for i, row in enumerate(layer))

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "ck.json")
        model.save(path)
        again = dpfaga.Model.load(path, case)
        assert again.predict(test.x()[:2]) == model.predict(test.x()[:2])
        ds_path = os.path.join(d, "test.jsonl")
        test.save(ds_path)
        assert dpfaga.Dataset.load(ds_path).y() == test.y()

    rng = random.Random(0)
    pts = [[cx + rng.gauss(0, 0.3), cy + rng.gauss(0, 0.3)] for cx, cy in [(0, 0), (8, 0), (4, 7)] for _ in range(20)]
    g = dpfaga.can_graph(pts, clusters=3, k=5)
    assert g["c_achieved"] == 3
    assert all(len(set(g["labels"][i:i + 20])) == 1 for i in (0, 20, 40))
    assert all(math.isclose(sum(row), 1.0, abs_tol=1e-10) for row in g["s"])

    rounds = json.loads(dpfaga.fault_em(case, scenarios=20, rounds=1, epochs=20, seed=1))
    assert [r["round"] for r in rounds] == [0, 1]

    csv = dpfaga.emit_histogram([float(v) for v in range(100)], 10)
    assert [int(line.split(",")[2]) for line in csv.strip().splitlines()[1:]] == [10] * 10
    print("dpfaga smoke test passed")


if __name__ == "__main__":
    main()

"""Smoke test for the gsc extension module."""

import math
import os
import tempfile

import gsc


def main():
    v = gsc.Vocabulary(4, 38)
    assert v.onehot_dim == 46, v.onehot_dim
    assert v.reverse(v.reverse(5)) == 5
    assert sum(v.encode(1, 3, 2)) == 3.0

    g = gsc.Graph([0, 1, 2], [(0, 1, 0), (1, 2, 5)]).symmetrize(v)
    assert g.is_symmetric(v)
    assert g.validate(v) == []
    vals = [0.1 * (i + 1) for i in range(len(g))]
    for layers in (1, 2, 3):
        a = gsc.gsc_forward(g, vals, layers)
        b = gsc.path_sum_oracle(g, vals, layers)
        assert math.isclose(a, b, rel_tol=1e-12, abs_tol=1e-12), (layers, a, b)
    assert len(gsc.count_features(g, "1hop", v)) > 0

    assert abs(gsc.neg_kl(0.0) - gsc.mc_neg_kl(0.0, 200000, 1)) < 5e-2

    train = gsc.generate(200, seed=1)
    dev = gsc.generate(60, seed=2)
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "train.jsonl")
        gsc.save_instances(train, path)
        back = gsc.load_instances(path)
        assert [i.to_json() for i in back] == [i.to_json() for i in train]

        model, summary = gsc.train(
            "gsc", train, dev, seed=0,
            config='{"train": {"max_epochs": 3, "batch_size": 32}}',
        )
        assert model.param_count == 1537, model.param_count
        assert len(summary["log"]) == 3
        acc, preds = model.evaluate(dev)
        assert 0.0 <= acc <= 1.0 and len(preds) == len(dev)
        assert len(model.scores(dev[0])) == len(dev[0].choices)
        assert len(model.soft_counts(5)) == 5

        ck = os.path.join(d, "model.json")
        model.save(ck)
        again = gsc.Model.load(ck)
        assert again.evaluate(dev) == (acc, preds)

    try:
        gsc.generate(10, config='{"no_such_key": 1}')
    except ValueError:
        pass
    else:
        raise AssertionError("unknown config key accepted")

    counter = gsc.Model.init("counter1", seed=0)
    assert counter.param_count == 19521, counter.param_count
    print("smoke ok: dev accuracy", acc)


if __name__ == "__main__":
    main()

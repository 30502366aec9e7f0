"""Smoke test for the dcsurv extension module.

Build and install first:
    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/dcsurv-*.whl
"""

import math
import tempfile

import dcsurv


def main():
    toy = dcsurv.SurvivalDataset([1.0, 2.0, 3.0], [True, False, True])
    assert dcsurv.count_pairs(toy.times, toy.events, "event_event") == 1
    assert dcsurv.count_pairs(toy.times, toy.events, "event_any") == 2
    assert dcsurv.comparison_summary(toy)["factor_observed"] == 2.0

    grid = dcsurv.TimeGrid([1.0, 2.0, 4.0])
    assert grid.survival([0.5, 0.5, 0.5]) == [0.5, 0.25, 0.125]
    assert grid.interpolate([0.5, 0.25, 0.125], [0.0, 1.5, 9.0]) == [1.0, 0.375, 0.125]

    times, surv = dcsurv.kaplan_meier([1, 2, 2, 3], [True, True, False, True])
    assert times == [1.0, 2.0, 3.0] and surv[0] == 0.75

    data = dcsurv.SurvivalDataset.synthetic(400, 0.2, seed=3, distribution="two_cluster")
    train, test = data.split(0.25, seed=1)
    model, log = dcsurv.Model.train(
        train,
        model={"encoder_layers": [8], "decoder_layers": [8], "seed": 5},
        train={"max_epochs": 15},
    )
    assert log["best_epoch"] <= len(log["epochs"])
    surv = model.predict(test)
    assert len(surv) == len(test) and len(surv[0]) == len(model.grid)
    assert all(a >= b for row in surv for a, b in zip(row, row[1:]))

    c = dcsurv.cindex_td(surv, test, model.grid)
    auc = dcsurv.cdauc(surv, test, model.grid)
    d = dcsurv.ddc(surv, test, model.grid)
    report = dcsurv.evaluate(surv, test, model.grid, {"bootstrap_folds": 5}, seed=2)
    assert report["cindex_td"] == c and report["cdauc"] == auc and report["ddc"] == d
    assert 0.5 < c <= 1.0 and math.isfinite(d)

    flat = [[0.5] * len(model.grid)] * len(test)
    assert dcsurv.cindex_td(flat, test, model.grid) == 0.5

    with tempfile.TemporaryDirectory() as tmp:
        model.save(tmp)
        again = dcsurv.Model.load(tmp)
        assert again.predict(test) == surv

    try:
        dcsurv.Model.train(train, model={"loss": {"lambda": -1.0}})
    except ValueError as e:
        assert "lambda" in str(e)
    else:
        raise AssertionError("negative lambda accepted")

    print(f"ok: cindex_td={c:.3f} cdauc={auc:.3f} ddc={d:.4f}")


if __name__ == "__main__":
    main()

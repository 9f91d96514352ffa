"""Quick end-to-end check of the Python extension.

Build and install it first:

    pip install --no-build-isolation -e crates/python

then run `python python/smoke_test.py`.
"""

import math
import tempfile

import uadan_py as ud


def main():
    assert abs(ud.binary_entropy(0.5) - math.log(2)) < 1e-9
    assert abs(ud.categorical_entropy([0.25] * 4) - math.log(4)) < 1e-9
    assert abs(ud.iou([0, 0, 2, 2], [1, 1, 3, 3]) - 1 / 7) < 1e-12
    assert ud.average_precision([(0, 0.9, [0, 0, 10, 10])], [[[0, 0, 10, 10]]]) == 1.0
    assert len(ud.modes()) == 7

    bench_cfg = ud.default_benchmark_config()
    bench_cfg.update(n_source=12, n_target_train=12, n_target_eval=6)
    bench = ud.Benchmark.generate(bench_cfg)
    assert bench.split_len("source") == 12 and len(bench) == 30
    h, w, pixels = bench.image("target_eval", 0)
    assert (h, w) == (64, 64) and len(pixels) == h * w * 3
    assert bench.labels("source", 0) and bench.labels("target_train", 0) is None

    cfg = ud.default_train_config()
    cfg["mode"] = "UaDAN"
    cfg["schedule"].update(iters1=8, iters2=4)
    cfg.update(eval_every=6, log_every=2)
    with tempfile.TemporaryDirectory() as out:
        model, summary, history = ud.train(bench, cfg, out_dir=out)
        assert summary["iterations"] == 12
        assert summary["target_train_label_reads"] == 0
        assert bench.label_reads("target_train") == 0
        assert [r["iteration"] for r in history] == list(range(2, 13, 2))
        assert all(math.isfinite(r["total"]) for r in history)

        reloaded = ud.Model.load(f"{out}/checkpoints/final.ckpt")
        assert reloaded.config["mode"] == "UaDAN"
        assert reloaded.evaluate(bench)["mAP"] == summary["final"]["mAP"]
        assert reloaded.detect(bench, "target_eval", 0) == model.detect(bench, "target_eval", 0)

    print(f"ok: {summary['run_id']} mAP {summary['final']['mAP']:.4f}, {model.tensor_count()} tensors")


if __name__ == "__main__":
    main()

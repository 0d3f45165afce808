"""End-to-end exercise of the smartbin extension module.

Run from this directory after building the extension:

    cargo build --release -p smartbin-py
    cp ../target/release/libsmartbin.so smartbin.so
    python3 smoke_test.py
"""

import json
import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import smartbin


def approx(a, b, tol=1e-9):
    assert abs(a - b) <= tol, f"{a} != {b} (tol {tol})"


def check_split():
    ids = [f"img_{i:04}" for i in range(470)]
    train, test = smartbin.split_ids(ids, fraction=0.9, seed=7)
    assert len(train) == 423 and len(test) == 47
    assert sorted(train + test) == sorted(ids)
    again = smartbin.split_ids(ids, fraction=0.9, seed=7)
    assert (train, test) == again, "same seed must reproduce the split"
    try:
        smartbin.split_ids([], 0.9, 0)
    except ValueError:
        pass
    else:
        raise AssertionError("empty id list must be rejected")
    print("split_ids          ok")


def check_labels():
    boxes = smartbin.parse_labels("0 0.5 0.5 0.2 0.1\n1 0.25 0.75 0.1 0.1\n")
    assert [b["category_id"] for b in boxes] == [0, 1]
    approx(boxes[0]["cx"], 0.5)
    try:
        smartbin.parse_labels("2 0.5 0.5 0.2 0.1\n", category_count=2)
    except ValueError as err:
        assert "line 1" in str(err)
    else:
        raise AssertionError("out-of-range category must be rejected")
    print("parse_labels       ok")


def check_svm():
    model = smartbin.SvmModel.train(
        [([2.0, 0.0], 1.0), ([-2.0, 0.0], -1.0)], kernel="linear", c=1e6
    )
    w = model.w
    approx(w[0], 0.5, 1e-3)
    approx(w[1], 0.0, 1e-3)
    approx(model.b, 0.0, 1e-3)
    assert model.predict([3.0, -1.0]) == 1.0
    assert model.predict([-0.5, 4.0]) == -1.0

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.json")
        model.save(path)
        loaded = smartbin.SvmModel.load(path)
        approx(loaded.decision_value([1.0, 1.0]), model.decision_value([1.0, 1.0]))

    xor = [([1.0, 1.0], 1.0), ([-1.0, -1.0], 1.0), ([1.0, -1.0], -1.0), ([-1.0, 1.0], -1.0)]
    rbf = smartbin.SvmModel.train(xor, kernel="rbf", gamma=1.0, c=100.0)
    assert all(rbf.predict(x) == y for x, y in xor), "rbf must separate xor"
    print("SvmModel           ok")


def check_detector():
    grid = 4
    raw = {
        "grid_size": grid,
        "input_size": 416,
        "anchors": [[116.0, 90.0]],
        "category_count": 2,
        "cells": [
            {"cx": 1, "cy": 1, "anchor": 0, "t": [0.0, 0.0, 0.0, 0.0, 8.0, 9.0, -9.0]}
        ],
    }

    detections = smartbin.decode(raw)
    assert len(detections) == grid * grid
    kept = smartbin.nms(detections, iou_threshold=0.45, conf_threshold=0.25)
    assert len(kept) == 1
    top = kept[0]
    assert top["category_id"] == 0 and top["confidence"] > 0.99
    approx(top["cx"], 1.5 / grid)

    box = {"cx": 0.5, "cy": 0.5, "w": 0.2, "h": 0.2}
    approx(smartbin.iou(box, box), 1.0, 0.0)
    print("decode/nms/iou     ok")


def check_metrics():
    gt = [{"category_id": 0, "cx": 0.5, "cy": 0.5, "w": 0.2, "h": 0.2}]
    hit = dict(gt[0], confidence=0.9)
    miss = {"category_id": 0, "cx": 0.9, "cy": 0.9, "w": 0.05, "h": 0.05, "confidence": 0.95}

    perfect = smartbin.evaluate([[[hit], gt]], category_count=1)
    approx(perfect["map"], 1.0, 0.0)

    # A higher-confidence false positive outranks the hit: AP = 0.5.
    half = smartbin.evaluate([[[hit, miss], gt]], category_count=1)
    approx(half["map"], 0.5, 0.0)
    assert half["per_category"][0]["gt_count"] == 1

    snapshots = [
        {"iteration": i * 100, "images": [{"image_id": "a", "detections": [hit]}]}
        for i in range(1, 26)
    ]
    curve = smartbin.eval_curve(snapshots, [["a", gt]], category_count=1)
    assert len(curve) == 25
    assert curve[-1]["iteration"] == 2500
    approx(curve[-1]["map_value"], 1.0, 0.0)
    print("evaluate/curve     ok")


def check_compost():
    result = smartbin.simulate_compost(preset="reference")
    report = dict(result["report"]["rows"])
    approx(report["Organic matter"], 80.92, 0.005)
    approx(report["Ash Content"], 30.75, 0.005)
    approx(result["cn_ratio"], 22.19, 0.005)
    assert result["day"] == 14.0
    assert result["series_csv"].startswith("day,")
    assert len(result["series_csv"].strip().splitlines()) == 16  # header + days 0..14
    fresh = smartbin.simulate_compost(days=0.0)
    approx(fresh["cn_ratio"], 30.0, 1e-9)
    print("simulate_compost   ok")


def check_bin():
    script = []
    t = 0
    # category 0 routes to the composter side, category 1 to recycling
    for item, category in (("banana", 0), ("bottle", 1)):
        t += 1000
        script += [
            {"t_ms": t, "event": "item_arrived", "payload": item},
            {"t_ms": t + 100, "event": "timeout"},
            {
                "t_ms": t + 200,
                "event": "capture_done",
                "payload": {"detections": [
                    {"category_id": category, "cx": 0.5, "cy": 0.5, "w": 0.3, "h": 0.3,
                     "confidence": 0.97}
                ]},
            },
            {"t_ms": t + 500, "event": "rotation_done"},
            {"t_ms": t + 600, "event": "dump_done"},
        ]
        if category == 0:
            script.append({"t_ms": t + 700, "event": "transfer_done"})

    result = smartbin.run_bin(script)
    assert result["phase"] == "Idle"
    assert result["counts"] == {"bio": 1, "nonbio": 1}
    trace = result["trace"]
    assert trace[0]["t_ms"] == 0 and trace[0]["phase"] == "Idle"
    assert all(set(line) == {"t_ms", "phase", "disc_angle", "counts"} for line in trace)
    assert trace[-1]["disc_angle"] == 0
    print("run_bin            ok")


def main():
    checks = [
        check_split,
        check_labels,
        check_svm,
        check_detector,
        check_metrics,
        check_compost,
        check_bin,
    ]
    for check in checks:
        check()
    print(f"\nall {len(checks)} smoke checks passed")


if __name__ == "__main__":
    main()

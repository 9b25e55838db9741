"""Quick end-to-end check of the compiled extension."""

import math
import tempfile

import rnntrack


def main():
    theta = rnntrack.Theta(50, seed=1)
    assert theta.weight_count == 15400, theta

    merges = rnntrack.generate_tree(seed=3)
    assert len(merges) == 8 and merges[-1][2] == 17

    assert abs(rnntrack.iou((1, 1, 10, 10), (6, 1, 10, 10)) - 1 / 3) < 1e-12

    coef, err = rnntrack.lasso([[1.0, 0.0], [0.0, 1.0]], [0.5, 0.2], lam=0.1)
    assert abs(coef[0] - 0.4) < 1e-9 and abs(coef[1] - 0.1) < 1e-9, coef

    report = rnntrack.gradcheck(n=4, samples=2)
    assert report["max"] < 1e-5, report

    with tempfile.TemporaryDirectory() as d:
        gt = rnntrack.synth(d, frames=3, noise=0.0, velocity=(0, 0))
        boxes = rnntrack.track(d, candidates=50)
        m = rnntrack.metrics(boxes, gt)
        assert len(boxes) == 3 and not math.isnan(m["success_auc"])
    print("smoke test passed")


if __name__ == "__main__":
    main()

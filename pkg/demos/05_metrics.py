"""The three evaluation metrics and their boundary behavior.

Demonstrates segment PCP (both endpoints within half the ground-truth
segment length), radius PCP (within factor x sigma of the annotation), and
the PDJ detection-rate curve.
"""

import numpy as np

from hierpose.metrics import Segment, emit_report, pcp_radius, pcp_segments, pdj_curve


def main():
    gt = [np.array([[0.0, 0.0], [10.0, 0.0], [10.0, 8.0]])]
    segments = [Segment("upper", 0, 1), Segment("lower", 1, 2)]

    print("-- segment PCP: inclusive 50%-of-length rule --")
    for shift, label in ((4.9, "0.49 x length"), (5.0, "0.50 x length"), (5.1, "0.51 x length")):
        pred = [gt[0].copy()]
        pred[0][0, 0] += shift
        report = pcp_segments(pred, gt, segments)
        print(f"  endpoint off by {label}: upper segment "
              f"{'correct' if report.rates[0] else 'incorrect'}")

    print("\n-- radius PCP: within 1.5 sigma of the annotated location --")
    sigmas = np.array([2.0, 2.0, 2.0])
    for offset in (2.9, 3.0, 3.1):
        pred = [gt[0] + (offset, 0.0)]
        report = pcp_radius(pred, gt, sigmas, factor=1.5)
        print(f"  all parts off by {offset:.1f} px (sigma 2.0): total {report.aggregate:.0%}")

    print("\n-- PDJ curve --")
    rng = np.random.default_rng(0)
    gts = [rng.random((6, 2)) * 40 for _ in range(50)]
    preds = [g + rng.normal(0, 2.0, g.shape) for g in gts]
    normalizers = [20.0] * 50
    report = pdj_curve(preds, gts, normalizers, thresholds=[0.05, 0.1, 0.2, 0.3, 0.5])
    for threshold, rate in zip(report.params["thresholds"], report.rates):
        print(f"  error <= {threshold:.2f} x normalizer: {rate:.0%}")

    print("\nCSV emission:")
    print(emit_report(report, "csv"))


if __name__ == "__main__":
    main()

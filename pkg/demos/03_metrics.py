"""From per-frame scores to APCER, BPCER, ACER and ROC curves.

A video's score is the mean of its frame scores.  The threshold comes from the
validation equal-error point and is then frozen for the test set.

    python demos/03_metrics.py [--svg roc.svg]
"""
import argparse

import numpy as np

from padphys.metrics import VideoScore, classify_and_report, eer_threshold


def fake_videos(rng, n, label, centre):
    return [VideoScore(f"{label}{i}", label, np.clip(rng.normal(centre, 0.15, size=30), 0.01, 0.99))
            for i in range(n)]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--svg", help="write the ROC plot here")
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    # prints and masks carry no pulse; replays do, so they look live
    def corpus():
        return (fake_videos(rng, 40, "bonafide", 0.70) + fake_videos(rng, 20, "Pr", 0.30)
                + fake_videos(rng, 20, "PlM", 0.35) + fake_videos(rng, 20, "VR", 0.65))

    val, test = corpus(), corpus()
    tau, eer = eer_threshold(val)
    print(f"validation EER {100 * eer:.2f}% at threshold {tau:.4f}\n")
    report = classify_and_report(test, tau)
    print(report.to_table())
    for name, curve in report.roc.items():
        print(f"AUC {name:6s} {curve.auc:.3f}")
    if args.svg:
        with open(args.svg, "w") as fh:
            fh.write(report.roc_svg())
        print(f"\nROC plot -> {args.svg}")


if __name__ == "__main__":
    main()

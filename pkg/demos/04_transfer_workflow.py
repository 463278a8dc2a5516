"""Pulse pretraining, then a frozen-body attack detector.

Stage 1 trains the whole network to predict the pulse increment between
frames.  Stage 2 keeps that body fixed and fits only a new binary head on
live-vs-attack labels.  The threshold is calibrated on validation videos and
applied to the test videos.

The default settings use a very small corpus and finish in well under a minute.
``--desk`` switches to the full 128-clip corpus and the settings that the
acceptance suite uses (about four minutes).

    python demos/04_transfer_workflow.py [--desk] [--out DIR]
"""
import argparse
import tempfile
from pathlib import Path

from padphys.dataset import score_clips
from padphys.metrics import classify_and_report, eer_threshold
from padphys.network import NetworkConfig, save_weights
from padphys.preprocess import PreprocessConfig
from padphys.synthdata import SynthConfig, generate
from padphys.training import TrainConfig, train


def settings(desk: bool):
    if desk:
        return (SynthConfig(seed=1), PreprocessConfig(),
                NetworkConfig(conv_filters=(8, 8, 16, 16), head_hidden=32),
                TrainConfig(regime="scratch", epochs=8, pairs_per_clip=24),
                TrainConfig(regime="frozen_transfer", epochs=100, lr=3e-3, pairs_per_clip=None, patience=30))
    return (SynthConfig(n_users=3, clips_per_user=4, frames_per_clip=90, seed=1), PreprocessConfig(target_size=16),
            NetworkConfig(input_size=16, conv_filters=(6, 6, 12, 12), head_hidden=16),
            TrainConfig(regime="scratch", epochs=6, pairs_per_clip=24),
            TrainConfig(regime="frozen_transfer", epochs=60, lr=3e-3, pairs_per_clip=None, patience=20))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--desk", action="store_true")
    ap.add_argument("--out")
    args = ap.parse_args()
    out = Path(args.out or tempfile.mkdtemp(prefix="padphys-demo4-"))
    synth, pre, net, stage1, stage2 = settings(args.desk)

    corpus = generate(synth, out / "corpus")
    m = corpus.manifest
    print(f"{len(m.clips)} clips: " + ", ".join(f"{s} {len(m.split(s))}" for s in ("train", "val", "test")))

    body, log1 = train(m, net.replace(head="regression"), stage1, preprocess=pre)
    print(f"pulse regression: val MSE {log1.records[0].val_loss:.3f} -> {log1.records[log1.best_epoch].val_loss:.3f}")

    pad, log2 = train(m, net.replace(head="binary"), stage2, init=body, preprocess=pre)
    print(f"frozen transfer:  val BCE {log2.records[0].val_loss:.3f} -> {log2.records[log2.best_epoch].val_loss:.3f}"
          f" (epoch {log2.best_epoch})")
    save_weights(pad, out / "pad.w")
    print("lineage:", " -> ".join(p["tag"] for p in pad.provenance))

    tau, eer = eer_threshold(score_clips(m, pad, "val", pre))
    report = classify_and_report(score_clips(m, pad, "test", pre), tau)
    print(f"\nvalidation EER {100 * eer:.2f}%\n")
    print(report.to_table())
    (out / "roc.svg").write_text(report.roc_svg())
    print(f"artifacts in {out}")


if __name__ == "__main__":
    main()

"""Where the liveness signal lives.

Renders one live clip and one printed-photo clip, then looks at them the way
the network does: as normalized frame differences.  The live clip's skin
brightens and darkens with the heartbeat; the print only sways.

    python demos/01_motion_and_pulse.py
"""
import tempfile
from pathlib import Path

import numpy as np

from padphys.preprocess import PreprocessConfig, boxes_from_lists, load_clip, prepare_clip
from padphys.synthdata import SynthConfig, generate, roi_green_trace, spectral_check


def main():
    out = Path(tempfile.mkdtemp(prefix="padphys-demo1-")) / "corpus"
    corpus = generate(SynthConfig(n_users=1, clips_per_user=1, attack_types=("paper_like",), seed=4), out)
    m = corpus.manifest
    for entry, truth in zip(m.clips, corpus.truth):
        frames = load_clip(m.resolve(entry))
        peak, ratio = spectral_check(roi_green_trace(frames, entry.bboxes), fps=30.0)
        motion, appearance = prepare_clip(frames, boxes_from_lists(entry.bboxes), PreprocessConfig())
        # green channel, centre of the face crop: the pulse shows up as a periodic sign flip
        centre = motion[:, 1, 14:22, 14:22].mean(axis=(1, 2))
        print(f"{entry.id:22s} true HR {truth.heart_rate_hz:4.2f} Hz | "
              f"spectral peak {peak:4.2f} Hz, peak/median {ratio:5.1f} | "
              f"motion input {motion.shape}, centre trace std {centre.std():.3f}")
    print("\nA peak/median ratio above ~3 means a pulse is visible; white noise stays below 3 "
          "in 99.98% of trials.")
    print(f"corpus written to {out}")


if __name__ == "__main__":
    main()

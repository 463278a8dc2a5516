import numpy as np
import pytest

from padphys.network import NetworkConfig, body_forward, head_forward, init_weights
from padphys.synthdata import SynthConfig, generate
from padphys.training import bce_loss, mse_loss


REL_FLOOR = 1e-6
TINY = NetworkConfig(input_size=8, conv_filters=(2, 2, 3, 3), head_hidden=4, dropout_rate=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_config():
    return TINY


def network_loss(weights, motion, appearance, target):
    """Eval-mode loss of a batch; the quantity the gradient checks differentiate."""
    feats, _ = body_forward(motion, appearance, weights, "eval")
    pred = head_forward(feats, weights, "eval")
    fn = mse_loss if weights.config.head == "regression" else bce_loss
    return fn(pred, target)


def finite_difference_check(weights, motion, appearance, target, h=1e-5):
    """Worst relative error between analytic and central-difference gradients over all trainable components.

    Relative error is ``|a - n| / max(|a|, |n|, 1e-6)``: below 1e-6 in magnitude the
    central difference carries round-off of order 1e-11, so tiny components are
    held to an absolute tolerance of 1e-10 instead.
    """
    from padphys.tensor import backward

    weights.params.zero_grad()
    backward(network_loss(weights, motion, appearance, target))
    worst = 0.0
    checked = 0
    for name in weights.params.trainable_names():
        t = weights.params[name]
        analytic = t.grad.copy()
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = network_loss(weights, motion, appearance, target).item()
            flat[i] = orig - h
            down = network_loss(weights, motion, appearance, target).item()
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            a = analytic.reshape(-1)[i]
            worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), REL_FLOOR))
            checked += 1
    weights.params.zero_grad()
    return worst, checked


@pytest.fixture(scope="session")
def corpus64(tmp_path_factory):
    """4 users x 4 clips x (bona-fide + 3 attacks) = 64 short clips, split 2/1/1 per cell."""
    cfg = SynthConfig(n_users=4, clips_per_user=4, frames_per_clip=64, seed=3)
    return generate(cfg, tmp_path_factory.mktemp("corpus") / "c64")


@pytest.fixture(scope="session")
def corpus20(tmp_path_factory):
    """One user x 5 clips x 4 classes = 20 clips, split 3/1/1 per cell."""
    cfg = SynthConfig(n_users=1, clips_per_user=5, frames_per_clip=48, seed=5)
    return generate(cfg, tmp_path_factory.mktemp("corpus") / "c20")


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE: list[str] = []


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  criterion {number}: {detail}"
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)

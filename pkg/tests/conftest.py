"""Shared fixtures and independent oracles for the test suite."""

import numpy as np
import pytest

from corrnet.data import generate_textured_image
from corrnet.geometry import Rect
from corrnet.model import EncoderConfig, build_model

_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def criterion():
    """Record one pass/fail line per acceptance criterion."""

    def _record(num, name, ok, detail=""):
        line = f"criterion {num:02d} {name}: {'PASS' if ok else 'FAIL'}"
        if detail:
            line += f"  [{detail}]"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def pixel_overlap_fraction(a: Rect, b: Rect) -> float:
    """Paint both rects on a boolean canvas and count shared pixels.

    Deliberately avoids interval arithmetic so it can referee
    rect_overlap_fraction and the sampler's spatial invariants.
    """
    x1 = max(a.x1, b.x1)
    y1 = max(a.y1, b.y1)
    mask_a = np.zeros((y1, x1), dtype=bool)
    mask_b = np.zeros((y1, x1), dtype=bool)
    mask_a[a.y0 : a.y1, a.x0 : a.x1] = True
    mask_b[b.y0 : b.y1, b.x0 : b.x1] = True
    inter = int(np.logical_and(mask_a, mask_b).sum())
    return inter / min(a.area, b.area)


def pixels_disjoint(a: Rect, b: Rect) -> bool:
    return pixel_overlap_fraction(a, b) == 0.0


@pytest.fixture(scope="session")
def textured_images():
    """Six 96x128 synthetic images with multi-scale structure."""
    rng = np.random.default_rng(1234)
    return [generate_textured_image(96, 128, rng) for _ in range(6)]


@pytest.fixture(scope="session")
def tiny_config():
    return EncoderConfig(arch="small", channels_per_stage=(4, 8), description_size=8)


@pytest.fixture(scope="session")
def tiny_model(tiny_config):
    """Two-stage encoder for gradient checks. Read-only: copy before training."""
    return build_model(tiny_config, seed=0)

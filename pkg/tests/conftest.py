"""Shared test fixtures: synthetic images, dataset trees, and the
acceptance-criteria result registry printed in the terminal summary."""

import numpy as np
import pytest
from PIL import Image

# (criterion, passed, detail) tuples registered by test_acceptance.py.
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_RESULTS:
        tag = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"{tag}  {name}: {detail}")


def write_png(path, value, size=(8, 8)):
    """Solid-color RGB PNG; value is one grey level or an (r, g, b) tuple."""
    if isinstance(value, int):
        value = (value, value, value)
    Image.new("RGB", size, value).save(path)


def write_array_png(path, array):
    """8-bit RGB PNG from a float [0,1] or uint8 (H, W, 3) array."""
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, "RGB").save(path)


@pytest.fixture
def class_tree(tmp_path):
    """Build root/<class>[/<group>]/*.png trees on demand.

    counts maps class name -> int (flat) or {group: int}.
    """
    def build(counts, size=(8, 8), start_value=40):
        root = tmp_path / "data"
        value = start_value
        for cname, spec in counts.items():
            groups = spec if isinstance(spec, dict) else {"": spec}
            for group, n in groups.items():
                d = root / cname / group if group else root / cname
                d.mkdir(parents=True, exist_ok=True)
                for i in range(n):
                    write_png(d / f"img{i:04d}.png", value % 256, size)
                    value += 7
        return root
    return build

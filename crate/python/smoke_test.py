"""Smoke test for the handid_py extension.

Build and install the extension first:

    pip install --no-build-isolation -e crates/py

then run `python python/smoke_test.py`.
"""

import math
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

import handid_py

CONFIG = """
output_dir = "run"
[dataset]
subset = "HD"
root = "hd"
[seeds]
partition = 5
splits = 6
training = 7
[train]
batch_size = 4
validate_every = 2
[train.schedule]
warmup_epochs = 1
lr_start = 1e-4
lr_base = 2e-3
steps = [[2, 1e-3], [3, 5e-4]]
total_epochs = 4
"""


def write_fixture(root: Path) -> Path:
    rng = np.random.default_rng(0)
    for ident in range(8):
        base = rng.integers(0, 256, size=(4, 4, 3), dtype=np.uint8)
        for j in range(3):
            cells = np.kron(base, np.ones((8, 8, 1), dtype=np.uint8))
            noise = rng.integers(-6, 7, size=cells.shape)
            img = np.clip(cells.astype(int) + noise, 0, 255).astype(np.uint8)
            path = root / "hd" / f"{ident + 1:04}" / f"{j}.png"
            path.parent.mkdir(parents=True, exist_ok=True)
            Image.fromarray(img).save(path)
    config = root / "exp.toml"
    config.write_text(CONFIG)
    return config


def check_pipeline(root: Path) -> None:
    config = write_fixture(root)
    resolved = handid_py.resolve_config(str(config))
    assert len(resolved["config_hash"]) == 64

    summary = handid_py.prepare(str(config))
    assert summary["identities"] == 8
    assert summary["train_identities"] + summary["test_identities"] == 8

    history = handid_py.train(str(config))
    assert len(history) == 4
    assert all(math.isfinite(m["total_loss"]) for m in history)

    result = handid_py.evaluate(str(config))
    assert len(result["per_split"]) == 10
    assert 0.0 <= result["map"] <= 1.0
    assert result["report"].startswith("# config-hash " + resolved["config_hash"])

    grid = handid_py.visualize(str(config), n_queries=2, top_n=3)
    assert Path(grid).exists()

    (root / "hd").rename(root / "moved")
    try:
        handid_py.prepare(str(config), output_dir=str(root / "other"))
    except ValueError as e:
        assert "hd" in str(e)
    else:
        raise AssertionError("missing dataset root was accepted")


def check_metrics() -> None:
    rng = np.random.default_rng(1)
    gallery = rng.normal(size=(6, 8)).astype(np.float32)
    queries = gallery[[0, 2, 4]] + 0.01 * rng.normal(size=(3, 8)).astype(np.float32)
    labels = [str(i) for i in range(6)]
    cmc, mean_ap = handid_py.rank_metrics(queries.tolist(), gallery.tolist(), ["0", "2", "4"], labels, k_max=3)
    assert cmc == [1.0, 1.0, 1.0], cmc
    assert abs(mean_ap - 1.0) < 1e-12


def main() -> None:
    check_metrics()
    with tempfile.TemporaryDirectory() as tmp:
        check_pipeline(Path(tmp))
    print("handid_py smoke test passed")


if __name__ == "__main__":
    main()

"""Refit the packaged lda_poly baseline on the H2 R = 1.6 reference.

Runs the ``h2_lda_fit`` train preset and copies the best checkpoint to
``src/qxc/data/lda_h2.json``.
"""

import shutil
import sys
import tempfile
from pathlib import Path

from qxc.harness.cli import main

TARGET = Path(__file__).resolve().parents[1] / "src" / "qxc" / "data" / "lda_h2.json"

if __name__ == "__main__":
    with tempfile.TemporaryDirectory() as tmp:
        code = main(["train", "--config", "h2_lda_fit", "--run-dir", tmp])
        if code:
            sys.exit(code)
        shutil.copy(Path(tmp) / "checkpoints" / "best.json", TARGET)
    print(f"wrote {TARGET}")

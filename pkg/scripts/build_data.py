"""Regenerate the packaged reference datasets with the dataset-gen presets.

Usage: python scripts/build_data.py [h2_profile] [h2_coarse]
(no arguments rebuilds both; h2_profile takes a few minutes).
"""

import shutil
import sys
import tempfile
from pathlib import Path

from qxc.harness.cli import main
from qxc.harness.config import PRESETS

DATA = Path(__file__).resolve().parents[1] / "src" / "qxc" / "data"

if __name__ == "__main__":
    names = sys.argv[1:] or ["h2_profile", "h2_coarse"]
    for name in names:
        output = PRESETS["dataset-gen"][name]["output"]
        with tempfile.TemporaryDirectory() as tmp:
            code = main(["dataset-gen", "--config", name, "--run-dir", tmp])
            if code:
                sys.exit(code)
            shutil.copy(Path(tmp) / "reports" / output, DATA / output)
        print(f"wrote {DATA / output}")

"""
The batch pipeline
==================

The ``uraner`` command runs the stages in order: ingest, index, retrieve,
train, predict, ensemble, evaluate, analyze. This script copies the
bundled 50-sentence fixture to a scratch directory and runs every stage
there; it takes about a minute.
"""

import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

fixture = Path(__file__).resolve().parent / "fixture"
work = Path(tempfile.mkdtemp()) / "fixture"
shutil.copytree(fixture, work, ignore=shutil.ignore_patterns("work"))
config = work / "config.json"

for stage in ("ingest", "index", "retrieve", "train", "predict", "ensemble", "evaluate", "analyze"):
    print(f"$ uraner --config {config.name} {stage}")
    subprocess.run([sys.executable, "-m", "uraner", "--config", str(config), stage], check=True)

print("\nartifacts:")
for path in sorted((work / "work").rglob("*")):
    if path.is_file():
        print("  ", path.relative_to(work))

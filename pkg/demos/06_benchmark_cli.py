"""Driving the benchmark from the command line.

The same runs are available through the ``marigold-bench`` script (or
``python -m marigold``). This demo validates the example configuration, runs
it into a temporary directory and reruns one oracle.
"""

import subprocess
import sys
import tempfile
from pathlib import Path

here = Path(__file__).parent
config = here / "configs" / "quadratic_8task.ini"
out = tempfile.mkdtemp(prefix="cli_demo_")

for args in (["validate", "--config", str(config)],
             ["run", "--config", str(config), "--out", out],
             ["oracle", "eval_counters"]):
    print("$ marigold-bench", " ".join(args))
    res = subprocess.run([sys.executable, "-m", "marigold", *args], capture_output=True, text=True)
    print(res.stdout + res.stderr, end="")
    print(f"(exit code {res.returncode})\n")

print((Path(out) / "summary.csv").read_text())

import subprocess
import sys
from pathlib import Path

import pytest

DEMOS = Path(__file__).resolve().parent.parent / "demos"


@pytest.mark.parametrize("script,args,expect", [
    ("quickstart.py", [], "synthesis iterations: [5]"),
    ("coverage_comparison.py", ["2"], "normal_rag"),
    ("dendrogram_batching.py", [], "['orchard-a', 'orchard-b']"),
])
def test_demo_runs(script, args, expect):
    out = subprocess.run([sys.executable, str(DEMOS / script), *args], capture_output=True, text=True,
                         timeout=120, check=True)
    assert expect in out.stdout

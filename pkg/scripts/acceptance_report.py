"""Run the acceptance tests and print only the PASS/FAIL lines."""
import subprocess
import sys
from pathlib import Path

root = Path(__file__).resolve().parents[1]
proc = subprocess.run([sys.executable, "-m", "pytest", "-q", str(root / "tests" / "test_acceptance.py")],
                      capture_output=True, text=True, cwd=root)
lines = [ln for ln in proc.stdout.splitlines() if ln.startswith("criterion")]
print("\n".join(lines) if lines else proc.stdout)
sys.exit(proc.returncode)

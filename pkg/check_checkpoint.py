# check_checkpoint.py
# Quick look inside an ISHNE checkpoint:  python check_checkpoint.py runs/latest/checkpoint.ckpt
import sys

import numpy as np

from ishne.checkpoint import load_checkpoint, read_checkpoint
from ishne.errors import IshneError

path = sys.argv[1] if len(sys.argv) > 1 else "runs/latest/checkpoint.ckpt"
print("checkpoint:", path)

try:
    meta, arrays = read_checkpoint(path)
except IshneError as e:
    print("cannot read:", e)
    sys.exit(e.exit_code)

for key in sorted(meta):
    print(f"  {key}: {meta[key]}")

total = 0
for name, arr in sorted(arrays.items()):
    total += arr.size
    finite = "ok" if np.all(np.isfinite(arr)) else "NON-FINITE"
    print(f"  {name:<24} {str(arr.shape):<12} |w|={np.linalg.norm(arr):.4g} {finite}")
print("parameters:", total)

try:
    model = load_checkpoint(path)
    print("model rebuilds: meta-paths", model.names, "classes", model.n_classes)
except IshneError as e:
    print("model does not rebuild:", type(e).__name__, e)
    sys.exit(e.exit_code)

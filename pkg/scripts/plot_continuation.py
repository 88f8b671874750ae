"""Plot the final parameter field and the I_p / I_inf trajectory of a continuation run.

    python3 scripts/plot_continuation.py out/benchmark  (needs matplotlib)
"""

import json
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from linfmisfit import config as C  # noqa: E402

out = Path(sys.argv[1] if len(sys.argv) > 1 else "out/benchmark")
cfg = C.load(out / "config.json")
mesh = C.build_mesh(cfg)
doc = json.loads((out / "continuation.json").read_text())
xi = np.array(doc["final_xi"])
p = [s["p"] for s in doc["stages"]]

fig, (a, b) = plt.subplots(1, 2, figsize=(10, 4))
tp = a.tripcolor(mesh.vertices[:, 0], mesh.vertices[:, 1], mesh.triangles, facecolors=xi, cmap="viridis")
fig.colorbar(tp, ax=a)
a.set_aspect("equal")
a.set_title(f"xi at p = {p[-1]:g}")
b.semilogx(p, [s["Ip"] for s in doc["stages"]], "o-", label="I_p(x_p)", base=2)
b.semilogx(p, [s["Iinf"] for s in doc["stages"]], "s--", label="I_inf(x_p)", base=2)
b.set_xlabel("p")
b.legend()
fig.tight_layout()
fig.savefig(out / "continuation.png", dpi=120)
print(out / "continuation.png")

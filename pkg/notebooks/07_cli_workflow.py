"""Driving the command-line tool from a YAML config.

Run with ``python notebooks/07_cli_workflow.py``; artifacts land in a
temporary directory that is listed at the end.
"""

import json
import os
import tempfile

from rankflux import cli, io

CONFIG = """\
seed: 11
coefficients: {b: linear, sigma: "constant:1"}
grid: {dx: 0.05, T: 0.5}
kernel: {y: [0.0], times: [0.25, 0.5]}
chaos: {n_list: [20, 40, 80], replications: 20, dt: 0.05, bootstrap: 100}
wasserstein: {n_list: [10, 100, 1000], replications: 50}
"""

root = tempfile.mkdtemp()
cfg = os.path.join(root, "exp.yaml")
with open(cfg, "w") as fh:
    fh.write(CONFIG)
out = os.path.join(root, "out")
for sub in ("solve-pme", "kernel", "chaos", "wasserstein-rate"):
    print(sub, "->", cli.main([sub, "--config", cfg, "--out", out]))

# A second run reuses the cached limit grid instead of solving again.
cli.main(["kernel", "--config", cfg, "--out", out])
(h,) = [d for d in os.listdir(out) if d != "cache"]
print("run log:", json.load(open(os.path.join(out, h, "kernel.runlog.json")))["cache"])

prov, header, rows = io.read_csv(os.path.join(out, h, "wasserstein-rate", "rate.csv"))
print(prov)
print(header)
for r in rows:
    print(r)
for base, _, files in sorted(os.walk(out)):
    for f in sorted(files):
        print(os.path.relpath(os.path.join(base, f), out))

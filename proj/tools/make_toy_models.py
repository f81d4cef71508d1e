#!/usr/bin/env python3
"""Regenerates the bundled toy archives under data/.

Trains a small pre-norm encoder (tanh GELU, LN eps 1e-6) on a synthetic
"sparse cluster" task: each sequence carries a few signal patches drawn
around a class prototype at random positions, the rest is background noise.
Writes CPVT archives with JSON sidecars plus input bundles holding labels and
reference logits computed here in float32.

    python3 tools/make_toy_models.py --out data
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

sys.path.insert(0, str(Path(__file__).resolve().parent / "exporter"))
from cpvt import write as write_archive  # noqa: E402
from export import LN_EPS, ToyEncoder  # noqa: E402


def affine(linear):
    # torch stores out x in; the archive stores in x out followed by the bias row
    w = linear.weight.detach().double().numpy().T
    b = linear.bias.detach().double().numpy()[None, :]
    return np.concatenate([w, b], axis=0)


def norm(ln):
    return np.stack([ln.weight.detach().double().numpy(), ln.bias.detach().double().numpy()])


def export_model(model, config, base):
    entries = []
    for i, b in enumerate(model.blocks):
        for key in ("wq", "wk", "wv", "wo", "ffn1", "ffn2"):
            entries.append((f"layer{i}.{key}", affine(b[key])))
        entries.append((f"layer{i}.ln1", norm(b["ln1"])))
        entries.append((f"layer{i}.ln2", norm(b["ln2"])))
    entries.append(("head.norm", norm(model.norm)))
    entries.append(("head.fc", affine(model.fc)))
    write_archive(base.with_suffix(".cpvt"), entries)
    sidecar = {
        "format": "cpvt-encoder",
        "version": 1,
        **config,
        "ln_eps": LN_EPS,
        "norm_layout": "pre",
        "gelu": "tanh",
    }
    base.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")


class ClusterTask:
    """Sequences of CLS + grid patches; `signal` patches carry the class."""

    def __init__(self, seq_len, embed_dim, classes, signal, seed):
        g = np.random.default_rng(seed)
        self.seq_len = seq_len
        self.classes = classes
        self.signal = signal
        self.prototypes = g.normal(size=(classes, embed_dim)) * 1.6
        self.positions = g.normal(size=(seq_len, embed_dim)) * 0.5
        self.cls = g.normal(size=embed_dim)

    def sample(self, n, g):
        length, e = self.positions.shape
        x = g.normal(size=(n, length, e)) * 1.0
        labels = g.integers(0, self.classes, size=n)
        for i in range(n):
            spots = g.choice(np.arange(1, length), size=self.signal, replace=False)
            x[i, spots] = self.prototypes[labels[i]] + g.normal(size=(self.signal, e)) * 0.4
        x[:, 0] = self.cls
        x += self.positions[None]
        return x, labels


def train(model, task, steps, seed):
    g = np.random.default_rng(seed)
    opt = torch.optim.Adam(model.parameters(), lr=2e-3)
    for step in range(steps):
        x, y = task.sample(128, g)
        loss = F.cross_entropy(model(torch.tensor(x, dtype=torch.float32)), torch.tensor(y))
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % 200 == 0 or step == steps - 1:
            print(f"  step {step:5d} loss {loss.item():.4f}")


def export_inputs(model, x, labels, path):
    with torch.no_grad():
        logits = model(torch.tensor(x, dtype=torch.float32)).double().numpy()
    write_archive(
        path,
        [("inputs", x), ("labels", labels.astype(np.float64)), ("reference_logits", logits)],
    )
    return (logits.argmax(axis=1) == labels).mean()


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=Path("data"))
    parser.add_argument("--steps", type=int, default=1500)
    args = parser.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(0)

    # trained classifier used by the ablation and segment experiments
    cfg = dict(num_layers=4, num_heads=4, seq_len=17, head_dim=8, embed_dim=32, ffn_hidden=64, num_classes=4)
    task = ClusterTask(cfg["seq_len"], cfg["embed_dim"], cfg["num_classes"], signal=3, seed=1)
    model = ToyEncoder(cfg["num_layers"], cfg["num_heads"], cfg["head_dim"], cfg["ffn_hidden"], cfg["num_classes"])
    print("training toy_cluster")
    train(model, task, args.steps, seed=2)
    model.eval()
    export_model(model, cfg, args.out / "toy_cluster")
    x, y = task.sample(128, np.random.default_rng(3))
    acc = export_inputs(model, x, y, args.out / "toy_cluster_inputs.cpvt")
    print(f"toy_cluster held-out accuracy {acc:.3f}")

    # untrained 2-layer model kept only for cross-implementation parity
    pcfg = dict(num_layers=2, num_heads=2, seq_len=9, head_dim=4, embed_dim=8, ffn_hidden=32, num_classes=3)
    parity = ToyEncoder(pcfg["num_layers"], pcfg["num_heads"], pcfg["head_dim"], pcfg["ffn_hidden"],
                        pcfg["num_classes"])
    parity.eval()
    export_model(parity, pcfg, args.out / "toy_parity")
    g = np.random.default_rng(4)
    px = g.normal(size=(8, pcfg["seq_len"], pcfg["embed_dim"]))
    export_inputs(parity, px, g.integers(0, pcfg["num_classes"], size=8), args.out / "toy_parity_inputs.cpvt")
    print("wrote", sorted(p.name for p in args.out.iterdir()))


if __name__ == "__main__":
    main()

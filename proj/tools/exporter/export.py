#!/usr/bin/env python3
"""Exports a ViT-style encoder into a CPVT archive, its JSON config sidecar,
an input bundle with reference logits and a manifest.

    export.py --model <id> --out <dir> [--capture-attention] [--sample <path>]

Model ids:
    tiny               2-layer randomly initialised encoder (seeded)
    torchvision-tiny   2-layer torchvision VisionTransformer, 32x32 images, 8x8 patches
    torchvision:<name> any torchvision vit_* builder, e.g. torchvision:vit_b_16

Reference logits are computed in torch with GELU switched to its tanh
approximation, the variant the engine implements.
"""

import argparse
import hashlib
import json
import math
import re
import sys
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

sys.path.insert(0, str(Path(__file__).resolve().parent))
import cpvt  # noqa: E402

LN_EPS = 1e-6
PARITY_TOLERANCE = 1e-3


class UnsupportedLayoutError(Exception):
    def __init__(self, names):
        self.names = sorted(names)
        super().__init__("unsupported encoder layout; unexpected parameters: " + ", ".join(self.names))


class ToyEncoder(torch.nn.Module):
    """Pre-norm encoder with split Q/K/V projections and a CLS readout."""

    def __init__(self, layers, heads, head_dim, ffn, classes):
        super().__init__()
        self.heads = heads
        self.head_dim = head_dim
        e = heads * head_dim
        self.blocks = torch.nn.ModuleList()
        for _ in range(layers):
            self.blocks.append(
                torch.nn.ModuleDict(
                    {
                        "ln1": torch.nn.LayerNorm(e, eps=LN_EPS),
                        "wq": torch.nn.Linear(e, e),
                        "wk": torch.nn.Linear(e, e),
                        "wv": torch.nn.Linear(e, e),
                        "wo": torch.nn.Linear(e, e),
                        "ln2": torch.nn.LayerNorm(e, eps=LN_EPS),
                        "ffn1": torch.nn.Linear(e, ffn),
                        "ffn2": torch.nn.Linear(ffn, e),
                    }
                )
            )
        self.norm = torch.nn.LayerNorm(e, eps=LN_EPS)
        self.fc = torch.nn.Linear(e, classes)

    def forward(self, x, attention=None):
        n, length, e = x.shape
        for b in self.blocks:
            y = b["ln1"](x)
            q = b["wq"](y).view(n, length, self.heads, self.head_dim).transpose(1, 2)
            k = b["wk"](y).view(n, length, self.heads, self.head_dim).transpose(1, 2)
            v = b["wv"](y).view(n, length, self.heads, self.head_dim).transpose(1, 2)
            probs = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(self.head_dim), dim=-1)
            if attention is not None:
                attention.append(probs)
            x = x + b["wo"]((probs @ v).transpose(1, 2).reshape(n, length, e))
            x = x + b["ffn2"](F.gelu(b["ffn1"](b["ln2"](x)), approximate="tanh"))
        return self.fc(self.norm(x[:, 0]))


def _affine(weight, bias):
    # torch stores out x in; the archive stores in x out followed by the bias row
    w = weight.detach().double().cpu().numpy().T
    b = bias.detach().double().cpu().numpy()[None, :]
    return np.concatenate([w, b], axis=0)


def _norm(weight, bias):
    return np.stack([weight.detach().double().cpu().numpy(), bias.detach().double().cpu().numpy()])


def _check_names(names, patterns):
    unexpected = [n for n in names if not any(re.fullmatch(p, n) for p in patterns)]
    if unexpected:
        raise UnsupportedLayoutError(unexpected)


class ToySource:
    def __init__(self, model, seq_len):
        _check_names(
            [n for n, _ in model.named_parameters()],
            [r"blocks\.\d+\.(wq|wk|wv|wo|ffn1|ffn2|ln1|ln2)\.(weight|bias)", r"(norm|fc)\.(weight|bias)"],
        )
        self.model = model
        self.seq_len = seq_len
        first = model.blocks[0]
        self.config = dict(
            num_layers=len(model.blocks),
            num_heads=model.heads,
            seq_len=seq_len,
            head_dim=model.head_dim,
            embed_dim=model.heads * model.head_dim,
            ffn_hidden=first["ffn1"].out_features,
            num_classes=model.fc.out_features,
        )

    def entries(self):
        out = []
        for i, b in enumerate(self.model.blocks):
            for key in ("wq", "wk", "wv", "wo", "ffn1", "ffn2"):
                out.append((f"layer{i}.{key}", _affine(b[key].weight, b[key].bias)))
            out.append((f"layer{i}.ln1", _norm(b["ln1"].weight, b["ln1"].bias)))
            out.append((f"layer{i}.ln2", _norm(b["ln2"].weight, b["ln2"].bias)))
        out.append(("head.norm", _norm(self.model.norm.weight, self.model.norm.bias)))
        out.append(("head.fc", _affine(self.model.fc.weight, self.model.fc.bias)))
        return out

    def default_sample(self, seed):
        g = np.random.default_rng(seed)
        return g.normal(size=(1, self.seq_len, self.config["embed_dim"]))

    def load_sample(self, path):
        tokens = np.load(path)
        return tokens[None] if tokens.ndim == 2 else tokens

    def embed(self, sample):
        return torch.tensor(np.asarray(sample), dtype=torch.float32)

    @torch.no_grad()
    def run(self, tokens, capture):
        attention = [] if capture else None
        logits = self.model(tokens, attention)
        return logits, attention


class TorchvisionSource:
    LAYER = r"encoder\.layers\.encoder_layer_(\d+)\."

    def __init__(self, model):
        names = [n for n, _ in model.named_parameters()]
        _check_names(
            names,
            [
                r"conv_proj\.(weight|bias)",
                r"class_token",
                r"encoder\.pos_embedding",
                self.LAYER + r"(ln_1|ln_2)\.(weight|bias)",
                self.LAYER + r"self_attention\.(in_proj_weight|in_proj_bias|out_proj\.weight|out_proj\.bias)",
                self.LAYER + r"mlp\.(0|3)\.(weight|bias)",
                r"encoder\.ln\.(weight|bias)",
                r"heads\.head\.(weight|bias)",
            ],
        )
        for layer in model.encoder.layers:
            if not layer.self_attention._qkv_same_embed_dim or layer.ln_1.eps != LN_EPS:
                raise UnsupportedLayoutError(["self_attention (separate q/k/v dims or layer-norm eps != 1e-6)"])
        self.model = model
        e = model.hidden_dim
        heads = model.encoder.layers[0].num_heads
        self.config = dict(
            num_layers=len(model.encoder.layers),
            num_heads=heads,
            seq_len=(model.image_size // model.patch_size) ** 2 + 1,
            head_dim=e // heads,
            embed_dim=e,
            ffn_hidden=model.mlp_dim,
            num_classes=model.num_classes,
        )
        # the engine implements the tanh approximation only
        for m in model.modules():
            if isinstance(m, torch.nn.GELU):
                m.approximate = "tanh"

    def entries(self):
        out = []
        e = self.config["embed_dim"]
        for i, layer in enumerate(self.model.encoder.layers):
            attn = layer.self_attention
            w_in, b_in = attn.in_proj_weight, attn.in_proj_bias
            # fused in_proj rows are [q; k; v]
            for j, key in enumerate(("wq", "wk", "wv")):
                out.append((f"layer{i}.{key}", _affine(w_in[j * e:(j + 1) * e], b_in[j * e:(j + 1) * e])))
            out.append((f"layer{i}.wo", _affine(attn.out_proj.weight, attn.out_proj.bias)))
            out.append((f"layer{i}.ffn1", _affine(layer.mlp[0].weight, layer.mlp[0].bias)))
            out.append((f"layer{i}.ffn2", _affine(layer.mlp[3].weight, layer.mlp[3].bias)))
            out.append((f"layer{i}.ln1", _norm(layer.ln_1.weight, layer.ln_1.bias)))
            out.append((f"layer{i}.ln2", _norm(layer.ln_2.weight, layer.ln_2.bias)))
        out.append(("head.norm", _norm(self.model.encoder.ln.weight, self.model.encoder.ln.bias)))
        out.append(("head.fc", _affine(self.model.heads.head.weight, self.model.heads.head.bias)))
        return out

    def default_sample(self, seed):
        g = np.random.default_rng(seed)
        size = self.model.image_size
        return g.uniform(size=(1, 3, size, size))

    def load_sample(self, path):
        path = Path(path)
        if path.suffix == ".npy":
            images = np.load(path)
            return images[None] if images.ndim == 3 else images
        from PIL import Image

        size = self.model.image_size
        image = Image.open(path).convert("RGB").resize((size, size))
        return (np.asarray(image, dtype=np.float64) / 255.0).transpose(2, 0, 1)[None]

    @torch.no_grad()
    def embed(self, sample):
        x = self.model._process_input(torch.tensor(np.asarray(sample), dtype=torch.float32))
        cls = self.model.class_token.expand(x.shape[0], -1, -1)
        return torch.cat([cls, x], dim=1) + self.model.encoder.pos_embedding

    @torch.no_grad()
    def run(self, tokens, capture):
        attention = [] if capture else None
        x = tokens
        for layer in self.model.encoder.layers:
            y = layer.ln_1(x)
            out, weights = layer.self_attention(y, y, y, need_weights=capture, average_attn_weights=False)
            if capture:
                attention.append(weights)
            x = x + out
            x = x + layer.mlp(layer.ln_2(x))
        x = self.model.encoder.ln(x)
        return self.model.heads(x[:, 0]), attention


def build_source(model_id, seed, pretrained=False):
    torch.manual_seed(seed)
    if model_id == "tiny":
        return ToySource(ToyEncoder(2, 2, 4, 32, 3).eval(), seq_len=9)
    if model_id == "torchvision-tiny":
        from torchvision.models.vision_transformer import VisionTransformer

        model = VisionTransformer(image_size=32, patch_size=8, num_layers=2, num_heads=2, hidden_dim=8,
                                  mlp_dim=32, num_classes=3)
        # torchvision zero-initialises the classifier, which would make parity trivial
        torch.nn.init.normal_(model.heads.head.weight, std=0.5)
        torch.nn.init.normal_(model.heads.head.bias, std=0.5)
        return TorchvisionSource(model.eval())
    if model_id.startswith("torchvision:"):
        import torchvision.models as tvm

        name = model_id.split(":", 1)[1]
        if not name.startswith("vit_") or not hasattr(tvm, name):
            raise UnsupportedLayoutError([name])
        model = getattr(tvm, name)(weights="DEFAULT" if pretrained else None)
        return TorchvisionSource(model.eval())
    raise ValueError(f"unknown model id {model_id!r}")


def export(model_id, output_dir, sample_input=None, capture_attention=False, seed=0, pretrained=False):
    """Writes model.cpvt, model.json, inputs.cpvt, manifest.json (and attention.cpvt) into output_dir."""
    source = build_source(model_id, seed, pretrained)
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)

    archive = cpvt.write(out / "model.cpvt", source.entries())
    sidecar = {"format": "cpvt-encoder", "version": 1, **source.config, "ln_eps": LN_EPS, "norm_layout": "pre",
               "gelu": "tanh"}
    (out / "model.json").write_text(json.dumps(sidecar, indent=2) + "\n")

    if sample_input is None:
        sample = source.default_sample(seed)
        reference = f"random:seed={seed}"
    else:
        sample = source.load_sample(sample_input)
        reference = Path(sample_input).name
    tokens = source.embed(sample)
    logits, attention = source.run(tokens, capture_attention)
    cpvt.write(out / "inputs.cpvt", [("inputs", tokens.double().numpy()),
                                     ("reference_logits", logits.double().numpy())])
    if capture_attention:
        entries = [(f"layer{i}.attention", a[0].double().numpy()) for i, a in enumerate(attention)]
        cpvt.write(out / "attention.cpvt", entries)

    manifest = {
        "format": "cpvt-export-manifest",
        "version": 1,
        "source": model_id,
        **{k: source.config[k] for k in ("num_layers", "num_heads", "seq_len", "head_dim", "embed_dim")},
        "archive": "model.cpvt",
        "archive_sha256": hashlib.sha256(archive).hexdigest(),
        "inputs": "inputs.cpvt",
        "attention": "attention.cpvt" if capture_attention else None,
        "reference_input": reference,
        "reference_logits": [float(v) for v in logits[0].double().tolist()],
        "gelu": "tanh",
        "parity_tolerance": PARITY_TOLERANCE,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def verify_manifest(output_dir):
    out = Path(output_dir)
    manifest = json.loads((out / "manifest.json").read_text())
    digest = hashlib.sha256((out / manifest["archive"]).read_bytes()).hexdigest()
    return digest == manifest["archive_sha256"]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--model", required=True)
    parser.add_argument("--out", required=True, type=Path)
    parser.add_argument("--capture-attention", action="store_true")
    parser.add_argument("--sample", type=Path)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--pretrained", action="store_true", help="load torchvision's default weights")
    args = parser.parse_args()
    try:
        manifest = export(args.model, args.out, args.sample, args.capture_attention, args.seed, args.pretrained)
    except UnsupportedLayoutError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(f"exported {manifest['source']} layers={manifest['num_layers']} sha256={manifest['archive_sha256']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

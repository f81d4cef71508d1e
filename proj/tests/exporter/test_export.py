import filecmp
import json
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np
import pytest
import torch

ROOT = Path(__file__).resolve().parents[2]
sys.path.insert(0, str(ROOT / "tools" / "exporter"))

import cpvt  # noqa: E402
import export  # noqa: E402


@pytest.fixture(scope="module")
def export_root(tmp_path_factory):
    # the C++ parity suite reads the same directory when ctest passes it in
    shared = os.environ.get("CPVIT_EXPORT_DIR")
    return Path(shared) if shared else tmp_path_factory.mktemp("exports")


@pytest.mark.parametrize("model_id", ["tiny", "torchvision-tiny"])
def test_structure_and_manifest(export_root, model_id):
    out = export_root / model_id
    manifest = export.export(model_id, out, capture_attention=True, seed=3)
    entries = cpvt.read(out / "model.cpvt")
    assert len(entries) == 2 * 8 + 2
    assert sorted(entries) == sorted(
        [f"layer{i}.{k}" for i in range(2) for k in ("wq", "wk", "wv", "wo", "ffn1", "ffn2", "ln1", "ln2")]
        + ["head.norm", "head.fc"]
    )
    e = manifest["embed_dim"]
    assert entries["layer0.wq"].shape == (e + 1, e)
    assert entries["layer1.ln2"].shape == (2, e)
    assert export.verify_manifest(out)
    schema = json.loads((ROOT / "docs" / "manifest.schema.json").read_text())
    jsonschema.validate(json.loads((out / "manifest.json").read_text()), schema)
    jsonschema.validate(json.loads((out / "model.json").read_text()),
                        json.loads((ROOT / "docs" / "encoder_config.schema.json").read_text()))
    config = json.loads((out / "model.json").read_text())
    assert config["gelu"] == "tanh"
    inputs = cpvt.read(out / "inputs.cpvt")
    assert inputs["inputs"].shape == (1, manifest["seq_len"], e)
    assert np.allclose(inputs["reference_logits"][0], manifest["reference_logits"])
    attention = cpvt.read(out / "attention.cpvt")
    assert np.allclose(attention["layer0.attention"].sum(axis=-1), 1.0)


def test_fused_qkv_is_split_in_order(tmp_path):
    source = export.build_source("torchvision-tiny", seed=1)
    attn = source.model.encoder.layers[0].self_attention
    entries = dict(source.entries())
    e = source.config["embed_dim"]
    np.testing.assert_array_equal(entries["layer0.wk"][:e], attn.in_proj_weight[e:2 * e].detach().double().numpy().T)
    np.testing.assert_array_equal(entries["layer0.wv"][e], attn.in_proj_bias[2 * e:].detach().double().numpy())


def test_reexport_is_byte_identical(tmp_path):
    for run in ("a", "b"):
        export.export("torchvision-tiny", tmp_path / run, seed=5)
    for name in ("model.cpvt", "model.json", "inputs.cpvt", "manifest.json"):
        assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name, shallow=False)


def test_unexpected_parameters_are_listed():
    model = export.ToyEncoder(1, 1, 2, 4, 2)
    model.extra = torch.nn.Linear(2, 2)
    with pytest.raises(export.UnsupportedLayoutError) as err:
        export.ToySource(model, seq_len=3)
    assert err.value.names == ["extra.bias", "extra.weight"]
    assert "extra.weight" in str(err.value)

    from torchvision.models.vision_transformer import VisionTransformer

    with_prelogits = VisionTransformer(image_size=16, patch_size=8, num_layers=1, num_heads=1, hidden_dim=4,
                                       mlp_dim=8, num_classes=2, representation_size=3)
    with pytest.raises(export.UnsupportedLayoutError) as err:
        export.TorchvisionSource(with_prelogits)
    assert "heads.pre_logits.weight" in err.value.names


def test_archive_codec_round_trip():
    entries = [("b", np.arange(6.0).reshape(2, 3)), ("a", np.array([np.pi]))]
    data = cpvt.encode(entries)
    back = cpvt.decode(data)
    assert list(back) == ["a", "b"]
    np.testing.assert_array_equal(back["b"], entries[0][1])
    with pytest.raises(ValueError):
        cpvt.encode([("x", np.zeros(1)), ("x", np.zeros(1))])
    with pytest.raises(ValueError):
        cpvt.decode(b"XPVT" + data[4:])


def test_sample_tokens_from_file(tmp_path):
    tokens = np.random.default_rng(0).normal(size=(9, 8))
    np.save(tmp_path / "tokens.npy", tokens)
    manifest = export.export("tiny", tmp_path / "out", sample_input=tmp_path / "tokens.npy")
    assert manifest["reference_input"] == "tokens.npy"
    np.testing.assert_allclose(cpvt.read(tmp_path / "out" / "inputs.cpvt")["inputs"][0], tokens, rtol=1e-6)

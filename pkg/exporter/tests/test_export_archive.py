import struct

import numpy as np
import pytest

from vgg16_export.cli import main
from vgg16_export.export import ExportError, conv_entries, export_pretrained
from vgg16_export.manifest import CONV_LAYERS, manifest


def synthetic_state(seed=0):
    """A state dict shaped exactly like torchvision's VGG16, random values."""
    rng = np.random.default_rng(seed)
    state = {}
    for idx, _, cin, cout in CONV_LAYERS:
        state[f"features.{idx}.weight"] = rng.normal(size=(cout, cin, 3, 3)).astype(np.float32)
        state[f"features.{idx}.bias"] = rng.normal(size=cout).astype(np.float32)
    # layers the exporter must ignore
    state["classifier.0.weight"] = rng.normal(size=(8, 8)).astype(np.float32)
    state["features.21.weight"] = rng.normal(size=(512, 512, 3, 3)).astype(np.float32)
    return state


def walk_archive(blob):
    """Independent parse of the HCRW layout; returns [(name, shape, values)]."""
    assert blob[:4] == b"HCRW"
    version, count = struct.unpack_from("<II", blob, 4)
    assert version == 1
    off = 12
    entries = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<I", blob, off)
        off += 4
        dims = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        n = int(np.prod(dims))
        values = np.frombuffer(blob, "<f4", count=n, offset=off).reshape(dims)
        off += 4 * n
        entries.append((name, dims, values))
    assert off == len(blob), "trailing bytes"
    return entries


def test_export_writes_a_well_formed_archive(tmp_path):
    out = tmp_path / "conv.hcrw"
    export_pretrained(str(out), state=synthetic_state(), log=lambda *_: None)
    entries = walk_archive(out.read_bytes())
    assert [name for name, _, _ in entries] == [entry for _, entry, _ in manifest()]
    assert sum(v.size for _, _, v in entries) == 5275456
    shapes = dict((name, dims) for name, dims, _ in entries)
    assert shapes["block1_conv1.weight"] == (3, 3, 3, 64)
    assert shapes["block4_conv2.weight"] == (3, 3, 512, 512)
    assert shapes["block4_conv2.bias"] == (512,)


def test_export_transposes_into_kernel_major_layout(tmp_path):
    state = synthetic_state(1)
    out = tmp_path / "conv.hcrw"
    export_pretrained(str(out), state=state, log=lambda *_: None)
    entries = dict((n, v) for n, _, v in walk_archive(out.read_bytes()))
    src = state["features.5.weight"]  # [128, 64, 3, 3]
    assert np.array_equal(entries["block2_conv1.weight"], src.transpose(2, 3, 1, 0))
    assert np.array_equal(entries["block2_conv1.bias"], state["features.5.bias"])


def test_repeated_exports_are_byte_identical(tmp_path):
    state = synthetic_state(2)
    a, b = tmp_path / "a.hcrw", tmp_path / "b.hcrw"
    export_pretrained(str(a), state=state, log=lambda *_: None)
    export_pretrained(str(b), state=state, log=lambda *_: None)
    assert a.read_bytes() == b.read_bytes()


def test_export_logs_a_shape_and_checksum_table(tmp_path, capsys):
    table = export_pretrained(str(tmp_path / "conv.hcrw"), state=synthetic_state())
    out = capsys.readouterr().out
    assert len(table) == 18
    assert "block1_conv1.weight" in out
    assert "[3, 3, 3, 64]" in out
    assert "crc32" in out
    assert "18 entries, 5275456 parameters" in out
    name, shape, crc = table[0]
    assert name == "block1_conv1.weight" and shape == [3, 3, 3, 64]
    assert 0 <= crc <= 0xFFFFFFFF


def test_missing_source_layer_is_named():
    state = synthetic_state()
    del state["features.10.weight"]
    with pytest.raises(ExportError, match="features.10.weight"):
        conv_entries(state)


def test_shape_mismatch_reports_both_shapes():
    state = synthetic_state()
    state["features.2.weight"] = np.zeros((64, 64, 5, 5), np.float32)
    with pytest.raises(ExportError) as exc:
        conv_entries(state)
    msg = str(exc.value)
    assert "[64, 64, 5, 5]" in msg and "[64, 64, 3, 3]" in msg


def test_cli_with_a_state_file(tmp_path, capsys):
    import torch

    pth = tmp_path / "vgg16.pth"
    torch.save({k: torch.from_numpy(v) for k, v in synthetic_state(3).items()}, str(pth))
    out = tmp_path / "conv.hcrw"
    assert main([str(out), "--weights-file", str(pth)]) == 0
    assert "18 entries" in capsys.readouterr().out
    assert walk_archive(out.read_bytes())[0][0] == "block1_conv1.weight"


def test_cli_error_paths(tmp_path, capsys):
    assert main([str(tmp_path / "x.hcrw"), "--weights-file", str(tmp_path / "absent.pth")]) == 2
    junk = tmp_path / "junk.pth"
    junk.write_bytes(b"not a torch file")
    assert main([str(tmp_path / "x.hcrw"), "--weights-file", str(junk)]) == 2
    assert "error" in capsys.readouterr().err

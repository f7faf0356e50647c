"""Pull the nine pretrained convolutions out of a VGG16 state dict."""

import zlib

import numpy as np

from . import hcrw
from .manifest import manifest, source_shape


class ExportError(Exception):
    """The source model is missing or does not look like VGG16."""


def _to_numpy(value):
    if hasattr(value, "detach"):  # torch tensor
        value = value.detach().cpu().numpy()
    return np.asarray(value)


def load_torchvision_state():
    """State dict of torchvision's ImageNet-pretrained VGG16."""
    try:
        from torchvision.models import VGG16_Weights, vgg16
    except ImportError as exc:
        raise ExportError(f"torchvision is not importable: {exc}") from exc
    try:
        return vgg16(weights=VGG16_Weights.IMAGENET1K_V1).state_dict()
    except Exception as exc:
        raise ExportError(f"pretrained VGG16 weights are not obtainable: {exc}") from exc


def load_state_file(path):
    """State dict from a .pth file saved by torch."""
    try:
        import torch
    except ImportError as exc:
        raise ExportError(f"torch is not importable: {exc}") from exc
    try:
        state = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise ExportError(f"cannot load {path}: {exc}") from exc
    if not hasattr(state, "keys"):
        raise ExportError(f"{path} does not hold a state dict")
    return state


def conv_entries(state):
    """Ordered (archive-name, [kh,kw,Cin,Cout] float32 array) pairs.

    Validates every source tensor's presence and shape before returning.
    """
    entries = []
    for src_key, entry_name, shape in manifest():
        if src_key not in state:
            raise ExportError(f"source model is missing {src_key}")
        arr = _to_numpy(state[src_key]).astype(np.float32)
        expected_src = source_shape(shape)
        if arr.shape != expected_src:
            raise ExportError(
                f"{src_key}: source shape {list(arr.shape)} does not match "
                f"the expected {list(expected_src)}"
            )
        if arr.ndim == 4:
            arr = np.ascontiguousarray(arr.transpose(2, 3, 1, 0))
        entries.append((entry_name, arr))
    return entries


def export_pretrained(output_path, state=None, log=print):
    """Write the 18-entry archive; returns the entry table that was logged.

    state defaults to the torchvision pretrained model. Each table row is
    (name, shape, crc32-of-raw-bytes).
    """
    if state is None:
        state = load_torchvision_state()
    entries = conv_entries(state)
    hcrw.write(entries, output_path)
    table = []
    total = 0
    for name, arr in entries:
        crc = zlib.crc32(arr.tobytes()) & 0xFFFFFFFF
        table.append((name, list(arr.shape), crc))
        total += arr.size
        log(f"{name:<24} {str(list(arr.shape)):<20} crc32 {crc:08x}")
    log(f"wrote {len(entries)} entries, {total} parameters, to {output_path}")
    return table

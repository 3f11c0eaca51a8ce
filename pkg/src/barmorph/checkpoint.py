"""Checkpoint persistence: a text manifest plus one float32 binary blob.

Layout (a directory):

* ``manifest.txt`` — line-oriented ``key=value``.  ``config.<name>=<value>``
  entries hold the model configuration, ``step=<int>`` the training step, and
  ``param.<name>=<dims>:<offset>:<count>`` describes each tensor, where
  ``<dims>`` is ``x``-separated (empty for scalars), and offset/count are in
  float32 elements into the blob.
* ``params.f32`` — all tensors, concatenated in manifest order, little-endian
  IEEE-754 float32.

Optimizer moments are stored as ``param.__adam_m__.<name>`` /
``param.__adam_v__.<name>`` entries so training can resume.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .optim import AdamState

_ADAM_M = "__adam_m__."
_ADAM_V = "__adam_v__."


def _fmt_shape(shape: tuple) -> str:
    return "x".join(str(s) for s in shape)


def _parse_shape(text: str) -> tuple:
    return tuple(int(s) for s in text.split("x")) if text else ()


def save_checkpoint(path: str | Path, config: dict, params: dict[str, np.ndarray],
                    step: int = 0, adam: AdamState | None = None) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries: list[tuple[str, np.ndarray]] = list(params.items())
    if adam is not None:
        entries += [(_ADAM_M + k, v) for k, v in adam.m.items()]
        entries += [(_ADAM_V + k, v) for k, v in adam.v.items()]

    lines = [f"config.{k}={v}" for k, v in config.items()]
    lines.append(f"step={step}")
    if adam is not None:
        lines.append(f"adam_step={adam.step}")
    blob = bytearray()
    offset = 0
    for name, arr in entries:
        arr32 = np.ascontiguousarray(arr, dtype="<f4")
        lines.append(f"param.{name}={_fmt_shape(arr.shape)}:{offset}:{arr32.size}")
        blob += arr32.tobytes()
        offset += arr32.size
    (path / "manifest.txt").write_text("\n".join(lines) + "\n")
    (path / "params.f32").write_bytes(bytes(blob))


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray], int, AdamState]:
    """Returns (config, params-as-float64, step, adam state)."""
    path = Path(path)
    config: dict[str, str] = {}
    step = 0
    adam = AdamState()
    entries: list[tuple[str, tuple, int, int]] = []
    for line in (path / "manifest.txt").read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        if key.startswith("config."):
            config[key[len("config."):]] = value
        elif key == "step":
            step = int(value)
        elif key == "adam_step":
            adam.step = int(value)
        elif key.startswith("param."):
            shape_s, offset_s, count_s = value.rsplit(":", 2)
            entries.append((key[len("param."):], _parse_shape(shape_s),
                            int(offset_s), int(count_s)))

    blob = np.frombuffer((path / "params.f32").read_bytes(), dtype="<f4")
    params: dict[str, np.ndarray] = {}
    for name, shape, offset, count in entries:
        arr = blob[offset : offset + count].astype(np.float64).reshape(shape)
        if name.startswith(_ADAM_M):
            adam.m[name[len(_ADAM_M):]] = arr
        elif name.startswith(_ADAM_V):
            adam.v[name[len(_ADAM_V):]] = arr
        else:
            params[name] = arr
    return config, params, step, adam


def params_of(tensors: list[Tensor]) -> dict[str, np.ndarray]:
    out = {}
    for t in tensors:
        if t.name is None:
            raise ValueError("unnamed parameter")
        if t.name in out:
            raise ValueError(f"duplicate parameter name {t.name}")
        out[t.name] = t.data
    return out

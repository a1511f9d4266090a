"""Named parameter store, Adam updates, and the flat-payload checkpoint format."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .autodiff import Value
from .errors import DataError, NumericFault

CHECKPOINT_TAG = "GRAFTNET-CKPT-1"

ADAM_LR = 1e-3
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


class ParamStore:
    """Uniquely named parameters plus per-parameter optimizer state."""

    def __init__(self):
        self._params: dict[str, Value] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, array) -> Value:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        if not name or any(ch.isspace() for ch in name):
            raise ValueError(f"parameter names must be nonempty and whitespace-free: {name!r}")
        value = Value(np.array(array))
        self._params[name] = value
        return value

    def __getitem__(self, name: str) -> Value:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self):
        for name in self.names():
            yield name, self._params[name]

    def zero_grads(self):
        for p in self._params.values():
            p.grad = None

    def adam_step(self, learning_rate=ADAM_LR, betas=ADAM_BETAS, epsilon=ADAM_EPS):
        """One adaptive-moment update over every parameter; clears gradients.

        Refuses to touch anything if any gradient is non-finite.
        """
        for name in self.names():
            g = self._params[name].grad
            if g is not None and not np.isfinite(g).all():
                raise NumericFault(f"non-finite gradient for parameter {name!r}; step refused")

        b1, b2 = betas
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - b1 ** t
        bias2 = 1.0 - b2 ** t
        for name in self.names():
            p = self._params[name]
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if name not in self._m:
                self._m[name] = np.zeros_like(p.data)
                self._v[name] = np.zeros_like(p.data)
            m = self._m[name]
            v = self._v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / bias1
            v_hat = v / bias2
            p.data -= learning_rate * m_hat / (np.sqrt(v_hat) + epsilon)
        self.zero_grads()

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Copies of all parameter arrays, for snapshots."""
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        for name, p in self._params.items():
            src = arrays[name]
            if src.shape != p.data.shape:
                raise DataError(f"shape mismatch for {name}: {src.shape} vs {p.data.shape}")
            p.data = src.astype(p.data.dtype).copy()


def save_checkpoint(store: ParamStore, base_path):
    """Write ``<base>.manifest`` (text) and ``<base>.bin`` (flat little-endian float32)."""
    base = Path(base_path)
    base.parent.mkdir(parents=True, exist_ok=True)
    lines = [CHECKPOINT_TAG]
    payload = bytearray()
    for name in store.names():
        data = store[name].data.astype("<f4")
        shape = ",".join(str(d) for d in data.shape)
        lines.append(f"name={name} shape={shape} offset={len(payload)}")
        payload.extend(data.tobytes())
    base.with_suffix(base.suffix + ".manifest").write_text("\n".join(lines) + "\n", encoding="utf-8")
    base.with_suffix(base.suffix + ".bin").write_bytes(bytes(payload))


def load_checkpoint(base_path) -> dict[str, np.ndarray]:
    """Read a checkpoint back into name -> float32 array."""
    base = Path(base_path)
    manifest_path = base.with_suffix(base.suffix + ".manifest")
    payload_path = base.with_suffix(base.suffix + ".bin")
    if not manifest_path.exists() or not payload_path.exists():
        raise DataError(f"checkpoint not found at {base}")
    lines = manifest_path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != CHECKPOINT_TAG:
        raise DataError(f"{manifest_path}: unknown checkpoint format tag")
    payload = payload_path.read_bytes()
    out: dict[str, np.ndarray] = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        fields = dict(item.split("=", 1) for item in line.split())
        name = fields["name"]
        shape = tuple(int(d) for d in fields["shape"].split(",") if d)
        offset = int(fields["offset"])
        count = int(np.prod(shape)) if shape else 1
        array = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        out[name] = array.reshape(shape).copy()
    return out

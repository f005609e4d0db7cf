"""Checkpoint container: one .npz file holding parameters, metadata, and optimizer state.

Layout inside the archive:
  meta.json                       JSON string (configs, domain ids, step, seed, rng state)
  param/<state-dict key>          one array per bundle parameter/buffer
  opt/<group>/<index>/exp_avg     Adam first moment, per parameter group position
  opt/<group>/<index>/exp_avg_sq  Adam second moment
  opt/<group>/<index>/step        Adam step count

Round-trips are bit-exact in the stored precision and byte-deterministic,
so identical runs produce identical checkpoint files.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError
from .nets import BundleConfig, ModelBundle, create_model_bundle

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    meta: dict
    params: dict[str, np.ndarray]
    optimizer_state: dict[str, dict[int, dict[str, np.ndarray]]]

    @property
    def step(self) -> int:
        return int(self.meta["step"])

    @property
    def domain_ids(self) -> tuple[str, ...]:
        return tuple(self.meta["domains"])

    def bundle_config(self) -> BundleConfig:
        return BundleConfig.from_dict(self.meta["models"])


def _optimizer_arrays(optimizer: torch.optim.Optimizer) -> dict[int, dict[str, np.ndarray]]:
    groups = optimizer.param_groups
    if len(groups) != 1:
        raise CheckpointError("only single-group optimizers are checkpointed")
    out: dict[int, dict[str, np.ndarray]] = {}
    for i, p in enumerate(groups[0]["params"]):
        state = optimizer.state.get(p)
        if not state:
            continue
        step = state["step"]
        out[i] = {
            "exp_avg": state["exp_avg"].detach().cpu().numpy(),
            "exp_avg_sq": state["exp_avg_sq"].detach().cpu().numpy(),
            "step": np.asarray(float(step), dtype=np.float64),
        }
    return out


def save_checkpoint(path, bundle: ModelBundle, meta: dict,
                    optimizers: dict[str, torch.optim.Optimizer] | None = None) -> Path:
    """Write the bundle (and optionally optimizer state) to a single .npz file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays: dict[str, np.ndarray] = {}
    full_meta = dict(meta)
    full_meta["format_version"] = FORMAT_VERSION
    arrays["meta.json"] = np.asarray(json.dumps(full_meta, sort_keys=True))
    for key, tensor in bundle.state_dict().items():
        arrays[f"param/{key}"] = tensor.detach().cpu().numpy()
    for group_name, opt in (optimizers or {}).items():
        for i, slots in _optimizer_arrays(opt).items():
            for slot, arr in slots.items():
                arrays[f"opt/{group_name}/{i}/{slot}"] = arr
    buffer = io.BytesIO()
    np.savez(buffer, **arrays)
    path.write_bytes(buffer.getvalue())
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as archive:
            data = {k: archive[k] for k in archive.files}
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if "meta.json" not in data:
        raise CheckpointError(f"checkpoint {path} has no metadata entry")
    meta = json.loads(str(data.pop("meta.json")))
    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format {meta.get('format_version')} in {path}"
        )
    params: dict[str, np.ndarray] = {}
    optim: dict[str, dict[int, dict[str, np.ndarray]]] = {}
    for key, arr in data.items():
        if key.startswith("param/"):
            params[key[len("param/"):]] = arr
        elif key.startswith("opt/"):
            group, index, slot = key[len("opt/"):].rsplit("/", 2)
            optim.setdefault(group, {}).setdefault(int(index), {})[slot] = arr
    return Checkpoint(meta=meta, params=params, optimizer_state=optim)


def restore_bundle(checkpoint: Checkpoint) -> ModelBundle:
    """Rebuild the bundle described by the checkpoint metadata and load its parameters."""
    bundle = create_model_bundle(checkpoint.domain_ids, checkpoint.bundle_config(),
                                 seed=int(checkpoint.meta.get("seed", 0)))
    load_into_bundle(checkpoint, bundle)
    return bundle


def load_into_bundle(checkpoint: Checkpoint, bundle: ModelBundle) -> None:
    state = bundle.state_dict()
    if set(state) != set(checkpoint.params):
        missing = set(state) ^ set(checkpoint.params)
        raise CheckpointError(f"checkpoint/bundle parameter keys differ: {sorted(missing)[:5]}")
    bundle.load_state_dict(
        {k: torch.from_numpy(np.array(v)) for k, v in checkpoint.params.items()}
    )


def restore_optimizer(checkpoint: Checkpoint, group_name: str,
                      optimizer: torch.optim.Optimizer) -> None:
    """Load saved Adam moments into a freshly constructed optimizer."""
    slots_by_index = checkpoint.optimizer_state.get(group_name, {})
    params = optimizer.param_groups[0]["params"]
    for i, slots in slots_by_index.items():
        if i >= len(params):
            raise CheckpointError(
                f"optimizer group {group_name!r} has {len(params)} parameters, "
                f"checkpoint indexes {i}"
            )
        p = params[i]
        optimizer.state[p] = {
            "step": torch.tensor(float(slots["step"])),
            "exp_avg": torch.from_numpy(np.array(slots["exp_avg"])).to(p.dtype),
            "exp_avg_sq": torch.from_numpy(np.array(slots["exp_avg_sq"])).to(p.dtype),
        }

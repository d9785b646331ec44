"""Model checkpoints: a versioned .npz container with a JSON metadata entry
and the raw float64 parameter arrays. Round-trips are bit-exact and the file
bytes themselves are deterministic (fixed zip timestamps), so identical
training runs produce identical checkpoints."""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

from ..core import MtaError

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


class CheckpointError(MtaError):
    pass


def save_checkpoint(model, path) -> None:
    import numpy as np
    from numpy.lib import format as npformat

    meta = {"format_version": FORMAT_VERSION, "kind": model.kind, "meta": model.meta()}
    entries = {"__meta__": np.asarray(json.dumps(meta, sort_keys=True))}
    entries.update({f"param_{k}": v for k, v in model.params.items()})
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in entries.items():
            buf = io.BytesIO()
            npformat.write_array(buf, np.ascontiguousarray(arr))
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=_EPOCH), buf.getvalue())


def load_checkpoint(path):
    import numpy as np

    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as z:
        try:
            meta = json.loads(z["__meta__"].item())
        except KeyError:
            raise CheckpointError(f"{path} is not a model checkpoint (missing metadata)") from None
        if meta.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {meta.get('format_version')}")
        model = _construct(meta["kind"], meta["meta"])
        for k in model.params:
            key = f"param_{k}"
            if key not in z:
                raise CheckpointError(f"checkpoint missing parameter {k}")
            if z[key].shape != model.params[k].shape:
                raise CheckpointError(
                    f"parameter {k} has shape {z[key].shape}, expected {model.params[k].shape}"
                )
            model.params[k][...] = z[key]
    return model


def _construct(kind: str, meta: dict):
    if kind == "logistic":
        from .logistic import LogisticModel

        return LogisticModel.from_meta(meta)
    if kind == "birnn":
        from .birnn import BiRecurrentModel

        return BiRecurrentModel.from_meta(meta)
    if kind == "decay":
        # The synthetic ground-truth family lives with the generator.
        from ..datagen import ExposureDecayModel

        return ExposureDecayModel.from_meta(meta)
    raise CheckpointError(f"unknown model kind {kind!r}")

"""Binary persistence for models, projection banks, ensembles, and logit files.

Artifact layout: 8-byte magic, version byte, artifact tag byte, a
length-prefixed JSON header (sorted keys) that fully determines the array
sequence, then the arrays as row-major little-endian float64. Banks may be
saved seed-only (spec + dims + seed) and are regenerated bit-identically
on load. Logit files carry (N, C, model_id) and an N*C float64 payload.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .combinators import ProductSpec
from .ensemble import BlockEnsemble, CombinedModel, build_bank
from .errors import CorruptionError, FormatError
from .features import KernelSpec, ProjectionBank
from .mlr import MlrModel

__all__ = ["save_model", "load_model", "export_logits", "import_logits"]

ARTIFACT_MAGIC = b"RFKARTIF"
ARTIFACT_VERSION = 1
LOGIT_MAGIC = b"RFKLOGIT"
LOGIT_VERSION = 1

_TAGS = {"mlr_model": 1, "bank": 2, "ensemble": 3, "combined": 4}
_TAG_NAMES = {v: k for k, v in _TAGS.items()}


def _spec_to_json(spec):
    if isinstance(spec, KernelSpec):
        return {"type": spec.kind, "bandwidth": spec.bandwidth}
    if isinstance(spec, ProductSpec):
        return {"type": "product", "factors": [_spec_to_json(f) for f in spec.factors]}
    raise ValueError(f"cannot serialize kernel descriptor {type(spec).__name__}")


def _spec_from_json(obj):
    if obj["type"] == "product":
        return ProductSpec(tuple(_spec_from_json(f) for f in obj["factors"]))
    return KernelSpec(obj["type"], obj["bandwidth"])


def _bank_header(bank: ProjectionBank, seed_only: bool):
    return {
        "spec": _spec_to_json(bank.spec),
        "input_dim": bank.input_dim,
        "num_features": bank.num_features,
        "seed": bank.seed,
        "materialized": not seed_only,
    }


def _bank_arrays(bank: ProjectionBank, seed_only: bool):
    return [] if seed_only else [bank.omega, bank.phases]


def _bank_from_header(header, arrays):
    spec = _spec_from_json(header["spec"])
    if header["materialized"]:
        omega = arrays.pop(0).reshape(header["num_features"], header["input_dim"])
        phases = arrays.pop(0)
        return ProjectionBank(omega=omega, phases=phases, seed=header["seed"], spec=spec)
    return build_bank(spec, header["input_dim"], header["num_features"], header["seed"])


def _ensemble_header(ens: BlockEnsemble, seed_only: bool):
    return {
        "num_classes": ens.num_classes,
        "blocks": [
            {"bank": _bank_header(bank, seed_only),
             "model_shape": list(model.weights.shape)}
            for bank, model in ens.blocks
        ],
    }


def _ensemble_arrays(ens: BlockEnsemble, seed_only: bool):
    arrays = []
    for bank, model in ens.blocks:
        arrays.extend(_bank_arrays(bank, seed_only))
        arrays.append(model.weights)
    return arrays


def _ensemble_from_header(header, arrays):
    blocks = []
    for blk in header["blocks"]:
        bank = _bank_from_header(blk["bank"], arrays)
        shape = tuple(blk["model_shape"])
        blocks.append((bank, MlrModel(arrays.pop(0).reshape(shape))))
    return BlockEnsemble(blocks=blocks, num_classes=header["num_classes"])


def save_model(path, artifact, seed_only_banks: bool = False) -> None:
    """Persist an MlrModel, ProjectionBank, BlockEnsemble, or CombinedModel."""
    if isinstance(artifact, MlrModel):
        tag = "mlr_model"
        header = {"shape": list(artifact.weights.shape)}
        arrays = [artifact.weights]
    elif isinstance(artifact, ProjectionBank):
        tag = "bank"
        header = _bank_header(artifact, seed_only_banks)
        arrays = _bank_arrays(artifact, seed_only_banks)
    elif isinstance(artifact, BlockEnsemble):
        tag = "ensemble"
        header = _ensemble_header(artifact, seed_only_banks)
        arrays = _ensemble_arrays(artifact, seed_only_banks)
    elif isinstance(artifact, CombinedModel):
        tag = "combined"
        header = {"models": [_ensemble_header(m, seed_only_banks) for m in artifact.models],
                  "num_weights": len(artifact.weights)}
        arrays = [artifact.weights]
        for m in artifact.models:
            arrays.extend(_ensemble_arrays(m, seed_only_banks))
    else:
        raise ValueError(f"cannot serialize {type(artifact).__name__}")
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(Path(path), "wb") as fh:
        fh.write(ARTIFACT_MAGIC)
        fh.write(bytes([ARTIFACT_VERSION, _TAGS[tag]]))
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _expected_counts(tag, header):
    def bank_count(h):
        return [h["num_features"] * h["input_dim"], h["num_features"]] if h["materialized"] else []

    def ensemble_counts(h):
        counts = []
        for blk in h["blocks"]:
            counts.extend(bank_count(blk["bank"]))
            counts.append(blk["model_shape"][0] * blk["model_shape"][1])
        return counts

    if tag == "mlr_model":
        return [header["shape"][0] * header["shape"][1]]
    if tag == "bank":
        return bank_count(header)
    if tag == "ensemble":
        return ensemble_counts(header)
    counts = [header["num_weights"]]
    for m in header["models"]:
        counts.extend(ensemble_counts(m))
    return counts


def load_model(path):
    """Load an artifact written by save_model; exact inverse of it."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 14:
        raise CorruptionError(f"{path}: truncated artifact file")
    if raw[:8] != ARTIFACT_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:8]!r}")
    version, tag_byte = raw[8], raw[9]
    if version != ARTIFACT_VERSION:
        raise FormatError(f"{path}: unsupported artifact version {version}")
    if tag_byte not in _TAG_NAMES:
        raise FormatError(f"{path}: unknown artifact tag {tag_byte}")
    tag = _TAG_NAMES[tag_byte]
    (header_len,) = struct.unpack_from("<I", raw, 10)
    header_end = 14 + header_len
    if len(raw) < header_end:
        raise CorruptionError(f"{path}: truncated header")
    try:
        header = json.loads(raw[14:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptionError(f"{path}: unreadable header: {exc}") from exc

    counts = _expected_counts(tag, header)
    need = header_end + 8 * sum(counts)
    if len(raw) != need:
        raise CorruptionError(f"{path}: expected {need} bytes, found {len(raw)}")
    arrays = []
    offset = header_end
    for count in counts:
        arrays.append(np.frombuffer(raw, dtype="<f8", count=count, offset=offset).copy())
        offset += 8 * count

    if tag == "mlr_model":
        return MlrModel(arrays.pop(0).reshape(tuple(header["shape"])))
    if tag == "bank":
        return _bank_from_header(header, arrays)
    if tag == "ensemble":
        return _ensemble_from_header(header, arrays)
    weights = arrays.pop(0)
    models = [_ensemble_from_header(m, arrays) for m in header["models"]]
    return CombinedModel(models=models, weights=weights)


def export_logits(path, logits: np.ndarray, model_id: str) -> None:
    """Write an N x C logit matrix with provenance; the fusion interchange format."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    ident = model_id.encode("utf-8")
    with open(Path(path), "wb") as fh:
        fh.write(LOGIT_MAGIC)
        fh.write(bytes([LOGIT_VERSION]))
        fh.write(struct.pack("<QQH", logits.shape[0], logits.shape[1], len(ident)))
        fh.write(ident)
        fh.write(np.ascontiguousarray(logits, dtype="<f8").tobytes())


def import_logits(path) -> tuple[np.ndarray, str]:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 27:
        raise CorruptionError(f"{path}: truncated logit file")
    if raw[:8] != LOGIT_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:8]!r}")
    if raw[8] != LOGIT_VERSION:
        raise FormatError(f"{path}: unsupported logit file version {raw[8]}")
    n, c, id_len = struct.unpack_from("<QQH", raw, 9)
    offset = 27 + id_len
    need = offset + 8 * n * c
    if len(raw) != need:
        raise CorruptionError(f"{path}: expected {need} bytes, found {len(raw)}")
    model_id = raw[27:offset].decode("utf-8")
    logits = np.frombuffer(raw, dtype="<f8", count=n * c, offset=offset).reshape(n, c).copy()
    return logits, model_id

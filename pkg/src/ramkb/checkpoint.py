"""Binary checkpoints and CSV exports of learned parameters.

Checkpoint layout: the magic bytes ``RAMCKPT1``, a little-endian uint64
header length, a UTF-8 JSON header (config, vocabulary, array directory
with byte offsets), then the raw little-endian float64 arrays in the order
the header declares them.
"""

from __future__ import annotations

import csv
import io
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .kb import Vocabulary
from .model import ModelConfig, ModelParams, SlotKey, relation_terms
from .presets import preset_patterns

MAGIC = b"RAMCKPT1"


def _slot_name(key: SlotKey) -> str:
    return "/".join(str(part) for part in key)


def _parse_slot(name: str) -> SlotKey:
    parts = name.split("/")
    return (parts[0], *[int(p) for p in parts[1:]])


def save_checkpoint(path, params: ModelParams, vocab: Vocabulary) -> None:
    entries = []
    payload = io.BytesIO()
    named_arrays = [(_slot_name(key), params.data[key]) for key in params.slots()]
    named_arrays += [(f"raw_u/{rel}", arr) for rel, arr in sorted(params.raw_u.items())]
    named_arrays += [(f"raw_p/{rel}", arr) for rel, arr in sorted(params.raw_p.items())]
    for name, array in named_arrays:
        entries.append(
            {"name": name, "shape": list(array.shape), "offset": payload.tell()}
        )
        payload.write(np.ascontiguousarray(array, dtype="<f8").tobytes())
    header = {
        "config": params.cfg.to_dict(),
        "n_entities": params.n_entities,
        "n_relations": params.n_relations,
        "max_arity": max(params.rel_arity) if params.rel_arity else 0,
        "arities": list(params.arities),
        "rel_arity": params.rel_arity,
        "vocab": vocab.to_dict(),
        "arrays": entries,
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(payload.getvalue())


def load_checkpoint(path) -> tuple[ModelParams, Vocabulary]:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic)")
    (header_len,) = struct.unpack("<Q", raw[len(MAGIC) : len(MAGIC) + 8])
    header_start = len(MAGIC) + 8
    header = json.loads(raw[header_start : header_start + header_len])
    payload = raw[header_start + header_len :]

    cfg = ModelConfig.from_dict(header["config"])
    vocab = Vocabulary.from_dict(header["vocab"])
    params = ModelParams(
        cfg,
        header["n_entities"],
        header["rel_arity"],
        rel_roles=dict(vocab.rel_roles),
        n_roles=vocab.n_roles,
    )
    if cfg.mode == "preset":
        params.fixed_patterns, params.fixed_signs = preset_patterns(cfg.preset)
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        array = np.frombuffer(
            payload, dtype="<f8", count=count, offset=start
        ).reshape(shape).astype(np.float64)
        name = entry["name"]
        if name.startswith("raw_u/"):
            params.raw_u[int(name.split("/")[1])] = array
        elif name.startswith("raw_p/"):
            params.raw_p[int(name.split("/")[1])] = array
        else:
            params.data[_parse_slot(name)] = array
    return params, vocab


def check_vocab_compatible(vocab: Vocabulary, other: Vocabulary) -> None:
    """Raise unless two vocabularies index the same names identically."""
    if vocab.entities != other.entities:
        raise DataError(
            f"entity vocabularies differ ({len(vocab.entities)} vs "
            f"{len(other.entities)} names)"
        )
    if vocab.relations != other.relations:
        raise DataError("relation vocabularies differ")
    if vocab.roles != other.roles:
        raise DataError("role vocabularies differ")


def export_entities_csv(params: ModelParams, vocab: Vocabulary) -> str:
    """One row per entity: name plus the flattened (m x d) block."""
    m, d = params.cfg.multiplicity, params.cfg.embed_dim
    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(["name"] + [f"v{i}" for i in range(m * d)])
    ent = params.data[("ent",)]
    for idx, name in enumerate(vocab.entities):
        writer.writerow([name] + [repr(x) for x in ent[idx].reshape(-1)])
    return out.getvalue()


def import_entities_csv(params: ModelParams, vocab: Vocabulary, text: str) -> None:
    """Load entity blocks back from :func:`export_entities_csv` output."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    m, d = params.cfg.multiplicity, params.cfg.embed_dim
    if len(header) != 1 + m * d:
        raise DataError("entity CSV width does not match the model dimensions")
    ent = params.data[("ent",)]
    for row in reader:
        if not row:
            continue
        idx = vocab.entity_index.get(row[0])
        if idx is None:
            raise DataError(f"unknown entity {row[0]!r} in CSV")
        ent[idx] = np.array([float(x) for x in row[1:]]).reshape(m, d)


def export_roles_csv(params: ModelParams, vocab: Vocabulary) -> str:
    """One row per (relation, role position, role embedding index)."""
    out = io.StringIO()
    writer = csv.writer(out)
    d = params.cfg.embed_dim
    writer.writerow(
        ["relation", "arity", "position", "emb_index", "role_name"]
        + [f"v{i}" for i in range(d)]
    )
    for rel, (name, arity) in enumerate(vocab.relations):
        terms = relation_terms(params, rel)
        for pos in range(arity):
            role_name = ""
            if vocab.roles and rel in vocab.rel_roles:
                role_name = vocab.roles[vocab.rel_roles[rel][pos]]
            for j in range(params.cfg.role_multiplicity):
                writer.writerow(
                    [name, arity, pos, j, role_name]
                    + [repr(x) for x in terms.role_emb[pos, j]]
                )
    return out.getvalue()


def export_patterns_csv(params: ModelParams, vocab: Vocabulary) -> str:
    """One row per pattern matrix, flattened row-major."""
    out = io.StringIO()
    writer = csv.writer(out)
    m = params.cfg.multiplicity
    max_arity = max(params.rel_arity) if params.rel_arity else 0
    writer.writerow(
        ["relation", "arity", "position", "emb_index", "pattern_index"]
        + [f"p{i}" for i in range(max_arity * m)]
    )
    for rel, (name, arity) in enumerate(vocab.relations):
        terms = relation_terms(params, rel)
        for pos in range(arity):
            for j in range(params.cfg.role_multiplicity):
                for k in range(params.cfg.patterns_per_role):
                    values = terms.patterns[pos, j, k].reshape(-1)
                    row = [name, arity, pos, j, k] + [repr(x) for x in values]
                    row += [""] * (5 + max_arity * m - len(row))
                    writer.writerow(row)
    return out.getvalue()

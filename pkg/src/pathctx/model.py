"""Hierarchical transformer scorer for query facts.

Three encoder stacks share one relation-embedding table: a path stack encodes
each relational path behind a [PCLS] token (with learned positional
embeddings, the only place order matters), a context stack encodes each
endpoint's relation set behind [HCLS]/[TCLS], and a fusion stack attends from
the query relation's embedding over all encoded evidence. A two-layer head
with GELU and a final sigmoid maps the query token's output to a score in
(0, 1). The model never consumes entity identity, so it transfers to graphs
with entirely new entities.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractError, DataError, UnsupportedModeError
from .extraction import ExtractionConfig, ModelInput
from .kg import RelationVocab
from .seeding import substream

ABLATIONS = ("full", "no_context", "no_path")

_MAGIC = b"PCTX"
_CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    d_model: int = 64
    d_ffn: int = 128
    heads: int = 4
    path_layers: int = 2
    context_layers: int = 2
    fusion_layers: int = 2
    max_path_len: int = 4
    path_cap: int = 300
    context_cap: int = 64
    dropout: float = 0.1
    ablation: str = "full"

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ContractError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if min(self.path_layers, self.context_layers, self.fusion_layers) < 1:
            raise ContractError("every stack needs at least one layer")
        if self.max_path_len < 1:
            raise ContractError("max_path_len must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.ablation not in ABLATIONS:
            raise ContractError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")

    def extraction(self) -> ExtractionConfig:
        return ExtractionConfig(self.max_path_len, self.path_cap, self.context_cap)


class PathContextModel:
    def __init__(self, config: ModelConfig, vocab: RelationVocab, seed: int = 0, dtype=np.float32):
        self.config = config
        self.vocab = vocab
        self.dtype = np.dtype(dtype)
        self.params: dict[str, ad.Parameter] = {}
        self._init_params(seed)

    # ------------------------------------------------------------------
    # parameters
    # ------------------------------------------------------------------

    def _add_param(self, name: str, values: np.ndarray) -> None:
        self.params[name] = ad.Parameter(values.astype(self.dtype), name)

    def _init_params(self, seed: int) -> None:
        cfg = self.config
        rng = substream(seed, "init")

        def xavier(fan_in: int, fan_out: int, shape) -> np.ndarray:
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-limit, limit, shape)

        d, f = cfg.d_model, cfg.d_ffn
        self._add_param("emb.relations", rng.normal(0.0, 0.02, (self.vocab.size, d)))
        self._add_param("emb.positions", rng.normal(0.0, 0.02, (cfg.max_path_len + 1, d)))
        stacks = (
            ("path", cfg.path_layers),
            ("context", cfg.context_layers),
            ("fusion", cfg.fusion_layers),
        )
        for stack, n_layers in stacks:
            for layer in range(n_layers):
                base = f"{stack}.layer{layer}"
                for w in ("wq", "wk", "wv", "wo"):
                    self._add_param(f"{base}.attn.{w}", xavier(d, d, (d, d)))
                for b in ("bq", "bk", "bv", "bo"):
                    self._add_param(f"{base}.attn.{b}", np.zeros(d))
                self._add_param(f"{base}.ln1.gain", np.ones(d))
                self._add_param(f"{base}.ln1.bias", np.zeros(d))
                self._add_param(f"{base}.ffn.w1", xavier(d, f, (d, f)))
                self._add_param(f"{base}.ffn.b1", np.zeros(f))
                self._add_param(f"{base}.ffn.w2", xavier(f, d, (f, d)))
                self._add_param(f"{base}.ffn.b2", np.zeros(d))
                self._add_param(f"{base}.ln2.gain", np.ones(d))
                self._add_param(f"{base}.ln2.bias", np.zeros(d))
        self._add_param("head.w1", xavier(d, f, (d, f)))
        self._add_param("head.b1", np.zeros(f))
        self._add_param("head.w2", xavier(f, 1, (f, 1)))
        self._add_param("head.b2", np.zeros(1))

    def parameters(self) -> list[ad.Parameter]:
        return list(self.params.values())

    # ------------------------------------------------------------------
    # transformer blocks
    # ------------------------------------------------------------------

    def _project(self, x: ad.Tensor, weight: str, bias: str) -> ad.Tensor:
        n, t, d = x.shape
        flat = ad.reshape(x, (n * t, d))
        out = flat @ self.params[weight] + self.params[bias]
        return ad.reshape(out, (n, t, out.shape[-1]))

    def _attention(self, x, key_mask, prefix, training, rng, capture):
        cfg = self.config
        n, t, d = x.shape
        heads, dh = cfg.heads, cfg.d_model // cfg.heads

        def split_heads(y):
            return ad.transpose(ad.reshape(y, (n, t, heads, dh)), (0, 2, 1, 3))

        q = split_heads(self._project(x, f"{prefix}.wq", f"{prefix}.bq"))
        k = split_heads(self._project(x, f"{prefix}.wk", f"{prefix}.bk"))
        v = split_heads(self._project(x, f"{prefix}.wv", f"{prefix}.bv"))
        scores = (q @ ad.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(dh))
        attn = ad.softmax(scores, mask=key_mask[:, None, None, :])
        if capture is not None:
            capture.append((prefix, attn.data.copy()))
        mixed = ad.reshape(ad.transpose(attn @ v, (0, 2, 1, 3)), (n, t, d))
        return self._project(mixed, f"{prefix}.wo", f"{prefix}.bo")

    def _ffn(self, x: ad.Tensor, prefix: str) -> ad.Tensor:
        n, t, d = x.shape
        flat = ad.reshape(x, (n * t, d))
        hidden = ad.gelu(flat @ self.params[f"{prefix}.w1"] + self.params[f"{prefix}.b1"])
        out = hidden @ self.params[f"{prefix}.w2"] + self.params[f"{prefix}.b2"]
        return ad.reshape(out, (n, t, d))

    def _stack(self, name, n_layers, x, key_mask, training, rng, capture):
        drop = self.config.dropout
        for layer in range(n_layers):
            base = f"{name}.layer{layer}"
            p = self.params
            attended = self._attention(x, key_mask, f"{base}.attn", training, rng, capture)
            x = ad.layer_norm(
                x + ad.dropout(attended, drop, rng, training), p[f"{base}.ln1.gain"], p[f"{base}.ln1.bias"]
            )
            fed = self._ffn(x, f"{base}.ffn")
            x = ad.layer_norm(
                x + ad.dropout(fed, drop, rng, training), p[f"{base}.ln2.gain"], p[f"{base}.ln2.bias"]
            )
        return x

    # ------------------------------------------------------------------
    # forward pass
    # ------------------------------------------------------------------

    def _encode_context_batch(self, inputs, training, rng, capture):
        """Encode head and tail contexts in one batch; returns (c_h, c_t), each (B, 1, D)."""
        b = len(inputs)
        rows = [(self.vocab.hcls,) + inp.head_context.relations for inp in inputs]
        rows += [(self.vocab.tcls,) + inp.tail_context.relations for inp in inputs]
        width = max(len(r) for r in rows)
        ids = np.zeros((2 * b, width), dtype=np.int64)
        mask = np.zeros((2 * b, width), dtype=bool)
        for i, row in enumerate(rows):
            ids[i, : len(row)] = row
            mask[i, : len(row)] = True
        x = ad.embedding(self.params["emb.relations"], ids)
        out = self._stack("context", self.config.context_layers, x, mask, training, rng, capture)
        cls = out[:, 0:1, :]
        return cls[:b], cls[b:]

    def _encode_paths_batch(self, flat_paths, training, rng, capture) -> ad.Tensor:
        """Encode a flat list of relation-ID paths; returns their [PCLS] states (P, D)."""
        longest = max(len(p) for p in flat_paths)
        if longest > self.config.max_path_len:
            raise ContractError(f"path of length {longest} exceeds max_path_len {self.config.max_path_len}")
        p_count, width = len(flat_paths), 1 + longest
        ids = np.zeros((p_count, width), dtype=np.int64)
        mask = np.zeros((p_count, width), dtype=bool)
        ids[:, 0] = self.vocab.pcls
        for i, path in enumerate(flat_paths):
            ids[i, 1 : 1 + len(path)] = path
            mask[i, : 1 + len(path)] = True
        x = ad.embedding(self.params["emb.relations"], ids) + self.params["emb.positions"][:width]
        out = self._stack("path", self.config.path_layers, x, mask, training, rng, capture)
        return out[:, 0, :]

    def _forward(self, inputs: list[ModelInput], training: bool, rng, capture=None) -> ad.Tensor:
        """Score a batch; returns a (B,) tensor of sigmoid outputs."""
        if not inputs:
            raise ContractError("empty input batch")
        cfg = self.config
        b, d = len(inputs), cfg.d_model

        rel_ids = np.fromiter((inp.query_relation for inp in inputs), dtype=np.int64, count=b)
        if rel_ids.min() < 0 or rel_ids.max() >= 2 * self.vocab.base_count:
            raise ContractError("query relation id outside the non-special vocabulary")

        parts = [ad.embedding(self.params["emb.relations"], rel_ids.reshape(b, 1))]
        masks = [np.ones((b, 1), dtype=bool)]

        if cfg.ablation != "no_context":
            c_h, c_t = self._encode_context_batch(inputs, training, rng, capture)
            parts += [c_h, c_t]
            masks += [np.ones((b, 1), dtype=bool), np.ones((b, 1), dtype=bool)]

        if cfg.ablation != "no_path":
            flat: list[tuple[int, ...]] = []
            slots = np.zeros(b, dtype=np.int64)
            for i, inp in enumerate(inputs):
                slots[i] = len(inp.paths.paths)
                flat.extend(inp.paths.paths)
            n_max = int(slots.max()) if b else 0
            if flat and n_max:
                vectors = self._encode_paths_batch(flat, training, rng, capture)
                pad = ad.Tensor(np.zeros((1, d), dtype=self.dtype))
                table = ad.concat([vectors, pad], axis=0)
                gather = np.full((b, n_max), len(flat), dtype=np.int64)
                cursor = 0
                for i in range(b):
                    gather[i, : slots[i]] = np.arange(cursor, cursor + slots[i])
                    cursor += slots[i]
                parts.append(ad.embedding(table, gather))
                masks.append(np.arange(n_max)[None, :] < slots[:, None])

        x = ad.concat(parts, axis=1) if len(parts) > 1 else parts[0]
        mask = np.concatenate(masks, axis=1)
        fused = self._stack("fusion", cfg.fusion_layers, x, mask, training, rng, capture)
        query_state = fused[:, 0, :]
        hidden = ad.gelu(query_state @ self.params["head.w1"] + self.params["head.b1"])
        logits = hidden @ self.params["head.w2"] + self.params["head.b2"]
        return ad.reshape(ad.sigmoid(logits), (b,))

    # ------------------------------------------------------------------
    # public scoring API
    # ------------------------------------------------------------------

    def training_scores(self, inputs: list[ModelInput], rng) -> ad.Tensor:
        """One training-mode forward pass (dropout active, tape recorded)."""
        return self._forward(inputs, training=True, rng=rng)

    def score_batch(self, inputs: list[ModelInput], chunk_size: int = 512) -> np.ndarray:
        out = np.empty(len(inputs), dtype=self.dtype)
        with ad.no_grad():
            for start in range(0, len(inputs), chunk_size):
                batch = inputs[start : start + chunk_size]
                out[start : start + len(batch)] = self._forward(batch, training=False, rng=None).data
        return out

    def score(self, inp: ModelInput) -> float:
        return float(self.score_batch([inp])[0])

    def fusion_attention(self, inp: ModelInput) -> tuple[float, np.ndarray]:
        """Score one input and return the fusion stack's last-layer attention (H, T, T)."""
        capture: list[tuple[str, np.ndarray]] = []
        with ad.no_grad():
            score = float(self._forward([inp], training=False, rng=None, capture=capture).data[0])
        wanted = f"fusion.layer{self.config.fusion_layers - 1}.attn"
        attn = next(a for name, a in capture if name == wanted)
        return score, attn[0]

    def attention_rows(self, inp: ModelInput) -> list[tuple[str, np.ndarray]]:
        """All attention matrices from every stack for one input (diagnostics)."""
        capture: list[tuple[str, np.ndarray]] = []
        with ad.no_grad():
            self._forward([inp], training=False, rng=None, capture=capture)
        return capture

    # ------------------------------------------------------------------
    # single-sequence encoders (inference helpers)
    # ------------------------------------------------------------------

    def encode_path(self, relations) -> np.ndarray:
        """Encode one relational path; returns the [PCLS] output state (d_model,)."""
        path = tuple(int(r) for r in relations)
        if not 1 <= len(path) <= self.config.max_path_len:
            raise ContractError(f"path length must be in [1, {self.config.max_path_len}], got {len(path)}")
        with ad.no_grad():
            return self._encode_paths_batch([path], False, None, None).data[0].copy()

    def encode_context(self, relations, role: str) -> np.ndarray:
        """Encode one relation set for the given endpoint role ('head' or 'tail')."""
        if role not in ("head", "tail"):
            raise ContractError(f"role must be 'head' or 'tail', got {role!r}")
        rels = tuple(sorted({int(r) for r in relations}))
        cls = self.vocab.hcls if role == "head" else self.vocab.tcls
        ids = np.array([(cls,) + rels], dtype=np.int64)
        mask = np.ones_like(ids, dtype=bool)
        with ad.no_grad():
            x = ad.embedding(self.params["emb.relations"], ids)
            out = self._stack("context", self.config.context_layers, x, mask, False, None, None)
            return out.data[0, 0].copy()

    def fuse(self, query_relation: int, head_vec, tail_vec, path_vecs, ablation: str | None = None) -> np.ndarray:
        """Run the fusion stack over pre-encoded evidence vectors; returns the
        query token's output state (d_model,). Evidence order does not matter."""
        mode = ablation if ablation is not None else self.config.ablation
        if mode not in ABLATIONS:
            raise ContractError(f"unknown ablation {mode!r}")
        rows = [self.params["emb.relations"].data[query_relation]]
        if mode != "no_context":
            rows += [np.asarray(head_vec), np.asarray(tail_vec)]
        if mode != "no_path":
            rows += [np.asarray(v) for v in path_vecs]
        x = ad.Tensor(np.stack(rows).astype(self.dtype)[None, :, :])
        mask = np.ones((1, len(rows)), dtype=bool)
        with ad.no_grad():
            out = self._stack("fusion", self.config.fusion_layers, x, mask, False, None, None)
            return out.data[0, 0].copy()

    # ------------------------------------------------------------------
    # checkpointing
    # ------------------------------------------------------------------

    def save(self, path) -> None:
        """Write magic, version, JSON header (config + vocab), then named
        parameter records as row-major little-endian float32."""
        header = {
            "config": asdict(self.config),
            "vocab": {
                "base_names": list(self.vocab.base_names),
                "name_to_id": self.vocab.name_to_id,
            },
        }
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<II", _CHECKPOINT_VERSION, len(blob)))
            fh.write(blob)
            fh.write(struct.pack("<I", len(self.params)))
            for name, p in self.params.items():
                encoded = name.encode("utf-8")
                fh.write(struct.pack("<H", len(encoded)))
                fh.write(encoded)
                shape = p.data.shape
                fh.write(struct.pack("<B", len(shape)))
                fh.write(struct.pack(f"<{len(shape)}I", *shape))
                fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path) -> "PathContextModel":
        with open(path, "rb") as fh:
            if fh.read(4) != _MAGIC:
                raise DataError(f"{path}: not a model checkpoint")
            version, header_len = struct.unpack("<II", fh.read(8))
            if version != _CHECKPOINT_VERSION:
                raise DataError(f"{path}: unsupported checkpoint version {version}")
            header = json.loads(fh.read(header_len).decode("utf-8"))
            vocab = RelationVocab(tuple(header["vocab"]["base_names"]))
            if {k: int(v) for k, v in header["vocab"]["name_to_id"].items()} != vocab.name_to_id:
                raise DataError(f"{path}: vocabulary listing is inconsistent")
            config = ModelConfig(**header["config"])
            model = cls(config, vocab, seed=0)
            (n_records,) = struct.unpack("<I", fh.read(4))
            seen = set()
            for _ in range(n_records):
                (name_len,) = struct.unpack("<H", fh.read(2))
                name = fh.read(name_len).decode("utf-8")
                (ndim,) = struct.unpack("<B", fh.read(1))
                shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
                count = int(np.prod(shape)) if shape else 1
                values = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(shape)
                if name not in model.params:
                    raise DataError(f"{path}: unexpected parameter {name!r}")
                if model.params[name].data.shape != tuple(shape):
                    raise DataError(
                        f"{path}: shape mismatch for {name!r}: "
                        f"{tuple(shape)} vs {model.params[name].data.shape}"
                    )
                model.params[name].data = values.astype(model.dtype)
                seen.add(name)
            missing = set(model.params) - seen
            if missing:
                raise DataError(f"{path}: missing parameters {sorted(missing)[:5]}")
        return model

    def require_full_mode(self) -> None:
        if self.config.ablation != "full":
            raise UnsupportedModeError(f"operation requires the full model, not {self.config.ablation!r}")

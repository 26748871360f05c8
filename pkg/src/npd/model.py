"""The emotion model: shared LSTM encoder, per-attribute attention pooling,
gradient-reversed gender/location discriminators, and five 2-class emotion
heads, with every ablation variant wired from the same parts.

Forward passes are batched: posts are padded to the batch's longest
sequence and a {0,1} validity mask keeps padded steps out of both the
recurrence (the hidden state carries through, so the final state is each
post's own last state) and the attention softmax. All parameters live in a
flat name -> Node map whose name prefix ("f.", "y.", "g.", "l.") is the
parameter partition used by the saddle-point update.

Checkpoint layout (little-endian, documented for external readers):
  magic b"NPDC" | u32 version | u64 manifest_len | manifest JSON (UTF-8,
  sorted keys) | u64 tensor_count | per tensor: u64 name_len, name UTF-8,
  u64 ndim, u64 dims..., raw float64 data. Tensors are sorted by name;
  save/load round-trips bit-exactly.
"""

import json
import struct
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .corpus import EMOTIONS, TokenizedPost
from .errors import ConfigError, ContractError, DataError
from .seeding import substream


class ModelVariant(str, Enum):
    LSTM = "LSTM"
    LSTM_ATTRIBUTES = "LSTM_ATTRIBUTES"
    LSTM_ATTENTION = "LSTM_ATTENTION"
    LSTM_ADVERSARIAL = "LSTM_ADVERSARIAL"
    NPD_GENDER = "NPD_GENDER"
    NPD_LOCATION = "NPD_LOCATION"
    NPD = "NPD"

    @property
    def uses_gender_attention(self) -> bool:
        return self in (ModelVariant.LSTM_ATTENTION, ModelVariant.NPD_GENDER, ModelVariant.NPD)

    @property
    def uses_location_attention(self) -> bool:
        return self in (ModelVariant.LSTM_ATTENTION, ModelVariant.NPD_LOCATION, ModelVariant.NPD)

    @property
    def uses_gender_discriminator(self) -> bool:
        return self in (ModelVariant.LSTM_ATTRIBUTES, ModelVariant.LSTM_ADVERSARIAL,
                        ModelVariant.NPD_GENDER, ModelVariant.NPD)

    @property
    def uses_location_discriminator(self) -> bool:
        return self in (ModelVariant.LSTM_ATTRIBUTES, ModelVariant.LSTM_ADVERSARIAL,
                        ModelVariant.NPD_LOCATION, ModelVariant.NPD)

    @property
    def uses_reversal(self) -> bool:
        # LSTM_ATTRIBUTES predicts attributes as plain extra labels, no adversary
        return self in (ModelVariant.LSTM_ADVERSARIAL, ModelVariant.NPD_GENDER,
                        ModelVariant.NPD_LOCATION, ModelVariant.NPD)


@dataclass
class ForwardResult:
    """Graph outputs of one batched forward pass."""

    emotion_probs: list          # K Nodes of shape [b x 2]; column 1 = present
    gender_prob: Node | None     # [b x 1] probability of the male label
    location_probs: Node | None  # [b x m]
    attention: dict = field(default_factory=dict)  # name -> Node [b x T]
    head_input: Node | None = None
    mask: np.ndarray | None = None


class NpdModel:
    """One variant's parameter set plus its forward wiring."""

    def __init__(self, manifest: dict, embedding: np.ndarray,
                 params: dict[str, Node] | None = None):
        self.manifest = dict(manifest)
        self.variant = ModelVariant(manifest["variant"])
        self.embedding = np.asarray(embedding, dtype=np.float64)
        self.embed_dim = int(manifest["embed_dim"])
        self.hidden_dim = int(manifest["hidden_dim"])
        self.attention_dim = int(manifest["attention_dim"])
        self.head_hidden_dim = int(manifest["head_hidden_dim"])
        self.num_locations = int(manifest["num_locations"])
        self.lambda_rev = float(manifest["lambda_rev"])
        self.finetune_embeddings = bool(manifest["finetune_embeddings"])
        if self.embedding.shape[1] != self.embed_dim:
            raise ConfigError(f"embedding dim {self.embedding.shape[1]} != manifest "
                              f"embed_dim {self.embed_dim}")
        if self.num_locations < 2:
            raise ConfigError(f"need at least 2 location classes, got {self.num_locations}")
        self.params = params if params is not None else self._init_params()

    # -- construction -----------------------------------------------------

    @property
    def head_input_dim(self) -> int:
        both = self.variant.uses_gender_attention and self.variant.uses_location_attention
        return 2 * self.hidden_dim if both else self.hidden_dim

    def _init_params(self) -> dict[str, Node]:
        rng = substream(int(self.manifest["seed"]), "init")
        e, h, a, hh = self.embed_dim, self.hidden_dim, self.attention_dim, self.head_hidden_dim
        m = self.num_locations

        def w(shape):
            return ad.param(rng.uniform(-0.08, 0.08, size=shape))

        def zeros(shape):
            return ad.param(np.zeros(shape))

        p: dict[str, Node] = {}
        p["f.lstm.wx"] = w((e, 4 * h))
        p["f.lstm.wh"] = w((h, 4 * h))
        p["f.lstm.b"] = zeros(4 * h)
        p["f.lstm.h0"] = ad.param(rng.normal(0.0, 0.01, size=h))
        p["f.lstm.c0"] = ad.param(rng.normal(0.0, 0.01, size=h))
        if self.variant.uses_gender_attention:
            p["f.att_g.w"], p["f.att_g.b"], p["f.att_g.u"] = w((h, a)), zeros(a), w(a)
        if self.variant.uses_location_attention:
            p["f.att_l.w"], p["f.att_l.b"], p["f.att_l.u"] = w((h, a)), zeros(a), w(a)
        if self.finetune_embeddings:
            p["f.embed"] = ad.param(self.embedding.copy())
        din = self.head_input_dim
        for j in range(len(EMOTIONS)):
            p[f"y.head{j}.w"] = w((din, hh))
            p[f"y.head{j}.b"] = zeros(hh)
            p[f"y.head{j}.wo"] = w((hh, 2))
            p[f"y.head{j}.bo"] = zeros(2)
        if self.variant.uses_gender_discriminator:
            p["g.w"], p["g.b"] = w((h, 1)), zeros(1)
        if self.variant.uses_location_discriminator:
            p["l.w"], p["l.b"] = w((h, m)), zeros(m)
        return p

    def partition(self) -> dict[str, list[str]]:
        """Disjoint parameter partition by role: encoder f, emotion heads y,
        gender head g, location head l."""
        parts = {"f": [], "y": [], "g": [], "l": []}
        for name in self.params:
            parts[name.split(".", 1)[0]].append(name)
        return parts

    def zero_grads(self) -> None:
        for node in self.params.values():
            node.grad[...] = 0.0

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.value.copy() for k, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            raise ContractError("state dict does not match model parameters")
        for k, v in state.items():
            self.params[k].value[...] = v

    # -- forward ----------------------------------------------------------

    def _embed_all_steps(self, ids: np.ndarray) -> Node:
        """All step inputs as one [T*b x e] matrix, step-major, so the input
        half of the gate projection is a single large matmul."""
        flat = ids.T.reshape(-1)  # step-major
        if self.finetune_embeddings:
            return ad.rows(self.params["f.embed"], flat)
        return ad.constant(self.embedding[flat])

    def _encode(self, ids: np.ndarray, mask: np.ndarray):
        """Run the LSTM over padded ids; returns per-step hidden nodes and the
        final per-post hidden state (padding carries the state forward)."""
        p = self.params
        b, T = ids.shape
        h = ad.tile_rows(p["f.lstm.h0"], b)
        c = ad.tile_rows(p["f.lstm.c0"], b)
        hd = self.hidden_dim
        pre_x = ad.matmul(self._embed_all_steps(ids), p["f.lstm.wx"])  # [T*b x 4h]
        hs = []
        for t in range(T):
            x_part = ad.row_block(pre_x, t * b, (t + 1) * b)
            pre = ad.add_rowvec(ad.add(x_part, ad.matmul(h, p["f.lstm.wh"])),
                                p["f.lstm.b"])
            gi = ad.sigmoid(ad.cols(pre, 0, hd))
            gf = ad.sigmoid(ad.cols(pre, hd, 2 * hd))
            go = ad.sigmoid(ad.cols(pre, 2 * hd, 3 * hd))
            gc = ad.tanh(ad.cols(pre, 3 * hd, 4 * hd))
            c_new = ad.add(ad.mul(gf, c), ad.mul(gi, gc))
            h_new = ad.mul(go, ad.tanh(c_new))
            col = mask[:, t]
            if np.all(col == 1.0):
                h, c = h_new, c_new
            else:
                keep = ad.constant(np.repeat(col[:, None], hd, axis=1))
                drop = ad.constant(1.0 - keep.value)
                h = ad.add(ad.mul(h_new, keep), ad.mul(h, drop))
                c = ad.add(ad.mul(c_new, keep), ad.mul(c, drop))
            hs.append(h)
        return hs, h

    def _attend(self, hs: list[Node], mask: np.ndarray, which: str,
                stacked: Node | None = None):
        p = self.params
        w, bias, u = p[f"f.att_{which}.w"], p[f"f.att_{which}.b"], p[f"f.att_{which}.u"]
        b, T = mask.shape
        if stacked is None:
            stacked = ad.vstack_rows(hs)  # [T*b x h], step-major
        proj = ad.tanh(ad.add_rowvec(ad.matmul(stacked, w), bias))
        scores = ad.unstack_to_cols(ad.matmul(proj, u), T, b)
        weights = ad.softmax_rows(scores, mask)
        pooled = ad.weighted_sum(weights, hs)
        return weights, pooled

    def _emotion_heads(self, head_in: Node) -> list[Node]:
        p = self.params
        out = []
        for j in range(len(EMOTIONS)):
            hid = ad.sigmoid(ad.add_rowvec(ad.matmul(head_in, p[f"y.head{j}.w"]),
                                           p[f"y.head{j}.b"]))
            logits = ad.add_rowvec(ad.matmul(hid, p[f"y.head{j}.wo"]), p[f"y.head{j}.bo"])
            out.append(ad.softmax_rows(logits))
        return out

    def _discriminate(self, vec: Node, which: str, reversal: bool) -> Node:
        p = self.params
        x = ad.grad_reverse(vec, self.lambda_rev) if reversal else vec
        logits = ad.add_rowvec(ad.matmul(x, p[f"{which}.w"]), p[f"{which}.b"])
        if which == "g":
            return ad.sigmoid(logits)
        return ad.softmax_rows(logits)

    def forward(self, batch: list[TokenizedPost], train_mode: bool = False,
                rng: np.random.Generator | None = None,
                dropout_rate: float = 0.0, reversal: bool = True) -> ForwardResult:
        """Batched forward pass through the variant's wiring.

        reversal=False bypasses the gradient-reversal nodes (used by the
        sign-pattern comparisons); forward values are identical either way.
        """
        if not batch:
            raise ContractError("forward: empty batch")
        if any(len(p.ids) == 0 for p in batch):
            raise ContractError("forward: posts must be nonempty")
        b = len(batch)
        T = max(len(p.ids) for p in batch)
        ids = np.zeros((b, T), dtype=np.int64)  # 0 is the PAD row
        mask = np.zeros((b, T))
        for i, post in enumerate(batch):
            n = len(post.ids)
            ids[i, :n] = post.ids
            mask[i, :n] = 1.0

        hs, h_last = self._encode(ids, mask)
        variant = self.variant
        use_reversal = reversal and variant.uses_reversal

        attention: dict[str, Node] = {}
        v_g = v_l = None
        stacked = None
        if variant.uses_gender_attention or variant.uses_location_attention:
            stacked = ad.vstack_rows(hs)
        if variant.uses_gender_attention:
            attention["gender"], v_g = self._attend(hs, mask, "g", stacked)
        if variant.uses_location_attention:
            attention["location"], v_l = self._attend(hs, mask, "l", stacked)

        if v_g is not None and v_l is not None:
            head_in = ad.concat(v_g, v_l)
        elif v_g is not None:
            head_in = v_g
        elif v_l is not None:
            head_in = v_l
        else:
            head_in = h_last

        if train_mode and dropout_rate > 0.0:
            if rng is None:
                raise ContractError("forward: train-mode dropout needs an rng")
            head_in = ad.dropout(head_in, dropout_rate, rng, True)

        gender_prob = location_probs = None
        if variant.uses_gender_discriminator:
            gin = v_g if v_g is not None else h_last
            gender_prob = self._discriminate(gin, "g", use_reversal)
        if variant.uses_location_discriminator:
            lin = v_l if v_l is not None else h_last
            location_probs = self._discriminate(lin, "l", use_reversal)

        return ForwardResult(emotion_probs=self._emotion_heads(head_in),
                             gender_prob=gender_prob, location_probs=location_probs,
                             attention=attention, head_input=head_in, mask=mask)


def build_model(variant, embedding: np.ndarray, num_locations: int, seed: int,
                hidden_dim: int = 128, attention_dim: int | None = None,
                head_hidden_dim: int | None = None, lambda_rev: float = 1.0,
                finetune_embeddings: bool = False, vocab_hash: str = "",
                tokenizer_mode: str = "whitespace", extra_manifest: dict | None = None) -> NpdModel:
    """Assemble a fresh model with seeded initialization."""
    manifest = {
        "variant": ModelVariant(variant).value,
        "embed_dim": int(embedding.shape[1]),
        "hidden_dim": int(hidden_dim),
        "attention_dim": int(attention_dim if attention_dim is not None else hidden_dim),
        "head_hidden_dim": int(head_hidden_dim if head_hidden_dim is not None else hidden_dim),
        "num_emotions": len(EMOTIONS),
        "num_locations": int(num_locations),
        "vocab_hash": vocab_hash,
        "seed": int(seed),
        "lambda_rev": float(lambda_rev),
        "finetune_embeddings": bool(finetune_embeddings),
        "tokenizer_mode": tokenizer_mode,
    }
    if extra_manifest:
        manifest.update(extra_manifest)
    return NpdModel(manifest, embedding)


_MAGIC = b"NPDC"
_VERSION = 1


def save_checkpoint(path: str, model: NpdModel) -> None:
    tensors = {name: node.value for name, node in sorted(model.params.items())}
    tensors["embedding"] = model.embedding
    blob = json.dumps(model.manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<Q", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype=np.float64)
            nb = name.encode("utf-8")
            fh.write(struct.pack("<Q", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<Q", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path: str) -> NpdModel:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise DataError(f"{path}: not a model checkpoint")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        (mlen,) = struct.unpack("<Q", fh.read(8))
        manifest = json.loads(fh.read(mlen).decode("utf-8"))
        (count,) = struct.unpack("<Q", fh.read(8))
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<Q", fh.read(8))
            name = fh.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<Q", fh.read(8))
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim)) if ndim else ()
            size = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * size), dtype="<f8").reshape(shape)
            tensors[name] = data.astype(np.float64)
    embedding = tensors.pop("embedding")
    model = NpdModel(manifest, embedding)
    if set(tensors) != set(model.params):
        raise DataError(f"{path}: checkpoint tensors do not match variant "
                        f"{manifest['variant']}")
    for name, arr in tensors.items():
        if model.params[name].value.shape != arr.shape:
            raise DataError(f"{path}: tensor {name} has shape {arr.shape}, "
                            f"expected {model.params[name].value.shape}")
        model.params[name].value[...] = arr
    return model

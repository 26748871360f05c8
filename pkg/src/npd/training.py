"""Losses, AdaGrad, and the joint adversarial training loop.

The total objective is a weighted sum of the emotion cross-entropy and the
two attribute-discriminator negative log-likelihoods. Discriminator heads
descend their own losses while the shared encoder ascends them through the
gradient-reversal nodes, so one backward pass plus one AdaGrad step per
batch realizes the saddle-point update on all four parameter partitions
simultaneously, with a shared learning rate.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .corpus import EMOTIONS, TokenizedPost
from .errors import ConfigError, ContractError, DivergenceError
from .model import ForwardResult, ModelVariant, NpdModel, build_model
from .seeding import substream

_PROB_FLOOR = 1e-300   # emotion heads: guards log(0) on collapsed softmax
_BCE_EPS = 1e-12       # discriminators: clamp range [eps, 1-eps]

clamp_warnings = 0


def reset_clamp_warnings() -> None:
    global clamp_warnings
    clamp_warnings = 0


def _count_clamps(values: np.ndarray, lo: float) -> None:
    global clamp_warnings
    if np.any(values < lo):
        clamp_warnings += int(np.sum(values < lo))


@dataclass
class ModelDims:
    """Architecture knobs threaded from the CLI into model construction."""

    hidden_dim: int = 128
    attention_dim: int | None = None
    head_hidden_dim: int | None = None
    lambda_rev: float = 1.0
    finetune_embeddings: bool = False


@dataclass
class TrainingConfig:
    mu: float = 0.0001
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    l2_lambda: float = 1e-4
    batch_size: int = 32
    dropout_rate: float = 0.2
    max_epochs: int = 50
    patience: int = 5
    grad_clip: float = 5.0  # global-norm cap; 0 disables (gradient-check mode)
    adagrad_eps: float = 1e-8
    seed: int = 0

    def validate(self):
        if self.mu <= 0:
            raise ConfigError(f"learning rate mu must be positive, got {self.mu}")
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ConfigError("loss weights must be nonnegative")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.max_epochs < 0 or self.patience < 0:
            raise ConfigError("max_epochs and patience must be nonnegative")
        if self.l2_lambda < 0 or self.grad_clip < 0:
            raise ConfigError("l2_lambda and grad_clip must be nonnegative")


def emotion_loss(probs: list[Node], gold_bits: np.ndarray, head_params: list[Node],
                 l2_lambda: float) -> Node:
    """Mean over the batch of the summed per-emotion 2-class cross-entropy,
    plus (l2_lambda/2) * ||emotion-head parameters||^2."""
    b = gold_bits.shape[0]
    total = None
    for j, p in enumerate(probs):
        picked = ad.pick_cols(p, gold_bits[:, j])
        _count_clamps(picked.value, _PROB_FLOOR)
        term = ad.summation(ad.log(ad.clip(picked, _PROB_FLOOR, 1.0)))
        total = term if total is None else ad.add(total, term)
    loss = ad.scale_shift(total, -1.0 / b)
    if l2_lambda > 0.0:
        sq = None
        for w in head_params:
            s = ad.summation(ad.mul(w, w))
            sq = s if sq is None else ad.add(sq, s)
        loss = ad.add(loss, ad.scale_shift(sq, l2_lambda / 2.0))
    return loss


def gender_loss(gender_prob: Node, gold_bits: np.ndarray) -> Node:
    """Mean binary NLL of the predicted male-probability against gold bits."""
    b = gold_bits.shape[0]
    g = ad.constant(np.asarray(gold_bits, dtype=np.float64).reshape(b, 1))
    p = ad.clip(gender_prob, _BCE_EPS, 1.0 - _BCE_EPS)
    pos = ad.mul(g, ad.log(p))
    neg = ad.mul(ad.scale_shift(g, -1.0, 1.0), ad.log(ad.scale_shift(p, -1.0, 1.0)))
    return ad.scale_shift(ad.summation(ad.add(pos, neg)), -1.0 / b)


def location_loss(location_probs: Node, gold: np.ndarray) -> Node:
    """Mean NLL of the gold location class."""
    b = len(gold)
    picked = ad.clip(ad.pick_cols(location_probs, gold), _BCE_EPS, 1.0)
    return ad.scale_shift(ad.summation(ad.log(picked)), -1.0 / b)


def total_loss(j_y: Node, j_gend: Node | None, j_loc: Node | None,
               cfg: TrainingConfig) -> Node:
    """lambda1*J_y + lambda2*J_gend + lambda3*J_loc.

    The adversarial sign for the encoder comes from the reversal nodes in
    the forward graph, never from the weights here.
    """
    out = ad.scale_shift(j_y, cfg.lambda1)
    if j_gend is not None:
        out = ad.add(out, ad.scale_shift(j_gend, cfg.lambda2))
    if j_loc is not None:
        out = ad.add(out, ad.scale_shift(j_loc, cfg.lambda3))
    return out


def batch_losses(model: NpdModel, result: ForwardResult, batch: list[TokenizedPost],
                 cfg: TrainingConfig):
    """(J_y, J_gend, J_loc, J_total) graph nodes for one forward result."""
    gold = np.stack([p.emotion_bits for p in batch])
    heads = [node for name, node in model.params.items() if name.startswith("y.")]
    j_y = emotion_loss(result.emotion_probs, gold, heads, cfg.l2_lambda)
    j_g = j_l = None
    if result.gender_prob is not None:
        j_g = gender_loss(result.gender_prob, np.array([p.gender_bit for p in batch]))
    if result.location_probs is not None:
        j_l = location_loss(result.location_probs, np.array([p.location for p in batch]))
    return j_y, j_g, j_l, total_loss(j_y, j_g, j_l, cfg)


class AdaGrad:
    """Per-coordinate accumulator optimizer: acc += g^2; p -= mu*g/(sqrt(acc)+eps)."""

    def __init__(self, params: dict[str, Node], mu: float, eps: float = 1e-8):
        self.params = params
        self.mu = mu
        self.eps = eps
        self.acc = {k: np.zeros_like(v.value) for k, v in params.items()}

    def step(self) -> None:
        """Apply one joint update to every partition, then zero the gradients."""
        for name, node in self.params.items():
            g = node.grad
            acc = self.acc[name]
            acc += g * g
            node.value -= self.mu * g / (np.sqrt(acc) + self.eps)
            node.grad[...] = 0.0


def clip_global_norm(params: dict[str, Node], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = math.sqrt(sum(float(np.sum(n.grad * n.grad)) for n in params.values()))
    if max_norm > 0.0 and total > max_norm:
        scale = max_norm / total
        for n in params.values():
            n.grad *= scale
    return total


def _first_nonfinite(loss: Node, param_names: dict[int, str]) -> str:
    """Name the earliest node (in forward order) holding a non-finite value."""
    order, visited, stack = [], set(), [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in visited:
                stack.append((p, False))
    for node in order:  # order is already parents-before-children
        if not np.all(np.isfinite(node.value)):
            return param_names.get(id(node), f"{node.op}{list(node.value.shape)}")
    return "loss"


@dataclass
class EpochLog:
    epoch: int
    j_y: float
    j_gend: float
    j_loc: float
    dev_f1: float


@dataclass
class TrainResult:
    model: NpdModel
    log: list[EpochLog] = field(default_factory=list)
    best_epoch: int = -1
    best_dev_f1: float = float("nan")


def write_log(path: str, log: list[EpochLog]) -> None:
    """One tab-separated line per epoch: epoch, J_y, J_gend, J_loc, dev F1."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in log:
            fh.write(f"{row.epoch}\t{row.j_y:.6f}\t{row.j_gend:.6f}\t"
                     f"{row.j_loc:.6f}\t{row.dev_f1:.6f}\n")


def train(train_posts: list[TokenizedPost], dev_posts: list[TokenizedPost],
          variant, cfg: TrainingConfig, embedding: np.ndarray, num_locations: int,
          dims: ModelDims | None = None, vocab_hash: str = "",
          tokenizer_mode: str = "whitespace",
          extra_manifest: dict | None = None) -> TrainResult:
    """Train one variant; returns the best-dev-F1 checkpoint and the epoch log.

    Runs shuffled minibatches; each batch takes one forward pass, one
    backward pass, and one AdaGrad step over all partitions. Early-stops
    when dev average F1 has not improved for cfg.patience epochs.
    """
    from .evaluation import evaluate  # local import; evaluation.ablate calls back here

    cfg.validate()
    if not train_posts:
        raise ContractError("train: empty training split")
    dims = dims or ModelDims()
    variant = ModelVariant(variant)
    model = build_model(variant, embedding, num_locations, cfg.seed,
                        hidden_dim=dims.hidden_dim, attention_dim=dims.attention_dim,
                        head_hidden_dim=dims.head_hidden_dim, lambda_rev=dims.lambda_rev,
                        finetune_embeddings=dims.finetune_embeddings,
                        vocab_hash=vocab_hash, tokenizer_mode=tokenizer_mode,
                        extra_manifest=extra_manifest)
    result = TrainResult(model=model)
    if cfg.max_epochs == 0:
        return result

    opt = AdaGrad(model.params, cfg.mu, cfg.adagrad_eps)
    rng_shuffle = substream(cfg.seed, "shuffle")
    rng_dropout = substream(cfg.seed, "dropout")
    param_names = {id(node): name for name, node in model.params.items()}

    best_state = None
    stale = 0
    n = len(train_posts)
    for epoch in range(cfg.max_epochs):
        order = rng_shuffle.permutation(n)
        sums = np.zeros(3)
        for start in range(0, n, cfg.batch_size):
            batch = [train_posts[i] for i in order[start : start + cfg.batch_size]]
            model.zero_grads()
            fwd = model.forward(batch, train_mode=True, rng=rng_dropout,
                                dropout_rate=cfg.dropout_rate)
            j_y, j_g, j_l, j = batch_losses(model, fwd, batch, cfg)
            if not np.isfinite(j.value):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}; first bad tensor: "
                    f"{_first_nonfinite(j, param_names)}",
                    tensor_name=_first_nonfinite(j, param_names))
            ad.backward(j)
            if cfg.grad_clip > 0.0:
                clip_global_norm(model.params, cfg.grad_clip)
            opt.step()
            w = len(batch)
            sums += w * np.array([float(j_y.value),
                                  float(j_g.value) if j_g is not None else 0.0,
                                  float(j_l.value) if j_l is not None else 0.0])
        means = sums / n
        dev_f1 = evaluate(model, dev_posts).average_f1 if dev_posts else float("nan")
        result.log.append(EpochLog(epoch, means[0], means[1], means[2], dev_f1))

        if dev_posts:
            if best_state is None or dev_f1 > result.best_dev_f1:
                result.best_dev_f1 = dev_f1
                result.best_epoch = epoch
                best_state = model.state()
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break

    if best_state is not None:
        model.load_state(best_state)
    return result

# predinvent/src/neuro.py
"""Effect-supervised neural predicate classifiers.

A candidate predicate is a lifted signature plus an effect vector. Its
classifier is a small MLP over the concatenated features of the atom's
arguments, trained so that predicted truth flips exactly where the effect
vector says and stays put everywhere else.
"""
import io
import zipfile
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config_models import TrainConfig
from .core import (Demonstration, EffectVector, GroundAtom, LiftedPredicate, State, enumerate_groundings,
                   ground_effect_vector, masks)
from .logging_config import get_logger

log = get_logger(__name__)

WEIGHTS_FORMAT_VERSION = 1
ZIP_TIMESTAMP = (1980, 1, 1, 0, 0, 0)


class TrainingError(RuntimeError):
    """Not enough data to train or evaluate a candidate."""


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, x)


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class Mlp:
    """ReLU hidden layers with a single logistic output."""

    def __init__(self, input_dim: int, hidden_sizes: Sequence[int] = (128, 128),
                 rng: Optional[np.random.Generator] = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        dims = [input_dim, *hidden_sizes, 1]
        self.weights: List[np.ndarray] = []
        self.biases: List[np.ndarray] = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / np.sqrt(fan_in) if fan_in > 0 else 1.0
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out))

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    def parameters(self) -> List[np.ndarray]:
        params = []
        for W, b in zip(self.weights, self.biases):
            params.extend([W, b])
        return params

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self._forward(x)[0]

    def _forward(self, x: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        activations = [x.reshape(1, -1) if x.ndim == 1 else x]
        pre_activations = []
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            z = activations[-1] @ W + b
            pre_activations.append(z)
            activations.append(relu(z))
        logits = activations[-1] @ self.weights[-1] + self.biases[-1]
        probs = sigmoid(logits).ravel()
        return probs, (activations, pre_activations)

    def backward(self, probs: np.ndarray, cache, grad_probs: np.ndarray) -> List[np.ndarray]:
        """Gradients for parameters() given dLoss/dprobs."""
        activations, pre_activations = cache
        delta = (grad_probs * probs * (1.0 - probs)).reshape(-1, 1)
        grads: List[np.ndarray] = []
        for layer in range(len(self.weights) - 1, -1, -1):
            grads.append(delta.sum(axis=0))
            grads.append(activations[layer].T @ delta)
            if layer > 0:
                delta = (delta @ self.weights[layer].T) * (pre_activations[layer - 1] > 0)
        grads.reverse()  # now [dW0, db0, dW1, db1, ...]
        return grads

    def copy(self) -> "Mlp":
        clone = Mlp.__new__(Mlp)
        clone.weights = [W.copy() for W in self.weights]
        clone.biases = [b.copy() for b in self.biases]
        return clone

    def to_bytes(self) -> bytes:
        """An .npz archive; entries carry a fixed timestamp so equal weights give equal bytes."""
        arrays = {"version": np.array(WEIGHTS_FORMAT_VERSION)}
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            arrays[f"W{i}"] = W
            arrays[f"b{i}"] = b
        buffer = io.BytesIO()
        with zipfile.ZipFile(buffer, "w", compression=zipfile.ZIP_STORED) as archive:
            for key, array in arrays.items():
                payload = io.BytesIO()
                np.lib.format.write_array(payload, np.asarray(array), allow_pickle=False)
                archive.writestr(zipfile.ZipInfo(f"{key}.npy", date_time=ZIP_TIMESTAMP), payload.getvalue())
        return buffer.getvalue()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Mlp":
        with np.load(io.BytesIO(blob)) as data:
            version = int(data["version"])
            if version != WEIGHTS_FORMAT_VERSION:
                raise ValueError(f"unsupported weights format version {version}")
            layers = sum(1 for k in data.files if k.startswith("W"))
            mlp = cls.__new__(cls)
            mlp.weights = [data[f"W{i}"].copy() for i in range(layers)]
            mlp.biases = [data[f"b{i}"].copy() for i in range(layers)]
        return mlp


class Adam:
    def __init__(self, params: List[np.ndarray], lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: List[np.ndarray]) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


def js_bernoulli(p: np.ndarray, q: np.ndarray, eps: float = 1e-7) -> np.ndarray:
    """Elementwise Jensen-Shannon divergence between Bernoulli(p) and Bernoulli(q), in nats."""
    p = np.clip(p, eps, 1.0 - eps)
    q = np.clip(q, eps, 1.0 - eps)
    m = 0.5 * (p + q)

    def kl(a, b):
        return a * np.log(a / b) + (1.0 - a) * np.log((1.0 - a) / (1.0 - b))

    return 0.5 * kl(p, m) + 0.5 * kl(q, m)


def _js_grad(p: np.ndarray, q: np.ndarray, eps: float) -> Tuple[np.ndarray, np.ndarray]:
    pc = np.clip(p, eps, 1.0 - eps)
    qc = np.clip(q, eps, 1.0 - eps)
    m = 0.5 * (pc + qc)
    logit_m = np.log(m / (1.0 - m))
    gp = 0.5 * (np.log(pc / (1.0 - pc)) - logit_m)
    gq = 0.5 * (np.log(qc / (1.0 - qc)) - logit_m)
    gp = np.where((p > eps) & (p < 1.0 - eps), gp, 0.0)
    gq = np.where((q > eps) & (q < 1.0 - eps), gq, 0.0)
    return gp, gq


def bce(p: np.ndarray, y: np.ndarray, eps: float = 1e-7) -> np.ndarray:
    p = np.clip(p, eps, 1.0 - eps)
    return -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))


def _bce_grad(p: np.ndarray, y: np.ndarray, eps: float) -> np.ndarray:
    pc = np.clip(p, eps, 1.0 - eps)
    g = -y / pc + (1.0 - y) / (1.0 - pc)
    return np.where((p > eps) & (p < 1.0 - eps), g, 0.0)


def transition_loss_and_grad(v_pre: np.ndarray, v_post: np.ndarray, t: np.ndarray,
                             eps: float = 1e-7) -> Tuple[float, np.ndarray, np.ndarray]:
    """Loss for one transition and its gradient w.r.t. the pre/post probabilities.

    Atoms with t == 0 contribute the mean JS divergence between their pre and
    post predictions; atoms with |t| == 1 contribute the mean paired BCE
    against targets (1 - t)/2 before and (1 + t)/2 after.
    """
    m0, _, changed = masks(t)
    unchanged = np.flatnonzero(m0)
    g_pre = np.zeros_like(v_pre)
    g_post = np.zeros_like(v_post)
    loss = 0.0
    if unchanged.size:
        p, q = v_pre[unchanged], v_post[unchanged]
        loss += float(np.mean(js_bernoulli(p, q, eps)))
        gp, gq = _js_grad(p, q, eps)
        g_pre[unchanged] += gp / unchanged.size
        g_post[unchanged] += gq / unchanged.size
    if changed.size:
        tc = t[changed].astype(np.float64)
        before, after = (1.0 - tc) / 2.0, (1.0 + tc) / 2.0
        p, q = v_pre[changed], v_post[changed]
        loss += float(np.mean(0.5 * (bce(p, before, eps) + bce(q, after, eps))))
        g_pre[changed] += 0.5 * _bce_grad(p, before, eps) / changed.size
        g_post[changed] += 0.5 * _bce_grad(q, after, eps) / changed.size
    return loss, g_pre, g_post


def transition_loss(v_pre: np.ndarray, v_post: np.ndarray, t: np.ndarray, eps: float = 1e-7) -> float:
    return transition_loss_and_grad(np.asarray(v_pre, dtype=np.float64), np.asarray(v_post, dtype=np.float64),
                                    np.asarray(t), eps)[0]


@dataclass(frozen=True)
class TransitionBatch:
    """One transition's full grounding: inputs for every atom before and after, plus targets."""
    schema_name: str
    x_pre: np.ndarray
    x_post: np.ndarray
    t: np.ndarray


def _inputs(state: State, atoms: Sequence[GroundAtom], input_dim: int) -> np.ndarray:
    if not atoms:
        return np.zeros((0, input_dim))
    return np.stack([state.vector(a.args) for a in atoms])


def build_batches(predicate: LiftedPredicate, ev: EffectVector,
                  demos: Sequence[Demonstration]) -> List[TransitionBatch]:
    input_dim = sum(t.feature_dim for t in predicate.arg_types)
    batches = []
    for demo in demos:
        atoms = enumerate_groundings(predicate, demo.task.objects)
        if not atoms:
            continue
        for tr in demo.transitions:
            batches.append(TransitionBatch(
                tr.action.schema.name,
                _inputs(tr.pre, atoms, input_dim),
                _inputs(tr.post, atoms, input_dim),
                ground_effect_vector(ev, tr.action, demo.task.objects),
            ))
    return batches


def _schema_weights(batches: Sequence[TransitionBatch]) -> List[float]:
    counts: Dict[str, int] = {}
    for b in batches:
        counts[b.schema_name] = counts.get(b.schema_name, 0) + 1
    return [1.0 / counts[b.schema_name] for b in batches]


def _batch_loss_and_grad(batch: TransitionBatch, mlp: Mlp, eps: float) -> Tuple[float, List[np.ndarray]]:
    n = batch.x_pre.shape[0]
    probs, cache = mlp._forward(np.vstack([batch.x_pre, batch.x_post]))
    loss, g_pre, g_post = transition_loss_and_grad(probs[:n], probs[n:], batch.t, eps)
    return loss, mlp.backward(probs, cache, np.concatenate([g_pre, g_post]))


def dataset_loss(batches: Sequence[TransitionBatch], mlp: Mlp, eps: float = 1e-7) -> float:
    """Sum over controllers of the mean per-transition loss."""
    total = 0.0
    for batch, weight in zip(batches, _schema_weights(batches)):
        n = batch.x_pre.shape[0]
        probs = mlp.forward(np.vstack([batch.x_pre, batch.x_post]))
        total += weight * transition_loss_and_grad(probs[:n], probs[n:], batch.t, eps)[0]
    return total


def dataset_loss_and_grad(batches: Sequence[TransitionBatch], mlp: Mlp,
                          eps: float = 1e-7) -> Tuple[float, List[np.ndarray]]:
    total = 0.0
    grads = [np.zeros_like(p) for p in mlp.parameters()]
    for batch, weight in zip(batches, _schema_weights(batches)):
        loss, g = _batch_loss_and_grad(batch, mlp, eps)
        total += weight * loss
        for acc, gi in zip(grads, g):
            acc += weight * gi
    return total, grads


def split_demos(demos: Sequence[Demonstration], fraction: float,
                rng: np.random.Generator) -> Tuple[List[Demonstration], List[Demonstration]]:
    """Held-out split by whole trajectories."""
    order = rng.permutation(len(demos))
    n_val = int(round(fraction * len(demos)))
    if fraction > 0 and n_val == 0 and len(demos) > 1:
        n_val = 1
    n_val = min(n_val, len(demos) - 1) if len(demos) > 1 else 0
    val = [demos[i] for i in sorted(order[:n_val])]
    train = [demos[i] for i in sorted(order[n_val:])]
    return train, val


class MlpClassifier:
    def __init__(self, mlp: Mlp):
        self.mlp = mlp

    def probabilities(self, state: State, atoms: Sequence[GroundAtom]) -> np.ndarray:
        if not atoms:
            return np.zeros(0)
        return self.mlp.forward(_inputs(state, atoms, self.mlp.input_dim))


def ground(state: State, predicate: LiftedPredicate, mlp: Mlp,
           objects: Optional[Sequence] = None) -> np.ndarray:
    """Truth probabilities for every grounding of ``predicate``, in enumerate_groundings order."""
    atoms = enumerate_groundings(predicate, state.objects if objects is None else objects)
    return MlpClassifier(mlp).probabilities(state, atoms)


def state_transition_loss(pre: State, post: State, t: np.ndarray, predicate: LiftedPredicate, mlp: Mlp,
                          eps: float = 1e-7) -> float:
    """transition_loss with the classifier applied to both states; ``t`` follows enumerate_groundings order."""
    return transition_loss(ground(pre, predicate, mlp), ground(post, predicate, mlp), t, eps)


def demo_loss(demos: Sequence[Demonstration], ev: EffectVector, mlp: Mlp, eps: float = 1e-7) -> float:
    return dataset_loss(build_batches(ev.predicate, ev, demos), mlp, eps)


@dataclass
class TrainedCandidate:
    predicate: LiftedPredicate
    effect_vector: EffectVector
    mlp: Mlp
    val_loss: float
    consistent: bool
    train_curve: List[float] = field(default_factory=list)

    @property
    def classifier(self) -> MlpClassifier:
        return MlpClassifier(self.mlp)


def train_candidate(predicate: LiftedPredicate, ev: EffectVector, demos: Sequence[Demonstration],
                    config: Optional[TrainConfig] = None) -> TrainedCandidate:
    config = config or TrainConfig()
    rng = np.random.default_rng(config.seed)
    train_demos, val_demos = split_demos(demos, config.validation_fraction, rng)
    train_batches = build_batches(predicate, ev, train_demos)
    if not train_batches:
        raise TrainingError(f"no training transitions for candidate '{predicate.name}'")
    val_batches = build_batches(predicate, ev, val_demos)

    input_dim = sum(t.feature_dim for t in predicate.arg_types)
    mlp = Mlp(input_dim, config.hidden_sizes, rng)
    optimizer = Adam(mlp.parameters(), lr=config.learning_rate)
    weights = _schema_weights(train_batches)
    eps = config.clamp_eps

    curve = []
    for _ in range(config.epochs):
        for i in rng.permutation(len(train_batches)):
            _, grads = _batch_loss_and_grad(train_batches[i], mlp, eps)
            optimizer.step([weights[i] * g for g in grads])
        curve.append(dataset_loss(train_batches, mlp, eps))

    if val_batches:
        val_loss = dataset_loss(val_batches, mlp, eps)
    else:
        log.warning("Empty validation split; reporting the training loss.", predicate=predicate.name)
        val_loss = curve[-1]
    consistent = val_loss < config.consistency_threshold
    log.info("Candidate trained.", predicate=predicate.name, val_loss=round(val_loss, 6),
             final_train_loss=round(curve[-1], 6), consistent=consistent)
    return TrainedCandidate(predicate, ev, mlp, val_loss, consistent, curve)


def score(val_losses: Sequence[float]) -> List[float]:
    """Linear rescaling of losses to [0, 100]: best gets 100, worst 0, all-equal gets 100.

    NaN and infinite losses rank as the worst and score 0; the range is taken over the finite losses.
    """
    losses = np.asarray(val_losses, dtype=np.float64)
    if losses.size == 0:
        return []
    finite = np.isfinite(losses)
    if not finite.any():
        return [100.0] * losses.size
    lo, hi = losses[finite].min(), losses[finite].max()
    if hi - lo <= 0.0:
        return [100.0 if ok else 0.0 for ok in finite]
    return [float(100.0 * (hi - v) / (hi - lo)) if ok else 0.0 for v, ok in zip(losses, finite)]

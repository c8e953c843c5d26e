"""Training: the two losses, the rectified-Adam optimizer with per-block
trust-ratio scaling, gradient accumulation with interleaved per-loss
updates, and binary checkpoints.

Both losses are per-sentence means of per-token negative log-likelihood,
so their sum (the combined objective) adds commensurable quantities, and
averaging accumulated micro-batch gradients reproduces a larger batch.
"""

import json
import math
import os
import tempfile
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .corpus import BOS, EOS, IGNORE_ID, PAD, mask_ngram
from .model import ModelConfig, ModelParams, decode_logits, encode_source, restore_logits


class TrainingError(Exception):
    pass


# -- batch assembly ----------------------------------------------------------


def pad_to_matrix(rows, fill):
    width = max(len(r) for r in rows)
    out = np.full((len(rows), width), fill, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, : len(r)] = r
    return out


def mlm_arrays(masked_batches):
    inputs = pad_to_matrix([b.input_ids for b in masked_batches], PAD)
    targets = pad_to_matrix([b.target_ids for b in masked_batches], IGNORE_ID)
    return inputs, targets


def pair_arrays(pairs):
    """(src, decoder_in, decoder_target) id matrices for teacher forcing."""
    src = pad_to_matrix([h.token_ids for h, _ in pairs], PAD)
    dec_in = pad_to_matrix([[BOS] + list(k.token_ids) for _, k in pairs], PAD)
    dec_tgt = pad_to_matrix([list(k.token_ids) + [EOS] for _, k in pairs], PAD)
    return src, dec_in, dec_tgt


# -- losses ------------------------------------------------------------------


def mlm_loss(input_ids, target_ids, params, rng=None):
    """Restoration loss: mean over sentences of the mean NLL at masked slots."""
    if not (np.asarray(target_ids) != IGNORE_ID).any():
        raise TrainingError("masked batch carries no masked positions")
    states, pad_mask = encode_source(input_ids, params, rng)
    logits = restore_logits(states, pad_mask, params, rng)
    return T.sequence_nll(logits, target_ids, pad_id=IGNORE_ID)


def translation_loss(src_ids, dec_in_ids, dec_tgt_ids, params, rng=None):
    """Translation loss: per-sentence length-normalized token NLL, averaged."""
    states, pad_mask = encode_source(src_ids, params, rng)
    logits = decode_logits(states, pad_mask, dec_in_ids, params, rng)
    return T.sequence_nll(logits, dec_tgt_ids, pad_id=PAD)


# -- optimizer ---------------------------------------------------------------


@dataclass
class OptimizerConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    trust_clip: tuple = (0.01, 10.0)
    accumulation_steps: int = 1
    warmup_frac: float = 0.06
    decay: str = "none"  # or "linear" down to min_lr_frac after warmup
    min_lr_frac: float = 0.05

    def __post_init__(self):
        if self.decay not in ("none", "linear"):
            raise TrainingError(f"unknown lr decay {self.decay!r}")

    def to_dict(self):
        d = asdict(self)
        d["trust_clip"] = list(d["trust_clip"])
        return d


class OptimizerState:
    """Moment buffers plus counters: one logical step counter for the whole
    model (schedules key off it), and per-parameter update counts so bias
    corrections stay honest for parameters that only one loss touches."""

    def __init__(self, config: OptimizerConfig):
        self.config = config
        self.step = 0
        self.m = {}
        self.v = {}
        self.counts = {}


def optimizer_step(grads, state: OptimizerState, params: ModelParams, lr_scale=1.0):
    """One rectified-Adam update with a per-block trust ratio.

    grads maps parameter names to arrays. While the variance-rectification
    term is inactive (early updates of a parameter) that parameter falls
    back to bias-corrected momentum. The magnitude of each block's update
    is then rescaled by clip(||w|| / ||u||) so blocks of very different
    scale train together.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise T.NumericError(f"non-finite gradient for {name}; step aborted")

    cfg = state.config
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    rho_inf = 2.0 / (1.0 - b2) - 1.0
    lr = cfg.lr * lr_scale

    for name, g in grads.items():
        g = g.astype(np.float32, copy=False)
        w = params.tensors[name].data
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(w)
            state.v[name] = np.zeros_like(w)
            state.counts[name] = 0
        v = state.v[name]
        state.counts[name] += 1
        t = state.counts[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g

        beta2_t = b2 ** t
        rho_t = rho_inf - 2.0 * t * beta2_t / (1.0 - beta2_t)
        m_hat = m / (1.0 - b1 ** t)
        if rho_t > 4.0:
            rect = math.sqrt(
                ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf)
                / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)
            )
            v_hat = np.sqrt(v / (1.0 - beta2_t))
            update = rect * m_hat / (v_hat + cfg.eps)
        else:
            update = m_hat

        w_norm = float(np.linalg.norm(w))
        u_norm = float(np.linalg.norm(update))
        if w_norm > 0.0 and u_norm > 0.0:
            trust = min(max(w_norm / u_norm, cfg.trust_clip[0]), cfg.trust_clip[1])
        else:
            trust = 1.0
        w -= lr * trust * update


def warmup_scale(step, total_steps, warmup_frac):
    warm = max(1, int(total_steps * warmup_frac))
    return min(1.0, step / warm)


def lr_scale(step, total_steps, opt_config: OptimizerConfig):
    scale = warmup_scale(step, total_steps, opt_config.warmup_frac)
    if opt_config.decay == "linear" and scale >= 1.0:
        warm = max(1, int(total_steps * opt_config.warmup_frac))
        span = max(1, total_steps - warm)
        progress = min(1.0, (step - warm) / span)
        floor = opt_config.min_lr_frac
        scale = 1.0 - (1.0 - floor) * progress
    return scale


class GradAccumulator:
    def __init__(self):
        self.buffers = {}
        self.count = 0

    def add_from(self, params: ModelParams):
        for name, t in params.tensors.items():
            if t.grad is None:
                continue
            if name in self.buffers:
                self.buffers[name] += t.grad
            else:
                self.buffers[name] = t.grad.copy()
        self.count += 1

    def averaged(self):
        if self.count == 0:
            raise TrainingError("no gradients accumulated")
        return {n: g / self.count for n, g in self.buffers.items()}


# -- schedule and loop -------------------------------------------------------


@dataclass
class TrainSchedule:
    mode: str = "multitask"
    total_steps: int = 1000
    batch_size: int = 16
    interleave: tuple = (1, 1)  # restoration : translation optimizer steps
    eval_cadence: int = 200
    checkpoint_cadence: int = 0  # 0 = final checkpoint only
    seed: int = 0
    mask_rate: float = 0.15
    pretrain_frac: float = 0.5

    MODES = ("multitask", "translation_only", "restoration_only", "pretrain_then_finetune")

    def __post_init__(self):
        if self.mode not in self.MODES:
            raise TrainingError(f"unknown schedule mode {self.mode!r}")

    def to_dict(self):
        d = asdict(self)
        d["interleave"] = list(d["interleave"])
        return d

    def kind_of_step(self, step):
        """'R' or 'T' for optimizer step number `step` (1-based)."""
        if self.mode == "translation_only":
            return "T"
        if self.mode == "restoration_only":
            return "R"
        if self.mode == "pretrain_then_finetune":
            return "R" if step <= self.total_steps * self.pretrain_frac else "T"
        r, t = self.interleave
        return "R" if (step - 1) % (r + t) < r else "T"


class _Cycler:
    """Endless seeded shuffle over a pool; reshuffles each epoch."""

    def __init__(self, pool, rng):
        if not pool:
            raise TrainingError("empty training pool")
        self.pool = pool
        self.rng = rng
        self.order = []

    def take(self, n):
        out = []
        while len(out) < n:
            if not self.order:
                self.order = list(self.rng.permutation(len(self.pool)))
            out.append(self.pool[self.order.pop()])
        return out


@dataclass
class TrainResult:
    params: ModelParams
    log: list = field(default_factory=list)
    diverged: bool = False
    steps_done: int = 0
    restoration_steps: int = 0
    translation_steps: int = 0
    checkpoint_path: str | None = None


def train_loop(
    paired_train,
    unpaired_train,
    model_config: ModelConfig,
    schedule: TrainSchedule,
    opt_config: OptimizerConfig | None = None,
    params: ModelParams | None = None,
    run_dir=None,
    log_writer=None,
    extra_manifest=None,
):
    """Run one training schedule; returns the trained parameters and log.

    Restoration batches draw from every Hanja sentence (paired sources plus
    the unpaired pool); translation batches draw from pairs only. Each loss
    accumulates its own micro-batch gradients and takes its own optimizer
    step. A non-finite loss halts the loop, leaving the last checkpoint.
    """
    opt_config = opt_config or OptimizerConfig()
    if params is None:
        params = ModelParams(model_config, seed=schedule.seed)
    state = OptimizerState(opt_config)

    rng = np.random.default_rng(schedule.seed)
    order_rng = np.random.default_rng(rng.integers(2**63))
    mask_rng = np.random.default_rng(rng.integers(2**63))
    drop_rng = np.random.default_rng(rng.integers(2**63))

    hanja_pool = [h for h, _ in paired_train] + list(unpaired_train)
    needs_restoration = any(
        schedule.kind_of_step(s) == "R" for s in range(1, schedule.total_steps + 1)
    )
    needs_translation = any(
        schedule.kind_of_step(s) == "T" for s in range(1, schedule.total_steps + 1)
    )
    rest_cycler = _Cycler(hanja_pool, order_rng) if needs_restoration else None
    pair_cycler = _Cycler(list(paired_train), order_rng) if needs_translation else None

    result = TrainResult(params=params)
    window = {"R": [], "T": []}
    dropout_on = model_config.dropout > 0.0

    def emit_log(step):
        entry = {
            "step": step,
            "loss_rst": float(np.mean(window["R"])) if window["R"] else None,
            "loss_trs": float(np.mean(window["T"])) if window["T"] else None,
            "lr": opt_config.lr * lr_scale(step, schedule.total_steps, opt_config),
        }
        result.log.append(entry)
        if log_writer is not None:
            log_writer.write(json.dumps(entry) + "\n")
            log_writer.flush()
        window["R"].clear()
        window["T"].clear()

    def save(step, name):
        if run_dir is None:
            return None
        ckpt_dir = os.path.join(run_dir, "checkpoints")
        os.makedirs(ckpt_dir, exist_ok=True)
        manifest = {
            "step": step,
            "schedule": schedule.to_dict(),
            "optimizer": opt_config.to_dict(),
            "metrics": result.log[-1] if result.log else {},
        }
        if extra_manifest:
            manifest.update(extra_manifest)
        path = os.path.join(ckpt_dir, name)
        save_checkpoint(path, params, manifest)
        return path

    for step in range(1, schedule.total_steps + 1):
        kind = schedule.kind_of_step(step)
        acc = GradAccumulator()
        micro_losses = []
        try:
            for _ in range(opt_config.accumulation_steps):
                params.zero_grads()
                with T.Graph() as graph:
                    if kind == "R":
                        sents = rest_cycler.take(schedule.batch_size)
                        masked = [
                            mask_ngram(s, mask_rng, mask_rate=schedule.mask_rate)
                            for s in sents
                        ]
                        inputs, targets = mlm_arrays(masked)
                        loss = mlm_loss(
                            inputs, targets, params, drop_rng if dropout_on else None
                        )
                    else:
                        pairs = pair_cycler.take(schedule.batch_size)
                        src, dec_in, dec_tgt = pair_arrays(pairs)
                        loss = translation_loss(
                            src, dec_in, dec_tgt, params, drop_rng if dropout_on else None
                        )
                    value = float(loss.data)
                    if not math.isfinite(value):
                        raise T.NumericError("loss is not finite")
                    graph.backward(loss)
                acc.add_from(params)
                micro_losses.append(value)

            scale = lr_scale(step, schedule.total_steps, opt_config)
            optimizer_step(acc.averaged(), state, params, lr_scale=scale)
        except T.NumericError:
            # divergence: halt here; the last saved checkpoint stands
            result.diverged = True
            emit_log(step)
            return result
        result.steps_done = step
        if kind == "R":
            result.restoration_steps += 1
        else:
            result.translation_steps += 1
        window[kind].append(float(np.mean(micro_losses)))

        if step % schedule.eval_cadence == 0 or step == schedule.total_steps:
            emit_log(step)
            if schedule.checkpoint_cadence and step % schedule.checkpoint_cadence == 0:
                result.checkpoint_path = save(step, f"step_{step:07d}.ckpt")

    result.checkpoint_path = save(schedule.total_steps, "final.ckpt") or result.checkpoint_path
    return result


# -- checkpoints -------------------------------------------------------------

_MAGIC = b"HMCKPT1\n"
CHECKPOINT_FORMAT_VERSION = 1


def save_checkpoint(path, params: ModelParams, manifest=None):
    """Manifest JSON plus named little-endian f32 blocks, written atomically."""
    manifest = dict(manifest or {})
    manifest["format_version"] = CHECKPOINT_FORMAT_VERSION
    manifest["model"] = params.config.to_dict()
    blob = json.dumps(manifest, ensure_ascii=False).encode("utf-8")

    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(_MAGIC)
            f.write(struct.pack("<Q", len(blob)))
            f.write(blob)
            f.write(struct.pack("<I", len(params.tensors)))
            for name in sorted(params.tensors):
                data = np.ascontiguousarray(
                    params.tensors[name].data, dtype="<f4"
                )
                encoded = name.encode("utf-8")
                f.write(struct.pack("<I", len(encoded)))
                f.write(encoded)
                f.write(struct.pack("<I", data.ndim))
                f.write(struct.pack(f"<{data.ndim}I", *data.shape))
                f.write(data.tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_checkpoint_blocks(path):
    """Raw (manifest, {name: array}) without rebuilding a model."""
    with open(path, "rb") as f:
        if f.read(len(_MAGIC)) != _MAGIC:
            raise TrainingError(f"{path} is not a checkpoint file")
        (blob_len,) = struct.unpack("<Q", f.read(8))
        manifest = json.loads(f.read(blob_len).decode("utf-8"))
        (n_blocks,) = struct.unpack("<I", f.read(4))
        blocks = {}
        for _ in range(n_blocks):
            (name_len,) = struct.unpack("<I", f.read(4))
            name = f.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(f.read(4 * count), dtype="<f4").reshape(shape)
            blocks[name] = data.astype(np.float32)
    return manifest, blocks


def load_checkpoint(path):
    """Rebuild ModelParams from a checkpoint; returns (params, manifest)."""
    manifest, blocks = read_checkpoint_blocks(path)
    config = ModelConfig.from_dict(manifest["model"])
    params = ModelParams(config, seed=0)
    missing = set(params.tensors) - set(blocks)
    extra = set(blocks) - set(params.tensors)
    if missing or extra:
        raise TrainingError(
            f"checkpoint blocks disagree with config: missing={sorted(missing)}, "
            f"extra={sorted(extra)}"
        )
    for name, data in blocks.items():
        if params.tensors[name].data.shape != data.shape:
            raise TrainingError(f"shape mismatch for block {name}")
        params.tensors[name].data = data.copy()
    return params, manifest


def checkpoint_id(path):
    import hashlib

    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]

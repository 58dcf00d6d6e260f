"""Latent diffusion attacker.

User profiles are encoded by the frozen :class:`~shillab.autoencoder.ProfileAE`,
noised in latent space, and denoised by a small noise approximator that is
conditioned on graph features of the target items. Sampling starts from a
noised genuine template and ends with a top-``mu`` binarisation of the decoded
logits.
"""

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import InteractionMatrix
from .errors import ConfigError, DimensionError, TrainingError
from .kernel import CrossAttention, Linear, ParamStore, Rng, Tanh

log = logging.getLogger(__name__)

MODES = ("ca", "sum", "concat", "none")
COND_SOURCES = ("targets", "profile")


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step tables for steps ``s = 1..S`` (stored at index ``s - 1``)."""

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @classmethod
    def from_betas(cls, betas):
        betas = np.asarray(betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ConfigError("schedule needs at least one step")
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise ConfigError("every beta must lie in (0, 1)")
        alphas = 1.0 - betas
        return cls(betas, alphas, np.cumprod(alphas))

    @property
    def steps(self):
        return int(self.betas.size)

    def _idx(self, s):
        s_arr = np.asarray(s)
        if np.any(s_arr < 1) or np.any(s_arr > self.steps):
            raise IndexError(f"step {s} outside [1, {self.steps}]")
        return s_arr - 1

    def beta(self, s):
        return self.betas[self._idx(s)]

    def alpha(self, s):
        return self.alphas[self._idx(s)]

    def alpha_bar(self, s):
        return self.alpha_bars[self._idx(s)]

    def alpha_bar_prev(self, s):
        idx = self._idx(s)
        return np.where(idx > 0, self.alpha_bars[np.maximum(idx - 1, 0)], 1.0)

    def posterior_variance(self, s):
        return (1.0 - self.alpha_bar_prev(s)) / (1.0 - self.alpha_bar(s)) * self.beta(s)


def make_schedule(steps, beta_min, beta_max):
    """Linear betas from ``beta_min`` to ``beta_max`` over ``steps`` steps."""
    if steps < 1:
        raise ConfigError(f"step count must be >= 1, got {steps}")
    if not 0.0 < beta_min <= beta_max < 1.0:
        raise ConfigError(f"need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]")
    return NoiseSchedule.from_betas(np.linspace(beta_min, beta_max, steps))


def _per_row(values, e):
    v = np.asarray(values, dtype=np.float64)
    return v[:, None] if v.ndim == 1 and e.ndim == 2 else v


def q_sample(e0, s, eps, sched):
    """Closed-form forward noising ``sqrt(abar_s) e0 + sqrt(1 - abar_s) eps``.

    ``s`` may be a scalar or one step per row of ``e0``.
    """
    e0 = np.asarray(e0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if e0.shape != eps.shape:
        raise DimensionError(f"latent {e0.shape} and noise {eps.shape} differ")
    ab = _per_row(sched.alpha_bar(s), e0)
    return np.sqrt(ab) * e0 + np.sqrt(1.0 - ab) * eps


def q_step(e_prev, s, eps, sched):
    """One forward step ``sqrt(1 - beta_s) e_{s-1} + sqrt(beta_s) eps``."""
    b = _per_row(sched.beta(s), np.asarray(e_prev))
    return np.sqrt(1.0 - b) * e_prev + np.sqrt(b) * eps


def reverse_step(e_hat, s, eps_hat, z, sched, posterior_variance=False):
    """Ancestral update from step ``s`` to ``s - 1``; noise is dropped at ``s = 1``.

    The default noise scale is ``sqrt(beta_s)``; ``posterior_variance=True``
    uses ``(1 - abar_{s-1}) / (1 - abar_s) * beta_s`` instead.
    """
    alpha = float(sched.alpha(s))
    abar = float(sched.alpha_bar(s))
    mean = (e_hat - (1.0 - alpha) / math.sqrt(1.0 - abar) * eps_hat) / math.sqrt(alpha)
    if s == 1 or z is None:
        return mean
    var = float(sched.posterior_variance(s)) if posterior_variance else float(sched.beta(s))
    return mean + math.sqrt(var) * z


def sinusoidal_embedding(s, width):
    s = np.atleast_1d(np.asarray(s, dtype=np.float64))
    half = width // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    ang = s[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
    if width % 2:
        emb = np.concatenate([emb, np.zeros((s.size, 1))], axis=1)
    return emb


class NoiseApproximator:
    """Target-conditioned noise predictor.

    ``b = tanh(enc(e_s)) + step(sinusoid(s))`` is the bottleneck; the target
    features are projected by ``tau`` and then mixed in according to ``mode``:

    * ``ca``: ``z = attention(query=b, keys/values=tau(e_t)) + b``
    * ``sum``: ``z = b + mean(tau(e_t))``
    * ``concat``: ``z = [b ; mean(tau(e_t))]``
    * ``none``: ``z = b`` (no conditioning)

    and ``dec(z)`` is the predicted noise. Parameters are initialised from
    streams keyed by their names, so components shared between modes start
    bit-identical for the same seed.
    """

    def __init__(self, dim=64, bottleneck=32, mode="ca", seed=0, attn_scale_dim=None):
        if mode not in MODES:
            raise ConfigError(f"unknown conditioning mode {mode!r}")
        self.dim = dim
        self.bottleneck = bottleneck
        self.mode = mode
        self.seed = seed
        self.store = ParamStore()
        rng = Rng(seed, "approximator")
        self.enc = Linear(self.store, "bottleneck_enc", dim, bottleneck, rng)
        self.act = Tanh()
        self.step = Linear(self.store, "step_proj", bottleneck, bottleneck, rng)
        self.tau = Linear(self.store, "tau", dim, bottleneck, rng) if mode != "none" else None
        self.attn = (CrossAttention(self.store, "attn", bottleneck, rng, scale_dim=attn_scale_dim)
                     if mode == "ca" else None)
        dec_in = 2 * bottleneck if mode == "concat" else bottleneck
        self.dec = Linear(self.store, "bottleneck_dec", dec_in, dim, rng)

    def _context(self, cond, batch):
        cond = np.asarray(cond, dtype=np.float64)
        if cond.ndim == 1:
            cond = cond[None, :]
        if cond.shape[-1] != self.dim:
            raise DimensionError(f"target feature width {cond.shape[-1]} != {self.dim}")
        if cond.ndim == 3 and cond.shape[0] != batch:
            raise DimensionError(f"per-sample conditions for {cond.shape[0]} rows, batch has {batch}")
        if cond.shape[-2] == 0:
            raise ValueError("at least one target feature is required")
        return cond

    def forward(self, e_s, s, cond):
        e_s = np.atleast_2d(np.asarray(e_s, dtype=np.float64))
        if e_s.shape[1] != self.dim:
            raise DimensionError(f"latent width {e_s.shape[1]} != {self.dim}")
        batch = e_s.shape[0]
        s = np.broadcast_to(np.asarray(s), (batch,))
        b = self.act.forward(self.enc.forward(e_s)) + self.step.forward(sinusoidal_embedding(s, self.bottleneck))
        self._shared = None
        if self.mode == "none":
            z = b
        else:
            cond = self._context(cond, batch)
            self._shared = cond.ndim == 2
            c = self.tau.forward(cond)
            if self.mode == "ca":
                ctx = np.broadcast_to(c, (batch,) + c.shape) if self._shared else c
                z = self.attn.forward(b, ctx) + b
            else:
                c_mean = c.mean(axis=-2)
                self._n_ctx = c.shape[-2]
                if self._shared:
                    c_mean = np.broadcast_to(c_mean, (batch, self.bottleneck))
                z = b + c_mean if self.mode == "sum" else np.concatenate([b, c_mean], axis=1)
        return self.dec.forward(z)

    def backward(self, grad):
        """Accumulate parameter gradients for d(loss)/d(predicted noise) = ``grad``."""
        dz = self.dec.backward(grad)
        d_c = None
        if self.mode == "none":
            db = dz
        elif self.mode == "ca":
            d_q, d_ctx = self.attn.backward(dz)
            db = dz + d_q
            d_c = d_ctx.sum(axis=0) if self._shared else d_ctx
        else:
            if self.mode == "sum":
                db, d_mean = dz, dz
            else:
                db, d_mean = dz[:, :self.bottleneck], dz[:, self.bottleneck:]
            if self._shared:
                d_mean = d_mean.sum(axis=0)
            d_c = np.repeat(d_mean[..., None, :] / self._n_ctx, self._n_ctx, axis=-2)
        if d_c is not None:
            self.tau.backward(d_c)
        self.step.backward(db)
        self.enc.backward(self.act.backward(db))

    def predict(self, e_s, s, cond):
        return self.forward(e_s, s, cond)

    def loss(self, e0, s, eps, cond, sched):
        """Noise-prediction MSE (squared norm per row, mean over rows), with gradients."""
        e_s = q_sample(e0, s, eps, sched)
        eps_hat = self.forward(e_s, s, cond)
        diff = eps_hat - eps
        value = float((diff * diff).sum() / diff.shape[0])
        self.backward(2.0 * diff / diff.shape[0])
        return value


@dataclass(frozen=True)
class AttackConfig:
    """Settings for training the diffusion attacker and crafting fake profiles."""

    k: int = 50
    targets: tuple = ()
    steps: int = 100
    beta_min: float = 1e-4
    beta_max: float = 2e-2
    mode: str = "ca"
    cond_source: str = "targets"
    bottleneck: int = 32
    force_targets: bool = True
    budget_min: int = 5
    budget_max: int = 100
    template_min_len: int = 5
    lr: float = 1e-3
    weight_decay: float = 1e-5
    epochs: int = 300
    batch_size: int = 128
    seed: int = 0
    attn_scale: str = "bottleneck"
    posterior_variance: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.mode not in MODES:
            raise ConfigError(f"unknown conditioning mode {self.mode!r}")
        if self.cond_source not in COND_SOURCES:
            raise ConfigError(f"unknown condition source {self.cond_source!r}")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.steps > 0 and not 0.0 < self.beta_min <= self.beta_max < 1.0:
            raise ConfigError(f"need 0 < beta_min <= beta_max < 1, got [{self.beta_min}, {self.beta_max}]")
        if self.attn_scale not in ("bottleneck", "latent"):
            raise ConfigError(f"attn_scale must be 'bottleneck' or 'latent', got {self.attn_scale!r}")
        if not 1 <= self.budget_min <= self.budget_max:
            raise ConfigError("need 1 <= budget_min <= budget_max")

    def schedule(self):
        return make_schedule(self.steps, self.beta_min, self.beta_max) if self.steps > 0 else None

    def to_dict(self):
        d = asdict(self)
        d["targets"] = [int(t) for t in self.targets]
        return d


@dataclass
class TrainedAttacker:
    approximator: NoiseApproximator
    schedule: NoiseSchedule
    history: list = field(default_factory=list)


def build_approximator(cfg, dim):
    scale_dim = dim if cfg.attn_scale == "latent" else None
    return NoiseApproximator(dim=dim, bottleneck=cfg.bottleneck, mode=cfg.mode, seed=cfg.seed,
                             attn_scale_dim=scale_dim)


def _profile_conditions(view_matrix, users, n_cond, item_table, rng):
    """Features of ``n_cond`` items drawn (with replacement) from each user's own profile."""
    out = np.empty((len(users), n_cond, item_table.shape[1]))
    for k, u in enumerate(users):
        out[k] = item_table[rng.choice(view_matrix.row(u), size=n_cond)]
    return out


def train_lda(view, ae, genc, cfg, sched=None):
    """Fit the noise approximator on latent features of the attacker-view users.

    Each minibatch draws ``s ~ U{1..S}`` and ``eps ~ N(0, I)`` per user. With
    ``cond_source='targets'`` every sample is conditioned on the graph
    features of ``cfg.targets``; with ``'profile'`` each user is conditioned
    on features of items drawn from its own profile.
    """
    y = getattr(view, "matrix", view)
    sched = sched if sched is not None else cfg.schedule()
    if sched is None:
        raise ConfigError("training the diffusion attacker needs steps >= 1")
    if not ae.frozen:
        raise ValueError("the autoencoder must be pretrained and frozen first")
    users = np.flatnonzero(y.row_lengths() > 0)
    latents = ae.encode(y.dense_rows(users))
    approx = build_approximator(cfg, ae.dim)
    n_cond = max(len(cfg.targets), 1)
    target_feats = genc.target_features(list(cfg.targets)) if cfg.targets else None
    if cfg.mode != "none" and cfg.cond_source == "targets" and target_feats is None:
        raise ConfigError("conditioning on targets requires a non-empty target set")
    rng = Rng(cfg.seed, "lda", "train")
    history = []
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(users.size)
        total = 0.0
        for start in range(0, order.size, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            e0 = latents[idx]
            s = rng.integers(1, sched.steps + 1, size=idx.size)
            eps = rng.normal(size=e0.shape)
            if cfg.mode == "none":
                cond = None
            elif cfg.cond_source == "targets":
                cond = target_feats
            else:
                cond = _profile_conditions(y, users[idx], n_cond, genc.item_table, rng)
            approx.store.zero_grad()
            value = approx.loss(e0, s, eps, cond, sched)
            step += 1
            if not np.isfinite(value):
                raise TrainingError("diffusion loss is not finite", epoch=epoch, step=step)
            approx.store.adam_step(cfg.lr, cfg.weight_decay)
            total += value * idx.size
        history.append(total / users.size)
    log.debug("lda: %d epochs, loss %.4f -> %.4f", cfg.epochs, history[0] if history else float("nan"),
              history[-1] if history else float("nan"))
    approx.store.freeze()
    return TrainedAttacker(approx, sched, history)


def select_targets(view, n_targets=5, seed=0, bottom_fraction=0.8):
    """Uniform sample of items from the least popular ``bottom_fraction`` of items seen in the view."""
    y = getattr(view, "matrix", view)
    counts = y.item_counts()
    seen = np.flatnonzero(counts > 0)
    order = seen[np.lexsort((seen, counts[seen]))]
    pool = order[:max(int(math.floor(bottom_fraction * order.size)), n_targets)]
    if pool.size < n_targets:
        raise ConfigError(f"only {pool.size} candidate targets for {n_targets} requested")
    rng = Rng(seed, "targets")
    return tuple(int(t) for t in np.sort(rng.choice(pool, size=n_targets, replace=False)))


def sample_templates(view, k, seed=0, min_len=5):
    y = getattr(view, "matrix", view)
    eligible = np.flatnonzero(y.row_lengths() >= min_len)
    if eligible.size < k:
        raise ConfigError(f"only {eligible.size} view users have >= {min_len} interactions; k={k}")
    rng = Rng(seed, "templates")
    return np.sort(rng.choice(eligible, size=k, replace=False))


def binarize_top(logits, budget, targets=(), force_targets=True):
    """Indices of the ``budget`` highest logits (ties to lower index), optionally forcing targets in.

    Each missing target replaces the lowest-scoring selected non-target item.
    """
    logits = np.asarray(logits, dtype=np.float64)
    budget = min(int(budget), logits.size)
    order = np.argsort(-logits, kind="stable")
    chosen = list(order[:budget])
    if force_targets and targets:
        tset = set(int(t) for t in targets)
        missing = [t for t in targets if int(t) not in set(chosen)]
        for t in missing:
            replaceable = [j for j in range(len(chosen)) if chosen[j] not in tset]
            if replaceable:
                j = max(replaceable, key=lambda q: (-logits[chosen[q]], chosen[q]))
                chosen[j] = int(t)
            else:
                chosen.append(int(t))
    return np.sort(np.asarray(chosen, dtype=np.int64))


def generate_profiles(templates, cfg, ae, genc, attacker, view, rng=None):
    """Craft one fake profile per template user.

    encode -> noise to step S -> S conditioned reverse steps -> decode -> keep
    the top ``mu`` items, where ``mu`` is the template's length clamped to
    ``[budget_min, budget_max]``. ``cfg.steps == 0`` (or ``attacker=None``)
    skips diffusion and binarises the plain autoencoder reconstruction.
    """
    y = getattr(view, "matrix", view)
    templates = np.asarray(templates, dtype=np.int64)
    lengths = y.row_lengths()[templates]
    if np.any(lengths == 0):
        log.warning("skipping %d empty template(s)", int((lengths == 0).sum()))
        templates = templates[lengths > 0]
        lengths = lengths[lengths > 0]
    if templates.size < cfg.k:
        raise ValueError(f"{templates.size} usable templates for k={cfg.k}")
    templates, lengths = templates[:cfg.k], lengths[:cfg.k]
    rng = rng if rng is not None else Rng(cfg.seed, "lda", "generate")
    e = ae.encode(y.dense_rows(templates))
    if cfg.steps > 0 and attacker is not None:
        sched = attacker.schedule
        approx = attacker.approximator
        cond = genc.target_features(list(cfg.targets)) if approx.mode != "none" else None
        S = sched.steps
        e = q_sample(e, S, rng.normal(size=e.shape), sched)
        for s in range(S, 0, -1):
            z = rng.normal(size=e.shape) if s > 1 else None
            eps_hat = approx.predict(e, s, cond)
            e = reverse_step(e, s, eps_hat, z, sched, posterior_variance=cfg.posterior_variance)
    logits = ae.decode(e)
    rows = []
    for r in range(templates.size):
        budget = int(np.clip(lengths[r], cfg.budget_min, cfg.budget_max))
        rows.append(binarize_top(logits[r], budget, cfg.targets, cfg.force_targets))
    return InteractionMatrix.from_rows(rows, y.n_items)

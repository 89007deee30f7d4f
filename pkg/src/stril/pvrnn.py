"""Partially-trainable-conditioned variational RNN.

A VRNN over (observation, action) sequences whose every network is also
conditioned on a per-trajectory vector ``l``.  The ``l`` vectors are free
parameters optimised jointly with the network weights; after training they are
the strategy representations.

Per step, with ``ψ_o``/``ψ_a`` the observation/action feature nets::

    prior    [μ, σ]  = φ_pri(h_{t-1}, ψ_o(o_t), l)
    encoder  [μ, σ]  = φ_enc(h_{t-1}, ψ_o(o_t), l, ψ_a(a_t))
    decoder  logits  = φ_dec(h_{t-1}, z_t, ψ_o(o_t), l)
    recurrence  h_t  = GRU(h_{t-1}; ψ_a(a_t), z_t, ψ_o(o_t), l)

The loss of one trajectory is Σ_t NLL(a_t | decoder) + KL(encoder ‖ prior).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple, Sequence

import numpy as np

from .numkit import AdamState, ParamStore, RowAdam, Tensor, adam_step, forward_backward, make_rng
from .numkit import ops as tn
from .numkit.checkpoint import read_checkpoint, write_checkpoint
from .numkit.dist import NLL_PROB_FLOOR, kl_diag_gaussian, positive_scale
from .numkit.optim import clip_by_global_norm
from .numkit.tensor import NonFiniteError

ACTION_EMBED = 8
OBS_FEATURES = 16
L_INIT_STD = 0.01
INFER_STEPS = 200


@dataclass(frozen=True)
class PVRNNConfig:
    z_dim: int = 2
    l_dim: int = 2
    h_dim: int = 32
    r_dim: int = 32
    lr: float = 1e-3
    epochs: int = 500
    batch_size: int = 128
    seed: int = 0
    clip_norm: float | None = None

    def __post_init__(self):
        for name in ("z_dim", "l_dim", "h_dim", "r_dim", "epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if not self.lr > 0:
            raise ValueError("lr must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "PVRNNConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown pvrnn config keys: {sorted(unknown)}")
        return cls(**d)


class TrainingDivergedError(FloatingPointError):
    def __init__(self, epoch: int, detail: str):
        super().__init__(f"P-VRNN loss became non-finite in epoch {epoch}: {detail}")
        self.epoch = epoch


class UntrainedModelError(RuntimeError):
    pass


@dataclass
class PVRNNModel:
    """Network weights plus the dimensions they were built for."""

    config: PVRNNConfig
    obs_dim: int
    action_count: int
    params: ParamStore
    trained: bool = False

    def frozen(self) -> dict[str, Tensor]:
        # constant views: share storage, never collect gradients
        return {k: Tensor(self.params[k].data) for k in self.params}


@dataclass
class RepTable:
    ids: list[str]
    table: np.ndarray

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=np.float64)
        if len(self.ids) != len(self.table):
            raise ValueError("one representation row per id is required")
        self._index = {tid: k for k, tid in enumerate(self.ids)}
        if len(self._index) != len(self.ids):
            raise ValueError("duplicate trajectory id in representation table")

    def __getitem__(self, traj_id: str) -> np.ndarray:
        return self.table[self._index[traj_id]]

    def __contains__(self, traj_id: str) -> bool:
        return traj_id in self._index

    def __len__(self) -> int:
        return len(self.ids)

    def rows(self, ids: Sequence[str]) -> np.ndarray:
        return np.array([self._index[t] for t in ids], dtype=np.int64)


# -- parameters -------------------------------------------------------------------------

def _layer_sizes(cfg: PVRNNConfig, obs_dim: int, action_count: int) -> dict[str, tuple[int, int]]:
    r, z, l, h = cfg.r_dim, cfg.z_dim, cfg.l_dim, cfg.h_dim
    return {
        "psi_o/1": (obs_dim, OBS_FEATURES),
        "psi_o/2": (OBS_FEATURES, OBS_FEATURES),
        "pri/1": (r + OBS_FEATURES + l, h),
        "pri/2": (h, 2 * z),
        "enc/1": (r + OBS_FEATURES + l + ACTION_EMBED, h),
        "enc/2": (h, 2 * z),
        "dec/1": (r + z + OBS_FEATURES + l, h),
        "dec/2": (h, action_count),
        "rec/x": (ACTION_EMBED + z + OBS_FEATURES + l, 3 * r),
        "rec/h": (r, 3 * r),
    }


def init_params(cfg: PVRNNConfig, obs_dim: int, action_count: int) -> PVRNNModel:
    """Glorot-uniform weights, zero biases, N(0, 1) action embedding."""
    params = ParamStore()
    for name, (fan_in, fan_out) in _layer_sizes(cfg, obs_dim, action_count).items():
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        params[f"{name}/w"] = make_rng(cfg.seed, "init", name).uniform(-bound, bound, (fan_in, fan_out))
        params[f"{name}/b"] = np.zeros(fan_out)
    params["psi_a/table"] = make_rng(cfg.seed, "init", "psi_a").standard_normal((action_count, ACTION_EMBED))
    return PVRNNModel(cfg, obs_dim, action_count, params)


def _dense(p, name, x):
    return x @ p[f"{name}/w"] + p[f"{name}/b"]


def _mlp(p, name, x):
    return _dense(p, f"{name}/2", tn.tanh(_dense(p, f"{name}/1", x)))


def _gaussian_head(out, z_dim):
    return out[:, :z_dim], positive_scale(out[:, z_dim:])


def _gru(p, h, x, r_dim):
    gx = _dense(p, "rec/x", x)
    gh = _dense(p, "rec/h", h)
    reset = tn.sigmoid(gx[:, :r_dim] + gh[:, :r_dim])
    update = tn.sigmoid(gx[:, r_dim : 2 * r_dim] + gh[:, r_dim : 2 * r_dim])
    cand = tn.tanh(gx[:, 2 * r_dim :] + reset * gh[:, 2 * r_dim :])
    return cand + update * (h - cand)


# -- one step -----------------------------------------------------------------------------

class StepOutput(NamedTuple):
    prior: tuple[Tensor, Tensor]
    posterior: tuple[Tensor, Tensor] | None
    z: Tensor
    logits: Tensor
    h: Tensor


def step(model: PVRNNModel, h_prev, o_t, a_t, l, noise, params=None) -> StepOutput:
    """One recurrence step on a batch of rows (vectors are promoted to one row).

    ``a_t`` given: z comes from the posterior (training / scoring).
    ``a_t`` None: z comes from the prior (generation); the recurrent update
    then needs an action, so ``h`` is returned unchanged.
    ``noise`` is the standard-normal draw used for z.
    """
    p = params if params is not None else model.params
    cfg = model.config
    h_prev, o_t, l = (tn.as_tensor(x) for x in (h_prev, o_t, l))
    if o_t.ndim == 1:
        h_prev, o_t, l = (tn.reshape(x, (1, -1)) for x in (h_prev, o_t, l))
    noise = np.asarray(noise, dtype=np.float64).reshape(o_t.shape[0], cfg.z_dim)
    if o_t.shape[1] != model.obs_dim:
        raise ValueError(f"observation width {o_t.shape[1]} != model obs_dim {model.obs_dim}")
    if h_prev.shape[1] != cfg.r_dim or l.shape[1] != cfg.l_dim:
        raise ValueError("recurrent state or representation has the wrong width")
    feat_o = tn.tanh(_dense(p, "psi_o/2", tn.tanh(_dense(p, "psi_o/1", o_t))))
    cond = tn.concat([h_prev, feat_o, l], axis=1)
    prior = _gaussian_head(_mlp(p, "pri", cond), cfg.z_dim)
    posterior = None
    if a_t is None:
        z = prior[0] + prior[1] * noise
        h = h_prev
    else:
        feat_a = tn.embed(p["psi_a/table"], np.atleast_1d(np.asarray(a_t, dtype=np.int64)))
        posterior = _gaussian_head(_mlp(p, "enc", tn.concat([cond, feat_a], axis=1)), cfg.z_dim)
        z = posterior[0] + posterior[1] * noise
        h = _gru(p, h_prev, tn.concat([feat_a, z, feat_o, l], axis=1), cfg.r_dim)
    logits = _mlp(p, "dec", tn.concat([h_prev, z, feat_o, l], axis=1))
    return StepOutput(prior, posterior, z, logits, h)


# -- sequences -------------------------------------------------------------------------

class Batch(NamedTuple):
    obs: np.ndarray  # (T, B, obs_dim), zero padded
    actions: np.ndarray  # (T, B)
    mask: np.ndarray  # (T, B) 1.0 on real steps
    lengths: np.ndarray


def make_batch(trajs, obs_dim: int) -> Batch:
    lengths = np.array([len(t.actions) for t in trajs], dtype=np.int64)
    T, B = int(lengths.max()), len(trajs)
    obs = np.zeros((T, B, obs_dim))
    actions = np.zeros((T, B), dtype=np.int64)
    mask = np.zeros((T, B))
    for b, t in enumerate(trajs):
        n = lengths[b]
        obs[:n, b] = t.observations
        actions[:n, b] = t.actions
        mask[:n, b] = 1.0
    return Batch(obs, actions, mask, lengths)


def trajectory_noise(seed: int, purpose: str, traj_id: str, length: int, z_dim: int, *keys) -> np.ndarray:
    return make_rng(seed, purpose, *keys, traj_id).standard_normal((length, z_dim))


def batch_noise(seed, purpose, trajs, batch: Batch, z_dim, *keys) -> np.ndarray:
    noise = np.zeros((batch.mask.shape[0], len(trajs), z_dim))
    for b, t in enumerate(trajs):
        noise[: batch.lengths[b], b] = trajectory_noise(seed, purpose, t.id, int(batch.lengths[b]), z_dim, *keys)
    return noise


class SequenceTerms(NamedTuple):
    recon: list[Tensor]  # per step, shape (B,), zero on padding
    reg: list[Tensor]
    entropy: list[np.ndarray] | None
    h_final: Tensor


def run_sequence(model, batch: Batch, l, noise, params=None, h0=None, want_entropy=False) -> SequenceTerms:
    """Teacher-forced pass over a padded batch."""
    p = params if params is not None else model.params
    cfg = model.config
    T, B = batch.mask.shape
    h = tn.as_tensor(np.zeros((B, cfg.r_dim)) if h0 is None else h0)
    recon, reg, ent = [], [], []
    floor = math.log(NLL_PROB_FLOOR)
    for t in range(T):
        m = batch.mask[t]
        try:
            out = step(model, h, batch.obs[t], batch.actions[t], l, noise[t], params=p)
            logp = tn.log_softmax(out.logits, axis=1)
            recon.append(-tn.clip_min(tn.pick(logp, batch.actions[t]), floor) * m)
            reg.append(kl_diag_gaussian(*out.posterior, *out.prior) * m)
        except NonFiniteError as exc:
            raise NonFiniteError(f"{exc.op_tag} at timestep {t}") from exc
        if want_entropy:
            lp = logp.data
            ent.append(-(np.exp(lp) * lp).sum(axis=1) * m)
        if m.all():
            h = out.h
        else:
            h = h + (out.h - h) * m[:, None]
    return SequenceTerms(recon, reg, ent if want_entropy else None, h)


def elbo_loss(model: PVRNNModel, traj, l, noise=None, params=None, seed: int = 0):
    """Negative ELBO of one trajectory: (total, recon per step, reg per step).

    ``l`` may be a Tensor leaf to obtain its gradient.  Without ``noise`` the
    trajectory's own stream under ``seed`` supplies the posterior draws.
    """
    batch = make_batch([traj], model.obs_dim)
    if noise is None:
        noise = trajectory_noise(seed, "elbo", traj.id, len(traj.actions), model.config.z_dim)
    noise = np.asarray(noise, dtype=np.float64).reshape(len(traj.actions), 1, model.config.z_dim)
    l = tn.reshape(tn.as_tensor(l), (1, model.config.l_dim))
    terms = run_sequence(model, batch, l, noise, params=params)
    total = tn.tsum(tn.concat(terms.recon, axis=0)) + tn.tsum(tn.concat(terms.reg, axis=0))
    return total, [r[0] for r in terms.recon], [g[0] for g in terms.reg]


def _per_traj_loss(terms: SequenceTerms) -> Tensor:
    """(B,) vector of per-trajectory losses."""
    acc = terms.recon[0] + terms.reg[0]
    for r, g in zip(terms.recon[1:], terms.reg[1:]):
        acc = acc + r + g
    return acc


# -- training ---------------------------------------------------------------------------

class TrainResult(NamedTuple):
    model: PVRNNModel
    reps: RepTable
    loss_history: list[float]


def init_representations(seed: int, ids: Sequence[str], l_dim: int, purpose: str = "l-init") -> np.ndarray:
    return np.array([make_rng(seed, purpose, tid).normal(0.0, L_INIT_STD, l_dim) for tid in ids]).reshape(
        len(ids), l_dim
    )


def train(items, config: PVRNNConfig, obs_dim: int, action_count: int, log=None) -> TrainResult:
    """Joint Adam on the weights and every trajectory's ``l``.

    ``items`` are training views (id, observations, actions); rewards and
    labels never reach this function.  Each minibatch minimises the mean
    per-trajectory loss.
    """
    items = list(items)
    if not items:
        raise ValueError("cannot train on an empty dataset")
    model = init_params(config, obs_dim, action_count)
    ids = [it.id for it in items]
    reps = RepTable(ids, init_representations(config.seed, ids, config.l_dim))
    opt = AdamState.for_params(model.params, config.lr)
    rep_opt = RowAdam(reps.table, config.lr)
    history: list[float] = []
    n = len(items)
    for epoch in range(config.epochs):
        order = make_rng(config.seed, "shuffle", epoch).permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            rows = np.sort(order[start : start + config.batch_size])
            chunk = [items[k] for k in rows]
            batch = make_batch(chunk, obs_dim)
            noise = batch_noise(config.seed, "train", chunk, batch, config.z_dim, epoch)
            l_leaf = Tensor(reps.table[rows].copy(), requires_grad=True, name="l")
            try:
                per = _per_traj_loss(run_sequence(model, batch, l_leaf, noise))
                loss = tn.mean(per)
                named = {**{k: model.params[k] for k in model.params}, "l": l_leaf}
                grads = forward_backward(loss, named)
            except NonFiniteError as exc:
                raise TrainingDivergedError(epoch, str(exc)) from exc
            g_l = grads.pop("l")
            if config.clip_norm is not None:
                grads = clip_by_global_norm(grads, config.clip_norm)
            adam_step(model.params, grads, opt)
            rep_opt.step(rows, g_l)
            total += float(per.data.sum())
        mean_loss = total / n
        if not math.isfinite(mean_loss):
            raise TrainingDivergedError(epoch, "mean loss")
        history.append(mean_loss)
        if log is not None:
            log(epoch, mean_loss)
    model.trained = True
    return TrainResult(model, reps, history)


def infer_representations(model: PVRNNModel, trajs, seed: int = 0, steps: int = INFER_STEPS, batch_size: int = 128):
    """Fit a fresh ``l`` per trajectory with the weights frozen.

    Each trajectory keeps one fixed posterior noise draw for the whole
    optimisation, so the objective is deterministic and the returned argmin
    iterate is well defined.  Returns an (N, l_dim) array.
    """
    trajs = list(trajs)
    cfg = model.config
    frozen = model.frozen()
    out = np.zeros((len(trajs), cfg.l_dim))
    for start in range(0, len(trajs), batch_size):
        chunk = trajs[start : start + batch_size]
        batch = make_batch(chunk, model.obs_dim)
        noise = batch_noise(seed, "infer", chunk, batch, cfg.z_dim)
        table = init_representations(seed, [t.id for t in chunk], cfg.l_dim, purpose="infer-init")
        opt = RowAdam(table, cfg.lr)
        rows = np.arange(len(chunk))
        best = table.copy()
        best_loss = np.full(len(chunk), np.inf)
        for k in range(steps + 1):
            l_leaf = Tensor(table.copy(), requires_grad=True, name="l")
            per = _per_traj_loss(run_sequence(model, batch, l_leaf, noise, params=frozen))
            improved = per.data < best_loss
            best[improved] = table[improved]
            best_loss[improved] = per.data[improved]
            if k == steps:
                break
            # rows are independent, so the sum's gradient is each row's own
            g = forward_backward(tn.tsum(per), {"l": l_leaf})["l"]
            opt.step(rows, g)
        out[start : start + len(chunk)] = best
    return out


def infer_representation(model: PVRNNModel, traj, seed: int = 0, steps: int = INFER_STEPS) -> np.ndarray:
    return infer_representations(model, [traj], seed=seed, steps=steps)[0]


# -- scoring helpers used by the indicators -------------------------------------------------

def decoder_entropies(model: PVRNNModel, trajs, reps: np.ndarray, seed: int = 0, h0=None, noise=None):
    """Per-step decoder entropies under a teacher-forced posterior pass.

    Returns (list of per-trajectory entropy arrays, final recurrent states).
    """
    trajs = list(trajs)
    batch = make_batch(trajs, model.obs_dim)
    if noise is None:
        noise = batch_noise(seed, "score", trajs, batch, model.config.z_dim)
    l = Tensor(np.asarray(reps, dtype=np.float64).reshape(len(trajs), model.config.l_dim))
    terms = run_sequence(model, batch, l, noise, params=model.frozen(), h0=h0, want_entropy=True)
    ent = np.stack(terms.entropy)  # (T, B)
    return [ent[: batch.lengths[b], b].copy() for b in range(len(trajs))], terms.h_final.data


def recon_per_step(model: PVRNNModel, trajs, reps: np.ndarray, seed: int = 0) -> np.ndarray:
    """Mean per-step reconstruction loss of each trajectory."""
    trajs = list(trajs)
    batch = make_batch(trajs, model.obs_dim)
    noise = batch_noise(seed, "score", trajs, batch, model.config.z_dim)
    l = Tensor(np.asarray(reps, dtype=np.float64).reshape(len(trajs), model.config.l_dim))
    terms = run_sequence(model, batch, l, noise, params=model.frozen())
    total = np.sum([r.data for r in terms.recon], axis=0)
    return total / batch.lengths


# -- checkpoints ------------------------------------------------------------------------------

_CONFIG_INT = ("z_dim", "l_dim", "h_dim", "r_dim", "epochs", "batch_size", "seed")


def save_model(path, model: PVRNNModel, reps: RepTable | None = None) -> None:
    arrays = dict(model.params.arrays())
    for key in _CONFIG_INT:
        arrays[f"config/{key}"] = np.array(float(getattr(model.config, key)))
    arrays["config/lr"] = np.array(model.config.lr)
    arrays["config/clip_norm"] = np.array(np.nan if model.config.clip_norm is None else model.config.clip_norm)
    arrays["config/obs_dim"] = np.array(float(model.obs_dim))
    arrays["config/action_count"] = np.array(float(model.action_count))
    arrays["config/trained"] = np.array(float(model.trained))
    if reps is not None:
        for tid, row in zip(reps.ids, reps.table):
            arrays[f"rep/{tid}"] = row
    write_checkpoint(path, arrays)


def load_model(path) -> tuple[PVRNNModel, RepTable | None]:
    arrays = read_checkpoint(path)
    conf = {k: int(arrays.pop(f"config/{k}")) for k in _CONFIG_INT}
    conf["lr"] = float(arrays.pop("config/lr"))
    clip = float(arrays.pop("config/clip_norm"))
    conf["clip_norm"] = None if math.isnan(clip) else clip
    obs_dim = int(arrays.pop("config/obs_dim"))
    action_count = int(arrays.pop("config/action_count"))
    trained = bool(arrays.pop("config/trained"))
    rep_ids = sorted(k for k in arrays if k.startswith("rep/"))
    reps = None
    if rep_ids:
        reps = RepTable([k[4:] for k in rep_ids], np.array([arrays.pop(k) for k in rep_ids]))
    model = PVRNNModel(PVRNNConfig(**conf), obs_dim, action_count, ParamStore(arrays), trained)
    return model, reps


def config_dict(cfg: PVRNNConfig) -> dict:
    return asdict(cfg)

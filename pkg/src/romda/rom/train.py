"""Training loop: reconstruction + KL + free-rollout loss, optimised with Adam."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from romda.errors import ContractError, NumericError
from romda.numerics import autodiff as ad
from romda.numerics.autodiff import Graph
from romda.numerics.rng import Rng
from romda.rom.model import (
    RomModel, component_of, decoder_forward, encoder_forward, kl_standard_normal,
    normalize_xi, rollout_graph,
)

log = logging.getLogger(__name__)

ADAM_B1, ADAM_B2, ADAM_EPS = 0.9, 0.999, 1e-8
HISTORY_WINDOWS = 64


@dataclass
class Trajectory:
    """Uniformly sampled states at a single xi."""
    xi: float
    states: np.ndarray


def as_trajectories(corpus) -> list[Trajectory]:
    out = []
    for item in corpus:
        if isinstance(item, Trajectory):
            out.append(item)
        elif hasattr(item, "states") and hasattr(item, "xi"):
            out.append(Trajectory(float(item.xi), np.asarray(item.states, dtype=np.float64)))
        else:
            xi, states = item
            out.append(Trajectory(float(xi), np.asarray(states, dtype=np.float64)))
    if not out:
        raise ContractError("training corpus is empty")
    return out


@dataclass
class Batch:
    xn: np.ndarray  # (B * W, m) normalised states
    xin: np.ndarray  # (B * W, 1) normalised xi per row
    noise: np.ndarray  # (B * W, p)
    n_windows: int


def window_index(trajs, width: int, stride: int) -> list[tuple[int, int]]:
    idx = []
    for k, tr in enumerate(trajs):
        if tr.states.shape[0] < width:
            raise ContractError(
                f"trajectory at xi={tr.xi} has {tr.states.shape[0]} states, need >= {width}")
        idx.extend((k, s) for s in range(0, tr.states.shape[0] - width + 1, stride))
    return idx


def make_batch(model: RomModel, trajs, normed, picks, width, rng: Rng) -> Batch:
    xn = np.concatenate([normed[k][s:s + width] for k, s in picks])
    xin = np.concatenate([np.full((width, 1), normalize_xi(trajs[k].xi)) for k, _ in picks])
    noise = rng.normal((xn.shape[0], model.hyper.p_latent))
    return Batch(xn, xin, noise, len(picks))


def loss_graph(model: RomModel, graph: Graph, batch: Batch, parts: dict | None = None,
               nodes: dict | None = None):
    """Scalar training loss for a batch of windows of length lookback + horizon.

    ``nodes`` overrides the parameter leaves (used by gradient checks).
    """
    hp = model.hyper
    p, L, H = hp.p_latent, hp.lookback, hp.horizon
    if nodes is None:
        nodes = model.nodes(graph)
    xn, xin = graph.const(batch.xn), graph.const(batch.xin)
    mu, lv = encoder_forward(nodes, xn, xin, p)
    z = mu + ad.exp(ad.scale(lv, 0.5)) * graph.const(batch.noise)
    xhat = decoder_forward(nodes, z, xin)
    if hp.recon_reduction == "sum":
        recon = ad.scale(ad.sum(ad.square(xhat - xn)), 1.0 / batch.xn.shape[0])
    else:
        recon = ad.mse(xhat, xn)
    loss = recon
    kl = None
    if hp.beta_kl > 0:
        kl = kl_standard_normal(mu, lv)
        loss = loss + ad.scale(kl, hp.beta_kl)
    roll = None
    if hp.gamma_roll > 0:
        B = batch.n_windows
        # inputs are sampled latents, as in ensemble forecasting; targets are means
        window = ad.reshape(z, (B, L + H, p))[:, :L, :]
        target = ad.reshape(mu, (B, L + H, p))[:, L:, :]
        xi_b = graph.const(batch.xin.reshape(B, L + H)[:, :1])
        preds = rollout_graph(nodes, hp, window, xi_b, H)
        pred = ad.concat([ad.reshape(q, (B, 1, p)) for q in preds], axis=1)
        roll = ad.mse(pred, target)
        loss = loss + ad.scale(roll, hp.gamma_roll)
    if parts is not None:
        parts["recon"] = float(recon.value)
        parts["kl"] = None if kl is None else float(kl.value)
        parts["roll"] = None if roll is None else float(roll.value)
    return loss


class Adam:
    def __init__(self, lr: float):
        self.lr = lr
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - ADAM_B1 ** self.t
        c2 = 1.0 - ADAM_B2 ** self.t
        for name, g in grads.items():
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m *= ADAM_B1
            m += (1.0 - ADAM_B1) * g
            v *= ADAM_B2
            v += (1.0 - ADAM_B2) * g * g
            params[name] = params[name] - self.lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


def train(model: RomModel, corpus, rng: Rng, epochs: int | None = None, lr: float | None = None,
          replay=None, replay_fraction: float = 0.5, callback=None):
    """Train a copy of ``model``; returns ``(trained_model, loss_history)``.

    ``history[0]`` is the loss before any update and ``history[e]`` the loss
    after epoch ``e``, both measured on a fixed set of windows with fixed noise.
    With ``replay`` (a second corpus), each batch draws ``replay_fraction`` of
    its windows from it.
    """
    model = model.copy()
    hp = model.hyper
    epochs = hp.epochs if epochs is None else int(epochs)
    lr = hp.lr if lr is None else float(lr)
    width = hp.lookback + hp.horizon

    trajs = as_trajectories(corpus)
    normed = [model.norm.normalize(t.states) for t in trajs]
    index = window_index(trajs, width, hp.window_stride)
    if replay is not None:
        rtrajs = as_trajectories(replay)
        offset = len(trajs)
        trajs = trajs + rtrajs
        normed += [model.norm.normalize(t.states) for t in rtrajs]
        rindex = [(k + offset, s) for k, s in window_index(rtrajs, width, hp.window_stride)]
    else:
        rindex = []

    hist_rng = rng.spawn(101)
    pool = index + rindex
    pick = hist_rng.choice(len(pool), min(HISTORY_WINDOWS, len(pool)))
    hist_batch = make_batch(model, trajs, normed, [pool[i] for i in sorted(pick)], width, hist_rng)

    def eval_loss():
        return float(loss_graph(model, Graph(record=False), hist_batch).value)

    try:
        history = [eval_loss()]
    except NumericError as exc:
        raise NumericError(f"non-finite loss at epoch 0 (initial evaluation): {exc}") from exc
    trainable = [k for k in model.params if not model.frozen[component_of(k)]]
    if not trainable:
        history.extend(history[0] for _ in range(epochs))
        return model, history

    opt = Adam(lr)
    step_rng = rng.spawn(202)
    n_main = hp.batch if not rindex else max(1, int(round(hp.batch * (1.0 - replay_fraction))))
    n_rep = hp.batch - n_main if rindex else 0
    for epoch in range(1, epochs + 1):
        # cosine decay from lr to lr * lr_final_ratio over the run
        frac = (epoch - 1) / max(1, epochs - 1)
        opt.lr = lr * (hp.lr_final_ratio + (1 - hp.lr_final_ratio) * 0.5 * (1 + np.cos(np.pi * frac)))
        order = step_rng.permutation(len(index))
        n_steps = max(1, -(-len(index) // n_main))
        for step in range(n_steps):
            picks = [index[i] for i in order[step * n_main:(step + 1) * n_main]]
            if not picks:
                continue
            if n_rep:
                picks += [rindex[i] for i in step_rng.choice(len(rindex), min(n_rep, len(rindex)))]
            batch = make_batch(model, trajs, normed, picks, width, step_rng)
            graph = Graph()
            try:
                loss = loss_graph(model, graph, batch)
                grads = graph.backward(loss)
            except NumericError as exc:
                raise NumericError(f"non-finite loss at epoch {epoch}, step {step}: {exc}") from exc
            opt.step(model.params, {k: grads[k] for k in trainable})
        try:
            history.append(eval_loss())
        except NumericError as exc:
            raise NumericError(f"non-finite loss at epoch {epoch} (evaluation): {exc}") from exc
        log.debug("epoch %d loss %.6g", epoch, history[-1])
        if callback is not None:
            callback(epoch, model, history)
    return model, history

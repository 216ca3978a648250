"""Central finite-difference verification of tape gradients."""

from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from . import tensor as T
from .errors import InputError
from .tensor import Tape


@dataclass
class GradCheckReport:
    max_rel_error: float
    checked: int
    skipped: int
    worst: tuple = ()

    def passed(self, tol):
        return self.max_rel_error < tol


def rel_error(g_ad, g_fd):
    return abs(g_ad - g_fd) / max(1e-8, abs(g_ad) + abs(g_fd))


def grad_check_report(f, params, eps=1e-5, seed=0, max_coords=16, kink_rtol=1e-2):
    """Compare tape gradients of scalar ``f()`` w.r.t. ``params`` to finite differences.

    ``f`` takes no arguments and must rebuild its output from the current
    values of ``params`` (any randomness keyed by a fixed seed). Tensors with
    more than ``max_coords`` entries are checked at a seeded random sample of
    coordinates.

    A coordinate is skipped when its one-sided differences disagree by more
    than ``kink_rtol`` relative: that marks a non-differentiable point such as
    a max-pool tie or a relu input at exactly 0.
    """
    params = list(params)
    with Tape() as tape:
        out = f()
        tape.backward(out)
    f0 = out.item()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    if f().item() != f0:
        raise InputError("function is not deterministic under a fixed seed")

    pick = rngmod.stream(seed, "grad_check")
    worst_err, worst = 0.0, ()
    checked = skipped = 0
    for pi, p in enumerate(params):
        flat = p.data.reshape(-1)
        if flat.size <= max_coords:
            coords = np.arange(flat.size)
        else:
            coords = np.sort(pick.choice(flat.size, size=max_coords, replace=False))
        g_flat = analytic[pi].reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            fp = f().item()
            flat[c] = orig - eps
            fm = f().item()
            flat[c] = orig
            fwd = (fp - f0) / eps
            bwd = (f0 - fm) / eps
            if abs(fwd - bwd) > kink_rtol * max(abs(fwd) + abs(bwd), 1e-6):
                skipped += 1
                continue
            g_fd = (fp - fm) / (2.0 * eps)
            err = rel_error(float(g_flat[c]), g_fd)
            checked += 1
            if err > worst_err:
                worst_err, worst = err, (pi, int(c), float(g_flat[c]), g_fd)
    return GradCheckReport(worst_err, checked, skipped, worst)


def grad_check(f, params, eps=1e-5, seed=0, **kwargs):
    """Maximum relative error between tape and finite-difference gradients."""
    return grad_check_report(f, params, eps=eps, seed=seed, **kwargs).max_rel_error


def standard_suite(seed=7, eps=1e-5):
    """Gradient checks for every primitive and the full model; name -> report."""
    from . import model as M

    gen = rngmod.stream(seed, "gradcheck_inputs")

    def p(*shape):
        return T.Tensor(gen.normal(size=shape), True)

    out = {}
    a, b = p(4, 3), p(3, 5)
    out["matmul"] = grad_check_report(lambda: T.sum(T.tanh(T.matmul(a, b))), [a, b], eps, seed)
    x, bias = p(6, 4), p(4)
    out["add_bias"] = grad_check_report(lambda: T.sum(T.tanh(T.add_bias(x, bias))), [x, bias], eps, seed)
    out["add"] = grad_check_report(lambda: T.sum(T.tanh(T.add(x, x))), [x], eps, seed)
    out["scale"] = grad_check_report(lambda: T.sum(T.tanh(T.scale(x, -1.7))), [x], eps, seed)
    out["transpose"] = grad_check_report(lambda: T.sum(T.tanh(T.matmul(T.transpose(a), a))), [a], eps, seed)
    out["relu"] = grad_check_report(lambda: T.sum(T.tanh(T.relu(x))), [x], eps, seed)
    out["tanh"] = grad_check_report(lambda: T.sum(T.tanh(x)), [x], eps, seed)
    v = p(5)
    w5 = T.Tensor(gen.normal(size=5))
    out["softmax"] = grad_check_report(lambda: T.sum(T.tanh(T.add(T.softmax(v), w5))), [v], eps, seed)
    out["cross_entropy"] = grad_check_report(lambda: T.cross_entropy(v, 2), [v], eps, seed)
    seq, filt, fb = p(9, 4), p(3, 3, 4), p(3)
    out["conv1d_valid"] = grad_check_report(
        lambda: T.sum(T.tanh(T.conv1d_valid(seq, filt, fb))), [seq, filt, fb], eps, seed)
    out["max_over_time"] = grad_check_report(lambda: T.sum(T.tanh(T.max_over_time(seq))), [seq], eps, seed)
    table = p(7, 4)
    idx = np.array([0, 3, 3, 6, 1])
    out["embedding"] = grad_check_report(lambda: T.sum(T.tanh(T.embedding(table, idx))), [table], eps, seed)
    out["stack"] = grad_check_report(lambda: T.sum(T.tanh(T.stack([v, T.scale(v, 2.0)]))), [v], eps, seed)
    drop_rng = rngmod.stream(seed, "gradcheck_dropout")
    mask_seed = int(drop_rng.integers(2**31))
    out["spatial_dropout"] = grad_check_report(
        lambda: T.sum(T.tanh(T.spatial_dropout(seq, 0.5, "train", rngmod.stream(mask_seed)))), [seq], eps, seed)

    for kind in M.ATTENTION_KINDS:
        cfg = M.ModelConfig(vocab_size=30, num_classes=3, embed_dim=12, maxlen=16, filter_sizes=(2, 3, 4),
                            filters_per_size=6, attention_dim=5, dropout_p=0.25, attention=kind)
        params = M.init_params(cfg, seed=seed)
        for name, t in params.items():
            if name.endswith(".b") or name.endswith(".bias"):
                t.data[:] = gen.normal(scale=0.1, size=t.shape)
        doc = np.zeros(cfg.maxlen, dtype=np.int64)
        doc[:11] = gen.integers(1, cfg.vocab_size + 2, size=11)

        def loss(params=params, cfg=cfg, doc=doc):
            trace = M.forward(params, cfg, [doc], "train", seed=seed)[0]
            return T.cross_entropy(trace.logits, 1)

        out[f"model[{kind}]"] = grad_check_report(loss, list(params), eps, seed, max_coords=24)
    return out

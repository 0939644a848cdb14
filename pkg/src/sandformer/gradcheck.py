"""Finite-difference verification of every backward rule.

Analytic gradients come from the float32 engine; the central-difference
oracle re-evaluates the same graph-building function on float64 copies of
the inputs, which keeps differencing noise far below the pass threshold.
Elements are subsampled deterministically per tensor so the whole suite
stays fast enough to run on every commit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import model as M
from . import tensor as T
from .rng import keyed_rng
from .tensor import Tape, Tensor, backward

DEFAULT_H = 1e-3
PASS_THRESHOLD = 1e-3


def _rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1.0)


def check_gradients(build_loss: Callable[[list[Tensor]], Tensor],
                    arrays: Sequence[np.ndarray],
                    h: float = DEFAULT_H,
                    max_elems: int | None = None,
                    rng: np.random.Generator | None = None) -> float:
    """Worst relative error between tape gradients and central differences.

    `build_loss` must construct a scalar loss from the given tensors and be
    dtype-generic (it is run once in float32 under a tape, then many times
    in float64 without one).
    """
    arrays32 = [np.asarray(a, dtype=np.float32) for a in arrays]
    tensors = [Tensor(a, requires_grad=True) for a in arrays32]
    with Tape() as tape:
        loss = build_loss(tensors)
    grads = backward(loss, tape)
    analytic = [
        grads[t].data if t in grads else np.zeros_like(t.data) for t in tensors
    ]

    arrays64 = [a.astype(np.float64) for a in arrays32]

    def eval64() -> float:
        ts = [Tensor(a) for a in arrays64]
        return float(build_loss(ts).data)

    if rng is None:
        rng = keyed_rng(0, "gradcheck-subsample")
    worst = 0.0
    for i, a in enumerate(arrays64):
        n = a.size
        if max_elems is not None and n > max_elems:
            idxs = rng.choice(n, size=max_elems, replace=False)
        else:
            idxs = np.arange(n)
        flat = a.reshape(-1)
        for j in idxs:
            orig = flat[j]
            flat[j] = orig + h
            lp = eval64()
            flat[j] = orig - h
            lm = eval64()
            flat[j] = orig
            fd = (lp - lm) / (2.0 * h)
            worst = max(worst, _rel_err(float(analytic[i].reshape(-1)[j]), fd))
    return worst


@dataclass
class GradCase:
    name: str
    make: Callable[[np.random.Generator], tuple[Callable, list[np.ndarray]]]
    max_elems: int | None = None


def _probe_loss(out: Tensor, probe: np.ndarray) -> Tensor:
    return T.mean(T.mul(out, Tensor(probe.astype(out.dtype))))


def _param_case(init_fn, forward_fn, x_shape, probe_shape):
    """Case builder for a block: checks the input and every parameter."""

    def make(rng):
        params = init_fn(rng)
        names = list(params.keys())
        x = rng.standard_normal(x_shape).astype(np.float32)
        probe = rng.standard_normal(probe_shape).astype(np.float32)
        arrays = [x] + [params[n].data for n in names]

        def build(ts: list[Tensor]) -> Tensor:
            p = dict(zip(names, ts[1:]))
            return _probe_loss(forward_fn(ts[0], p), probe)

        return build, arrays

    return make


def _rand_params(init, rng):
    """Re-randomize any zero-init projection so gradients are generic."""
    p = init
    for name, t in p.items():
        if not np.any(t.data):
            t.data = (0.25 * rng.standard_normal(t.data.shape)).astype(np.float32)
    return p


def build_suite(c0: int = 8) -> list[GradCase]:
    cases: list[GradCase] = []

    def op(name, make, max_elems=None):
        cases.append(GradCase(f"op:{name}", make, max_elems))

    def _simple(forward, *shapes, positive=False, away_from_zero=False):
        def make(rng):
            arrays = []
            for s in shapes:
                a = rng.standard_normal(s).astype(np.float32)
                if positive:
                    a = np.abs(a) + 0.5
                if away_from_zero:
                    a = np.where(np.abs(a) < 0.2, a + np.sign(a + 0.01) * 0.3, a)
                arrays.append(a)
            probe = None

            def build(ts):
                nonlocal probe
                out = forward(*ts)
                if probe is None:
                    probe = np.arange(1, out.size + 1, dtype=np.float32).reshape(out.shape)
                    probe = probe / out.size
                return _probe_loss(out, probe)

            return build, arrays

        return make

    op("conv2d_dense", _simple(
        lambda x, w, b: T.conv2d(x, w, b, stride=1, padding=1), (2, 5, 5), (3, 2, 3, 3), (3,)))
    op("conv2d_strided", _simple(
        lambda x, w, b: T.conv2d(x, w, b, stride=2, padding=1), (2, 6, 6), (4, 2, 3, 3), (4,)))
    op("conv2d_depthwise", _simple(
        lambda x, w, b: T.conv2d(x, w, b, padding=1, groups=4), (4, 5, 5), (4, 1, 3, 3), (4,)))
    op("conv2d_grouped", _simple(
        lambda x, w, b: T.conv2d(x, w, b, padding=0, groups=2), (4, 5, 5), (6, 2, 3, 3), (6,)))
    op("matmul", _simple(T.matmul, (3, 4), (4, 5)))
    op("transpose2d", _simple(T.transpose2d, (3, 5)))
    op("reshape", _simple(lambda x: T.reshape(x, (6, 4)), (2, 3, 4)))
    op("softmax", _simple(lambda x: T.softmax(x, 1), (4, 6)))
    op("layer_norm", _simple(lambda x, g, b: T.layer_norm(x, g, b, 1e-5),
                             (4, 3, 3), (4,), (4,)))
    op("l2norm_rows", _simple(T.l2norm_rows, (4, 7)))
    op("add", _simple(T.add, (3, 4, 4), (3, 4, 4)))
    op("sub", _simple(T.sub, (3, 4, 4), (3, 4, 4)))
    op("mul", _simple(T.mul, (3, 4, 4), (3, 4, 4)))
    op("scale_const", _simple(lambda x: T.scale(x, 0.7), (3, 4, 4)))
    op("scale_tensor", _simple(lambda x, s: T.scale(x, s), (3, 4, 4), (1,)))
    op("sigmoid", _simple(T.sigmoid, (3, 4, 4)))
    op("relu", _simple(T.relu, (3, 4, 4), away_from_zero=True))
    op("gelu", _simple(T.gelu, (3, 4, 4)))
    op("exp", _simple(T.exp, (3, 4, 4)))
    op("sqrt", _simple(T.sqrt, (3, 4, 4), positive=True))
    op("sum", _simple(lambda x: T.reduce_sum(T.mul(x, x)), (3, 4, 4)))
    op("mean", _simple(lambda x: T.mean(T.mul(x, x)), (3, 4, 4)))
    op("global_avg_pool", _simple(T.global_avg_pool, (3, 4, 4)))
    op("mul_channels", _simple(T.mul_channels, (3, 4, 4), (3, 1, 1)))
    op("concat_split", _simple(
        lambda a, b: T.mul(*T.split_channels(T.concat_channels([a, b]), 2)),
        (2, 4, 4), (2, 4, 4)))
    op("pixel_unshuffle", _simple(lambda x: T.pixel_unshuffle(x, 2), (2, 4, 4)))
    op("pixel_shuffle", _simple(lambda x: T.pixel_shuffle(x, 2), (8, 2, 2)))

    c = c0 // 2

    def block(name, init_fn, forward_fn, x_shape, out_shape, max_elems=12):
        cases.append(GradCase(
            f"block:{name}",
            _param_case(init_fn, forward_fn, x_shape, out_shape),
            max_elems,
        ))

    block("cnn_block",
          lambda rng: _rand_params(M.init_cnn_block(rng, c, True, zero_proj=False), rng),
          lambda x, p: M.cnn_block_forward(x, p, True),
          (c, 8, 8), (2 * c, 4, 4))
    block("mdta",
          lambda rng: _rand_params(M.init_mdta(rng, c0, 2, zero_proj=False), rng),
          lambda x, p: M.mdta_forward(x, p, 2),
          (c0, 6, 6), (c0, 6, 6))
    block("dswaffn",
          lambda rng: _rand_params(M.init_dswaffn(rng, c0, 2.0, zero_proj=False), rng),
          M.dswaffn_forward,
          (c0, 6, 6), (c0, 6, 6))
    block("transformer_block",
          lambda rng: _rand_params(
              M.init_transformer_block(rng, c0, 2, 2.0, zero_proj=False), rng),
          lambda x, p: M.transformer_block_forward(x, p, 2),
          (c0, 6, 6), (c0, 6, 6))

    def fusion_case(init_fn, forward_fn):
        def make(rng):
            params = init_fn(rng)
            names = list(params.keys())
            fa = rng.standard_normal((c0, 6, 6)).astype(np.float32)
            fb = rng.standard_normal((c0, 6, 6)).astype(np.float32)
            pa = rng.standard_normal((c0, 6, 6)).astype(np.float32)
            pb = rng.standard_normal((c0, 6, 6)).astype(np.float32)
            arrays = [fa, fb] + [params[n].data for n in names]

            def build(ts):
                p = dict(zip(names, ts[2:]))
                oa, ob = forward_fn(ts[0], ts[1], p)
                return T.add(_probe_loss(oa, pa), _probe_loss(ob, pb))

            return build, arrays

        return make

    cases.append(GradCase(
        "block:gate_fusion",
        fusion_case(lambda rng: _rand_params(M.init_gate_fusion(rng, c0, zero_mix=False), rng),
                    M.gate_fusion_forward), 12))
    cases.append(GradCase(
        "block:sk_fusion",
        fusion_case(lambda rng: _rand_params(M.init_sk_fusion(rng, c0, zero_logits=False), rng),
                    M.sk_fusion_forward), 12))

    def full_net(rng):
        cfg = M.ModelConfig(base_channels=c0, stages=1, heads=1, ffn_expansion=2.0,
                            fusion_kind="gate")
        model = M.build_model(cfg, seed=int(rng.integers(0, 2 ** 31)))
        _rand_params(model.params, rng)
        names = list(model.params.keys())
        x = rng.random((3, 8, 8)).astype(np.float32)
        probe = rng.standard_normal((3, 8, 8)).astype(np.float32)
        arrays = [x] + [model.params[n].data for n in names]

        def build(ts):
            m = M.Model(dict(zip(names, ts[1:])), cfg)
            out = M.sandformer_forward(ts[0], m, training=True)
            return _probe_loss(out, probe)

        return build, arrays

    cases.append(GradCase("block:full_network", full_net, 6))
    return cases


def run_suite(seed: int = 0, instances: int = 10,
              c0: int = 8) -> dict[str, float]:
    """Worst relative error per case over `instances` random draws."""
    results: dict[str, float] = {}
    for case in build_suite(c0):
        worst = 0.0
        for i in range(instances):
            rng = keyed_rng(seed, "gradcheck", case.name, i)
            build, arrays = case.make(rng)
            worst = max(worst, check_gradients(
                build, arrays, max_elems=case.max_elems,
                rng=keyed_rng(seed, "gradcheck-pick", case.name, i)))
        results[case.name] = worst
    return results


def suite_passed(results: dict[str, float], threshold: float = PASS_THRESHOLD) -> bool:
    return all(v < threshold for v in results.values())

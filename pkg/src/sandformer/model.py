"""Hybrid CNN/Transformer restoration network with gated branch fusion.

The network keeps two parallel feature streams after a shared shallow stem:
a convolutional stream (dual depthwise paths, simple gate, channel
attention) and a transformer stream (transposed channel attention plus a
dual-path shared-weight FFN). The streams exchange information once per
stage through a fusion block, then a pixel-shuffle head reconstructs the
image on top of a global residual.

Every block-final projection is zero-initialized, so a freshly built
model is exactly the identity map on its input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict, replace

import numpy as np

from . import tensor as T
from .errors import ConfigError, InvalidArgumentError
from .rng import keyed_rng
from .tensor import Tensor

FUSION_KINDS = ("gate", "sk", "add", "none")


@dataclass(frozen=True)
class ModelConfig:
    base_channels: int = 16
    stages: int = 2
    heads: int = 1
    ffn_expansion: float = 2.0
    fusion_kind: str = "gate"
    downsample_per_stage: bool = True
    cnn_branch: bool = True
    transformer_branch: bool = True

    def stage_channels(self, stage: int) -> int:
        """Channel width inside stage `stage` (after its downsample)."""
        if self.downsample_per_stage:
            return self.base_channels * (2 ** (stage + 1))
        return self.base_channels

    def violations(self) -> list[str]:
        v = []
        if self.base_channels < 2 or self.base_channels % 2 != 0:
            v.append(f"base_channels must be even and >= 2, got {self.base_channels}")
        if self.stages < 1:
            v.append(f"stages must be >= 1, got {self.stages}")
        if self.heads < 1:
            v.append(f"heads must be >= 1, got {self.heads}")
        else:
            for s in range(max(self.stages, 1)):
                c = self.stage_channels(s)
                if c % self.heads != 0:
                    v.append(f"heads={self.heads} does not divide stage {s} channels {c}")
        if self.fusion_kind not in FUSION_KINDS:
            v.append(f"fusion_kind must be one of {FUSION_KINDS}, got {self.fusion_kind!r}")
        if not (self.cnn_branch or self.transformer_branch):
            v.append("at least one branch must be enabled")
        if self.fusion_kind != "none" and not (self.cnn_branch and self.transformer_branch):
            v.append(f"fusion_kind={self.fusion_kind!r} requires both branches")
        if int(round(self.base_channels * self.ffn_expansion)) < 1:
            v.append(f"ffn_expansion {self.ffn_expansion} collapses the FFN width")
        return v

    def validate(self) -> None:
        v = self.violations()
        if v:
            raise ConfigError("invalid model config: " + "; ".join(v))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class Model:
    """Named-parameter store plus its configuration."""

    def __init__(self, params: dict[str, Tensor], config: ModelConfig):
        self.params = params
        self.config = config

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.grad = None

    def cast(self, dtype) -> "Model":
        """Copy of the model with all parameters cast (used by the f64 eval path)."""
        params = {
            name: Tensor(p.data.astype(dtype), requires_grad=p.requires_grad)
            for name, p in self.params.items()
        }
        return Model(params, self.config)


def sub(params: dict[str, Tensor], prefix: str) -> dict[str, Tensor]:
    """View of a parameter dict restricted to one block, prefix stripped."""
    n = len(prefix)
    return {k[n:]: v for k, v in params.items() if k.startswith(prefix)}


# ---------------------------------------------------------------------------
# initializers
# ---------------------------------------------------------------------------

def _conv_params(rng: np.random.Generator, cout: int, cin_g: int, k: int,
                 zero: bool = False) -> tuple[Tensor, Tensor]:
    if zero:
        w = np.zeros((cout, cin_g, k, k), dtype=np.float32)
    else:
        bound = math.sqrt(6.0 / (cin_g * k * k))
        w = rng.uniform(-bound, bound, size=(cout, cin_g, k, k)).astype(np.float32)
    b = np.zeros(cout, dtype=np.float32)
    return Tensor(w, requires_grad=True), Tensor(b, requires_grad=True)


def _put_conv(params: dict, rng, name: str, cout: int, cin_g: int, k: int,
              zero: bool = False) -> None:
    w, b = _conv_params(rng, cout, cin_g, k, zero=zero)
    params[f"{name}.weight"] = w
    params[f"{name}.bias"] = b


def init_cnn_block(rng, cin: int, downsample: bool, zero_proj: bool = True) -> dict[str, Tensor]:
    p: dict[str, Tensor] = {}
    c = cin
    if downsample:
        _put_conv(p, rng, "down", 2 * cin, cin, 3)
        c = 2 * cin
    _put_conv(p, rng, "path1.pw", 2 * c, c, 1)
    _put_conv(p, rng, "path1.dw", 2 * c, 1, 1)
    _put_conv(p, rng, "path2.pw", 2 * c, c, 1)
    _put_conv(p, rng, "path2.dw", 2 * c, 1, 3)
    _put_conv(p, rng, "ca", c, c, 1)
    p["ca.bias"] = Tensor(np.ones(c, dtype=np.float32), requires_grad=True)
    _put_conv(p, rng, "proj", c, c, 1, zero=zero_proj)
    return p


def init_mdta(rng, c: int, heads: int, zero_proj: bool = True) -> dict[str, Tensor]:
    p: dict[str, Tensor] = {}
    for name in ("q", "k", "v"):
        _put_conv(p, rng, f"{name}_pw", c, c, 1)
        _put_conv(p, rng, f"{name}_dw", c, 1, 3)
    p["temperature"] = Tensor(np.ones(heads, dtype=np.float32), requires_grad=True)
    _put_conv(p, rng, "proj", c, c, 1, zero=zero_proj)
    return p


def init_dswaffn(rng, c: int, expansion: float, zero_proj: bool = True) -> dict[str, Tensor]:
    hidden = int(round(c * expansion))
    p: dict[str, Tensor] = {}
    _put_conv(p, rng, "expand", hidden, c, 1)
    _put_conv(p, rng, "dw1", hidden, 1, 1)
    _put_conv(p, rng, "dw3", hidden, 1, 3)
    _put_conv(p, rng, "proj", c, hidden, 1, zero=zero_proj)
    return p


def _put_norm(params: dict, name: str, c: int) -> None:
    params[f"{name}.gamma"] = Tensor(np.ones(c, dtype=np.float32), requires_grad=True)
    params[f"{name}.beta"] = Tensor(np.zeros(c, dtype=np.float32), requires_grad=True)


def init_transformer_block(rng, c: int, heads: int, expansion: float,
                           zero_proj: bool = True) -> dict[str, Tensor]:
    p: dict[str, Tensor] = {}
    _put_norm(p, "norm1", c)
    for k, v in init_mdta(rng, c, heads, zero_proj).items():
        p[f"attn.{k}"] = v
    _put_norm(p, "norm2", c)
    for k, v in init_dswaffn(rng, c, expansion, zero_proj).items():
        p[f"ffn.{k}"] = v
    return p


def init_gate_fusion(rng, c: int, zero_mix: bool = True) -> dict[str, Tensor]:
    p: dict[str, Tensor] = {}
    _put_conv(p, rng, "conv1", 4 * c, 2 * c, 3)
    _put_conv(p, rng, "conv2", 2 * c, 2 * c, 3)
    _put_conv(p, rng, "mix", 2 * c, 2 * c, 1, zero=zero_mix)
    return p


def init_sk_fusion(rng, c: int, zero_logits: bool = True) -> dict[str, Tensor]:
    p: dict[str, Tensor] = {}
    _put_conv(p, rng, "logits", 2 * c, c, 1, zero=zero_logits)
    return p


# ---------------------------------------------------------------------------
# block forwards
# ---------------------------------------------------------------------------

def simple_gate(x: Tensor) -> Tensor:
    """Split channels in half and multiply the halves (ReLU replacement)."""
    if x.shape[0] % 2 != 0:
        raise InvalidArgumentError(f"simple_gate needs an even channel count, got {x.shape[0]}")
    x1, x2 = T.split_channels(x, 2)
    return T.mul(x1, x2)


def channel_attention(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Global-average-pool -> 1x1 conv -> per-channel rescale (no squashing)."""
    s = T.conv2d(T.global_avg_pool(x), w, b)
    return T.mul_channels(x, s)


def cnn_block_forward(x: Tensor, p: dict[str, Tensor], downsample: bool = True) -> Tensor:
    if downsample:
        y = T.conv2d(x, p["down.weight"], p["down.bias"], stride=2, padding=1)
    else:
        y = x
    c = y.shape[0]
    a = T.conv2d(y, p["path1.pw.weight"], p["path1.pw.bias"])
    a = T.conv2d(a, p["path1.dw.weight"], p["path1.dw.bias"], groups=2 * c)
    a = simple_gate(a)
    d = T.conv2d(y, p["path2.pw.weight"], p["path2.pw.bias"])
    d = T.conv2d(d, p["path2.dw.weight"], p["path2.dw.bias"], padding=1, groups=2 * c)
    d = simple_gate(d)
    s = T.add(a, d)
    s = channel_attention(s, p["ca.weight"], p["ca.bias"])
    s = T.conv2d(s, p["proj.weight"], p["proj.bias"])
    return T.add(y, s)


def mdta_forward(x: Tensor, p: dict[str, Tensor], heads: int) -> Tensor:
    c, h, w = x.shape
    if c % heads != 0:
        raise InvalidArgumentError(f"heads={heads} does not divide {c} channels")

    def project(name: str) -> Tensor:
        t = T.conv2d(x, p[f"{name}_pw.weight"], p[f"{name}_pw.bias"])
        t = T.conv2d(t, p[f"{name}_dw.weight"], p[f"{name}_dw.bias"], padding=1, groups=c)
        return T.reshape(t, (c, h * w))

    q, k, v = project("q"), project("k"), project("v")
    qs = T.split_channels(q, heads)
    ks = T.split_channels(k, heads)
    vs = T.split_channels(v, heads)
    taus = T.split_channels(p["temperature"], heads)
    outs = []
    for i in range(heads):
        qi = T.l2norm_rows(qs[i])
        ki = T.l2norm_rows(ks[i])
        attn = T.matmul(qi, T.transpose2d(ki))
        attn = T.scale(attn, taus[i])
        attn = T.softmax(attn, axis=1)
        outs.append(T.matmul(attn, vs[i]))
    o = T.concat_channels(outs) if heads > 1 else outs[0]
    o = T.reshape(o, (c, h, w))
    return T.conv2d(o, p["proj.weight"], p["proj.bias"])


def dswaffn_core(x: Tensor, p: dict[str, Tensor]) -> Tensor:
    """Dual-path FFN body without the trailing residual.

    Both depthwise paths apply the same expansion conv (one shared weight
    object, referenced twice), then cross-gate each other with sigmoids.
    """
    hidden = p["expand.weight"].shape[0]
    u1 = T.conv2d(x, p["expand.weight"], p["expand.bias"])
    u2 = T.conv2d(x, p["expand.weight"], p["expand.bias"])
    p1 = T.conv2d(u1, p["dw1.weight"], p["dw1.bias"], groups=hidden)
    p3 = T.conv2d(u2, p["dw3.weight"], p["dw3.bias"], padding=1, groups=hidden)
    m = T.add(T.mul(T.sigmoid(p1), p3), T.mul(T.sigmoid(p3), p1))
    return T.conv2d(m, p["proj.weight"], p["proj.bias"])


def dswaffn_forward(x: Tensor, p: dict[str, Tensor]) -> Tensor:
    return T.add(x, dswaffn_core(x, p))


def transformer_block_forward(x: Tensor, p: dict[str, Tensor], heads: int) -> Tensor:
    eps = 1e-5
    n1 = T.layer_norm(x, p["norm1.gamma"], p["norm1.beta"], eps)
    y = T.add(x, mdta_forward(n1, sub(p, "attn."), heads))
    n2 = T.layer_norm(y, p["norm2.gamma"], p["norm2.beta"], eps)
    return T.add(y, dswaffn_core(n2, sub(p, "ffn.")))


def gate_fusion_forward(f_cnn: Tensor, f_tr: Tensor,
                        p: dict[str, Tensor]) -> tuple[Tensor, Tensor]:
    if f_cnn.shape != f_tr.shape:
        raise InvalidArgumentError(
            f"fusion inputs must match, got {f_cnn.shape} vs {f_tr.shape}"
        )
    g = T.concat_channels([f_cnn, f_tr])
    r = T.conv2d(g, p["conv1.weight"], p["conv1.bias"], padding=1)
    r = simple_gate(r)
    r = T.conv2d(r, p["conv2.weight"], p["conv2.bias"], padding=1)
    r = T.add(r, g)
    h = T.conv2d(r, p["mix.weight"], p["mix.bias"])
    dc, dt = T.split_channels(h, 2)
    return T.add(f_cnn, dc), T.add(f_tr, dt)


def sk_fusion_forward(f_cnn: Tensor, f_tr: Tensor,
                      p: dict[str, Tensor]) -> tuple[Tensor, Tensor]:
    if f_cnn.shape != f_tr.shape:
        raise InvalidArgumentError(
            f"fusion inputs must match, got {f_cnn.shape} vs {f_tr.shape}"
        )
    c = f_cnn.shape[0]
    s = T.add(f_cnn, f_tr)
    logits = T.conv2d(T.global_avg_pool(s), p["logits.weight"], p["logits.bias"])
    weights = T.softmax(T.reshape(logits, (2, c)), axis=0)
    wc, wt = T.split_channels(weights, 2)
    wc = T.reshape(wc, (c, 1, 1))
    wt = T.reshape(wt, (c, 1, 1))
    fused = T.add(T.mul_channels(f_cnn, wc), T.mul_channels(f_tr, wt))
    return fused, fused


# ---------------------------------------------------------------------------
# whole network
# ---------------------------------------------------------------------------

def build_model(config: ModelConfig, seed: int = 0) -> Model:
    """Construct a model with Kaiming-uniform weights and zero-init projections."""
    config.validate()
    rng = keyed_rng(seed, "model-init")
    c0 = config.base_channels
    p: dict[str, Tensor] = {}
    _put_conv(p, rng, "stem.embed", c0, 3, 3)
    _put_conv(p, rng, "stem.res.conv1", 2 * c0, c0, 3)
    _put_conv(p, rng, "stem.res.conv2", c0, c0, 3, zero=True)

    c = c0
    for s in range(config.stages):
        c_out = config.stage_channels(s)
        if config.cnn_branch:
            for k, v in init_cnn_block(rng, c, config.downsample_per_stage).items():
                p[f"cnn.{s}.{k}"] = v
        if config.transformer_branch:
            if config.downsample_per_stage:
                _put_conv(p, rng, f"tr.{s}.down", c // 2, c, 3)
            for k, v in init_transformer_block(rng, c_out, config.heads,
                                               config.ffn_expansion).items():
                p[f"tr.{s}.{k}"] = v
        if config.cnn_branch and config.transformer_branch:
            if config.fusion_kind == "gate":
                for k, v in init_gate_fusion(rng, c_out).items():
                    p[f"fuse.{s}.{k}"] = v
            elif config.fusion_kind == "sk":
                for k, v in init_sk_fusion(rng, c_out).items():
                    p[f"fuse.{s}.{k}"] = v
        c = c_out

    if config.cnn_branch and config.transformer_branch and config.fusion_kind == "none":
        # unfused branches live in independent feature spaces; merge is learned
        _put_conv(p, rng, "head.merge", c, 2 * c, 1)
    if config.downsample_per_stage:
        for i in range(config.stages):
            _put_conv(p, rng, f"head.up.{i}", 2 * c, c, 3)
            c //= 2
    _put_conv(p, rng, "head.out", 3, c0, 3, zero=True)
    return Model(p, config)


def sandformer_forward(x: Tensor, model: Model, training: bool = False) -> Tensor:
    """Restore one 3xHxW image tensor. Inference additionally clamps to [0,1]."""
    cfg = model.config
    if x.data.ndim != 3 or x.shape[0] != 3:
        raise InvalidArgumentError(f"expected a 3xHxW input, got {x.shape}")
    if cfg.downsample_per_stage:
        m = 2 ** cfg.stages
        if x.shape[1] % m != 0 or x.shape[2] % m != 0:
            raise InvalidArgumentError(
                f"spatial dims {x.shape[1]}x{x.shape[2]} must be multiples of {m}"
            )
    p = model.params

    f = T.conv2d(x, p["stem.embed.weight"], p["stem.embed.bias"], padding=1)
    u = T.conv2d(f, p["stem.res.conv1.weight"], p["stem.res.conv1.bias"], padding=1)
    u = simple_gate(u)
    u = T.conv2d(u, p["stem.res.conv2.weight"], p["stem.res.conv2.bias"], padding=1)
    f = T.add(f, u)

    c = f if cfg.cnn_branch else None
    t = f if cfg.transformer_branch else None
    for s in range(cfg.stages):
        if cfg.cnn_branch:
            c = cnn_block_forward(c, sub(p, f"cnn.{s}."), cfg.downsample_per_stage)
        if cfg.transformer_branch:
            if cfg.downsample_per_stage:
                t = T.conv2d(t, p[f"tr.{s}.down.weight"], p[f"tr.{s}.down.bias"], padding=1)
                t = T.pixel_unshuffle(t, 2)
            t = transformer_block_forward(t, sub(p, f"tr.{s}."), cfg.heads)
        if cfg.cnn_branch and cfg.transformer_branch:
            if cfg.fusion_kind == "gate":
                c, t = gate_fusion_forward(c, t, sub(p, f"fuse.{s}."))
            elif cfg.fusion_kind == "sk":
                c, t = sk_fusion_forward(c, t, sub(p, f"fuse.{s}."))
            elif cfg.fusion_kind == "add":
                merged = T.add(c, t)
                c, t = merged, merged

    if cfg.cnn_branch and cfg.transformer_branch:
        if cfg.fusion_kind == "none":
            h = T.conv2d(T.concat_channels([c, t]), p["head.merge.weight"],
                         p["head.merge.bias"])
        else:
            h = T.add(c, t)
    else:
        h = c if cfg.cnn_branch else t

    if cfg.downsample_per_stage:
        for i in range(cfg.stages):
            h = T.conv2d(h, p[f"head.up.{i}.weight"], p[f"head.up.{i}.bias"], padding=1)
            h = T.pixel_shuffle(h, 2)
    r = T.conv2d(h, p["head.out.weight"], p["head.out.bias"], padding=1)
    out = T.add(x, r)
    if not training:
        out = Tensor(np.clip(out.data, 0.0, 1.0))
    return out


def ablation_config(base: ModelConfig, label: str) -> ModelConfig:
    """Model config for one of the named ablation topologies."""
    table = {
        "only Transformer Branch": dict(cnn_branch=False, transformer_branch=True,
                                        fusion_kind="none"),
        "only CNN Branch": dict(cnn_branch=True, transformer_branch=False,
                                fusion_kind="none"),
        "Transformer + CNN": dict(cnn_branch=True, transformer_branch=True,
                                  fusion_kind="add"),
        "Trans. + CNN + SK Fusion": dict(cnn_branch=True, transformer_branch=True,
                                         fusion_kind="sk"),
        "Trans. + CNN + Gate Fusion": dict(cnn_branch=True, transformer_branch=True,
                                           fusion_kind="gate"),
    }
    if label not in table:
        raise InvalidArgumentError(f"unknown ablation row {label!r}")
    return replace(base, **table[label])


ABLATION_ROWS = (
    "only Transformer Branch",
    "only CNN Branch",
    "Transformer + CNN",
    "Trans. + CNN + SK Fusion",
    "Trans. + CNN + Gate Fusion",
)

"""WeaveNet: feature-weaving layers over the two directions of a bipartite graph.

Both streams are carried in one tensor stacked on the batch axis,
``Z = [Z^A; Z^B]`` with shape ``(2B, N, N, D)``, so a shared set encoder
processes every agent of both sides in a single call.  This needs N == M.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, Parameter, Tensor

VARIANTS = ("symmetric", "asymmetric", "dual")


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 18
    width: int = 32
    set_width: int | None = None  # defaults to 2 * width
    variant: str = "symmetric"
    residual_period: int = 2  # 0 disables the shortcuts
    c_min: float = 0.1

    def __post_init__(self) -> None:
        if self.set_width is None:
            object.__setattr__(self, "set_width", 2 * self.width)
        if self.layers < 1 or self.width < 1 or self.set_width < 1:
            raise ValueError("layers, width and set_width must be positive")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.residual_period not in (0, 2):
            raise ValueError("residual_period must be 2 (shortcut every two layers) or 0 (none)")
        if not 0 < self.c_min < 1:
            raise ValueError("c_min must lie in (0, 1)")

    @property
    def input_width(self) -> int:
        return 2 if self.variant == "asymmetric" else 1

    @classmethod
    def from_arch(cls, arch: str, variant: str = "symmetric", **kw) -> "ModelConfig":
        """Parse the ``L,D,Dp`` form used on the command line."""
        parts = [int(x) for x in arch.split(",")]
        if len(parts) not in (2, 3):
            raise ValueError("arch must look like 'L,D' or 'L,D,Dp'")
        return cls(parts[0], parts[1], parts[2] if len(parts) == 3 else None, variant, **kw)

    def to_dict(self) -> dict:
        return asdict(self)


def param_count(cfg: ModelConfig) -> int:
    """Closed-form number of trainable scalars for a configuration."""
    d, dp, c0 = cfg.width, cfg.set_width, cfg.input_width
    n_bn = 2 if cfg.variant == "asymmetric" else 1
    n_enc = 2 if cfg.variant == "dual" else 1

    def encoder(cin: int) -> int:
        return cin * dp + (cin + dp) * d + 2 * d * n_bn + 2

    total = 0
    for layer in range(cfg.layers):
        cin = 2 * (c0 if layer == 0 else d)
        total += n_enc * encoder(cin)
    if cfg.residual_period and cfg.layers >= 2 and c0 != d:
        total += c0 * d
    total += n_enc * (2 * d + 1)
    return total


@dataclass
class SoftMatching:
    logits: Tensor  # (B, N, M)
    row_softmax: Tensor  # (B, N, M), rows of softmax(logits)
    col_softmax: Tensor  # (B, M, N), rows of softmax(logits^T)


def cross_concatenate(z_a: Tensor, z_b: Tensor) -> tuple[Tensor, Tensor]:
    """(N, M, D) and (M, N, D) -> (N, M, 2D) and (M, N, 2D)."""
    if z_a.shape[-1] != z_b.shape[-1] or z_a.shape[-3:-1] != z_b.shape[-3:-1][::-1]:
        raise ValueError(f"incompatible stream shapes {z_a.shape} and {z_b.shape}")
    return (ad.concat_features([z_a, ad.swap_axes(z_b)]),
            ad.concat_features([z_b, ad.swap_axes(z_a)]))


def _cross_stacked(z: Tensor) -> Tensor:
    half = z.shape[0] // 2
    return ad.concat_features([z, ad.roll(ad.swap_axes(z), half, axis=0)])


class SetEncoder:
    """conv1 -> PReLU -> max over the set -> concat onto inputs -> conv2 -> BN -> PReLU.

    The 1x1 convolutions carry no bias terms; conv2 is followed by batch norm.
    ``streams=2`` keeps separate BN parameters and statistics for the A and B
    halves of a stacked batch.
    """

    def __init__(self, prefix: str, cin: int, mid: int, out: int, rng: np.random.Generator, dtype, streams: int = 1):
        def uniform(shape, fan_in):
            bound = fan_in ** -0.5
            return rng.uniform(-bound, bound, size=shape).astype(dtype)

        self.w1 = Parameter(uniform((cin, mid), cin), f"{prefix}.w1")
        self.a1 = Parameter(np.full(1, 0.25, dtype), f"{prefix}.a1")
        self.w2 = Parameter(uniform((cin + mid, out), cin + mid), f"{prefix}.w2")
        self.a2 = Parameter(np.full(1, 0.25, dtype), f"{prefix}.a2")
        self.streams = streams
        tags = [""] if streams == 1 else [".A", ".B"]
        self.gammas = [Parameter(np.ones(out, dtype), f"{prefix}.bn{t}.gamma") for t in tags]
        self.betas = [Parameter(np.zeros(out, dtype), f"{prefix}.bn{t}.beta") for t in tags]
        self.bn_states = {f"{prefix}.bn{t}": BatchNormState(out, dtype=dtype) for t in tags}

    def parameters(self) -> list[Parameter]:
        return [self.w1, self.a1, self.w2, self.a2, *self.gammas, *self.betas]

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        h = ad.prelu(ad.linear_feature(x, self.w1), self.a1)
        pooled = ad.max_over_set(h, axis=-2)
        h = ad.concat_features([x, ad.repeat_set(pooled, x.shape[-2], axis=-2)])
        h = ad.linear_feature(h, self.w2)
        states = list(self.bn_states.values())
        if self.streams == 1:
            h = ad.batch_norm(h, self.gammas[0], self.betas[0], states[0], training)
        else:
            parts = ad.split(h, 2, axis=0)
            h = ad.concat([ad.batch_norm(p, g, b, s, training)
                           for p, g, b, s in zip(parts, self.gammas, self.betas, states)], axis=0)
        return ad.prelu(h, self.a2)


class WeaveNet:
    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.training = True
        rng = np.random.default_rng(seed)
        d, dp = cfg.width, cfg.set_width
        streams_bn = 2 if cfg.variant == "asymmetric" else 1
        copies = ("A", "B") if cfg.variant == "dual" else ("",)
        self.encoders: list[list[SetEncoder]] = []
        for layer in range(cfg.layers):
            cin = 2 * (cfg.input_width if layer == 0 else d)
            self.encoders.append([
                SetEncoder(f"layer{layer:03d}{c}", cin, dp, d, rng, self.dtype, streams_bn) for c in copies
            ])
        self.shortcut_proj = None
        if cfg.residual_period and cfg.layers >= 2 and cfg.input_width != d:
            bound = cfg.input_width ** -0.5
            self.shortcut_proj = Parameter(rng.uniform(-bound, bound, (cfg.input_width, d)).astype(self.dtype), "shortcut.w")
        self.heads = []
        for c in copies:
            bound = (2 * d) ** -0.5
            self.heads.append((
                Parameter(rng.uniform(-bound, bound, (2 * d, 1)).astype(self.dtype), f"head{c}.w"),
                Parameter(rng.uniform(-bound, bound, 1).astype(self.dtype), f"head{c}.b"),
            ))

    # ---- parameter bookkeeping

    def parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        for encs in self.encoders:
            for e in encs:
                out.extend(e.parameters())
        if self.shortcut_proj is not None:
            out.append(self.shortcut_proj)
        for w, b in self.heads:
            out.extend([w, b])
        return out

    def named_parameters(self) -> dict[str, Parameter]:
        named = {p.name: p for p in self.parameters()}
        if len(named) != len(self.parameters()):
            raise RuntimeError("duplicate parameter names")
        return named

    def bn_states(self) -> dict[str, BatchNormState]:
        out = {}
        for encs in self.encoders:
            for e in encs:
                out.update(e.bn_states)
        return out

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def train(self) -> "WeaveNet":
        self.training = True
        return self

    def eval(self) -> "WeaveNet":
        self.training = False
        return self

    # ---- forward

    def _encode(self, layer: int, z: Tensor) -> Tensor:
        encs = self.encoders[layer]
        if len(encs) == 1:
            return encs[0](z, self.training)
        za, zb = ad.split(z, 2, axis=0)
        return ad.concat([encs[0](za, self.training), encs[1](zb, self.training)], axis=0)

    def _head(self, z: Tensor) -> Tensor:
        if len(self.heads) == 1:
            w, b = self.heads[0]
            return ad.linear_feature(z, w, b)
        za, zb = ad.split(z, 2, axis=0)
        return ad.concat([ad.linear_feature(za, *self.heads[0]), ad.linear_feature(zb, *self.heads[1])], axis=0)

    def initial_state(self, s_a, s_b) -> Tensor:
        """Stack the score matrices into ``(2B, N, N, C0)`` with an optional side code channel."""
        s_a = s_a if isinstance(s_a, Tensor) else Tensor(np.asarray(s_a, dtype=self.dtype))
        s_b = s_b if isinstance(s_b, Tensor) else Tensor(np.asarray(s_b, dtype=self.dtype))
        if s_a.data.ndim == 2:
            s_a = ad.reshape(s_a, (1, *s_a.shape))
            s_b = ad.reshape(s_b, (1, *s_b.shape))
        bsz, n, m = s_a.shape
        if s_b.shape != (bsz, m, n):
            raise ValueError(f"score shapes {s_a.shape} and {s_b.shape} do not describe one instance batch")
        if n != m:
            raise ValueError("WeaveNet is implemented for square instances (N == M) only")
        z_a = ad.reshape(s_a, (bsz, n, m, 1))
        z_b = ad.reshape(s_b, (bsz, m, n, 1))
        if self.cfg.variant == "asymmetric":
            z_a, z_b = make_asymmetric_inputs(z_a, z_b)
        return ad.concat([z_a, z_b], axis=0)

    def forward(self, s_a, s_b) -> SoftMatching:
        z = self.initial_state(s_a, s_b)
        shortcut = z
        for layer in range(self.cfg.layers):
            out = self._encode(layer, _cross_stacked(z))
            if self.cfg.residual_period and layer % 2 == 1:
                src = shortcut
                if src.shape[-1] != out.shape[-1]:
                    src = ad.linear_feature(src, self.shortcut_proj)
                out = ad.add(out, src)
                shortcut = out
            z = out
        logits = self._head(_cross_stacked(z))
        logits = ad.reshape(logits, logits.shape[:-1])
        l_a, l_b = ad.split(logits, 2, axis=0)
        merged = ad.mul(ad.add(l_a, ad.swap_axes(l_b, -2, -1)), 0.5)
        return SoftMatching(merged, ad.softmax_rows(merged), ad.softmax_rows(ad.swap_axes(merged, -2, -1)))

    __call__ = forward

    # ---- checkpoints

    def state_arrays(self) -> dict[str, np.ndarray]:
        arrays = {name: p.data for name, p in self.named_parameters().items()}
        for name, st in self.bn_states().items():
            arrays[f"{name}.running_mean"] = st.mean
            arrays[f"{name}.running_var"] = st.var
        return arrays

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        for name, p in params.items():
            if arrays[name].shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}")
            p.data = arrays[name].astype(self.dtype).copy()
        for name, st in self.bn_states().items():
            st.mean = arrays[f"{name}.running_mean"].astype(self.dtype).copy()
            st.var = arrays[f"{name}.running_var"].astype(self.dtype).copy()

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        meta = {"model_config": self.cfg.to_dict(), "dtype": self.dtype.str}
        if extra:
            meta.update(extra)
        ad.save_arrays(path, self.state_arrays(), meta)

    @classmethod
    def load(cls, path: str | Path, dtype=None) -> tuple["WeaveNet", dict]:
        arrays, meta = ad.load_arrays(path)
        cfg = ModelConfig(**meta["model_config"])
        model = cls(cfg, dtype=np.dtype(meta["dtype"]) if dtype is None else dtype)
        model.load_state_arrays(arrays)
        return model, meta

    def copy(self) -> "WeaveNet":
        twin = WeaveNet(self.cfg, dtype=self.dtype)
        twin.load_state_arrays(self.state_arrays())
        twin.training = self.training
        return twin


def make_asymmetric_inputs(z_a: Tensor, z_b: Tensor) -> tuple[Tensor, Tensor]:
    """Append a constant side code channel: 1 on side A, 0 on side B."""
    ones = Tensor(np.ones((*z_a.shape[:-1], 1), dtype=z_a.dtype))
    zeros = Tensor(np.zeros((*z_b.shape[:-1], 1), dtype=z_b.dtype))
    return ad.concat_features([z_a, ones]), ad.concat_features([z_b, zeros])

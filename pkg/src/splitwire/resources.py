"""Closed-form memory and transfer-size accounting for a one-point split model.

Everything is exact integer arithmetic in bits; bytes are derived at the
boundary. Activation bit-widths follow a two-level rule: layers
``1..split_layer`` run at ``qa1`` and the remaining layers at ``qa2``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

from .errors import SplitwireError


def _check_menu(name, menu):
    menu = tuple(int(b) for b in menu)
    if not menu:
        raise SplitwireError(f"{name} must not be empty")
    if any(b < 1 or b > 32 for b in menu):
        raise SplitwireError(f"{name} values must lie in [1, 32]")
    if any(a >= b for a, b in zip(menu, menu[1:])):
        raise SplitwireError(f"{name} must be strictly increasing")
    return menu


@dataclass(frozen=True)
class ModelProfile:
    num_layers: int
    heads: int
    head_dim: int
    params_per_layer: tuple
    weight_bit_menu: tuple = (4, 8, 16)
    activation_bit_menu: tuple = (4, 8, 16)
    name: str = "custom"

    def __post_init__(self):
        if self.num_layers < 1 or self.heads < 1 or self.head_dim < 1:
            raise SplitwireError("num_layers, heads and head_dim must be positive")
        params = tuple(int(p) for p in self.params_per_layer)
        if len(params) != self.num_layers:
            raise SplitwireError(
                f"params_per_layer has {len(params)} entries for {self.num_layers} layers"
            )
        if any(p <= 0 for p in params):
            raise SplitwireError("every layer needs a positive parameter count")
        object.__setattr__(self, "params_per_layer", params)
        object.__setattr__(self, "weight_bit_menu", _check_menu("weight_bit_menu", self.weight_bit_menu))
        object.__setattr__(
            self, "activation_bit_menu", _check_menu("activation_bit_menu", self.activation_bit_menu)
        )

    @property
    def hidden(self) -> int:
        return self.heads * self.head_dim

    def to_dict(self) -> dict:
        d = asdict(self)
        d["params_per_layer"] = list(self.params_per_layer)
        d["weight_bit_menu"] = list(self.weight_bit_menu)
        d["activation_bit_menu"] = list(self.activation_bit_menu)
        return d


def _llama_layer_params(hidden: int, intermediate: int) -> int:
    # q, k, v, o projections + gate/up/down MLP + two RMSNorm vectors
    return 4 * hidden * hidden + 3 * hidden * intermediate + 2 * hidden


PRESETS = {
    "llama2-7b": dict(num_layers=32, heads=32, head_dim=128, layer_params=_llama_layer_params(4096, 11008)),
    "llama2-13b": dict(num_layers=40, heads=40, head_dim=128, layer_params=_llama_layer_params(5120, 13824)),
}


def preset_profile(name: str) -> ModelProfile:
    try:
        p = PRESETS[name]
    except KeyError:
        raise SplitwireError(f"unknown model preset {name!r}; known: {sorted(PRESETS)}") from None
    return ModelProfile(
        num_layers=p["num_layers"],
        heads=p["heads"],
        head_dim=p["head_dim"],
        params_per_layer=(p["layer_params"],) * p["num_layers"],
        name=name,
    )


def profile_from_dict(d: dict) -> ModelProfile:
    if "preset" in d:
        base = preset_profile(d["preset"])
        overrides = {k: d[k] for k in ("weight_bit_menu", "activation_bit_menu") if k in d}
        return ModelProfile(**{**base.to_dict(), **overrides})
    missing = [k for k in ("num_layers", "heads", "head_dim", "params_per_layer") if k not in d]
    if missing:
        raise SplitwireError(f"model profile is missing {', '.join(missing)}")
    keys = ("num_layers", "heads", "head_dim", "params_per_layer", "weight_bit_menu", "activation_bit_menu", "name")
    return ModelProfile(**{k: d[k] for k in keys if k in d})


def load_profile(ref) -> ModelProfile:
    """Accept a preset name, a JSON file path, or an already-parsed dict."""
    if isinstance(ref, ModelProfile):
        return ref
    if isinstance(ref, dict):
        return profile_from_dict(ref)
    if str(ref) in PRESETS:
        return preset_profile(str(ref))
    path = Path(ref)
    if not path.exists():
        raise SplitwireError(f"model profile not found: {path}")
    return profile_from_dict(json.loads(path.read_text()))


@dataclass(frozen=True)
class QuantScheme:
    split_layer: int
    qw1: int
    qw2: int
    qa1: int
    qa2: int

    def validate(self, profile: ModelProfile, check_menus: bool = True) -> None:
        if not 1 <= self.split_layer <= profile.num_layers:
            raise SplitwireError(
                f"split_layer {self.split_layer} outside [1, {profile.num_layers}]"
            )
        if check_menus:
            for name in ("qw1", "qw2"):
                if getattr(self, name) not in profile.weight_bit_menu:
                    raise SplitwireError(f"{name}={getattr(self, name)} not in the weight bit menu")
            for name in ("qa1", "qa2"):
                if getattr(self, name) not in profile.activation_bit_menu:
                    raise SplitwireError(f"{name}={getattr(self, name)} not in the activation bit menu")

    def act_bits(self, layer: int) -> int:
        """Activation bit-width of 1-based ``layer``."""
        return self.qa1 if layer <= self.split_layer else self.qa2


def _act_bits_sum(scheme: QuantScheme, lo: int, hi: int) -> int:
    """Sum of activation bits over layers ``lo..hi`` inclusive (empty when hi < lo)."""
    if hi < lo:
        return 0
    front = max(0, min(hi, scheme.split_layer) - lo + 1)
    back = (hi - lo + 1) - front
    return front * scheme.qa1 + back * scheme.qa2


def opsc_memory_bits(profile: ModelProfile, scheme: QuantScheme, group_size=None, overhead_bits_per_group=0) -> int:
    scheme.validate(profile, check_menus=False)
    bits = 0
    for i, p in enumerate(profile.params_per_layer, start=1):
        q = scheme.qw1 if i <= scheme.split_layer else scheme.qw2
        bits += p * q
        if group_size:
            bits += -(-p // group_size) * overhead_bits_per_group
    return bits


def opsc_memory(profile: ModelProfile, scheme: QuantScheme, group_size=None, overhead_bits_per_group=0) -> int:
    """Weight footprint in bytes of a model split at ``scheme.split_layer`` (rounded up).

    ``group_size``/``overhead_bits_per_group`` optionally charge per-group
    quantization metadata (scales, zero points).
    """
    return -(-opsc_memory_bits(profile, scheme, group_size, overhead_bits_per_group) // 8)


def token_elems(w: int, profile: ModelProfile) -> int:
    return w * profile.hidden


def _check_w_ell(w, ell, profile):
    if w < 1:
        raise SplitwireError(f"token count must be >= 1, got {w}")
    if not 1 <= ell <= profile.num_layers:
        raise SplitwireError(f"layer {ell} outside [1, {profile.num_layers}]")


def kv_cache_bits(w: int, ell: int, profile: ModelProfile, scheme: QuantScheme) -> int:
    """KV-cache plus transient hidden-state bits when token ``w`` leaves the edge at ``ell``.

    Layers ``1..ell`` hold keys/values for all ``w`` tokens, layers above hold
    the ``w - 1`` earlier tokens, plus one hidden-state row at ``ell``. The
    upper term counts layers run remotely, exactly as the model is defined.
    """
    _check_w_ell(w, ell, profile)
    L = profile.num_layers
    tw = token_elems(w, profile)
    tw_prev = token_elems(w - 1, profile)
    return (
        2 * tw * _act_bits_sum(scheme, 1, ell)
        + 2 * tw_prev * _act_bits_sum(scheme, ell + 1, L)
        + profile.hidden * scheme.act_bits(ell)
    )


def io_bits(w: int, ell: int, i_kv: int, profile: ModelProfile, scheme: QuantScheme) -> int:
    """Bits sent at the split: the KV bundle when ``i_kv`` is 1, else the hidden state."""
    if i_kv not in (0, 1):
        raise SplitwireError(f"i_kv must be 0 or 1, got {i_kv}")
    _check_w_ell(w, ell, profile)
    if i_kv:
        return kv_cache_bits(w, ell, profile, scheme)
    return token_elems(w, profile) * scheme.act_bits(ell)


def psi(profile: ModelProfile, scheme: QuantScheme) -> int:
    """Total activation-bit precision summed over all layers."""
    return _act_bits_sum(scheme, 1, profile.num_layers)


@dataclass(frozen=True)
class SizeReport:
    weights_bytes: int
    kv_bits: int
    io_bits: int
    psi: int


def size_report(profile: ModelProfile, scheme: QuantScheme, w: int, ell: int, i_kv: int) -> SizeReport:
    return SizeReport(
        weights_bytes=opsc_memory(profile, scheme),
        kv_bits=kv_cache_bits(w, ell, profile, scheme),
        io_bits=io_bits(w, ell, i_kv, profile, scheme),
        psi=psi(profile, scheme),
    )

"""Back-of-envelope check that B2D savings cover the required transfers.

Prices are in US cents. The per-frame value of the stream is rounded to
``frame_value_decimals`` places before it is propagated, which is how the
reference figures (0.0156, 0.00936, 11.26) were obtained; pass None to keep
full precision.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

CENTS_PER_DOLLAR = 100.0
KB_PER_GB = 1e6


@dataclass(frozen=True)
class ViabilityInputs:
    price_per_gb: float = 10.0
    bitrate_kbps: float = 250.0
    frame_ms: float = 500.0
    delta: float = 0.9995
    b2d_fraction_saved: float = 0.6
    avg_transfer: float = 18039.0
    reference_deficit: float = 15.0
    frame_value_decimals: int | None = 4

    def __post_init__(self):
        for name in ("price_per_gb", "bitrate_kbps", "frame_ms", "reference_deficit"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.avg_transfer < 0:
            raise ValueError("avg_transfer must be non-negative")
        if not 0 <= self.b2d_fraction_saved <= 1:
            raise ValueError("b2d_fraction_saved must lie in [0, 1]")
        if not 0 <= self.delta < 1:
            raise ValueError("delta must lie in [0, 1)")


@dataclass(frozen=True)
class ViabilityReport:
    lifetime_seconds: float
    pure_b2d_cents: float
    frame_value_cents: float
    d2d_frame_value_cents: float
    transfer_scale_cents: float
    required_subsidy_cents: float
    actual_saving_cents: float
    viable: bool

    def to_dict(self) -> dict:
        return asdict(self)


def _cents_for(kbits: float, price_per_gb: float) -> float:
    kbytes = kbits / 8.0
    return kbytes / KB_PER_GB * price_per_gb * CENTS_PER_DOLLAR


def viability_report(inputs: ViabilityInputs) -> ViabilityReport:
    life = inputs.frame_ms / 1000.0 / (1.0 - inputs.delta)
    pure = _cents_for(inputs.bitrate_kbps * life, inputs.price_per_gb)
    per_frame = _cents_for(inputs.bitrate_kbps * inputs.frame_ms / 1000.0, inputs.price_per_gb)
    if inputs.frame_value_decimals is not None:
        per_frame = round(per_frame, inputs.frame_value_decimals)
    d2d = inputs.b2d_fraction_saved * per_frame
    scale = d2d / inputs.reference_deficit
    subsidy = inputs.avg_transfer * scale
    saving = inputs.b2d_fraction_saved * pure
    return ViabilityReport(life, pure, per_frame, d2d, scale, subsidy, saving, saving >= subsidy)

from __future__ import annotations

from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class DeviceConfig:
    """Static provisioning of the simulated control hardware.

    Global channel ``c`` lives on unit ``c // channels_per_unit`` as local
    channel ``c % channels_per_unit``.
    """

    sample_rate: float = 1e9
    units: int = 1
    channels_per_unit: int = 8
    queue_depth: int = 64
    capture_memory: int = 65536
    worker_count: int = 1
    pipeline_latency: int = 4  # ticks from PLAY fire to output-valid at the port

    def __post_init__(self):
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be > 0")
        if self.units < 1 or self.channels_per_unit < 1:
            raise ValueError("units and channels_per_unit must be >= 1")
        if self.channels_per_unit > 0xFFFF:
            raise ValueError("channels_per_unit must fit in 16 bits")
        if self.queue_depth < 1:
            raise ValueError("queue_depth must be >= 1")
        if self.capture_memory < 1:
            raise ValueError("capture_memory must be >= 1")
        if self.worker_count < 1:
            raise ValueError("worker_count must be >= 1")
        if self.pipeline_latency < 0:
            raise ValueError("pipeline_latency must be >= 0")

    @property
    def n_channels(self) -> int:
        return self.units * self.channels_per_unit

    def locate(self, channel: int) -> tuple[int, int]:
        """Global channel -> (unit, local channel)."""
        if not 0 <= channel < self.n_channels:
            raise ValueError(f"channel {channel} not in device (0..{self.n_channels - 1})")
        return divmod(channel, self.channels_per_unit)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DeviceConfig":
        return cls(**d)

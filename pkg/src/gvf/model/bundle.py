"""Direct-sum layout of modality fibers and input blocks."""

from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError


@dataclass(frozen=True)
class Modality:
    name: str
    fiber_dim: int
    channels: tuple

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        if self.fiber_dim < 1:
            raise ValidationError(f"modality {self.name!r}: fiber_dim must be >= 1")
        if not self.channels:
            raise ValidationError(f"modality {self.name!r}: needs at least one input channel")


@dataclass(frozen=True)
class BundleConfig:
    modalities: tuple

    def __post_init__(self):
        object.__setattr__(self, "modalities", tuple(self.modalities))
        if not self.modalities:
            raise ValidationError("bundle needs at least one modality")
        names = [mod.name for mod in self.modalities]
        chans = self.channels
        if len(set(names)) != len(names) or len(set(chans)) != len(chans):
            raise ValidationError("modality names and channels must be unique")

    @property
    def n_modalities(self):
        return len(self.modalities)

    @property
    def m(self):
        return sum(mod.fiber_dim for mod in self.modalities)

    @property
    def input_dim(self):
        return sum(len(mod.channels) for mod in self.modalities)

    @property
    def channels(self):
        return [c for mod in self.modalities for c in mod.channels]

    def _slices(self, sizes):
        out, start = [], 0
        for s in sizes:
            out.append(slice(start, start + s))
            start += s
        return out

    @property
    def fiber_slices(self):
        return self._slices([mod.fiber_dim for mod in self.modalities])

    @property
    def input_slices(self):
        return self._slices([len(mod.channels) for mod in self.modalities])

    def fiber_mask(self, n):
        mask = np.zeros(self.m)
        mask[self.fiber_slices[n]] = 1.0
        return mask

    def to_dict(self):
        return {
            "modalities": [
                {"name": mod.name, "fiber_dim": mod.fiber_dim, "channels": list(mod.channels)} for mod in self.modalities
            ]
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(tuple(Modality(x["name"], int(x["fiber_dim"]), tuple(x["channels"])) for x in d["modalities"]))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed bundle config: {exc}") from exc


def default_bundle(fiber_dim=2):
    """Physiological, behavioural and environmental modalities."""
    return BundleConfig(
        (
            Modality("phys", fiber_dim, ("hr", "hrv")),
            Modality("beh", fiber_dim, ("activity", "sleep")),
            Modality("env", fiber_dim, ("pm25", "noise")),
        )
    )

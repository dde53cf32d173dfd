from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from functools import cached_property

from ..qcore import GOLDEN_ALPHA2, BasisParam, ProbTable, Setting, hardy_q, probability_table, werner_state


@dataclass(frozen=True)
class ProtocolConfig:
    """Free parameters of one protocol session.

    ``encoding[s]`` is the bit carried by a pair whose shared Alice setting is
    ``s``; the default sends 0 on U-pairs and 1 on D-pairs.
    """

    alpha2: float = GOLDEN_ALPHA2
    eta: float = 1.0
    n_runs: int = 20000
    frac_s2a: float = 0.10
    frac_s3a: float = 0.25
    frac_s4a: float = 0.25
    frac_s5a: float = 0.25
    epsilon: float = 0.2
    detection_z: float = 3.0
    seed: int = 0
    encoding: tuple[int, int] = field(default=(0, 1))

    def __post_init__(self) -> None:
        BasisParam.from_alpha2(self.alpha2)
        if not (0.0 <= self.eta <= 1.0):
            raise ValueError("eta must lie in [0, 1]")
        if self.n_runs < 1:
            raise ValueError("n_runs must be at least 1")
        for name in ("frac_s2a", "frac_s3a", "frac_s4a", "frac_s5a"):
            v = getattr(self, name)
            if not (0.0 <= v < 1.0):
                raise ValueError(f"{name} must lie in [0, 1)")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.detection_z <= 0:
            raise ValueError("detection_z must be positive")
        enc = tuple(int(x) for x in self.encoding)
        if sorted(enc) != [0, 1]:
            raise ValueError("encoding must map U and D to distinct bits")
        object.__setattr__(self, "encoding", enc)

    @property
    def basis(self) -> BasisParam:
        return BasisParam.from_alpha2(self.alpha2)

    @property
    def noisy(self) -> bool:
        return self.eta < 1.0

    @cached_property
    def table(self) -> ProbTable:
        """Expected joint table of the honest source."""
        p = self.basis
        return probability_table(werner_state(p, self.eta), p)

    @property
    def q(self) -> float:
        return hardy_q(self.basis)

    def bit_for(self, s: Setting) -> int:
        return self.encoding[int(s)]

    def setting_for(self, bit: int) -> Setting:
        return Setting(self.encoding.index(int(bit)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoding"] = list(self.encoding)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProtocolConfig":
        d = dict(d)
        if "encoding" in d:
            d["encoding"] = tuple(d["encoding"])
        return cls(**d)

    def digest(self) -> str:
        raw = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(raw.encode("utf-8")).hexdigest()[:16]

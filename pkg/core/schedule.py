from dataclasses import dataclass

from .errors import ConfigError

KINDS = ("fixed", "decay", "hybrid")


@dataclass(frozen=True)
class Schedule:
    """
    Step-size sequence indexed by the global inner-iteration counter k.

      fixed  : eta_k = eta0
      decay  : eta_k = eta0 / (1 + eta0 * lam * floor(k / m_s))
      hybrid : decay while the (1-based) epoch s is below s_threshold; from
               epoch s_threshold on, eta stays at the epoch s_threshold - 1 value
    """
    kind: str = "fixed"
    eta0: float = 1e-3
    lam: float = 0.0
    s_threshold: int = 5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown schedule kind {self.kind!r} (expected one of {KINDS})")
        if not self.eta0 >= 0.0:
            raise ConfigError(f"eta0 must be >= 0, got {self.eta0!r}")
        if self.lam < 0.0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam!r}")
        if self.s_threshold < 1:
            raise ConfigError(f"s_threshold must be >= 1, got {self.s_threshold!r}")

    def eta(self, k, m_s):
        if self.kind == "fixed":
            return self.eta0
        epoch_index = k // m_s
        if self.kind == "hybrid":
            epoch_index = min(epoch_index, max(self.s_threshold - 2, 0))
        return self.eta0 / (1.0 + self.eta0 * self.lam * epoch_index)

    @property
    def label(self):
        if self.kind == "fixed":
            return f"fixed-eta{self.eta0:g}"
        if self.kind == "decay":
            return f"decay-eta{self.eta0:g}-lam{self.lam:g}"
        return f"hybrid-eta{self.eta0:g}-lam{self.lam:g}-s{self.s_threshold}"

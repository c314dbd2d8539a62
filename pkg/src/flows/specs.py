"""
Especificación de modelos.

ModelSpec describe un modelo del zoológico (mvn, mctm, cf, maf, hcf, hmaf) y se
serializa junto a los parámetros. Los campos opcionales en None se resuelven
con valores por defecto que dependen del tipo de modelo.
"""

from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, field_validator

from ..errors import ConfigurationError

ModelKind = Literal["mvn", "mctm", "cf", "maf", "hcf", "hmaf"]

HYBRID_KINDS = ("mctm", "hcf", "hmaf")
COUPLING_KINDS = ("cf", "hcf")


class ModelSpec(BaseModel):
    """Configuración de un modelo."""

    name: str = ""
    kind: ModelKind = "hcf"
    family: Literal["bernstein", "rqs"] = "bernstein"
    conditional: bool = False
    dim: int = Field(2, ge=1)
    n_features: int = Field(1, ge=0)

    # H₁
    marginal_order: int = Field(300, ge=1)
    constraint: Literal["softmax", "recursive"] = "softmax"
    marginal_shift: Optional[Literal["none", "linear", "bernstein"]] = None
    marginal_theta: Optional[Literal["shared", "linear"]] = None
    shift_order: int = Field(6, ge=1)
    marginal_domain: Optional[List[Tuple[float, float]]] = None
    feature_domain: Optional[List[Tuple[float, float]]] = None

    # H₂
    flow_order: int = Field(300, ge=1)
    bins: int = Field(32, ge=2)
    tail_bound: float = Field(4.0, gt=0)
    hidden: List[int] = Field(default_factory=lambda: [128, 128, 128])
    n_layers: int = Field(2, ge=1)
    permutation: Literal["reverse", "random"] = "reverse"
    feature_mode: Literal["additive", "concat"] = "additive"
    feature_hidden: List[int] = Field(default_factory=lambda: [16, 16])
    context_hidden: List[int] = Field(default_factory=lambda: [16, 16])

    # MVN
    mvn_hidden: List[int] = Field(default_factory=lambda: [16, 16])

    base: Literal["normal", "logistic"] = "normal"
    seed: int = 0

    @field_validator("hidden", "feature_hidden", "context_hidden", "mvn_hidden")
    @classmethod
    def _positive_sizes(cls, value: List[int]) -> List[int]:
        if any(v < 1 for v in value):
            raise ValueError("los tamaños de capa deben ser positivos")
        return value

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.kind in ("mvn", "mctm"):
            return self.kind.upper()
        tag = "B" if self.family == "bernstein" else "S"
        return f"{self.kind.upper()}({tag})"

    @property
    def uses_features(self) -> bool:
        return self.conditional and self.n_features > 0

    def resolved_shift(self) -> str:
        if self.marginal_shift is not None:
            return self.marginal_shift if self.uses_features else "none"
        if not self.uses_features:
            return "none"
        return {"mctm": "bernstein", "hmaf": "linear"}.get(self.kind, "none")

    def resolved_theta(self) -> str:
        if self.marginal_theta is not None:
            return self.marginal_theta if self.uses_features else "shared"
        return "linear" if (self.uses_features and self.kind == "hcf") else "shared"

    def check(self) -> None:
        """Valida combinaciones que pydantic no puede ver campo por campo."""
        bad: List[str] = []
        if self.kind in ("cf", "hcf", "hmaf") and self.dim < 2:
            bad += ["kind", "dim"]
        if self.conditional and self.n_features < 1:
            bad += ["conditional", "n_features"]
        if self.kind in ("maf", "hmaf"):
            ar_dim = self.dim - (1 if self.kind == "hmaf" else 0)
            if any(h < ar_dim - 1 for h in self.hidden):
                bad.append("hidden")
        if self.marginal_domain is not None:
            if len(self.marginal_domain) != self.dim or any(hi <= lo for lo, hi in self.marginal_domain):
                bad.append("marginal_domain")
        if self.feature_domain is not None:
            if len(self.feature_domain) != self.n_features or any(hi <= lo for lo, hi in self.feature_domain):
                bad.append("feature_domain")
        if self.family == "rqs" and 1e-3 * self.bins >= 1.0:
            bad.append("bins")
        if bad:
            raise ConfigurationError(f"[ModelSpec] especificación inconsistente para {self.kind}",
                                     sorted(set(bad)))

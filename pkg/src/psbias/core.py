"""Principal strata, trial designs, and subject-level containers.

Subjects in a cluster randomized trial with post-randomization recruitment
fall into four latent strata defined by the pair of recruitment indicators
(recruited under treatment, recruited under control):

* always-recruited   (1, 1)
* compliant-recruited(1, 0)
* never-recruited    (0, 0)
* defiant-recruited  (0, 1)

Stratum membership is fixed before assignment; which indicator is realized
depends on the cluster's arm.  Monotonicity (recruitment under treatment is
at least as likely as under control, subject by subject) rules out the
defiant stratum and is assumed by every closed-form result in
:mod:`psbias.estimands`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

__all__ = [
    "PrincipalStratum",
    "STRATUM_LETTERS",
    "recruitment_status",
    "check_monotonicity",
    "MonotonicityError",
    "DegenerateRecruitmentError",
    "QuotaInfeasibleError",
    "TruthInconsistencyError",
    "StrataDistribution",
    "PrincipalEffects",
    "TrialDesign",
    "Subject",
    "Population",
    "RecruitedSample",
]


class MonotonicityError(ValueError):
    """A population contains defiant-recruited subjects."""


class DegenerateRecruitmentError(ValueError):
    """Recruitment probabilities make the target quantity undefined."""


class QuotaInfeasibleError(RuntimeError):
    """A cluster has fewer eligible subjects than its recruitment quota."""


class TruthInconsistencyError(RuntimeError):
    """Closed-form truth and brute-force oracle disagree beyond Monte Carlo error."""


class PrincipalStratum(enum.IntEnum):
    """Latent recruitment stratum.  Integer codes are stable and used in arrays."""

    ALWAYS = 0
    COMPLIANT = 1
    NEVER = 2
    DEFIANT = 3

    @property
    def letter(self) -> str:
        return STRATUM_LETTERS[self]

    @classmethod
    def from_letter(cls, letter: str) -> "PrincipalStratum":
        try:
            return _LETTER_TO_STRATUM[letter]
        except KeyError:
            raise ValueError(f"unknown stratum letter {letter!r}") from None


STRATUM_LETTERS = {
    PrincipalStratum.ALWAYS: "a",
    PrincipalStratum.COMPLIANT: "c",
    PrincipalStratum.NEVER: "n",
    PrincipalStratum.DEFIANT: "d",
}
_LETTER_TO_STRATUM = {v: k for k, v in STRATUM_LETTERS.items()}

# (recruited if treated, recruited if control) per stratum.
_RECRUITMENT_TABLE = {
    PrincipalStratum.ALWAYS: (1, 1),
    PrincipalStratum.COMPLIANT: (1, 0),
    PrincipalStratum.NEVER: (0, 0),
    PrincipalStratum.DEFIANT: (0, 1),
}


def recruitment_status(stratum: PrincipalStratum | int | str, z: int) -> int:
    """Return 1 if a subject of ``stratum`` is recruited when the cluster arm is ``z``.

    Parameters
    ----------
    stratum : PrincipalStratum, int code, or letter in {'a', 'c', 'n', 'd'}
    z : 0 or 1
        Cluster-level assignment.
    """
    if isinstance(stratum, str):
        stratum = PrincipalStratum.from_letter(stratum)
    else:
        stratum = PrincipalStratum(stratum)
    if z not in (0, 1):
        raise ValueError(f"assignment must be 0 or 1, got {z!r}")
    return _RECRUITMENT_TABLE[stratum][1 - z]


def check_monotonicity(strata: Iterable[PrincipalStratum | int] | np.ndarray) -> None:
    """Raise :class:`MonotonicityError` if any defiant-recruited subject is present."""
    codes = np.asarray([int(s) for s in strata] if not isinstance(strata, np.ndarray) else strata)
    if codes.size and np.any(codes == PrincipalStratum.DEFIANT):
        n_bad = int(np.sum(codes == PrincipalStratum.DEFIANT))
        raise MonotonicityError(
            f"{n_bad} defiant-recruited subject(s) present; "
            "closed-form recruitment identities require none"
        )


def _check_prob(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value!r}")


@dataclass(frozen=True)
class StrataDistribution:
    """Population shares of the three strata compatible with monotonicity.

    Shares must be non-negative and sum to one (within 1e-12, to tolerate
    float construction paths such as ``1/3`` triples).
    """

    p_a: float
    p_c: float
    p_n: float

    def __post_init__(self) -> None:
        for name in ("p_a", "p_c", "p_n"):
            _check_prob(name, getattr(self, name))
        total = self.p_a + self.p_c + self.p_n
        if not math.isclose(total, 1.0, rel_tol=0.0, abs_tol=1e-12):
            raise ValueError(f"stratum shares must sum to 1, got {total!r}")

    @classmethod
    def from_counts(cls, n_a: int, n_c: int, n_n: int) -> "StrataDistribution":
        total = n_a + n_c + n_n
        if total <= 0 or min(n_a, n_c, n_n) < 0:
            raise ValueError("counts must be non-negative with a positive total")
        return cls(n_a / total, n_c / total, n_n / total)

    @classmethod
    def from_strata(cls, strata: np.ndarray | Sequence[int]) -> "StrataDistribution":
        """Empirical shares from an array of stratum codes.  Rejects defiants."""
        codes = np.asarray(strata, dtype=np.int64)
        check_monotonicity(codes)
        return cls.from_counts(
            int(np.sum(codes == PrincipalStratum.ALWAYS)),
            int(np.sum(codes == PrincipalStratum.COMPLIANT)),
            int(np.sum(codes == PrincipalStratum.NEVER)),
        )

    def as_dict(self) -> dict[str, float]:
        return {"p_a": self.p_a, "p_c": self.p_c, "p_n": self.p_n}


@dataclass(frozen=True)
class PrincipalEffects:
    """Average treatment effect within each stratum.

    ``tau_n`` may be ``None``: the never-recruited effect is unobservable in
    any recruited sample and only enters the overall average effect.
    """

    tau_a: float
    tau_c: float
    tau_n: float | None = None

    def require_tau_n(self) -> float:
        if self.tau_n is None:
            raise ValueError("tau_n is required for population-wide averages")
        return self.tau_n


@dataclass(frozen=True)
class TrialDesign:
    """Geometry of a cluster randomized trial with per-cluster recruitment quotas.

    Exactly one of ``n_treated`` (fixed number of treated clusters) and
    ``randomization_prob`` (independent Bernoulli assignment) must be given.
    ``quota=None`` means every eligible subject is recruited; a positive
    quota caps recruitment at that many subjects per cluster.
    """

    n_clusters: int
    cluster_size: int
    quota: int | None = None
    n_treated: int | None = None
    randomization_prob: float | None = None

    def __post_init__(self) -> None:
        if self.n_clusters < 2:
            raise ValueError("need at least 2 clusters")
        if self.cluster_size < 1:
            raise ValueError("cluster_size must be positive")
        if self.quota is not None:
            if self.quota < 1:
                raise ValueError("quota must be positive when given")
            if self.quota > self.cluster_size:
                raise ValueError(
                    f"quota {self.quota} exceeds cluster_size {self.cluster_size}"
                )
        fixed = self.n_treated is not None
        random = self.randomization_prob is not None
        if fixed == random:
            raise ValueError("give exactly one of n_treated and randomization_prob")
        if fixed:
            if not 1 <= self.n_treated <= self.n_clusters - 1:
                raise ValueError("n_treated must leave at least one cluster per arm")
        else:
            _check_prob("randomization_prob", self.randomization_prob)
            if self.randomization_prob in (0.0, 1.0):
                raise ValueError("randomization_prob must be strictly between 0 and 1")

    @property
    def n_population(self) -> int:
        return self.n_clusters * self.cluster_size

    @property
    def treated_fraction(self) -> float:
        """Expected share of treated clusters."""
        if self.n_treated is not None:
            return self.n_treated / self.n_clusters
        return float(self.randomization_prob)


@dataclass(frozen=True)
class Subject:
    """One population member: covariates, latent stratum, and potential outcomes.

    Potential outcomes may be ``nan`` when the generative model leaves them
    undefined (never-recruited subjects have no modeled outcome).
    """

    cluster_id: int
    x1: float
    x2: float
    stratum: PrincipalStratum
    y1: float = math.nan
    y0: float = math.nan


class Population:
    """Column-oriented container of subjects before assignment and recruitment.

    Arrays share a common length; ``stratum`` holds integer codes from
    :class:`PrincipalStratum`.  ``y1``/``y0`` are potential outcomes under
    cluster-level treatment and control (``nan`` where undefined).
    """

    def __init__(
        self,
        cluster_id: np.ndarray,
        x1: np.ndarray,
        x2: np.ndarray,
        stratum: np.ndarray,
        y1: np.ndarray | None = None,
        y0: np.ndarray | None = None,
    ) -> None:
        self.cluster_id = np.asarray(cluster_id, dtype=np.int64)
        n = self.cluster_id.size
        self.x1 = np.asarray(x1, dtype=np.float64)
        self.x2 = np.asarray(x2, dtype=np.float64)
        self.stratum = np.asarray(stratum, dtype=np.int64)
        self.y1 = np.full(n, np.nan) if y1 is None else np.asarray(y1, dtype=np.float64)
        self.y0 = np.full(n, np.nan) if y0 is None else np.asarray(y0, dtype=np.float64)
        for name in ("x1", "x2", "stratum", "y1", "y0"):
            arr = getattr(self, name)
            if arr.shape != (n,):
                raise ValueError(f"{name} must have shape ({n},), got {arr.shape}")
        if self.stratum.size and (self.stratum.min() < 0 or self.stratum.max() > 3):
            raise ValueError("stratum codes must be in {0, 1, 2, 3}")

    def __len__(self) -> int:
        return self.cluster_id.size

    @property
    def n_clusters(self) -> int:
        return int(np.unique(self.cluster_id).size)

    def subjects(self) -> Iterator[Subject]:
        for i in range(len(self)):
            yield Subject(
                cluster_id=int(self.cluster_id[i]),
                x1=float(self.x1[i]),
                x2=float(self.x2[i]),
                stratum=PrincipalStratum(int(self.stratum[i])),
                y1=float(self.y1[i]),
                y0=float(self.y0[i]),
            )

    @classmethod
    def from_subjects(cls, subjects: Iterable[Subject]) -> "Population":
        rows = list(subjects)
        return cls(
            cluster_id=np.array([s.cluster_id for s in rows], dtype=np.int64),
            x1=np.array([s.x1 for s in rows], dtype=np.float64),
            x2=np.array([s.x2 for s in rows], dtype=np.float64),
            stratum=np.array([int(s.stratum) for s in rows], dtype=np.int64),
            y1=np.array([s.y1 for s in rows], dtype=np.float64),
            y0=np.array([s.y0 for s in rows], dtype=np.float64),
        )

    def strata_distribution(self) -> StrataDistribution:
        return StrataDistribution.from_strata(self.stratum)


@dataclass
class RecruitedSample:
    """Observed data on recruited subjects only.

    ``z`` repeats the cluster-level assignment on every row.  ``stratum_truth``
    carries the latent stratum codes when the generating pipeline was asked to
    reveal them; analyses must not touch it.
    """

    cluster_id: np.ndarray
    z: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    y: np.ndarray
    stratum_truth: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.cluster_id = np.asarray(self.cluster_id, dtype=np.int64)
        n = self.cluster_id.size
        self.z = np.asarray(self.z, dtype=np.int64)
        self.x1 = np.asarray(self.x1, dtype=np.float64)
        self.x2 = np.asarray(self.x2, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        for name in ("z", "x1", "x2", "y"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have shape ({n},)")
        if not np.isin(self.z, (0, 1)).all():
            raise ValueError("z must be 0/1")
        # Assignment is cluster-level: z must be constant within cluster.
        for cid in np.unique(self.cluster_id):
            zs = np.unique(self.z[self.cluster_id == cid])
            if zs.size != 1:
                raise ValueError(f"cluster {cid} has mixed assignments {zs.tolist()}")
        if self.stratum_truth is not None:
            self.stratum_truth = np.asarray(self.stratum_truth, dtype=np.int64)
            if self.stratum_truth.shape != (n,):
                raise ValueError("stratum_truth length mismatch")

    def __len__(self) -> int:
        return self.cluster_id.size

    @property
    def n_clusters(self) -> int:
        return int(np.unique(self.cluster_id).size)

    def arm(self, z: int) -> "RecruitedSample":
        """Rows recruited under assignment ``z``."""
        mask = self.z == z
        return RecruitedSample(
            cluster_id=self.cluster_id[mask],
            z=self.z[mask],
            x1=self.x1[mask],
            x2=self.x2[mask],
            y=self.y[mask],
            stratum_truth=None if self.stratum_truth is None else self.stratum_truth[mask],
        )

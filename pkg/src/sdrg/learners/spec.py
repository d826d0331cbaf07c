"""Learner specifications and their text form ``family(key=value, ...)``."""
from __future__ import annotations

import re
from dataclasses import dataclass, field

FAMILIES = (
    "logistic-main-terms",
    "logistic-intercept-only",
    "boosted-stumps",
    "saturated",
    "empty",
)

BOOST_DEFAULTS = {
    "rounds": 100,
    "learning_rate": 0.1,
    "max_depth": 2,
    "min_leaf_weight": 5.0,
    "reg_lambda": 1.0,
    "max_bins": 64,
}

_INT_KEYS = {"rounds", "max_depth", "max_bins"}


@dataclass(frozen=True)
class LearnerSpec:
    family: str
    hyper: dict = field(default_factory=dict, compare=True, hash=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown learner family {self.family!r}")
        if self.family == "empty" and self.hyper:
            raise ValueError("the empty learner takes no hyperparameters")
        if self.family != "boosted-stumps" and self.hyper:
            raise ValueError(f"{self.family} takes no hyperparameters")
        if self.family == "boosted-stumps":
            unknown = set(self.hyper) - set(BOOST_DEFAULTS)
            if unknown:
                raise ValueError(f"unknown boosting hyperparameters {sorted(unknown)}")
            for k, v in self.hyper.items():
                if k == "rounds" and v == 0:
                    continue
                if not v > 0:
                    raise ValueError(f"hyperparameter {k} must be positive, got {v}")
            depth = self.hyper.get("max_depth", BOOST_DEFAULTS["max_depth"])
            if depth not in (1, 2, 3):
                raise ValueError("max_depth must be 1, 2 or 3")

    def params(self) -> dict:
        if self.family != "boosted-stumps":
            return {}
        return {**BOOST_DEFAULTS, **self.hyper}

    def __str__(self) -> str:
        return format_spec(self)


def format_spec(spec: LearnerSpec) -> str:
    if not spec.hyper:
        return spec.family
    inner = ",".join(f"{k}={spec.hyper[k]}" for k in sorted(spec.hyper))
    return f"{spec.family}({inner})"


def parse_spec(text: str) -> LearnerSpec:
    """Inverse of :func:`format_spec`; also accepts preset names."""
    text = text.strip()
    if text in PRESETS:
        return PRESETS[text]
    m = re.fullmatch(r"([a-z\-]+)(?:\((.*)\))?", text)
    if m is None:
        raise ValueError(f"cannot parse learner spec {text!r}")
    family, body = m.group(1), m.group(2)
    hyper = {}
    if body:
        for item in body.split(","):
            key, _, val = item.partition("=")
            key = key.strip()
            if not _:
                raise ValueError(f"bad hyperparameter {item!r} in {text!r}")
            hyper[key] = int(val) if key in _INT_KEYS else float(val)
    return LearnerSpec(family, hyper)


LOGISTIC = LearnerSpec("logistic-main-terms")
INTERCEPT = LearnerSpec("logistic-intercept-only")
EMPTY = LearnerSpec("empty")
SATURATED = LearnerSpec("saturated")
GBM_SHALLOW = LearnerSpec("boosted-stumps", {"max_depth": 1, "rounds": 100, "learning_rate": 0.1})
GBM_MEDIUM = LearnerSpec("boosted-stumps", {"max_depth": 2, "rounds": 100, "learning_rate": 0.1})
GBM_DEEP = LearnerSpec("boosted-stumps", {"max_depth": 3, "rounds": 50, "learning_rate": 0.1})

PRESETS = {
    "glm": LOGISTIC,
    "intercept": INTERCEPT,
    "empty": EMPTY,
    "saturated": SATURATED,
    "gbm-shallow": GBM_SHALLOW,
    "gbm-medium": GBM_MEDIUM,
    "gbm-deep": GBM_DEEP,
}

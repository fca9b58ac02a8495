"""INI configuration files.

Example::

    [auction]
    T = 2
    n = 1
    delta = 0.99
    alpha1 = 0.2
    alpha2 = 0.2
    seed = 0
    replications = 10000

    [group1]
    kind = uniform
    lo = 0
    hi = 1

    [group2]
    kind = uniform
    lo = -0.5
    hi = 0.5

    [group2.round2]        ; optional per-round override
    kind = truncated-exponential
    rate = 2
    lo = -0.5
    hi = 0.5

``[groupG]`` gives the default for every round; ``[groupG.roundK]`` overrides
round ``K`` (1-based).  Tabulated distributions take space- or
comma-separated ``x`` and ``cdf`` lists.
"""

from __future__ import annotations

import configparser
import hashlib
import re
from pathlib import Path

from .dist import GroupProfile, make_distribution
from .errors import ConfigError, FairMechError
from .sim import AuctionConfig

_ROUND = re.compile(r"^group([12])\.round(\d+)$")
AUCTION_KEYS = {"t", "n", "delta", "alpha1", "alpha2", "seed", "replications"}


def config_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _dist(parser, section):
    fields = dict(parser[section])
    kind = fields.pop("kind", None)
    if kind is None:
        raise ConfigError(f"[{section}] needs a 'kind'")
    try:
        return make_distribution(kind, **fields)
    except FairMechError as exc:
        raise ConfigError(f"[{section}] {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"[{section}] bad number: {exc}") from None


def parse_config(text: str) -> AuctionConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    if "auction" not in parser:
        raise ConfigError("missing [auction] section")
    sec = parser["auction"]
    unknown = set(sec) - AUCTION_KEYS
    if unknown:
        raise ConfigError(f"unknown [auction] keys: {', '.join(sorted(unknown))}")
    try:
        T = sec.getint("T")
        n = sec.getint("n", 1)
        delta = sec.getfloat("delta", 1.0)
        alpha1 = sec.getfloat("alpha1", 0.0)
        alpha2 = sec.getfloat("alpha2", 0.0)
        seed = sec.getint("seed", 0)
        reps = sec.getint("replications", 10_000)
    except ValueError as exc:
        raise ConfigError(f"[auction] {exc}") from None
    if T is None:
        raise ConfigError("[auction] needs T")
    if T < 1:
        raise ConfigError("[auction] T must be at least 1")

    per_round = {1: [None] * T, 2: [None] * T}
    for g in (1, 2):
        if f"group{g}" in parser:
            d = _dist(parser, f"group{g}")
            per_round[g] = [d] * T
    for section in parser.sections():
        m = _ROUND.match(section)
        if m:
            g, t = int(m.group(1)), int(m.group(2))
            if not 1 <= t <= T:
                raise ConfigError(f"[{section}] round outside 1..{T}")
            per_round[g][t - 1] = _dist(parser, section)
        elif section != "auction" and section not in ("group1", "group2"):
            raise ConfigError(f"unknown section [{section}]")
    for g in (1, 2):
        missing = [t + 1 for t, d in enumerate(per_round[g]) if d is None]
        if missing:
            raise ConfigError(f"group {g} has no distribution for rounds {missing}")
    try:
        profile = GroupProfile(per_round[1], per_round[2], n)
        return AuctionConfig(T, n, delta, alpha1, alpha2, profile, seed, reps)
    except FairMechError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> AuctionConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text)

"""Application profiles: which process groups are partitioned, and how.

Profile config schema (JSON)::

    {
      "include_builtin": true,
      "profiles": [
        {"name": "mailer", "match": ["mailer*"],
         "unit_start": {"steps": [...], "key": {"step": 0, "arg": "fd"}},
         "unit_switch": {"steps": [...], "key": {"step": 1, "arg": "path"}},
         "provenance_seed": "inputs"},
        {"name": "chat", "match": "chatd", "rule": "chat-log",
         "path_glob": "*/logs/*", "provenance_seed": "chat-log"}
      ]
    }

Profiles are tried in list order; user profiles come before the built-ins.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fnmatch import fnmatchcase
from pathlib import Path
from typing import Literal, Sequence

try:
    from .errors import ProfileError, SignatureError
    from .logger import get_logger
    from .model import Signature
    from .signature import signature_from_dict, signature_to_dict
except ImportError:  # pragma: no cover
    from errors import ProfileError, SignatureError  # type: ignore
    from logger import get_logger  # type: ignore
    from model import Signature  # type: ignore
    from signature import signature_from_dict, signature_to_dict  # type: ignore

logger = get_logger("provtrace.profiles")

RuleName = Literal["chrome-recvmsg", "inbox-offset", "chat-log"]
RULE_NAMES = ("chrome-recvmsg", "inbox-offset", "chat-log")

SeedRule = Literal["network", "inbox", "chat-log", "inputs"]
SEED_RULES = ("network", "inbox", "chat-log", "inputs")

DEFAULT_GLOBS = {
    "inbox-offset": "*/INBOX",
    "chat-log": "*/.purple/logs/*",
    "inbox": "*/INBOX",
}


@dataclass(frozen=True)
class BuiltinRule:
    name: RuleName
    path_glob: str | None = None

    def __post_init__(self):
        if self.name not in RULE_NAMES:
            raise ProfileError(f"Unknown built-in rule '{self.name}' (expected one of {', '.join(RULE_NAMES)})")
        if self.path_glob is None and self.name in DEFAULT_GLOBS:
            object.__setattr__(self, "path_glob", DEFAULT_GLOBS[self.name])


@dataclass(frozen=True)
class AppProfile:
    name: str
    match: tuple[str, ...]
    unit_start: Signature | BuiltinRule | None = None
    unit_switch: Signature | BuiltinRule | None = None
    provenance_seed: SeedRule = "inputs"
    seed_glob: str | None = None
    gap_budget: int | None = None

    def __post_init__(self):
        if not self.name:
            raise ProfileError("Profile needs a name")
        if isinstance(self.match, str):
            object.__setattr__(self, "match", (self.match,))
        if not self.match:
            raise ProfileError(f"Profile '{self.name}' needs at least one comm pattern")
        if self.unit_start is None and self.unit_switch is None:
            raise ProfileError(f"Profile '{self.name}' has neither a unit_start nor a unit_switch")
        rules = sum(isinstance(b, BuiltinRule) for b in (self.unit_start, self.unit_switch))
        if rules and not (rules == 2 and self.unit_start == self.unit_switch):
            raise ProfileError(f"Profile '{self.name}' mixes a built-in rule with another boundary definition")
        if isinstance(self.unit_switch, Signature) and self.unit_switch.key is None:
            raise ProfileError(
                f"Profile '{self.name}': unit_switch signature needs a 'key' naming the argument "
                "that identifies the unit to activate"
            )
        if self.provenance_seed not in SEED_RULES:
            raise ProfileError(
                f"Profile '{self.name}': unknown provenance_seed '{self.provenance_seed}' "
                f"(expected one of {', '.join(SEED_RULES)})"
            )
        if self.seed_glob is None and self.provenance_seed in DEFAULT_GLOBS:
            glob = self.rule.path_glob if self.rule is not None and self.rule.path_glob else DEFAULT_GLOBS[self.provenance_seed]
            object.__setattr__(self, "seed_glob", glob)

    @property
    def rule(self) -> BuiltinRule | None:
        for boundary in (self.unit_start, self.unit_switch):
            if isinstance(boundary, BuiltinRule):
                return boundary
        return None

    def matches(self, comm: str) -> bool:
        return any(fnmatchcase(comm, pattern) for pattern in self.match)


def builtin_profiles() -> list[AppProfile]:
    chrome = BuiltinRule("chrome-recvmsg")
    inbox = BuiltinRule("inbox-offset")
    chat = BuiltinRule("chat-log")
    return [
        AppProfile("chrome", ("chrome", "chromium*", "google-chrome*", "Chrome_*"), chrome, chrome, "network"),
        AppProfile("thunderbird", ("thunderbird*",), inbox, inbox, "inbox"),
        AppProfile("pidgin", ("pidgin",), chat, chat, "chat-log"),
    ]


def select_profile(profiles: Sequence[AppProfile], comm: str) -> AppProfile | None:
    """First matching profile in list order."""
    for profile in profiles:
        if profile.matches(comm):
            return profile
    return None


# --- config file --------------------------------------------------------------------------


def _boundary(raw: dict, field: str, kind: str, rule: BuiltinRule | None):
    if rule is not None:
        return rule
    data = raw.get(field)
    if data is None:
        return None
    try:
        return signature_from_dict(data, kind=kind, app=raw.get("name", ""))
    except SignatureError as exc:
        raise ProfileError(f"Profile '{raw.get('name')}' {field}: {exc}") from exc


def profile_from_dict(raw) -> AppProfile:
    if not isinstance(raw, dict):
        raise ProfileError("Each profile must be a JSON object")
    name = raw.get("name")
    if not isinstance(name, str):
        raise ProfileError("Profile needs a string 'name'")
    match = raw.get("match")
    if isinstance(match, str):
        match = [match]
    if not isinstance(match, list) or not all(isinstance(m, str) for m in match):
        raise ProfileError(f"Profile '{name}': 'match' must be a glob or a list of globs")
    rule = None
    if raw.get("rule") is not None:
        rule = BuiltinRule(raw["rule"], raw.get("path_glob"))
        if raw.get("unit_start") is not None or raw.get("unit_switch") is not None:
            raise ProfileError(f"Profile '{name}' mixes a built-in rule with signatures")
    gap = raw.get("gap_budget")
    if gap is not None and (not isinstance(gap, int) or isinstance(gap, bool) or gap < 0):
        raise ProfileError(f"Profile '{name}': gap_budget must be a non-negative integer")
    return AppProfile(
        name=name,
        match=tuple(match),
        unit_start=_boundary(raw, "unit_start", "UnitStart", rule),
        unit_switch=_boundary(raw, "unit_switch", "UnitSwitch", rule),
        provenance_seed=raw.get("provenance_seed", "inputs"),
        seed_glob=raw.get("seed_glob"),
        gap_budget=gap,
    )


def profile_to_dict(profile: AppProfile) -> dict:
    data: dict = {"name": profile.name, "match": list(profile.match), "provenance_seed": profile.provenance_seed}
    rule = profile.rule
    if rule is not None:
        data["rule"] = rule.name
        if rule.path_glob is not None:
            data["path_glob"] = rule.path_glob
    else:
        if profile.unit_start is not None:
            data["unit_start"] = signature_to_dict(profile.unit_start)
        if profile.unit_switch is not None:
            data["unit_switch"] = signature_to_dict(profile.unit_switch)
    if profile.seed_glob is not None and profile.provenance_seed in ("inbox", "chat-log"):
        data["seed_glob"] = profile.seed_glob
    if profile.gap_budget is not None:
        data["gap_budget"] = profile.gap_budget
    return data


def parse_profiles(data) -> list[AppProfile]:
    if not isinstance(data, dict):
        raise ProfileError("Profile config must be a JSON object")
    raw_profiles = data.get("profiles", [])
    if not isinstance(raw_profiles, list):
        raise ProfileError("'profiles' must be a list")
    profiles = [profile_from_dict(raw) for raw in raw_profiles]
    names = [p.name for p in profiles]
    duplicates = sorted({n for n in names if names.count(n) > 1})
    if duplicates:
        raise ProfileError(f"Duplicate profile name(s): {', '.join(duplicates)}")
    if data.get("include_builtin", True):
        profiles.extend(p for p in builtin_profiles() if p.name not in names)
    return profiles


def load_profiles(path: str | Path | None = None) -> list[AppProfile]:
    """Profiles from a config file, or the built-ins when no file is given."""
    if path is None:
        return builtin_profiles()
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ProfileError(f"{path}: invalid JSON ({exc})") from exc
    profiles = parse_profiles(data)
    logger.info(f"Loaded {len(profiles)} profile(s) from {path}")
    return profiles

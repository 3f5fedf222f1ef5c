"""Tests for application profiles and the profile config file."""

import json

import pytest

from provtrace.errors import ProfileError
from provtrace.model import Signature, SignaturePattern, UnitKey
from provtrace.profiles import (
    AppProfile,
    BuiltinRule,
    builtin_profiles,
    load_profiles,
    parse_profiles,
    profile_from_dict,
    profile_to_dict,
    select_profile,
)


def test_builtin_profiles_select_by_comm():
    profiles = builtin_profiles()
    assert select_profile(profiles, "chrome").name == "chrome"
    assert select_profile(profiles, "chromium-browser").name == "chrome"
    assert select_profile(profiles, "thunderbird-bin").name == "thunderbird"
    assert select_profile(profiles, "pidgin").name == "pidgin"
    assert select_profile(profiles, "bash") is None


def test_builtin_rule_defaults():
    profiles = {p.name: p for p in builtin_profiles()}
    assert profiles["thunderbird"].rule.path_glob == "*/INBOX"
    assert profiles["thunderbird"].seed_glob == "*/INBOX"
    assert profiles["pidgin"].seed_glob == "*/.purple/logs/*"
    assert profiles["chrome"].rule.path_glob is None
    assert profiles["chrome"].provenance_seed == "network"


def test_unknown_rule():
    with pytest.raises(ProfileError, match="Unknown built-in rule"):
        BuiltinRule("firefox-tabs")


class TestAppProfile:
    def test_needs_a_boundary(self):
        with pytest.raises(ProfileError, match="neither"):
            AppProfile("x", ("x",))

    def test_match_string_is_wrapped(self):
        profile = AppProfile("x", "x*", BuiltinRule("chat-log"), BuiltinRule("chat-log"))
        assert profile.match == ("x*",)
        assert profile.matches("xterm")

    def test_switch_signature_needs_key(self):
        sig = Signature((SignaturePattern("open"),), "UnitSwitch")
        with pytest.raises(ProfileError, match="key"):
            AppProfile("x", ("x",), unit_switch=sig)

    def test_rule_cannot_mix_with_signature(self):
        sig = Signature((SignaturePattern("open"),))
        with pytest.raises(ProfileError, match="mixes"):
            AppProfile("x", ("x",), BuiltinRule("chat-log"), sig)

    def test_unknown_seed(self):
        with pytest.raises(ProfileError, match="provenance_seed"):
            AppProfile("x", ("x",), BuiltinRule("chat-log"), BuiltinRule("chat-log"), "everything")


class TestConfigFile:
    def test_load_fixture_profiles(self, fixtures_dir):
        profiles = load_profiles(fixtures_dir / "profiles.json")
        assert [p.name for p in profiles] == ["im", "chrome", "thunderbird", "pidgin"]
        im = profiles[0]
        assert im.unit_start is None
        assert im.unit_switch.kind == "UnitSwitch"
        assert im.unit_switch.key == UnitKey(0, "path")
        assert im.unit_switch.app == "im"
        assert [s.syscall for s in im.unit_switch.steps] == ["open", "lseek", "read"]

    def test_no_path_gives_builtins(self):
        assert [p.name for p in load_profiles()] == ["chrome", "thunderbird", "pidgin"]

    def test_user_profile_shadows_builtin(self):
        data = {"profiles": [{"name": "pidgin", "match": "pidgin", "rule": "chat-log", "path_glob": "*/chats/*",
                              "provenance_seed": "chat-log"}]}
        profiles = parse_profiles(data)
        assert [p.name for p in profiles] == ["pidgin", "chrome", "thunderbird"]
        assert profiles[0].rule.path_glob == "*/chats/*"
        assert profiles[0].seed_glob == "*/chats/*"

    def test_exclude_builtins(self):
        data = {"include_builtin": False, "profiles": [{"name": "a", "match": ["a"], "rule": "chat-log"}]}
        assert [p.name for p in parse_profiles(data)] == ["a"]

    def test_round_trip(self, fixtures_dir):
        for profile in load_profiles(fixtures_dir / "profiles.json"):
            assert profile_from_dict(json.loads(json.dumps(profile_to_dict(profile)))) == profile

    @pytest.mark.parametrize(
        "data, message",
        [
            ([], "JSON object"),
            ({"profiles": {}}, "must be a list"),
            ({"profiles": [{"match": "x", "rule": "chat-log"}]}, "name"),
            ({"profiles": [{"name": "x", "match": 3, "rule": "chat-log"}]}, "match"),
            ({"profiles": [{"name": "x", "match": "x", "rule": "chat-log", "gap_budget": -1}]}, "gap_budget"),
            (
                {"profiles": [{"name": "x", "match": "x", "rule": "chat-log", "unit_start": {"steps": [{"syscall": "open"}]}}]},
                "mixes",
            ),
            ({"profiles": [{"name": "x", "match": "x", "unit_start": {"steps": []}}]}, "unit_start"),
            (
                {"profiles": [
                    {"name": "x", "match": "x", "rule": "chat-log"},
                    {"name": "x", "match": "y", "rule": "chat-log"},
                ]},
                "Duplicate",
            ),
        ],
    )
    def test_invalid_config(self, data, message):
        with pytest.raises(ProfileError, match=message):
            parse_profiles(data)

    def test_invalid_json_file(self, tmp_path):
        path = tmp_path / "profiles.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(ProfileError, match="invalid JSON"):
            load_profiles(path)

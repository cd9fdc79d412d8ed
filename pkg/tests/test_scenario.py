import pytest

from evcharge.channel import Action, Direction
from evcharge.errors import ScenarioError
from evcharge.messages import MessageType
from evcharge.scenario import bundled_scenarios, load_scenario, parse_scenario, run_scenario

HEADER = """\
group-key 5f3c8a1e9b2d47c6a0e1f4b38d6c2a91
vehicle car1 id=34354c4b3938373600000000000000a1 key=9c1d7e2f4a6b8c0d1e2f3a4b5c6d7e8f balance=100
terminal T1 clock=5000
"""


def test_parse_directives():
    sc = parse_scenario(HEADER + """
name demo   # trailing comment
seed 42
tariff 3
rule t2v challenge 0 mutate 17 0f
rule v2t auth * replay auth#0
rule v2t any 2 inject random:auth
step plug car1 T1
step replay T1 auth#0 v2t
expect lookups SUCCESS 1
""")
    assert (sc.name, sc.seed, sc.tariff) == ("demo", 42, 3)
    assert sc.terminals == [("T1", 5000)]
    mut, rep, inj = sc.rules
    assert (mut.direction, mut.message_type, mut.occurrence, mut.action, mut.offset, mut.mask) == (
        Direction.T2V, MessageType.CHALLENGE, 0, Action.MUTATE, 17, 0x0F)
    assert rep.occurrence is None and rep.capture.index == 0
    assert inj.message_type is None and inj.random_type is MessageType.AUTH_REQUEST
    assert sc.steps[-1] == (12, ["replay", "T1", "auth#0", "v2t"])


@pytest.mark.parametrize(
    "line,fragment",
    [
        ("bogus 1", "unrecognised"),
        ("rule t2s auth 0 block", "v2t or t2v"),
        ("rule v2t auth 0 mutate 3 00", "non-zero"),
        ("rule v2t auth 0 explode", "unknown rule action"),
        ("step fly car1", "unknown step"),
        ("step auth", "takes"),
        ("expect phase car1", "bad expectation"),
        ("vehicle car2 key=00", "id="),
        ("seed -4", "non-negative"),
    ],
)
def test_parse_errors_name_the_line(line, fragment):
    with pytest.raises(ScenarioError) as err:
        parse_scenario(HEADER + line + "\n")
    assert "line 4" in str(err.value)
    assert fragment in str(err.value)


def test_missing_group_key():
    with pytest.raises(ScenarioError, match="group-key"):
        parse_scenario("terminal T1\n")


def test_runtime_error_reports_step_line():
    sc = parse_scenario(HEADER + "step auth car1\n")
    with pytest.raises(ScenarioError, match="line 4.*not plugged"):
        run_scenario(sc)


def test_failed_expectation_fails_run():
    sc = parse_scenario(HEADER + "step plug car1 T1\nstep auth car1\nexpect phase car1 Completed\n")
    result = run_scenario(sc)
    assert not result.passed
    (bad,) = [c for c in result.checks if not c.passed]
    assert bad.detail == "observed Charging"


def test_deadlock_verdict():
    sc = parse_scenario(HEADER + "max-events 2\nstep plug car1 T1\nstep auth car1\n")
    result = run_scenario(sc)
    assert result.deadlock and not result.passed
    assert result.to_report()["deadlock_suspected"] is True


def test_vehicle_key_from_registry(tmp_path):
    from evcharge.registry import Registry

    reg = Registry()
    reg.register_vehicle(bytes([1]) * 16, bytes([2]) * 16, 50)
    reg.save(tmp_path / "fleet.reg")
    text = f"""group-key {'03' * 16}
registry fleet.reg
vehicle car1 id={'01' * 16}
terminal T1
step plug car1 T1
step auth car1
step advance all 60000
step stop T1
expect phase car1 Completed
"""
    (tmp_path / "s.scn").write_text(text)
    result = run_scenario(load_scenario(tmp_path / "s.scn"))
    assert result.passed
    assert result.scenario.name == "s"


def test_seed_override_changes_transcript_only():
    sc = load_scenario([p for p in bundled_scenarios() if p.stem == "honest"][0])
    a, b = run_scenario(sc), run_scenario(sc, seed=999)
    assert a.passed and b.passed
    assert a.transcript != b.transcript


def test_bundled_corpus_present():
    names = {p.stem for p in bundled_scenarios()}
    assert {"honest", "replay", "eavesdrop", "tamper_challenge", "tamper_auth",
            "tamper_nonce", "inject", "block", "forge"} <= names


@pytest.mark.parametrize("path", bundled_scenarios(), ids=lambda p: p.stem)
def test_bundled_scenario_passes(path):
    result = run_scenario(load_scenario(path))
    assert result.passed, [c for c in result.checks if not c.passed]


def test_report_structure():
    sc = load_scenario([p for p in bundled_scenarios() if p.stem == "tamper_challenge"][0])
    rep = run_scenario(sc).to_report()
    assert rep["status"] == "pass"
    assert rep["verdicts"]["vehicles"]["car1"]["phase"] == "Failed"
    (window,) = rep["verdicts"]["energy_windows"]
    assert window["vehicle_confirmed"] is False and window["off_seq"] is None
    assert {c["name"] for c in rep["checks"]} >= {"confidentiality", "mac-gate"}

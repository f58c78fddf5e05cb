import base64
import datetime as dt
import json
import math
import sys

import httpx
import numpy as np
import pytest

from archive_fixtures import build_archive
from tornadoverif.datastore import build_index, load_run, persist_run
from tornadoverif.errors import ArgumentError, EndpointError
from tornadoverif.harness import (
    ChatCompletionsEndpoint,
    FunctionEndpoint,
    HarnessConfig,
    HttpEndpoint,
    PromptSet,
    ScriptedEndpoint,
    Session,
    SubprocessEndpoint,
    Terminal,
    ToolCall,
    nearest_station,
    parse_endpoint_spec,
    replay_transcript,
    run_session,
    tool_schemas,
)
from tornadoverif.harness import tools as T
from tornadoverif.harness.prompts import load_template
from tornadoverif.riskfield import RiskLevel

DAY = dt.date(2025, 3, 14)
EMPTY_FC = json.dumps({"type": "FeatureCollection", "features": []})


@pytest.fixture
def index(tmp_path):
    return build_index(build_archive(tmp_path / "archive", DAY), DAY)


def call(name, **args):
    return {"name": name, "arguments": args}


def session(index, **kw):
    return Session(DAY, index, HarnessConfig(image_mode="path", **kw))


def tc(name, k=0, **args):
    return ToolCall(f"c{k}", name, args)


# --- tool catalog -----------------------------------------------------------------

def test_schemas_cover_the_four_tools():
    schemas = {s["name"]: s for s in tool_schemas(50)}
    assert set(schemas) == set(T.TOOL_NAMES)
    assert schemas[T.REQUEST_MAP]["parameters"]["required"] == ["map_type_directory", "forecast_hour"]
    assert schemas[T.REQUEST_SOUNDING]["parameters"]["properties"]["latitude"]["type"] == "number"
    assert schemas[T.REQUEST_SOUNDING]["parameters"]["properties"]["forecast_hour"]["type"] == "integer"
    assert schemas[T.SUBMIT]["parameters"]["required"] == ["prediction_geojson"]
    assert "50 per day" in schemas[T.REQUEST_SOUNDING]["description"]


def test_list_map_types(index, tmp_path):
    s = session(index)
    r = s.dispatch(tc(T.LIST_MAPS))
    assert r.ok and r.text.splitlines()[1:] == ["refc", "stp", "uh"]
    empty = tmp_path / "empty"
    (empty / f"{DAY:%Y%m%d}").mkdir(parents=True)
    r = session(build_index(empty, DAY)).dispatch(tc(T.LIST_MAPS))
    assert r.ok and "No map types" in r.text


def test_request_map(index):
    s = session(index)
    r = s.dispatch(tc(T.REQUEST_MAP, map_type_directory="stp", forecast_hour=18))
    assert r.ok and r.image.path.endswith("stp/f18.png")
    assert s.quota_used == 0


@pytest.mark.parametrize("args", [
    {"map_type_directory": "stp", "forecast_hour": 11},
    {"map_type_directory": "stp", "forecast_hour": 37},
    {"map_type_directory": "stp", "forecast_hour": "18"},
    {"map_type_directory": "stp", "forecast_hour": 18.0},
    {"map_type_directory": "stp", "forecast_hour": True},
    {"map_type_directory": 5, "forecast_hour": 18},
    {"forecast_hour": 18},
])
def test_request_map_argument_errors(index, args):
    r = session(index).dispatch(ToolCall("c", T.REQUEST_MAP, args))
    assert r.error == T.ARGUMENT_ERROR


def test_unknown_map_type(index):
    r = session(index).dispatch(tc(T.REQUEST_MAP, map_type_directory="../../etc", forecast_hour=18))
    assert r.error == T.MAP_NOT_FOUND and "map not found" in r.text


def test_nested_group_lists_members(tmp_path):
    root = build_archive(tmp_path / "a", DAY, types=("winds/250mb", "winds/500mb"), hours=[12])
    s = session(build_index(root, DAY))
    assert s.dispatch(tc(T.LIST_MAPS)).text.splitlines()[1:] == ["winds"]
    r = s.dispatch(tc(T.REQUEST_MAP, map_type_directory="winds", forecast_hour=12))
    assert r.error == T.MAP_NOT_FOUND and "winds/500mb" in r.text
    assert s.dispatch(tc(T.REQUEST_MAP, map_type_directory="winds/250mb", forecast_hour=12)).ok
    r = s.dispatch(tc(T.REQUEST_MAP, map_type_directory="winds/250mb", forecast_hour=13))
    assert r.error == T.MAP_NOT_FOUND


# --- soundings -------------------------------------------------------------------------

def test_sounding_at_station(index):
    s = session(index)
    r = s.dispatch(tc(T.REQUEST_SOUNDING, latitude=37.23, longitude=-93.40, forecast_hour=21))
    assert r.ok and "KSGF" in r.text and r.image.path.endswith("KSGF/f21.png")
    assert r.quota_remaining == 49 and s.quota_used == 1


def test_equidistant_tie_goes_to_lower_id(tmp_path):
    root = build_archive(tmp_path / "a", DAY, stations=(("KZZZ", 35.0, -96.0), ("KAAA", 35.0, -98.0)))
    idx = build_index(root, DAY)
    st, _ = nearest_station(idx.stations, 35.0, -97.0)
    assert st.id == "KAAA"
    assert brute_nearest(idx.stations, 35.0, -97.0) == "KAAA"


def brute_nearest(stations, lat, lon):
    """Plain-math scan; ties (within 1e-9 km) resolved by smallest id."""
    def hav(a, b, c, d):
        p1, p2 = math.radians(a), math.radians(c)
        h = math.sin((p2 - p1) / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(math.radians(d - b) / 2) ** 2
        return 2 * 6371.0 * math.asin(math.sqrt(min(1.0, h)))
    ds = [(hav(lat, lon, s.coord.lat, s.coord.lon), s.id) for s in stations]
    best = min(d for d, _ in ds)
    return min(i for d, i in ds if d <= best + 1e-9)


def test_nearest_matches_brute_force(tmp_path):
    rng = np.random.default_rng(7)
    stations = tuple((f"S{k:04d}", round(float(a), 2), round(float(o), 2))
                     for k, (a, o) in enumerate(zip(rng.uniform(25, 50, 300), rng.uniform(-125, -67, 300))))
    idx = build_index(build_archive(tmp_path / "a", DAY, types=(), stations=stations, sounding_hours=[12]), DAY)
    for lat, lon in zip(rng.uniform(20, 55, 1000), rng.uniform(-130, -60, 1000)):
        assert nearest_station(idx.stations, lat, lon)[0].id == brute_nearest(idx.stations, lat, lon)


def test_quota_sixty_requests(index):
    s = session(index)
    results = [s.dispatch(tc(T.REQUEST_SOUNDING, k, latitude=35.0, longitude=-97.0, forecast_hour=12))
               for k in range(60)]
    assert sum(r.ok for r in results) == 50
    assert [r.error for r in results[50:]] == [T.QUOTA_EXCEEDED] * 10
    assert s.quota_used == 50 and s.is_open
    assert results[49].quota_remaining == 0


def test_argument_errors_do_not_charge(index):
    s = session(index)
    for args in ({"latitude": 95, "longitude": -97, "forecast_hour": 12},
                 {"latitude": 35, "longitude": "west", "forecast_hour": 12},
                 {"latitude": 35, "longitude": -97, "forecast_hour": 40},
                 {"latitude": float("nan"), "longitude": -97, "forecast_hour": 12},
                 {"latitude": True, "longitude": -97, "forecast_hour": 12}):
        assert s.dispatch(ToolCall("c", T.REQUEST_SOUNDING, args)).error == T.ARGUMENT_ERROR
    assert s.quota_used == 0


def test_generation_error_charges(tmp_path):
    root = build_archive(tmp_path / "a", DAY, sounding_hours=[12])
    s = session(build_index(root, DAY))
    r = s.dispatch(tc(T.REQUEST_SOUNDING, latitude=35.18, longitude=-97.44, forecast_hour=13))
    assert r.error == T.SOUNDING_ERROR and "KOUN" in r.text
    assert s.quota_used == 1 and r.quota_remaining == 49


def test_custom_quota(index):
    s = session(index, quota=2)
    out = [s.dispatch(tc(T.REQUEST_SOUNDING, latitude=35, longitude=-97, forecast_hour=12)).error for _ in range(3)]
    assert out == [None, None, T.QUOTA_EXCEEDED]


# --- submission -------------------------------------------------------------------------

def test_valid_submission(index):
    s = session(index)
    fc = {"type": "FeatureCollection", "features": [{"type": "Feature", "properties": {"risk_level": "2%"},
          "geometry": {"type": "Polygon", "coordinates": [[[-97, 33], [-93, 33], [-93, 36], [-97, 36], [-97, 33]]]}}]}
    r = s.dispatch(tc(T.SUBMIT, prediction_geojson=json.dumps(fc)))
    assert r.ok and s.terminal is Terminal.SUBMITTED
    assert s.prediction.accepted and s.prediction.pred_max is RiskLevel.P2


def test_malformed_submission_is_terminal(index):
    s = session(index)
    r = s.dispatch(tc(T.SUBMIT, prediction_geojson="{oops"))
    assert r.error == T.INVALID_PREDICTION and "E_JSON" in r.text
    assert s.terminal is Terminal.SUBMITTED and not s.prediction.accepted


def test_second_submission_rejected(index):
    s = session(index)
    s.dispatch(tc(T.SUBMIT, 0, prediction_geojson=EMPTY_FC))
    first = s.prediction
    r = s.dispatch(tc(T.SUBMIT, 1, prediction_geojson="{}"))
    assert r.error == T.SESSION_COMPLETE and s.prediction is first


def test_submission_argument_error_keeps_session_open(index):
    s = session(index)
    r = s.dispatch(ToolCall("c", T.SUBMIT, {"prediction_geojson": {"type": "FeatureCollection"}}))
    assert r.error == T.ARGUMENT_ERROR and s.is_open


def test_unknown_tool_and_bad_arguments(index):
    s = session(index)
    assert s.dispatch(ToolCall("c", "launch_balloon", {})).error == T.UNKNOWN_TOOL
    assert s.dispatch(ToolCall("c", T.REQUEST_MAP, "{not json")).error == T.ARGUMENT_ERROR
    assert s.dispatch(ToolCall("c", T.REQUEST_MAP, [1, 2])).error == T.ARGUMENT_ERROR
    assert s.dispatch(ToolCall("c", T.LIST_MAPS, "")).ok


# --- loop -------------------------------------------------------------------------

SCRIPT = [
    {"tool_calls": [{"id": "a", **call(T.LIST_MAPS)}]},
    {"text": "Looking at reflectivity.", "tool_calls": [
        {"id": "b", **call(T.REQUEST_MAP, map_type_directory="refc", forecast_hour=18)}]},
    {"tool_calls": [{"id": "c", **call(T.SUBMIT, prediction_geojson=EMPTY_FC)}]},
]


def test_scripted_session(index):
    s = run_session(ScriptedEndpoint(SCRIPT), index, config=HarnessConfig(image_mode="path"))
    assert s.terminal is Terminal.SUBMITTED
    assert s.tool_calls == 3 and s.assistant_turns == 3
    assert s.prediction.accepted and s.prediction.pred_max is RiskLevel.P0
    again = run_session(ScriptedEndpoint(SCRIPT), index, config=HarnessConfig(image_mode="path"))
    assert json.dumps(again.transcript()) == json.dumps(s.transcript())


def test_never_submitting_hits_turn_limit(index):
    ep = ScriptedEndpoint([{"tool_calls": [call(T.LIST_MAPS)]}], loop=True)
    s = run_session(ep, index, config=HarnessConfig(image_mode="path", max_turns=7))
    assert s.terminal is Terminal.MAX_TURNS and s.assistant_turns == 7 and s.prediction is None


def test_text_only_replies_get_a_nudge(index):
    s = run_session(ScriptedEndpoint([{"text": "Thinking..."}], loop=True), index,
                    config=HarnessConfig(image_mode="path", max_turns=3))
    assert s.terminal is Terminal.MAX_TURNS
    nudges = [m for m in s.messages if m["role"] == "user"][1:]
    assert len(nudges) == 3 and "submit_tornado_prediction" in nudges[0]["content"][0]["text"]


@pytest.mark.parametrize("ep", [
    ScriptedEndpoint([]),
    FunctionEndpoint(lambda req, k: "not a dict"),
    FunctionEndpoint(lambda req, k: {}),
    FunctionEndpoint(lambda req, k: {"tool_calls": "list_available_map_types"}),
    FunctionEndpoint(lambda req, k: {"tool_calls": [{"arguments": {}}]}),
])
def test_endpoint_faults_are_agent_errors(index, ep):
    s = run_session(ep, index, config=HarnessConfig(image_mode="path"))
    assert s.terminal is Terminal.AGENT_ERROR and s.error


def test_every_call_gets_one_result_after_submission(index):
    ep = ScriptedEndpoint([{"tool_calls": [call(T.SUBMIT, prediction_geojson=EMPTY_FC), call(T.LIST_MAPS),
                                           call(T.SUBMIT, prediction_geojson=EMPTY_FC)]}])
    s = run_session(ep, index, config=HarnessConfig(image_mode="path"))
    errs = [r.error for r in s.results()]
    assert errs == [None, T.SESSION_COMPLETE, T.SESSION_COMPLETE]
    assert [m["tool_call_id"] for m in s.messages if m["role"] == "tool"] == ["call_0_0", "call_0_1", "call_0_2"]


def test_request_carries_images_tools_and_usage_note(index):
    seen = []

    def policy(req, k):
        seen.append(req)
        if k == 0:
            return {"tool_calls": [call(T.REQUEST_SOUNDING, latitude=35.18, longitude=-97.44, forecast_hour=12)]}
        return {"tool_calls": [call(T.SUBMIT, prediction_geojson=EMPTY_FC)]}

    s = run_session(FunctionEndpoint(policy), index, config=HarnessConfig(context_limit=128000))
    assert s.terminal is Terminal.SUBMITTED
    req = seen[1]
    assert [t["name"] for t in req["tools"]] == list(T.TOOL_NAMES)
    img = [p for m in req["messages"] for p in m.get("content", []) if p["type"] == "image"][0]
    assert base64.b64decode(img["data"]).endswith(b"KOUN/12")
    note = req["messages"][-1]["content"][0]["text"]
    assert "tokens" in note and "128000" in note
    assert len(s.usage_notes) == 2
    # the stored transcript keeps images by path only
    stored = [p for m in s.messages for p in m.get("content", []) if p["type"] == "image"][0]
    assert "data" not in stored and stored["path"].endswith("KOUN/f12.png")


def test_agent_name_and_dates_in_prompts(index):
    s = Session(DAY, index, HarnessConfig(agent_name="Nimbus", quota=7))
    system, first = s.messages[0]["content"][0]["text"], s.messages[1]["content"][0]["text"]
    assert system.startswith("You are Nimbus")
    assert "2025-03-14" in system and "2025-03-15" in system and "7" in system
    assert "2025-03-14" in first and "7" in first
    for name in ("system", "first_user", "token_usage", "nudge"):
        text = load_template(name)
        assert "{" not in text.replace("{agent_name}", "").replace("{date}", "").replace("{next_date}", "") \
            .replace("{quota}", "").replace("{prompt_tokens}", "").replace("{total_tokens}", "") \
            .replace("{context_note}", "")


def test_prompt_override_dir(tmp_path, index):
    (tmp_path / "system.txt").write_text("Agent {agent_name} on {date}.")
    prompts = PromptSet.from_dir(tmp_path)
    s = Session(DAY, index, HarnessConfig(prompts=prompts))
    assert s.messages[0]["content"][0]["text"] == "Agent Forecaster on 2025-03-14."


def test_replay_reproduces_results(index):
    steps = [{"tool_calls": [call(T.LIST_MAPS), call(T.REQUEST_MAP, map_type_directory="nope", forecast_hour=12)]},
             {"tool_calls": [call(T.REQUEST_SOUNDING, latitude=33, longitude=-91, forecast_hour=30)] * 3},
             {"tool_calls": [call(T.SUBMIT, prediction_geojson="[]")]}]
    cfg = HarnessConfig(image_mode="path", quota=2)
    s = run_session(ScriptedEndpoint(steps), index, config=cfg)
    transcript = json.loads(json.dumps(s.transcript()))
    again, mismatches = replay_transcript(transcript, index, HarnessConfig(image_mode="path"))
    assert mismatches == []
    assert again.quota_used == s.quota_used == 2 and again.terminal is Terminal.SUBMITTED
    transcript["messages"][-1]["result"]["text"] = "edited"
    assert len(replay_transcript(transcript, index)[1]) == 1


def test_transcript_persists(tmp_path, index):
    s = run_session(ScriptedEndpoint(SCRIPT), index, config=HarnessConfig(image_mode="path"))
    path = persist_run(tmp_path / "run", s.transcript(), s.prediction.raw, s.prediction.report)
    run = load_run(path)
    assert run.complete and run.transcript == json.loads(json.dumps(s.transcript()))


# --- endpoints -----------------------------------------------------------------------

def test_http_endpoint_mock_transport(index):
    replies = iter(SCRIPT)
    seen = []

    def handler(request):
        seen.append(json.loads(request.content))
        return httpx.Response(200, json=next(replies))

    ep = HttpEndpoint("http://agent.local/step", transport=httpx.MockTransport(handler))
    s = run_session(ep, index, config=HarnessConfig(image_mode="path"))
    assert s.terminal is Terminal.SUBMITTED and len(seen) == 3
    assert set(seen[0]) == {"messages", "tools"}
    local = run_session(ScriptedEndpoint(SCRIPT), index, config=HarnessConfig(image_mode="path"))
    assert s.transcript() == local.transcript()


def test_http_endpoint_failure(index):
    ep = HttpEndpoint("http://agent.local/", transport=httpx.MockTransport(lambda r: httpx.Response(500)))
    s = run_session(ep, index, config=HarnessConfig(image_mode="path"))
    assert s.terminal is Terminal.AGENT_ERROR and "500" in s.error


def test_chat_completions_bridge(index):
    bodies = []

    def handler(request):
        body = json.loads(request.content)
        bodies.append(body)
        assert request.headers["authorization"] == "Bearer k"
        if len(bodies) == 1:
            msg = {"role": "assistant", "content": None, "tool_calls": [{"id": "t1", "type": "function",
                   "function": {"name": T.REQUEST_MAP,
                                "arguments": json.dumps({"map_type_directory": "uh", "forecast_hour": 24})}}]}
        else:
            msg = {"role": "assistant", "content": "done", "tool_calls": [{"id": "t2", "type": "function",
                   "function": {"name": T.SUBMIT, "arguments": json.dumps({"prediction_geojson": EMPTY_FC})}}]}
        return httpx.Response(200, json={"choices": [{"message": msg}]})

    ep = ChatCompletionsEndpoint("some-model", "http://llm.local/v1", "k", transport=httpx.MockTransport(handler))
    s = run_session(ep, index)
    assert s.terminal is Terminal.SUBMITTED and s.prediction.accepted
    second = bodies[1]
    assert second["model"] == "some-model"
    assert second["tools"][0]["type"] == "function"
    roles = [m["role"] for m in second["messages"]]
    assert roles == ["system", "user", "assistant", "tool", "user", "user"]
    assert second["messages"][2]["tool_calls"][0]["function"]["name"] == T.REQUEST_MAP
    assert second["messages"][4]["content"][1]["image_url"]["url"].startswith("data:image/png;base64,")


def test_chat_completions_malformed_reply(index):
    ep = ChatCompletionsEndpoint("m", "http://llm.local/v1",
                                 transport=httpx.MockTransport(lambda r: httpx.Response(200, json={"x": 1})))
    assert run_session(ep, index).terminal is Terminal.AGENT_ERROR


AGENT_SCRIPT = """
import json, sys
steps = [
    {"tool_calls": [{"name": "list_available_map_types", "arguments": {}}]},
    {"tool_calls": [{"name": "submit_tornado_prediction",
                     "arguments": {"prediction_geojson": '{"type": "FeatureCollection", "features": []}'}}]},
]
for k, line in enumerate(sys.stdin):
    req = json.loads(line)
    assert "messages" in req and "tools" in req
    print(json.dumps(steps[k]), flush=True)
"""


def test_subprocess_endpoint(tmp_path, index):
    script = tmp_path / "agent.py"
    script.write_text(AGENT_SCRIPT)
    ep = SubprocessEndpoint([sys.executable, str(script)], timeout=30)
    try:
        s = run_session(ep, index, config=HarnessConfig(image_mode="path"))
    finally:
        ep.close()
    assert s.terminal is Terminal.SUBMITTED and s.tool_calls == 2


def test_subprocess_timeout(tmp_path, index):
    script = tmp_path / "slow.py"
    script.write_text("import sys, time\nsys.stdin.readline()\ntime.sleep(30)\n")
    ep = SubprocessEndpoint([sys.executable, str(script)], timeout=0.5)
    s = run_session(ep, index, config=HarnessConfig(image_mode="path"))
    assert s.terminal is Terminal.AGENT_ERROR and "no reply" in s.error


def test_parse_endpoint_spec(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"steps": SCRIPT, "loop": True}))
    ep = parse_endpoint_spec(f"script:{p}")
    assert isinstance(ep, ScriptedEndpoint) and ep.loop
    assert parse_endpoint_spec("http://x.local/agent").url == "http://x.local/agent"
    assert parse_endpoint_spec("http:http://x.local/agent").url == "http://x.local/agent"
    assert parse_endpoint_spec("cmd:python3 agent.py --fast").argv == ["python3", "agent.py", "--fast"]
    assert parse_endpoint_spec("openai:some-model").model == "some-model"
    for bad in ("nothing", "ftp:x", "script:"):
        with pytest.raises(ArgumentError):
            parse_endpoint_spec(bad)


def test_scripted_endpoint_exhausts():
    ep = ScriptedEndpoint([{"text": "x"}])
    ep.respond({})
    with pytest.raises(EndpointError):
        ep.respond({})

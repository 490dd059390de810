import csv
import json
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings

from beliefnet import cli
from beliefnet.io import InputError, model_to_dict, parse_model, parse_scenario, serialize_model
from beliefnet.model import PairwiseMRF

from conftest import graphs

TWO_NODE_DOC = {
    "nodes": [{"id": 0, "cardinality": 2, "potential": [1, 1]}, {"id": 1, "cardinality": 2, "potential": [1, 1]}],
    "edges": [{"i": 0, "j": 1, "potential": [[2, 1], [1, 2]]}],
}
LOOPY_DOC = {
    "nodes": [{"id": k, "cardinality": 2, "potential": [1.0, 1.5]} for k in range(3)],
    "edges": [{"i": a, "j": b, "potential": [[0.01, 1], [1, 0.01]]} for a, b in [(0, 1), (1, 2), (0, 2)]],
}
SCENARIO = {
    "hypotheses": ["hypothesis-0", "hypothesis-1"],
    "prior": [0.5, 0.5],
    "agents": [{"id": "a", "likelihood": [0.9, 0.1]}, {"id": "b", "likelihood": [0.8, 0.2]}],
    "topology": [["a", "b"]],
    "method": "bethe-consensus",
    "epsilon": 1e-6,
}


def write(tmp_path, name, doc):
    path = tmp_path / name
    path.write_text(doc if isinstance(doc, str) else json.dumps(doc))
    return str(path)


def run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


@settings(max_examples=50, deadline=None)
@given(graphs(max_nodes=5, card=(2, 4)))
def test_round_trip_is_exact(mrf):
    assert parse_model(serialize_model(mrf)) == mrf


def test_round_trip_with_string_ids():
    mrf = PairwiseMRF([[0.1, 1 / 3], [2.5, 1e-300]], [(1, 0, [[1.0, 2.0], [3.0, 4.0]])], ["x", "y"])
    back = parse_model(serialize_model(mrf))
    assert back == mrf and tuple(back.labels) == ("x", "y")


@pytest.mark.parametrize(
    "text, key",
    [
        ('{"edges": []}', "nodes"),
        ('{"nodes": [{"id": 0, "cardinality": 2}]}', "potential"),
        ('{"nodes": [{"id": 0, "cardinality": 3, "potential": [1, 1]}]}', "cardinality"),
        ('{"nodes": [{"id": 0, "cardinality": 2, "potential": [1, 1]}], "edges": [{"i": 0, "j": 5, "potential": [[1]]}]}', "edges[0].j"),
        ('{"nodes": [{"id": 0, "cardinality": 2, "potential": [1, "x"]}]}', "potential"),
    ],
)
def test_model_errors_name_the_key(text, key):
    with pytest.raises(InputError, match=key.replace("[", r"\[").replace("]", r"\]")):
        parse_model(text)


def test_parse_error_has_line_and_column():
    with pytest.raises(InputError, match="line 2, column"):
        parse_model('{"nodes": [\n  {"id": 0,,}]}')


def test_scenario_errors():
    with pytest.raises(InputError, match="method"):
        parse_scenario(json.dumps({**SCENARIO, "method": "gossip"}))
    with pytest.raises(InputError, match="agents"):
        parse_scenario(json.dumps({k: v for k, v in SCENARIO.items() if k != "agents"}))
    bad = {**SCENARIO, "agents": [{"id": "a", "likelihood": [0.9]}]}
    with pytest.raises(InputError, match=r"agents\[0\].likelihood"):
        parse_scenario(json.dumps(bad))


def test_infer_two_node(tmp_path, capsys):
    path = write(tmp_path, "m.json", TWO_NODE_DOC)
    code, out, _ = run(["infer", path, "--method", "bp-sum"], capsys)
    doc = json.loads(out)
    assert code == 0
    for node in doc["node_beliefs"]:
        np.testing.assert_allclose(node["belief"], [0.5, 0.5])


def test_infer_bethe_writes_edge_beliefs_and_trace(tmp_path, capsys):
    path = write(tmp_path, "m.json", TWO_NODE_DOC)
    trace = tmp_path / "t.csv"
    code, out, _ = run(["infer", path, "--method", "bethe", "--trace", str(trace)], capsys)
    doc = json.loads(out)
    assert code == 0
    np.testing.assert_allclose(doc["edge_beliefs"][0]["belief"], [[1 / 3, 1 / 6], [1 / 6, 1 / 3]], atol=1e-9)
    rows = list(csv.reader(trace.open()))
    assert rows[0] == ["iteration", "objective"]


def test_infer_bp_trace_header(tmp_path, capsys):
    path = write(tmp_path, "m.json", LOOPY_DOC)
    trace = tmp_path / "t.csv"
    run(["infer", path, "--trace", str(trace)], capsys)
    rows = list(csv.reader(trace.open()))
    assert rows[0] == ["iteration", "residual"] and rows[1][0] == "1"


def test_infer_forced_non_convergence(tmp_path, capsys):
    path = write(tmp_path, "m.json", LOOPY_DOC)
    code, out, _ = run(["infer", path, "--max-iters", "1"], capsys)
    assert code == 3
    assert len(json.loads(out)["node_beliefs"]) == 3


@pytest.mark.parametrize("method", ["mf", "bp-max"])
def test_infer_other_methods(tmp_path, capsys, method):
    path = write(tmp_path, "m.json", TWO_NODE_DOC)
    code, out, _ = run(["infer", path, "--method", method], capsys)
    assert code == 0 and json.loads(out)["method"] == method


def test_input_errors_exit_2(tmp_path, capsys):
    path = write(tmp_path, "bad.json", '{"nodes": [{"id": 0, "cardinality": 2}]}')
    code, out, err = run(["infer", path], capsys)
    assert code == 2 and out == "" and "potential" in err
    code, _, err = run(["oracle", str(tmp_path / "missing.json")], capsys)
    assert code == 2 and "cannot read" in err
    zero = {**TWO_NODE_DOC, "edges": [{"i": 0, "j": 1, "potential": [[0, 1], [1, 1]]}]}
    code, _, err = run(["oracle", write(tmp_path, "zero.json", zero)], capsys)
    assert code == 2 and "nonpositive potential at edge (0,1)" in err


def test_oracle_examples(tmp_path, capsys):
    code, out, _ = run(["oracle", write(tmp_path, "m.json", TWO_NODE_DOC)], capsys)
    assert code == 0 and json.loads(out)["Z"] == pytest.approx(6.0)
    single = {"nodes": [{"id": "s", "cardinality": 2, "potential": [1, 1]}]}
    code, out, _ = run(["oracle", write(tmp_path, "s.json", single)], capsys)
    doc = json.loads(out)
    assert doc["Z"] == pytest.approx(2.0) and doc["node_beliefs"][0]["belief"] == [0.5, 0.5]


def test_oracle_cap_exit_4(tmp_path, capsys, monkeypatch):
    chain = {
        "nodes": [{"id": k, "cardinality": 2, "potential": [1, 1]} for k in range(30)],
        "edges": [{"i": k, "j": k + 1, "potential": [[2, 1], [1, 2]]} for k in range(29)],
    }
    path = write(tmp_path, "chain.json", chain)
    code, _, err = run(["oracle", path], capsys)
    assert code == 4 and "cap" in err
    monkeypatch.setenv("BELIEFNET_STATE_CAP", "3")
    code, _, _ = run(["oracle", write(tmp_path, "m.json", TWO_NODE_DOC)], capsys)
    assert code == 4


def test_fdd_two_agents(tmp_path, capsys):
    trace = tmp_path / "c.csv"
    code, out, _ = run(["fdd", write(tmp_path, "s.json", SCENARIO), "--trace", str(trace)], capsys)
    doc = json.loads(out)
    assert code == 0
    assert doc["decision"] == "hypothesis-0" and doc["agrees_with_oracle"] is True
    np.testing.assert_allclose(doc["oracle_posterior"], [0.72 / 0.74, 0.02 / 0.74], atol=1e-12)
    assert doc["consensus_residual"] <= 1e-6
    assert next(csv.reader(trace.open())) == ["iteration", "dual_value", "residual", "step"]


def test_fdd_single_agent(tmp_path, capsys):
    solo = {**SCENARIO, "agents": [{"id": "a", "likelihood": [0.9, 0.3]}], "topology": [], "method": "bp-sum"}
    code, out, _ = run(["fdd", write(tmp_path, "s.json", solo)], capsys)
    doc = json.loads(out)
    assert code == 0
    np.testing.assert_allclose(doc["consensus_belief"], [0.75, 0.25])


def test_fdd_mfe_indefinite_exit_5(tmp_path, capsys):
    code, _, err = run(["fdd", write(tmp_path, "s.json", {**SCENARIO, "method": "mfe-consensus"})], capsys)
    assert code == 5 and "case 3" in err


def test_fdd_bad_topology_exit_2(tmp_path, capsys):
    bad = {**SCENARIO, "topology": [["a", "z"]]}
    code, _, err = run(["fdd", write(tmp_path, "s.json", bad)], capsys)
    assert code == 2 and "unknown agent" in err


def test_fdd_params_override(tmp_path, capsys):
    slow = {**SCENARIO, "params": {"step": "diminishing", "alpha0": 0.01, "max_iters": 3}}
    code, out, _ = run(["fdd", write(tmp_path, "s.json", slow)], capsys)
    assert code == 3 and json.loads(out)["iterations"] == 3


def test_output_independent_of_threads(tmp_path, capsys):
    path = write(tmp_path, "m.json", LOOPY_DOC)
    outs = set()
    for threads in ("1", "2", "4"):
        for method in ("mf", "bethe"):
            run(["infer", path, "--method", method, "--seed", "5", "--threads", threads], capsys)
        outs.add(run(["infer", path, "--method", "bethe", "--seed", "5", "--threads", threads], capsys)[1])
    assert len(outs) == 1


def test_module_entry_point(tmp_path):
    path = write(tmp_path, "m.json", TWO_NODE_DOC)
    proc = subprocess.run([sys.executable, "-m", "beliefnet", "oracle", path], capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout)["Z"] == pytest.approx(6.0)


def test_model_to_dict_shape(two_node):
    doc = model_to_dict(two_node)
    assert doc["nodes"][0] == {"id": 0, "cardinality": 2, "potential": [1.0, 1.0]}
    assert doc["edges"][0]["potential"] == [[2.0, 1.0], [1.0, 2.0]]

"""
Scenario files and the command line
===================================

Scenarios are JSON files with a schema tag. Users are drawn from the
appliance distribution with one random stream per (aggregator, user), so
growing a scenario keeps the users it already had. The same files drive the
``drmarket`` command.
"""

import json
import tempfile
from pathlib import Path

from drmarket.cli import main
from drmarket.scenario import ScenarioFile, generate_default

small = generate_default(seed=7, users_per_aggregator=3).materialize()
large = generate_default(seed=7, users_per_aggregator=50).materialize()
print("first users unchanged when growing:", large.aggregators[0].users[:3] == small.aggregators[0].users)

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    scen = tmp / "scenario.json"
    main(["generate", "--seed", "7", "--users", "5", "--out", str(scen)])
    d = json.loads(scen.read_text())
    print("schema:", d["schema"], " generators:", [g["bus"] for g in d["generators"]])
    assert ScenarioFile.load(scen).dumps() == scen.read_text()

    # exit codes: 0 converged, 2 iteration cap, 3 infeasible, 64 usage error
    code = main(["solve", "--scenario", str(scen), "--out", str(tmp / "trace.csv"),
                 "--save-result", str(tmp / "bundle.json")])
    print("solve exit code:", code)
    print(*(tmp / "trace.csv").read_text().splitlines()[:3], sep="\n")

    code = main(["compare", "--scenario", str(scen), "--methods", "bundle,cpm", "--out", str(tmp / "cmp.csv")])
    print("compare exit code:", code)
    print("cpm without a box:", main(["solve", "--scenario", str(scen), "--method", "cpm", "--no-mu-box"]))

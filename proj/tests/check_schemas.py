#!/usr/bin/env python3
"""Runs every tenfill subcommand and validates its JSON and CSV outputs
against the schemas in docs/schemas."""

import argparse
import csv
import json
import re
import subprocess
import sys
from pathlib import Path

import jsonschema
from referencing import Registry, Resource

UINT = re.compile(r"^[0-9]+$")
REAL = re.compile(r"^-?(?:[0-9]+(?:\.[0-9]*)?|\.[0-9]+)(?:e[-+]?[0-9]+)?$")

failures = []


def check(cond, what):
    print(("ok   " if cond else "FAIL ") + what)
    if not cond:
        failures.append(what)


def load_registry(schema_dir):
    registry = Registry()
    schemas = {}
    for path in sorted(schema_dir.glob("*.schema.json")):
        doc = json.loads(path.read_text())
        registry = registry.with_resource(path.name, Resource.from_contents(doc))
        schemas[path.name] = doc
    return registry, schemas


def validator(registry, schemas, name):
    cls = jsonschema.validators.validator_for(schemas[name])
    cls.check_schema(schemas[name])
    return cls(schemas[name], registry=registry)


def validate_json(v, doc, what):
    errors = sorted(v.iter_errors(doc), key=lambda e: list(e.path))
    for e in errors[:3]:
        print(f"     {list(e.path)}: {e.message}")
    check(not errors, what)


def rejects(v, doc, what):
    check(not v.is_valid(doc), what)


def validate_csv(spec, text, what):
    rows = list(csv.reader(text.splitlines()))
    names = [c["name"] for c in spec["columns"]]
    check(bool(rows) and rows[0] == names, f"{what}: header {names}")
    bad = []
    for n, row in enumerate(rows[1:], start=2):
        if len(row) != len(names):
            bad.append(f"line {n}: {len(row)} fields")
            continue
        for col, cell in zip(spec["columns"], row):
            if cell == "":
                if not col["nullable"]:
                    bad.append(f"line {n}: empty {col['name']}")
                continue
            kind = col["type"]
            ok = (kind == "uint" and UINT.match(cell)) or \
                 (kind == "real" and REAL.match(cell)) or \
                 (kind == "enum" and cell in col["values"]) or kind == "string"
            if not ok:
                bad.append(f"line {n}: {col['name']}={cell!r} is not {kind}")
    for b in bad[:3]:
        print("     " + b)
    check(len(rows) > 1 and not bad, f"{what}: {len(rows) - 1} rows typed")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--cli", required=True)
    ap.add_argument("--docs", required=True, type=Path)
    ap.add_argument("--work", required=True, type=Path)
    args = ap.parse_args()
    args.cli = str(Path(args.cli).resolve())
    work = args.work
    work.mkdir(parents=True, exist_ok=True)

    def run(*flags, expect=0):
        res = subprocess.run([args.cli, *flags], cwd=work, capture_output=True, text=True)
        check(res.returncode == expect,
              f"{' '.join(flags[:1])} exit {res.returncode} (want {expect})")
        if res.returncode != expect:
            print("     " + res.stderr.strip().replace("\n", "\n     "))
        return res

    registry, schemas = load_registry(args.docs / "schemas")
    csv_spec = json.loads((args.docs / "schemas" / "csv_columns.json").read_text())
    v = {name: validator(registry, schemas, name) for name in schemas if name != "defs.schema.json"}
    doc = lambda name: json.loads((work / name).read_text())

    run("synth", "--dims", "10,10,6", "--rank", "2", "--seed", "5", "--snr-db", "35",
        "--out", "truth.tns", "--obs", "obs.tns", "--ratio", "0.3", "--report", "synth.json")
    validate_json(v["synth_manifest.schema.json"], doc("synth.json"), "synth manifest (cp)")
    run("synth", "--dims", "12,12,3", "--wafer", "--seed", "5", "--out", "wafer.tns",
        "--report", "wafer.json")
    validate_json(v["synth_manifest.schema.json"], doc("wafer.json"), "synth manifest (wafer)")

    run("complete", "--obs", "obs.tns", "--truth", "truth.tns", "--max-rank", "5",
        "--seed", "5", "--out", "pred.tns", "--report", "complete.json")
    validate_json(v["complete_report.schema.json"], doc("complete.json"), "complete report (bayes-cp)")
    run("complete", "--obs", "obs.tns", "--method", "vp", "--seed", "5", "--report", "vp.json")
    validate_json(v["complete_report.schema.json"], doc("vp.json"), "complete report (vp)")

    res = run("sweep", "--truth", "truth.tns", "--ratios", "0.2,0.6", "--reps", "2",
              "--seed", "5", "--max-rank", "5", "--report", "sweep.json")
    validate_csv(csv_spec["sweep"], res.stdout, "sweep csv")
    validate_json(v["sweep_report.schema.json"], doc("sweep.json"), "sweep report")

    res = run("rank-study", "--truth", "truth.tns", "--max-rank", "2,4", "--seed", "5",
              "--report", "rank.json")
    validate_csv(csv_spec["rank-study"], res.stdout, "rank-study csv")
    validate_json(v["rank_study_report.schema.json"], doc("rank.json"), "rank-study report")

    res = run("compare", "--truth", "truth.tns", "--ratio", "0.3", "--seed", "5",
              "--max-rank", "5", "--report", "compare.json")
    validate_csv(csv_spec["compare"], res.stdout, "compare csv")
    validate_json(v["compare_report.schema.json"], doc("compare.json"), "compare report")
    res = run("compare", "--truth", "truth.tns", "--ratio", "0.3", "--seed", "5",
              "--max-rank", "5", "--cv-folds", "1", "--report", "compare_fail.json", expect=1)
    validate_csv(csv_spec["compare"], res.stdout, "compare csv with a failed method")
    validate_json(v["compare_report.schema.json"], doc("compare_fail.json"),
                  "compare report with a failed method")

    # The schemas must not be vacuous.
    bad = doc("complete.json")
    del bad["relative_error"]
    rejects(v["complete_report.schema.json"], bad, "complete report without relative_error rejected")
    bad = doc("complete.json")
    bad["config"]["init"] = "svd"
    rejects(v["complete_report.schema.json"], bad, "complete report with unknown init rejected")
    bad = doc("vp.json")
    bad["predicted_rank"] = 3
    rejects(v["complete_report.schema.json"], bad, "vp report with predicted_rank rejected")
    bad = doc("compare_fail.json")
    bad[1]["relative_error"] = 0.5
    rejects(v["compare_report.schema.json"], bad, "failed compare entry with an error value rejected")
    bad = doc("sweep.json")
    bad["config"]["ratios"] = [1.5]
    rejects(v["sweep_report.schema.json"], bad, "sweep report with ratio 1.5 rejected")
    bad = doc("wafer.json")
    bad["rank"] = 2
    rejects(v["synth_manifest.schema.json"], bad, "wafer manifest with a rank rejected")

    print(f"{len(failures)} failure(s)")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())

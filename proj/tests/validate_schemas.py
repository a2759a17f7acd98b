#!/usr/bin/env python3
"""Run each CLI command once and validate its JSON output against schemas/."""

import json
import pathlib
import subprocess
import sys
import tempfile

import jsonschema
from referencing import Registry, Resource


def main() -> int:
    cli, schema_dir = sys.argv[1], pathlib.Path(sys.argv[2])
    schemas = {p.name: json.loads(p.read_text()) for p in schema_dir.glob("*.schema.json")}
    registry = Registry().with_resources(
        (name, Resource.from_contents(body)) for name, body in schemas.items()
    )

    def check(schema_name, doc, label):
        validator = jsonschema.Draft202012Validator(schemas[schema_name], registry=registry)
        errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.path))
        for e in errors:
            print(f"{label}: {'/'.join(map(str, e.path))}: {e.message}")
        print(f"{label}: {'ok' if not errors else 'INVALID'}")
        return not errors

    def run(*args, expect=0):
        r = subprocess.run([cli, *args], capture_output=True, text=True)
        if r.returncode != expect:
            print(f"{' '.join(args)}: exit {r.returncode}\n{r.stderr}")
            raise SystemExit(1)
        return r

    ok = True
    with tempfile.TemporaryDirectory() as tmp:
        csv = str(pathlib.Path(tmp) / "in.csv")
        run("simulate", "--model", "latent_u_observed", "--n", "400", "--rows", "5000", "--seed", "2", "-o", csv)
        common = ["-i", csv, "--mediators", "M1,M2", "--draws", "60", "--sims", "60"]
        ok &= check("effects.schema.json", json.loads(run("mediate", *common).stdout), "mediate")
        ok &= check("effects.schema.json",
                    json.loads(run("mediate", *common, "--covariates", "U", "--simple", "1").stdout),
                    "mediate --simple")
        ok &= check("truth.schema.json",
                    json.loads(run("truth", "--model", "model2", "--rows", "5000").stdout), "truth")
        ok &= check("closed_form.schema.json",
                    json.loads(run("closed-form", "--model", "model1").stdout), "closed-form")
        study = str(pathlib.Path(tmp) / "study.json")
        run("study", "--model", "model1", "--sample-sizes", "100", "--runs", "3", "--draws", "30",
            "--sims", "30", "--rows", "2000", "--json", study, "-o", str(pathlib.Path(tmp) / "study.csv"))
        ok &= check("study.schema.json", json.loads(pathlib.Path(study).read_text()), "study")
        err = run("mediate", "-i", str(pathlib.Path(tmp) / "missing.csv"), "--mediators", "M1", expect=1)
        ok &= check("error.schema.json", json.loads(err.stderr), "error")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())

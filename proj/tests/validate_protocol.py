"""Checks recorded service responses against docs/protocol.schema.json."""
import json
import sys

import jsonschema

KIND_TO_DEF = {
    "create": "create",
    "click": "click_reply",
    "undo": "undo",
    "finish": "finish",
    "session": "session",
    "health": "health",
    "checkpoints": "checkpoints",
    "error": "error",
}


def rle_consistent(mask):
    return sum(mask["counts"]) == mask["height"] * mask["width"]


def main(schema_path, samples_path):
    with open(schema_path) as f:
        schema = json.load(f)
    with open(samples_path) as f:
        samples = json.load(f)
    jsonschema.Draft202012Validator.check_schema(schema)
    failures = 0
    seen = set()
    for n, sample in enumerate(samples):
        name = KIND_TO_DEF[sample["kind"]]
        seen.add(name)
        validator = jsonschema.Draft202012Validator({"$ref": "#/$defs/" + name, "$defs": schema["$defs"]})
        errors = list(validator.iter_errors(sample["body"]))
        if "mask" in sample["body"] and not rle_consistent(sample["body"]["mask"]):
            errors.append("mask runs do not cover height*width")
        if (sample["status"] >= 400) != (name == "error"):
            errors.append("status %d does not match kind %s" % (sample["status"], name))
        for e in errors:
            failures += 1
            print("sample %d (%s): %s" % (n, name, getattr(e, "message", e)))
    missing = set(KIND_TO_DEF.values()) - seen
    if missing:
        failures += 1
        print("no samples for: " + ", ".join(sorted(missing)))
    print("%d samples checked, %d problems" % (len(samples), failures))
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1], sys.argv[2]))

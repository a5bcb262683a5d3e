#!/usr/bin/env python3
"""Prepends the Apache-2.0 header to every source and build file.

Files that already carry the header are left alone, so the script can be
re-run after adding files.
"""

import argparse
import pathlib

PROJECT_LINE = "facekit - 3D face modelling, registration and fitting from synthetic and captured data."
COPYRIGHT = "Copyright 2026 The facekit authors"
LICENSE_LINES = [
    'Licensed under the Apache License, Version 2.0 (the "License");',
    "you may not use this file except in compliance with the License.",
    "You may obtain a copy of the License at",
    "",
    "http://www.apache.org/licenses/LICENSE-2.0",
    "",
    "Unless required by applicable law or agreed to in writing, software",
    'distributed under the License is distributed on an "AS IS" BASIS,',
    "WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.",
    "See the License for the specific language governing permissions and",
    "limitations under the License.",
]
MARKER = "Licensed under the Apache License, Version 2.0"

C_SUFFIXES = {".cpp", ".hpp", ".h", ".cc"}
HASH_SUFFIXES = {".cmake", ".in", ".py"}
SOURCE_DIRS = ["core", "tools", "tests", "benchmarks", "cmake"]


def body_lines(rel: str) -> list[str]:
    return [PROJECT_LINE, "", f"File: {rel}", "", COPYRIGHT, ""] + LICENSE_LINES


def c_header(rel: str) -> str:
    lines = ["/*"] + [(" * " + l).rstrip() for l in body_lines(rel)] + [" */"]
    return "\n".join(lines) + "\n"


def hash_header(rel: str) -> str:
    return "\n".join(("# " + l).rstrip() for l in body_lines(rel)) + "\n"


def is_hash_file(path: pathlib.Path) -> bool:
    return path.name == "CMakeLists.txt" or path.suffix in HASH_SUFFIXES


def candidates(root: pathlib.Path):
    yield root / "CMakeLists.txt"
    for d in SOURCE_DIRS:
        for p in sorted((root / d).rglob("*")):
            if p.is_file() and (p.suffix in C_SUFFIXES or is_hash_file(p)):
                yield p


def apply(path: pathlib.Path, root: pathlib.Path) -> bool:
    text = path.read_text()
    if MARKER in text[:2000]:
        return False
    rel = path.relative_to(root).as_posix()
    if is_hash_file(path):
        header = hash_header(rel)
        # Keep a shebang first.
        if text.startswith("#!"):
            first, _, rest = text.partition("\n")
            path.write_text(first + "\n" + header + "\n" + rest)
            return True
        path.write_text(header + "\n" + text)
    else:
        path.write_text(c_header(rel) + text)
    return True


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("root", nargs="?", default=pathlib.Path(__file__).resolve().parent.parent, type=pathlib.Path)
    args = parser.parse_args()
    root = args.root.resolve()
    changed = [p for p in candidates(root) if p.exists() and apply(p, root)]
    for p in changed:
        print(p.relative_to(root))
    print(f"{len(changed)} files updated")


if __name__ == "__main__":
    main()

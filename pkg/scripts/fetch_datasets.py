"""Populate data/raw/ with the four benchmark files.

The raw UCI / ProPublica files are vendored inside two PyPI wheels
(``responsibly`` and ``ethicml``); this pulls them through pip so no direct
access to the original hosts is needed.

    python scripts/fetch_datasets.py [--dest data/raw] [--wheel-dir DIR]
"""

import argparse
import glob
import hashlib
import os
import subprocess
import sys
import tempfile
import zipfile

FILES = {
    "responsibly==0.1.2": {
        "responsibly/dataset/german/german.data": "german.data",
        "responsibly/dataset/adult/adult.data": "adult.data",
        "responsibly/dataset/adult/adult.test": "adult.test",
        "responsibly/dataset/compas/compas-scores-two-years.csv": "compas-scores-two-years.csv",
    },
    "ethicml==1.3.0": {
        "ethicml/data/csvs/crime.csv": "crime.csv",
    },
}


def _wheel_for(requirement, wheel_dir):
    name = requirement.split("==")[0]
    found = glob.glob(os.path.join(wheel_dir, f"{name}-*.whl"))
    if not found:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "-q", "-d", wheel_dir, requirement],
            check=True,
        )
        found = glob.glob(os.path.join(wheel_dir, f"{name}-*.whl"))
    return found[0]


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--dest", default=os.path.join(os.path.dirname(__file__), "..", "data", "raw"))
    parser.add_argument("--wheel-dir", default=None)
    args = parser.parse_args(argv)

    os.makedirs(args.dest, exist_ok=True)
    wheel_dir = args.wheel_dir or tempfile.mkdtemp(prefix="wheels-")
    for requirement, members in FILES.items():
        with zipfile.ZipFile(_wheel_for(requirement, wheel_dir)) as zf:
            for member, target in members.items():
                payload = zf.read(member)
                with open(os.path.join(args.dest, target), "wb") as fh:
                    fh.write(payload)
                print(f"{target}  {hashlib.sha256(payload).hexdigest()[:16]}  {len(payload)} bytes")


if __name__ == "__main__":
    main()

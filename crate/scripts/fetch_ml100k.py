#!/usr/bin/env python3
"""Place the MovieLens 100K ratings file at data/ml-100k/u.data.

Tries the GroupLens archive first. Offline mirrors without access to
files.grouplens.org can fall back to the copy bundled inside the
pytorch-widedeep wheel (pip download pytorch-widedeep).
"""
import io
import pathlib
import subprocess
import sys
import tempfile
import urllib.request
import zipfile

ROOT = pathlib.Path(__file__).resolve().parent.parent
OUT = ROOT / "data" / "ml-100k" / "u.data"
URL = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"


def from_grouplens():
    with urllib.request.urlopen(URL, timeout=30) as resp:
        archive = zipfile.ZipFile(io.BytesIO(resp.read()))
    return archive.read("ml-100k/u.data")


def from_widedeep_wheel():
    import pandas as pd

    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "-q",
             "pytorch-widedeep==1.7.0", "-d", tmp],
            check=True,
        )
        wheel = next(pathlib.Path(tmp).glob("pytorch_widedeep-*.whl"))
        member = "pytorch_widedeep/datasets/data/MovieLens100k_data.parquet.brotli"
        df = pd.read_parquet(io.BytesIO(zipfile.ZipFile(wheel).read(member)))
    lines = (
        f"{r.user_id}\t{r.movie_id}\t{r.rating}\t{r.timestamp}\n"
        for r in df.itertuples(index=False)
    )
    return "".join(lines).encode()


def main():
    OUT.parent.mkdir(parents=True, exist_ok=True)
    try:
        data = from_grouplens()
    except Exception as err:  # noqa: BLE001
        print(f"grouplens download failed ({err}); using pytorch-widedeep copy")
        data = from_widedeep_wheel()
    OUT.write_bytes(data)
    n_lines = data.count(b"\n")
    print(f"wrote {OUT} ({n_lines} ratings)")


if __name__ == "__main__":
    main()

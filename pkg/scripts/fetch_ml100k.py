"""Fetch MovieLens-100K into data/ml-100k/u.data.

The recbole wheel ships the interaction file as an example dataset, so the
package mirror is enough and no direct download from grouplens is needed.
The result is the classic tab-separated ``user item rating timestamp`` file.
"""

import argparse
import hashlib
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

WHEEL = "recbole==1.2.1"
MEMBER = "recbole/dataset_example/ml-100k/ml-100k.inter"
SHA1 = "3d12bc07346b98059a31aeed4b66752e83d8d372"


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=Path(__file__).resolve().parents[1] / "data" / "ml-100k" / "u.data",
                    type=Path)
    args = ap.parse_args(argv)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run([sys.executable, "-m", "pip", "download", WHEEL, "--no-deps", "-d", tmp, "-q"],
                       check=True)
        [wheel] = Path(tmp).glob("recbole-*.whl")
        with zipfile.ZipFile(wheel) as zf:
            text = zf.read(MEMBER).decode()
    lines = text.splitlines()[1:]   # header: user_id:token item_id:token rating:float timestamp:float
    body = "".join("\t".join(str(int(float(x))) for x in ln.split()) + "\n" for ln in lines if ln.strip())
    digest = hashlib.sha1(body.encode()).hexdigest()
    if digest != SHA1:
        print(f"checksum mismatch: {digest}", file=sys.stderr)
        return 1
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(body)
    print(f"wrote {len(lines)} interactions to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3
"""Write a dmp3dad manifest for a local ShapeNetPart copy.

Two layouts are recognised:

* shapenetcore_partanno_segmentation_benchmark_v0: <synset>/points/<id>.pts
  text files, referenced in place (format pts_text).
* shapenetcore_partanno_segmentation_benchmark_v0_normal: <synset>/<id>.txt
  with x y z nx ny nz label columns. Coordinates are copied into binary
  xyz files under --out, since the extra columns are not point records.

Splits come from train_test_split/shuffled_{train,val,test}_file_list.json.
The validation list is left out unless --val-as-train is given.
"""

import argparse
import json
import pathlib
import struct
import sys


def read_categories(root):
    mapping = {}
    for line in (root / "synsetoffset2category.txt").read_text().splitlines():
        parts = line.split()
        if len(parts) == 2:
            name, synset = parts
            mapping[synset] = name.lower()
    return mapping


def split_entries(root, name):
    path = root / "train_test_split" / f"shuffled_{name}_file_list.json"
    if not path.exists():
        sys.exit(f"missing split file: {path}")
    for item in json.loads(path.read_text()):
        # "shape_data/<synset>/<model id>"
        _, synset, model = item.split("/")
        yield synset, model


def write_xyz(src, dst):
    coords = []
    for line in src.read_text().splitlines():
        fields = line.split()
        if fields:
            coords.append(tuple(float(v) for v in fields[:3]))
    dst.parent.mkdir(parents=True, exist_ok=True)
    with dst.open("wb") as f:
        f.write(struct.pack("<Q", len(coords)))
        for x, y, z in coords:
            f.write(struct.pack("<3f", x, y, z))


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("root", type=pathlib.Path, help="extracted ShapeNetPart directory")
    ap.add_argument("--out", type=pathlib.Path, default=None,
                    help="where manifest.tsv (and converted clouds) go; default: the dataset root")
    ap.add_argument("--val-as-train", action="store_true", help="add the validation list to the train split")
    args = ap.parse_args()

    root = args.root.resolve()
    out = (args.out or root).resolve()
    out.mkdir(parents=True, exist_ok=True)
    categories = read_categories(root)

    splits = [("train", "train"), ("test", "test")]
    if args.val_as_train:
        splits.insert(1, ("val", "train"))

    rows = []
    missing = 0
    for list_name, split in splits:
        for synset, model in split_entries(root, list_name):
            category = categories.get(synset, synset)
            pts = root / synset / "points" / f"{model}.pts"
            txt = root / synset / f"{model}.txt"
            if pts.exists():
                path = pts if out != root else pts.relative_to(root)
                rows.append((f"{category}_{model}", category, split, str(path), "pts_text"))
            elif txt.exists():
                dst = out / "clouds" / synset / f"{model}.xyz"
                if not dst.exists():
                    write_xyz(txt, dst)
                rows.append((f"{category}_{model}", category, split, str(dst.relative_to(out)), "xyz_binary"))
            else:
                missing += 1
                print(f"warning: no point file for {synset}/{model}", file=sys.stderr)

    manifest = out / "manifest.tsv"
    with manifest.open("w") as f:
        f.write("sample_id\tcategory\tsplit\tpath\tformat\n")
        for row in rows:
            f.write("\t".join(row) + "\n")

    counts = {}
    for _, category, split, _, _ in rows:
        counts.setdefault(category, {"train": 0, "test": 0})[split] += 1
    for category in sorted(counts):
        print(f"{category:12s} train {counts[category]['train']:5d}  test {counts[category]['test']:5d}")
    total_train = sum(c["train"] for c in counts.values())
    total_test = sum(c["test"] for c in counts.values())
    print(f"{len(counts)} categories, {total_train} train / {total_test} test -> {manifest}")
    if missing:
        print(f"{missing} listed samples had no point file", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Writes the embedding-extractor contract fixture.

The files mirror what the extractor emits for a three-image batch: a
metadata table in CSV and JSON lines, plus image and text embeddings in the
G3EM layout. Values are small dyadic fractions so they are exact in f32.
"""
import json
import struct

ROWS = [
    ("4f/a0/3963216890.jpg", 47.217578, 7.542092,
     ["Wengistein", "Solothurn", "Amtei Solothurn-Lebern", "Solothurn", None, "Switzerland", "ch", None]),
    ("12/9b/2206843421.jpg", -33.856784, 151.215297,
     [None, "Sydney", "Council of the City of Sydney", "New South Wales", None, "Australia", "au", None]),
    ("e1/07/5501829137.jpg", 35.658581, 139.745433,
     ["Shibakoen", "Minato", None, "Tokyo", None, "Japan", "jp", None]),
]
FIELDS = ["neighbourhood", "city", "county", "state", "region", "country", "country_code", "continent"]
DIM = 4


def vector(row, salt):
    return [((row * 7 + i * 3 + salt) % 16 - 8) / 8.0 for i in range(DIM)]


def g3em(salt):
    out = b"G3EM" + struct.pack("<IIQ", 1, DIM, len(ROWS))
    for n, (img_id, *_rest) in enumerate(ROWS):
        raw = img_id.encode("utf-8")
        out += struct.pack("<I", len(raw)) + raw
        out += struct.pack("<%df" % DIM, *vector(n, salt))
    return out


with open("metadata.csv", "w", newline="") as f:
    f.write(",".join(["IMG_ID", "LAT", "LON"] + FIELDS) + "\n")
    for img_id, lat, lon, places in ROWS:
        f.write(",".join([img_id, repr(lat), repr(lon)] + [p if p else "NA" for p in places]) + "\n")

with open("metadata.jsonl", "w") as f:
    for img_id, lat, lon, places in ROWS:
        rec = {"IMG_ID": img_id, "LAT": lat, "LON": lon}
        rec.update({k: v for k, v in zip(FIELDS, places)})
        f.write(json.dumps(rec) + "\n")

with open("image.g3em", "wb") as f:
    f.write(g3em(1))
with open("text.g3em", "wb") as f:
    f.write(g3em(5))

"""Derive data/countries/countries.facts from a world-countries countries.json."""
import json
import re
import sys
import unicodedata


def ident(name):
    s = unicodedata.normalize("NFKD", name).encode("ascii", "ignore").decode()
    s = re.sub(r"[^A-Za-z0-9]+", "_", s.lower()).strip("_")
    return s if s[0].isalpha() else "c_" + s


def main(src, out):
    data = [c for c in json.load(open(src)) if c.get("region")]
    places = {ident(c[k]) for c in data for k in ("region", "subregion") if c.get(k)}
    code = {}
    for c in data:
        name = ident(c["name"]["common"])
        code[c["cca3"]] = ident(c["name"]["official"]) if name in places else name
    assert len(set(code.values())) == len(code)
    lines = []
    for c in data:
        me = code[c["cca3"]]
        if c.get("subregion"):
            lines.append(f"locatedIn({me}, {ident(c['subregion'])}).")
        lines.append(f"locatedIn({me}, {ident(c['region'])}).")
    subs = sorted({(c["subregion"], c["region"]) for c in data if c.get("subregion")})
    for s, r in subs:
        lines.append(f"locatedIn({ident(s)}, {ident(r)}).")
    for c in data:
        for b in c.get("borders", []):
            if b in code:
                lines.append(f"neighborOf({code[c['cca3']]}, {code[b]}).")
    with open(out, "w") as f:
        f.write("\n".join(lines) + "\n")
    print(len(data), "countries,", len(lines), "facts")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])

"""Strain description text handling."""

import re

REDACTION = "this strain"


def redact_strain_name(description, strain_name):
    """Replace every case-insensitive occurrence of ``strain_name``.

    Overlapping occurrences are merged into one span before replacing, so no
    fragment of the name survives.
    """
    if not strain_name:
        return description
    pat = re.compile(f"(?=({re.escape(strain_name)}))", re.IGNORECASE)
    spans = []
    for m in pat.finditer(description):
        s, e = m.start(1), m.end(1)
        if spans and s <= spans[-1][1]:
            spans[-1][1] = max(spans[-1][1], e)
        else:
            spans.append([s, e])
    out, pos = [], 0
    for s, e in spans:
        out.append(description[pos:s])
        out.append(REDACTION)
        pos = e
    out.append(description[pos:])
    return "".join(out)

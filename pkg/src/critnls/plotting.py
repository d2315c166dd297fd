"""Figures as a declarative plot spec plus a rendered PNG.

A plot spec is plain JSON: axis labels and scales, and a list of panels each
holding named series. ``render`` draws any spec with matplotlib (Agg), so a
figure can be regenerated from its spec file without rerunning anything.
"""

from __future__ import annotations

import json
import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

PNG_METADATA = {"Software": None}  # keeps reruns byte-identical


def _clean(values):
    return [None if (v is None or not math.isfinite(v)) else float(v) for v in values]


def series(label, x, y, yerr=None, style="-"):
    out = {"label": label, "x": _clean(x), "y": _clean(y), "style": style}
    if yerr is not None:
        out["yerr"] = [_clean(yerr[0]), _clean(yerr[1])]
    return out


def panel(title, xlabel, ylabel, lines, xscale="linear", yscale="linear"):
    return {"title": title, "xlabel": xlabel, "ylabel": ylabel, "xscale": xscale,
            "yscale": yscale, "series": lines}


def trajectory_spec(rows, title="trajectory") -> dict:
    t = [r["t"] for r in rows]
    panels = [
        panel("energy and mass", "t", "value",
              [series("H", t, [r["energy"] for r in rows]), series("M", t, [r["mass"] for r in rows])]),
        panel("gradient norm", "t", "||grad u||", [series("||grad u||", t, [r["grad_norm"] for r in rows])]),
        panel("variance", "t", "V", [series("V", t, [r["variance"] for r in rows]),
                                     series("G", t, [r["virial_g"] for r in rows], style="--")]),
    ]
    return {"title": title, "panels": panels}


def convergence_spec(table: dict, title="identity residuals") -> dict:
    lines = []
    for name, entries in table.items():
        dts = [e["dt"] for e in entries]
        lines.append(series(name, dts, [max(abs(e["residual"]), 1e-300) for e in entries], style="o-"))
    return {"title": title,
            "panels": [panel("max residual vs dt", "dt", "residual", lines, "log", "log")]}


def sweep_spec(rows, title="blow-up frequency") -> dict:
    eps = [r["epsilon"] for r in rows]
    p = [r["p_blowup"] for r in rows]
    err = ([pi - r["ci_lo"] for pi, r in zip(p, rows)], [r["ci_hi"] - pi for pi, r in zip(p, rows)])
    return {"title": title, "panels": [panel("P(detector fires before T)", "epsilon", "p",
                                             [series("p_blowup", eps, p, yerr=err, style="o")])]}


def render(spec: dict, path) -> None:
    panels = spec["panels"]
    fig, axes = plt.subplots(1, len(panels), figsize=(4.2 * len(panels), 3.4), squeeze=False)
    for ax, pn in zip(axes[0], panels):
        for s in pn["series"]:
            x = [math.nan if v is None else v for v in s["x"]]
            y = [math.nan if v is None else v for v in s["y"]]
            if "yerr" in s:
                ax.errorbar(x, y, yerr=s["yerr"], fmt=s.get("style", "o"), capsize=3, label=s["label"])
            else:
                ax.plot(x, y, s.get("style", "-"), label=s["label"])
        ax.set_xscale(pn["xscale"])
        ax.set_yscale(pn["yscale"])
        ax.set_xlabel(pn["xlabel"])
        ax.set_ylabel(pn["ylabel"])
        ax.set_title(pn["title"], fontsize=10)
        if len(pn["series"]) > 1:
            ax.legend(fontsize=8)
    fig.suptitle(spec.get("title", ""), fontsize=11)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=PNG_METADATA)
    plt.close(fig)


def write(spec: dict, stem, formats=("json", "png")) -> list:
    """Write ``stem.plot.json`` and/or ``stem.png``; returns the paths written."""
    written = []
    if "json" in formats:
        p = f"{stem}.plot.json"
        with open(p, "w", encoding="utf-8") as fh:
            json.dump(spec, fh, indent=1, sort_keys=True)
            fh.write("\n")
        written.append(p)
    if "png" in formats:
        p = f"{stem}.png"
        render(spec, p)
        written.append(p)
    return written

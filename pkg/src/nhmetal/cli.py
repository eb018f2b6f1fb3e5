"""Command-line driver: ``nhmetal {scan,trace,knot-id,measure,fermi}``.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical
failure, 3 an ``--expect-*`` flag was violated.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bloch_core import GridSpec, scan_fields
from .el_extract import LABEL_NAMES, ELSet, extract_el, fermi_classify
from .errors import ConfigError, NHMetalError
from .knot_topology import classify
from .measurement_sim import GLOBAL, PER_K, gaps, measure_band_structure, results_document, results_to_csv
from .models import PRESET_DELTA, ModelSpec
from .output import RunDir, RunManifest, default_out_dir, load_schema
from . import svg

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_EXPECT = 0, 1, 2, 3

_FAMILY = {"h1": "H1", "h2": "H2", "knot": "Knot"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _triple(text: str):
    if text == "preset":
        return PRESET_DELTA
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected three comma-separated numbers, got {text!r}") from None
    if len(vals) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated numbers, got {text!r}")
    return vals


def _slice(text: str):
    name, _, value = text.partition("=")
    if name not in ("kx", "ky", "kz") or not value:
        raise argparse.ArgumentTypeError(f"slice must look like kz=0.65, got {text!r}")
    return name, float(value)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global")
    g.add_argument("--config", type=Path, help="JSON run configuration; flags override it")
    g.add_argument("--seed", type=int, help="master RNG seed (default 0)")
    g.add_argument("--out", type=Path, help="output directory (default $NHMETAL_OUT/<command>)")
    g.add_argument("--threads", type=int, help="worker threads for per-momentum work")
    g.add_argument("--noiseless", action="store_true", default=None, help="use exact count expectations")
    g.add_argument("--shift-mode", choices=[GLOBAL, PER_K], help="passivity shift scope (default per-k)")

    model = argparse.ArgumentParser(add_help=False)
    m = model.add_argument_group("model")
    m.add_argument("--model", choices=sorted(_FAMILY), help="model family")
    m.add_argument("--m", type=float, help="H2 mass parameter")
    m.add_argument("--p", type=int, help="knot exponent p")
    m.add_argument("--q", type=int, help="knot exponent q")
    m.add_argument("--epsilon", type=float, help="knot offset (default -20)")
    m.add_argument("--normalized", action="store_true", default=None,
                   help="normalise (Z0, Z1) to the unit sphere before the polynomial")
    m.add_argument("--delta", type=_triple, help="real perturbation cx,cy,cz or 'preset'")
    m.add_argument("--delta-imag", type=_triple, help="imaginary perturbation cx,cy,cz")
    m.add_argument("--grid", help="grid shape such as 201x201 or 61x61x61")
    m.add_argument("--slice", type=_slice, action="append", help="pin an axis, e.g. kz=0.65")

    ap = _Parser(prog="nhmetal", description="Exceptional lines of two-band non-Hermitian Bloch models.")
    ap.add_argument("--version", action="version", version=f"nhmetal {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("scan", parents=[common, model], help="spectral field lattices and heatmaps")
    s.set_defaults(func=cmd_scan)

    s = sub.add_parser("trace", parents=[common, model], help="extract exceptional lines")
    s.add_argument("--expect-nonempty", action="store_true", help="exit 3 if no exceptional point is found")
    s.set_defaults(func=cmd_trace)

    s = sub.add_parser("knot-id", parents=[common], help="knot invariants of traced closed curves")
    s.add_argument("curves", type=Path, help="ELSet JSON written by 'trace'")
    s.add_argument("--projections", type=int, default=3, help="number of generic projections to compare")
    s.add_argument("--expect", help="exit 3 unless identified as this label, e.g. TREFOIL")
    s.set_defaults(func=cmd_knot_id)

    s = sub.add_parser("measure", parents=[common, model], help="simulated interferometric band measurement")
    s.add_argument("--counts", type=float, help="expected photon number per basis run (default 1e4)")
    s.add_argument("--dx", help="H1 only: lo:hi:n samples of d_x along ky = 0 (default 0:1:11)")
    s.add_argument("--kpath", help="straight path 'a1,a2[,a3]:b1,b2[,b3]' in momentum space")
    s.add_argument("--points", type=int, default=11, help="samples along --kpath")
    s.add_argument("--trial", type=int, default=0, help="trial index in the RNG stream split")
    s.add_argument("--unwrap", action="store_true", help="make Re E continuous along the path")
    s.set_defaults(func=cmd_measure)

    s = sub.add_parser("fermi", parents=[common, model], help="Fermi-set classification of grid cells")
    s.set_defaults(func=cmd_fermi)
    return ap


# -- configuration ----------------------------------------------------------------------

def load_config(path: Path | None) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if isinstance(doc, dict) and "family" in doc:
        # a bare ModelSpec document
        doc = {"model": doc}
    import jsonschema

    errors = sorted(jsonschema.Draft202012Validator(load_schema("config")).iter_errors(doc), key=str)
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"{path}: field {where}: {e.message}")
    return doc


def _pick(args, cfg: dict, name: str, default=None):
    v = getattr(args, name, None)
    if v is not None:
        return v
    return cfg.get(name, default)


def resolve_model(args, cfg: dict) -> ModelSpec:
    base = dict(cfg.get("model", {}))
    if args.model is not None:
        base = {"family": _FAMILY[args.model]}
    for flag, key in (("m", "m"), ("p", "p"), ("q", "q"), ("epsilon", "epsilon"), ("normalized", "normalized")):
        if getattr(args, flag, None) is not None:
            base[key] = getattr(args, flag)
    if "family" not in base:
        raise ConfigError("no model given; use --model or a 'model' entry in --config")
    if base.get("family", "").lower() == "h2" and "m" not in base:
        raise ConfigError("H2 needs a mass parameter --m")
    if args.delta is not None or args.delta_imag is not None:
        re = args.delta or (0.0, 0.0, 0.0)
        im = args.delta_imag or (0.0, 0.0, 0.0)
        base["perturbation"] = [[a, b] for a, b in zip(re, im)]
    try:
        return ModelSpec.from_dict(base)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"model: {exc}") from None


def resolve_grid(args, cfg: dict, spec: ModelSpec, default: str | None = None) -> GridSpec:
    text = args.grid if args.grid is not None else cfg.get("grid")
    if text is None:
        text = default or ("201x201" if spec.dimension == 2 else "61x61x61")
    slices = dict(cfg.get("slice", {}))
    for name, value in args.slice or []:
        slices[name] = value
    try:
        grid = GridSpec.parse(text, slices)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"grid: {exc}") from None
    if grid.dimension != spec.dimension:
        raise ConfigError(f"grid {text!r} is {grid.dimension}D but model {spec.family} is {spec.dimension}D")
    return grid


def _run_dir(args, cfg, argv, spec, grid, seed) -> RunDir:
    out = args.out or (Path(cfg["out"]) if "out" in cfg else default_out_dir() / args.command)
    man = RunManifest(["nhmetal", *argv], spec.to_dict() if spec else None,
                      grid.to_dict() if grid else None, seed)
    return RunDir(out, man)


# -- plotting helpers -------------------------------------------------------------------

def _axis_labels(grid: GridSpec):
    names = ("kx", "ky", "kz")
    return [names[i] for i, n in enumerate(grid.shape) if n > 1]


def _heatmaps(rd: RunDir, fg, overlays=(), points=()):
    if len(fg.sampled_axes()) != 2:
        return
    xa, ya = fg.sampled_axes()
    xl, yl = _axis_labels(fg.grid)
    for name in ("sqrtAbsReE2", "sqrtAbsImE2", "reGap", "imGap"):
        spec = svg.PlotSpec(svg.HEATMAP_2D, title=name, xlabel=xl, ylabel=yl, refs=["fields.json"])
        rd.write_text(f"{name}.svg", svg.heatmap(fg.lattice(name), xa, ya, spec, overlays, points))


# -- subcommands ------------------------------------------------------------------------

def cmd_scan(args, cfg, argv) -> int:
    spec = resolve_model(args, cfg)
    grid = resolve_grid(args, cfg, spec)
    rd = _run_dir(args, cfg, argv, spec, grid, _pick(args, cfg, "seed", 0))
    fg = scan_fields(spec, grid)
    rd.write_text("fields.csv", fg.to_csv())
    rd.write_json("fields.json", json.loads(fg.to_json()), schema="field_grid")
    _heatmaps(rd, fg)
    rd.finish()
    print(f"scan: {np.prod(grid.shape)} momenta -> {rd.path}")
    return EXIT_OK


def cmd_trace(args, cfg, argv) -> int:
    spec = resolve_model(args, cfg)
    grid = resolve_grid(args, cfg, spec)
    rd = _run_dir(args, cfg, argv, spec, grid, _pick(args, cfg, "seed", 0))
    els = extract_el(spec, grid)
    rd.write_json("el_set.json", {**els.to_dict(), "model": spec.to_dict()}, schema="el_set")
    rd.write_text("el_set.csv", els.to_csv())
    for i, c in enumerate(els.curves):
        rd.write_text(f"curve_{i:03d}.csv", ELSet([c]).to_csv())
    if spec.dimension == 3 and not any(n == 1 for n in grid.shape):
        plot = svg.PlotSpec(svg.CURVE_3D_PROJECTION, title=f"{spec.family} exceptional lines",
                            xlabel="e1", ylabel="e2", refs=["el_set.json"])
        rd.write_text("el_projection.svg", svg.projection3d([c.points for c in els.curves], plot))
    else:
        fg = scan_fields(spec, grid)
        keep = [i for i, n in enumerate(grid.shape) if n > 1]
        overlays = [c.points[:, keep] for c in els.curves]
        pts = [np.asarray(p)[keep] for p in els.isolated_points + els.degeneracy_points]
        xa, ya = fg.sampled_axes()
        xl, yl = _axis_labels(grid)
        plot = svg.PlotSpec(svg.CURVE_OVERLAY, title="reGap with exceptional lines", xlabel=xl, ylabel=yl,
                            refs=["el_set.json"])
        rd.write_text("el_overlay.svg", svg.heatmap(fg.lattice("reGap"), xa, ya, plot, overlays, pts))
    rd.finish()
    print(f"trace: {len(els.curves)} curve(s), {len(els.isolated_points)} isolated EP(s), "
          f"{len(els.degeneracy_points)} degeneracy point(s) -> {rd.path}")
    if args.expect_nonempty and els.is_empty():
        print("trace: expected a nonempty exceptional set", file=sys.stderr)
        return EXIT_EXPECT
    return EXIT_OK


def cmd_knot_id(args, cfg, argv) -> int:
    try:
        doc = json.loads(Path(args.curves).read_text())
        if not isinstance(doc, dict):
            raise TypeError("expected an ELSet object")
        els = ELSet.from_dict(doc)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"cannot load curves from {args.curves}: {exc}") from None
    seed = _pick(args, cfg, "seed", 0)
    spec = ModelSpec.from_dict(doc["model"]) if "model" in doc else None
    rd = _run_dir(args, cfg, argv, spec, None, seed)
    report = classify([c for c in els.curves], n_projections=args.projections, seed=seed)
    rd.write_json("knot_report.json", report.to_dict(), schema="knot_report")
    rd.finish()
    print(f"knot-id: {report.identified_as} ({report.chirality}), components={report.component_count}, "
          f"det={report.determinant}, V={report.jones}")
    if args.expect and report.identified_as != args.expect:
        print(f"knot-id: expected {args.expect}", file=sys.stderr)
        return EXIT_EXPECT
    return EXIT_OK


def _momenta(args, cfg, spec: ModelSpec):
    """(momenta, parameter values, parameter label)."""
    kpath = args.kpath or cfg.get("kpath")
    if kpath:
        try:
            a, b = (np.array([float(x) for x in end.split(",")]) for end in kpath.split(":"))
        except ValueError:
            raise ConfigError(f"kpath must look like 'a1,a2:b1,b2', got {kpath!r}") from None
        if len(a) != spec.dimension or len(b) != spec.dimension:
            raise ConfigError(f"kpath endpoints must have {spec.dimension} components")
        t = np.linspace(0.0, 1.0, args.points)
        return a + t[:, None] * (b - a), t, "path parameter"
    if spec.family != "H1":
        raise ConfigError("measure needs --kpath for models other than H1")
    dx = args.dx or cfg.get("dx") or "0:1:11"
    try:
        lo, hi, n = dx.split(":")
        vals = np.linspace(float(lo), float(hi), int(n))
    except ValueError:
        raise ConfigError(f"dx must look like lo:hi:n, got {dx!r}") from None
    if vals.min() < 0 or vals.max() > 2:
        raise ConfigError("d_x samples must lie in [0, 2] on the ky = 0 line")
    # d_x = 2 - cos kx - cos ky with ky = 0
    k = np.stack([np.arccos(1.0 - vals), np.zeros_like(vals)], axis=-1)
    return k, vals, "d_x"


def cmd_measure(args, cfg, argv) -> int:
    spec = resolve_model(args, cfg)
    seed = _pick(args, cfg, "seed", 0)
    mode = _pick(args, cfg, "shift_mode", PER_K)
    noiseless = bool(_pick(args, cfg, "noiseless", False))
    counts = float(_pick(args, cfg, "counts", 1e4))
    threads = int(_pick(args, cfg, "threads", 1))
    grid = resolve_grid(args, cfg, spec, default="32x32" if spec.dimension == 2 else "24x24x24") \
        if mode == GLOBAL else None
    K, param, plabel = _momenta(args, cfg, spec)
    rd = _run_dir(args, cfg, argv, spec, grid, seed)
    results = measure_band_structure(spec, K, counts, seed, mode, noiseless, grid, args.trial,
                                     unwrap=args.unwrap, threads=threads)
    rd.write_text("measurement.csv", results_to_csv(results))
    doc = results_document(results, spec, seed, shiftMode=mode, noiseless=noiseless,
                           expectedTotal=counts, trial=args.trial)
    rd.write_json("measurement.json", doc, schema="measurement")
    g = gaps(results)
    re = np.array([x[1].real for x in g])
    im = np.array([x[1].imag for x in g])
    series = {"Re dE": (re, np.array([x[2] for x in g])), "Im dE": (im, np.array([x[3] for x in g]))}
    plot = svg.PlotSpec(svg.SECTION_1D, title=f"{spec.family} measured gap", xlabel=plabel, ylabel="dE",
                        refs=["measurement.csv"])
    rd.write_text("gap_section.svg", svg.section(param, series, plot))
    rd.finish()
    flagged = sum(bool(r.flags) for r in results)
    print(f"measure: {len(results)} band energies, {flagged} flagged -> {rd.path}")
    return EXIT_OK


def cmd_fermi(args, cfg, argv) -> int:
    spec = resolve_model(args, cfg)
    grid = resolve_grid(args, cfg, spec)
    rd = _run_dir(args, cfg, argv, spec, grid, _pick(args, cfg, "seed", 0))
    fc = fermi_classify(spec, grid)
    rd.write_json("fermi.json", fc.to_dict(), schema="fermi")
    rd.write_text("fermi.csv", fc.to_csv())
    if fc.labels.ndim == 2:
        cent = [0.5 * (a[1:] + a[:-1]) for a in [ax for ax in grid.axes() if len(ax) > 1]]
        xl, yl = _axis_labels(grid)
        plot = svg.PlotSpec(svg.HEATMAP_2D, title="Fermi classification", xlabel=xl, ylabel=yl,
                            ramp="diverging", refs=["fermi.json"])
        rd.write_text("fermi.svg", svg.heatmap(fc.labels.astype(float), *cent, plot))
    rd.finish()
    counts = ", ".join(f"{LABEL_NAMES[v]}={fc.count(v)}" for v in sorted(LABEL_NAMES))
    print(f"fermi: {fc.definition}: {counts} -> {rd.path}")
    return EXIT_OK


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg, argv)
    except ConfigError as exc:
        print(f"nhmetal: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NHMetalError as exc:
        print(f"nhmetal: {exc.code}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

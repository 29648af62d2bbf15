"""Command-line client.

Every computation goes through the HTTP service: against a running server
when ``--server URL`` is given, otherwise against an in-process instance.
Only file I/O (reading sample files, writing result files) happens here.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path
from typing import Optional

from .experiments import SampleFileError, StudyResult, emit_study, read_samples

log = logging.getLogger("bstt")


class ServiceError(RuntimeError):
    pass


class Client:
    """Minimal JSON client over either ``httpx`` or FastAPI's in-process test client."""

    def __init__(self, server: Optional[str] = None, timeout: float = 3600.0):
        if server:
            import httpx
            self._http = httpx.Client(base_url=server.rstrip("/"), timeout=timeout)
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                from fastapi.testclient import TestClient

            from .service import app
            self._http = TestClient(app)

    def post(self, path: str, payload: dict) -> dict:
        resp = self._http.post(path, json=payload)
        if resp.status_code >= 400:
            try:
                detail = resp.json().get("detail", resp.text)
            except ValueError:
                detail = resp.text
            raise ServiceError(f"{path}: HTTP {resp.status_code}: {detail}")
        return resp.json()


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _load_opts(path: Optional[str]) -> dict:
    if not path:
        return {}
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise ServiceError(f"{path}: solver options must be a JSON object")
    return doc


def _fmt(v) -> str:
    return "-" if v is None else f"{v:.3e}"


def _print_study(res: dict) -> None:
    print(f"{res['problem']}  {res['space']}  dof={res['dof']}")
    print(f"{'M':>8} {'q15':>10} {'median':>10} {'q85':>10}")
    for row in res["summary"]:
        print(f"{row['M']:>8} {_fmt(row['q15']):>10} {_fmt(row['median']):>10} {_fmt(row['q85']):>10}")
    failures = [r for r in res["records"] if "failure" in r]
    if failures:
        print(f"{len(failures)} trial(s) failed; see the JSONL records")


def _write_outputs(results: list[dict], out: str) -> None:
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    for res in results:
        for p in emit_study(StudyResult.from_json(res), outdir):
            log.info("wrote %s", p)
    (outdir / "result.json").write_text(json.dumps(results, indent=1) + "\n", encoding="utf-8")


def cmd_study(args, client: Client) -> int:
    opts = _load_opts(args.opts)
    results = []
    for i, space in enumerate(args.space):
        payload = {"space": space, "samples": args.samples, "trials": args.trials, "seed": args.seed,
                   "test_size": args.test_size, "options": opts, "record_timing": args.timing}
        if args.control_penalty is not None:
            payload["control_penalty"] = args.control_penalty
        if args.dump_samples:
            payload["dump_dir"] = str(Path(args.dump_samples) / f"space{i}")
        res = client.post(f"/studies/{args.command}", payload)
        _print_study(res)
        results.append(res)
    if args.out:
        _write_outputs(results, args.out)
    return 0


def cmd_ingest_fit(args, client: Client) -> int:
    pts, ys = read_samples(args.data, args.format)
    payload = {"space": args.space, "points": pts.tolist(), "targets": ys.tolist(),
               "dictionary": args.dictionary, "options": {**_load_opts(args.opts), "seed": args.seed}}
    if args.test:
        tp, ty = read_samples(args.test, args.format)
        payload.update(test_points=tp.tolist(), test_targets=ty.tolist())
    res = client.post("/fit", payload)
    rep = res["report"]
    print(f"{res['space']}  dof={res['dof']}  M={len(ys)}")
    print(f"sweeps={rep['sweeps']}  termination={rep['termination']}  "
          f"train residual={_fmt(rep['residuals'][-1] if rep['residuals'] else None)}  "
          f"test error={_fmt(rep['test_error'])}")
    if args.out:
        Path(args.out).write_text(json.dumps(res) + "\n", encoding="utf-8")
    return 0


def cmd_dof(args, client: Client) -> int:
    res = client.post("/dof", {"spaces": args.space})
    print(f"{'space':<28} {'dof':>10} {'reference':>10}")
    for row in res["rows"]:
        ref = "-" if row["reference"] is None else str(row["reference"])
        flag = "  (different counting convention)" if row.get("note") else ""
        print(f"{row['space']:<28} {row['dof']:>10} {ref:>10}{flag}")
    if args.out:
        Path(args.out).write_text(json.dumps(res["rows"], indent=1) + "\n", encoding="utf-8")
    return 0


def cmd_bounds(args, client: Client) -> int:
    res = client.post("/bounds", {"d": args.d, "g": args.g, "rho_max": args.rho_max, "k_loc": args.k_loc})
    g = res["g"]
    print(f"group-size bounds, d={res['d']} g={g} (rows: interface k, columns: degree 0..{g})")
    for k, row in enumerate(res["global"]):
        print(f"k={k:<3} " + " ".join(f"{v:>6}" for v in row))
    if "local" in res:
        print(f"locality K_loc={res['k_loc']}:           " + " ".join(f"{v:>6}" for v in res["local"]))
        print(f"locality K_loc={res['k_loc']} (augmented): " + " ".join(f"{v:>6}" for v in res["local_augmented"]))
    if "structure" in res:
        print(f"rho_max={res['rho_max']}: ranks={res['ranks']} dof={res['dof']}")
    if args.out:
        Path(args.out).write_text(json.dumps(res, indent=1) + "\n", encoding="utf-8")
    return 0


def cmd_study_emit(args, client: Client) -> int:
    doc = json.loads(Path(args.input).read_text(encoding="utf-8"))
    results = doc if isinstance(doc, list) else [doc]
    for res in results:
        for p in emit_study(StudyResult.from_json(res), args.out):
            print(p)
    return 0


def cmd_serve(args, client: Optional[Client]) -> int:
    import uvicorn
    uvicorn.run("bstt.service:app", host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bstt", description="Block-sparse tensor train regression toolkit")
    parser.add_argument("--server", help="base URL of a running service (default: in-process)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, default_space in (("riccati", "B(rho=4;W(d=8,g=2))"), ("gaussian", "S(d=6,g=7,rho=1)")):
        p = sub.add_parser(name, help=f"{name} sample-size study")
        p.add_argument("--space", action="append", help=f"space descriptor, repeatable (default {default_space})")
        p.add_argument("--samples", type=_int_list, required=True, help="comma-separated sample sizes")
        p.add_argument("--trials", type=int, default=20)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--test-size", type=int, default=1000)
        p.add_argument("--opts", help="JSON file with solver options")
        p.add_argument("--out", help="directory for JSONL/CSV results and result.json")
        p.add_argument("--dump-samples", help="directory for train/test sample CSVs (in-process or local server)")
        p.add_argument("--timing", action="store_true", help="record wall-clock seconds (breaks byte-identity)")
        p.add_argument("--control-penalty", type=float, default=None, help=argparse.SUPPRESS if name != "riccati"
                       else "control penalty lambda (default 1)")
        p.set_defaults(func=cmd_study, default_space=default_space)

    p = sub.add_parser("ingest-fit", help="fit a sample file")
    p.add_argument("--data", required=True)
    p.add_argument("--test")
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--space", required=True)
    p.add_argument("--dictionary", default="legendre", choices=("legendre", "monomial"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--opts")
    p.add_argument("--out", help="write the fit response (report and model) as JSON")
    p.set_defaults(func=cmd_ingest_fit)

    p = sub.add_parser("dof", help="degrees of freedom of ansatz spaces")
    p.add_argument("--space", action="append", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_dof)

    p = sub.add_parser("bounds", help="group-size bound tables")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--g", type=int, required=True)
    p.add_argument("--rho-max", type=int)
    p.add_argument("--k-loc", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("study-emit", help="write JSONL/CSV files from a saved result.json")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_study_emit)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "space", None) is None and hasattr(args, "default_space"):
        args.space = [args.default_space]
    try:
        client = None if args.command == "serve" else Client(args.server)
        return args.func(args, client)
    except (ServiceError, SampleFileError, OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

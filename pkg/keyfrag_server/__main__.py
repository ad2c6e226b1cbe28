#  This file is part of keyfrag.
#  keyfrag is free software released under terms of the MIT license. See LICENSE.md.

import argparse
import asyncio
import logging
import os
import sys
import time
from collections.abc import Callable, Iterator
from contextlib import contextmanager
from datetime import timedelta
from hashlib import sha256
from pathlib import Path
from typing import IO

from aiohttp import web

from keyfrag_server.analyzer import (
    VerifyOptions,
    diversity_rows,
    optimum_rows,
    pool_rows,
    recovery_rows,
    run_verification,
    write_rows,
)
from keyfrag_server.bench import (
    HarnessError,
    load_bench_configs,
    plot_summary,
    read_records,
    run_bench,
    summarize,
    write_records,
    write_summary,
)
from keyfrag_server.bootstrap import (
    generate_kiosk_key,
    issue_credential,
    load_kiosk_private_key,
    load_kiosk_public_key,
    save_kiosk_key,
    verify_credential,
)
from keyfrag_server.client import ClientMode, KeyParameters
from keyfrag_server.web.app import ClientServer, ProxyServer, QkmsServer, build_client

from . import __version__
from .settings import Settings

_DEFAULT_CONFIG_FILES = (
    Path(".", "config.ini"),
    Path("/etc/keyfrag.ini"),
)

_log = logging.getLogger("keyfrag")


def update_logging(level: str) -> None:
    if level == "NONE":
        logging.disable()
    elif level in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
        logging.getLogger().setLevel(level)


def _load_settings(args: argparse.Namespace) -> Settings:
    config_files = (args.config,) if args.config else _DEFAULT_CONFIG_FILES
    settings = Settings(config_files=config_files)
    update_logging(settings.general.log_level)
    return settings


@contextmanager
def _output(path: Path | None) -> Iterator[IO[str]]:
    if path is None:
        yield sys.stdout
        return
    with path.open("w", newline="", encoding="utf-8") as file:
        yield file


def _serve(args: argparse.Namespace) -> int:
    settings = _load_settings(args)
    server_class: type[QkmsServer | ProxyServer | ClientServer] = {
        "qkms": QkmsServer,
        "proxy": ProxyServer,
        "client": ClientServer,
    }[args.role]
    server_class.from_settings(settings).start_server()
    return 0


async def _request(settings: Settings, args: argparse.Namespace) -> bytes:
    client = build_client(settings)
    runner = None
    if client.reply_url is not None:
        server = ClientServer(client)
        runner = web.AppRunner(server.web_app)
        await runner.setup()
        await web.TCPSite(runner, settings.client.listen_address, settings.client.listen_port).start()
    else:
        await client.start_channels()

    try:
        params = KeyParameters(
            tagname=args.tagname,
            key_bits=args.bits,
            num_splits=args.splits,
            shuffle=not args.no_shuffle,
            party_label=args.label,
        )
        mode = ClientMode.PQ_TUNNEL if args.pq else ClientMode.CLASSICAL
        await client.request_key(params, settings.client.target, mode)
        key = await client.wait_for_key(args.tagname)
        return key.material
    finally:
        if runner is not None:
            await runner.cleanup()
        else:
            await client.close()


def _request_key(args: argparse.Namespace) -> int:
    settings = _load_settings(args)
    material = asyncio.run(_request(settings, args))
    if args.out:
        args.out.write_bytes(material)
        args.out.chmod(0o600)
    print(f"{args.tagname}: {len(material) * 8} bit key established, check value {sha256(material).hexdigest()[:16]}")
    return 0


def _kiosk_keygen(args: argparse.Namespace) -> int:
    private_path, public_path = save_kiosk_key(generate_kiosk_key(), args.out)
    print(f"Wrote {private_path} and {public_path}")
    return 0


def _kiosk_issue(args: argparse.Namespace) -> int:
    credential = issue_credential(
        args.proxy, timedelta(seconds=args.window), load_kiosk_private_key(args.key), now=time.time()
    )
    print(credential.to_text())
    return 0


def _kiosk_verify(args: argparse.Namespace) -> int:
    verdict = verify_credential(args.credential, load_kiosk_public_key(args.public_key), now=time.time())
    print(f"{verdict.status}{f': {verdict.detail}' if verdict.detail else ''}")
    return 0 if verdict.accepted else 1


def _analyze_recovery(args: argparse.Namespace) -> int:
    with _output(args.out) as out:
        write_rows(recovery_rows(args.budget, args.n, args.d, trials=args.trials, seed=args.seed), out)
    return 0


def _analyze_optimum(args: argparse.Namespace) -> int:
    with _output(args.out) as out:
        write_rows(optimum_rows(args.budget, args.n, args.d, args.k), out)
    return 0


def _analyze_diversity(args: argparse.Namespace) -> int:
    with _output(args.out) as out:
        write_rows(diversity_rows(args.budget, args.n, args.epsilon), out)
    return 0


def _analyze_pool(args: argparse.Namespace) -> int:
    with _output(args.out) as out:
        write_rows(pool_rows(args.pool_size, args.surveilled, args.q, args.max_hops), out)
    return 0


def _analyze_verify(args: argparse.Namespace) -> int:
    options = VerifyOptions.quick() if args.quick else VerifyOptions(seed=args.seed)
    results = run_verification(options)
    for result in results:
        print(f"{'PASS' if result.passed else 'FAIL'}  {result.name}: {result.detail}")
    return 0 if all(result.passed for result in results) else 1


def _bench_run(args: argparse.Namespace) -> int:
    records = []
    for cfg in load_bench_configs(args.config):
        records.extend(asyncio.run(run_bench(cfg)))

    with args.out.open("w", newline="", encoding="utf-8") as out:
        write_records(records, out)
    rows = summarize(records)
    with _output(args.summary) as out:
        write_summary(rows, out)
    return 0


def _bench_plot(args: argparse.Namespace) -> int:
    with args.input.open(newline="", encoding="utf-8") as source:
        records = read_records(source)
    plot_summary(summarize(records), args.out)
    return 0


def _numbers(kind: Callable[[str], float | int]) -> dict:
    return {"nargs": "+", "type": kind}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description=f"keyfrag {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    serve = commands.add_parser("serve", help="run a key management server, proxy or client node")
    serve.add_argument("role", choices=("qkms", "proxy", "client"))
    serve.add_argument("--config", help="path to config file", type=Path)
    serve.set_defaults(handler=_serve)

    request = commands.add_parser("request", help="establish one session key as the configured client")
    request.add_argument("tagname")
    request.add_argument("--config", help="path to config file", type=Path)
    request.add_argument("--bits", type=int, default=256)
    request.add_argument("--splits", type=int, default=8)
    request.add_argument("--no-shuffle", action="store_true")
    request.add_argument("--label", default="")
    request.add_argument("--pq", action="store_true", help="send the request through the post-quantum tunnel")
    request.add_argument("--out", type=Path, help="write the raw key to this file")
    request.set_defaults(handler=_request_key)

    kiosk = commands.add_parser("kiosk", help="bootstrap credentials").add_subparsers(dest="action", required=True)
    keygen = kiosk.add_parser("keygen")
    keygen.add_argument("--out", type=Path, required=True)
    keygen.set_defaults(handler=_kiosk_keygen)
    issue = kiosk.add_parser("issue")
    issue.add_argument("--key", type=Path, required=True)
    issue.add_argument("--proxy", required=True, help="host:port the credential is valid for")
    issue.add_argument("--window", type=float, default=3600, help="validity in seconds")
    issue.set_defaults(handler=_kiosk_issue)
    verify = kiosk.add_parser("verify")
    verify.add_argument("--public-key", type=Path, required=True)
    verify.add_argument("--credential", required=True)
    verify.set_defaults(handler=_kiosk_verify)

    analyze = commands.add_parser("analyze", help="capacity model and pool tables").add_subparsers(
        dest="table", required=True
    )
    recovery = analyze.add_parser("recovery")
    recovery.add_argument("--budget", type=float, default=2.0)
    recovery.add_argument("--n", **_numbers(int), default=[8])
    recovery.add_argument("--d", **_numbers(int), default=list(range(1, 9)))
    recovery.add_argument("--trials", type=int, default=0, help="add Monte-Carlo estimates")
    recovery.add_argument("--seed", type=int, default=0)
    recovery.set_defaults(handler=_analyze_recovery)
    optimum = analyze.add_parser("optimum")
    optimum.add_argument("--budget", **_numbers(float), default=[0.5, 1.0, 2.0])
    optimum.add_argument("--n", **_numbers(int), default=[8])
    optimum.add_argument("--d", **_numbers(int), default=[2, 4, 8])
    optimum.add_argument("--k", type=float, default=1.0, help="exponent of the convex cost model")
    optimum.set_defaults(handler=_analyze_optimum)
    diversity = analyze.add_parser("diversity")
    diversity.add_argument("--budget", **_numbers(float), default=[1.0, 2.0])
    diversity.add_argument("--n", **_numbers(int), default=[8, 16])
    diversity.add_argument("--epsilon", **_numbers(float), default=[1e-3, 1e-6])
    diversity.set_defaults(handler=_analyze_diversity)
    pool = analyze.add_parser("pool")
    pool.add_argument("--pool-size", **_numbers(int), default=[10])
    pool.add_argument("--surveilled", **_numbers(int), default=[1, 3, 5])
    pool.add_argument("--q", **_numbers(float), default=[0.25, 0.5, 0.75])
    pool.add_argument("--max-hops", type=int, default=8)
    pool.set_defaults(handler=_analyze_pool)
    for table in (recovery, optimum, diversity, pool):
        table.add_argument("--out", type=Path, help="CSV file, stdout if omitted")
    check = analyze.add_parser("verify", help="run the oracle agreement checks")
    check.add_argument("--quick", action="store_true")
    check.add_argument("--seed", type=int, default=0)
    check.set_defaults(handler=_analyze_verify)

    bench = commands.add_parser("bench", help="latency decomposition").add_subparsers(dest="action", required=True)
    run = bench.add_parser("run")
    run.add_argument("--config", type=Path, required=True)
    run.add_argument("--out", type=Path, required=True, help="CSV file for the trial records")
    run.add_argument("--summary", type=Path, help="CSV file for the summary, stdout if omitted")
    run.set_defaults(handler=_bench_run)
    plot = bench.add_parser("plot")
    plot.add_argument("--in", dest="input", type=Path, required=True)
    plot.add_argument("--out", type=Path, required=True)
    plot.set_defaults(handler=_bench_plot)

    return parser


def main(argv: list[str] | None = None) -> int:
    # Initialize logging here because we also log things while reading the settings
    logging.basicConfig()
    if log_level := os.getenv("KFRAG_GENERAL__LOG_LEVEL", "INFO"):
        update_logging(log_level)

    args = _build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except HarnessError as error:
        _log.error("%s", error)
        return 2


if __name__ == "__main__":
    sys.exit(main())

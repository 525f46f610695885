"""Operator surface: wire the pipeline stages into subcommands.

    capscore score SAMPLES ORACLES   -> reports.jsonl + summary.json
    capscore prefgen SAMPLES         -> d_precision.jsonl + d_richness.jsonl
    capscore align D_PREC D_RICH     -> reward models + ppo_curve.csv
    capscore stats ...               -> stats.json

Exit codes: 0 success, 1 usage/config error, 2 partial data failure,
3 backend failure. With --offline no network call is ever attempted;
remote backends must be served from the cache.
"""

from __future__ import annotations

import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Optional

import click
import numpy as np

from . import __version__
from .alignment import run_ppo, train_rm, write_curve_csv
from .config import RunConfig, load_config
from .datafiles import (
    aligned_score_vectors,
    load_image,
    load_oracles,
    load_samples,
    read_jsonl,
    read_score_csv,
    read_votes_csv,
    score_matrices,
    write_json,
    write_jsonl,
)
from .decompose import DecompositionConfig, decompose
from .errors import (
    CapscoreError,
    ConfigError,
    EmptyInput,
    MissingOracle,
    NoPairsForChannel,
)
from .feedquill import generate_dataset, stable_offset
from .gateway import Gateway
from .match import MatchConfig, match
from .prompts import prompt_pool
from .scoring import aggregate, score_caption
from .stats import elo_ratings, kendall_tau, one_minus_r2, pearson, per_sample_tau, spearman
from .verify import VerifyConfig, verify_dcscore

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARTIAL = 2
EXIT_BACKEND = 3

# exit code 2 is reserved for partial data failures, so usage errors map to 1
click.UsageError.exit_code = EXIT_USAGE


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load(config_path: str, seed: Optional[int], offline: bool) -> tuple[RunConfig, Gateway]:
    cfg = load_config(config_path, seed_override=seed)
    cfg.ensure_cache_writable()
    gateway = Gateway(cfg.cache_dir, offline=offline)
    return cfg, gateway


def _role_backend(cfg: RunConfig, name: str, override: Optional[str]):
    return cfg.backend(override or name)


@click.group()
@click.version_option(version=__version__)
def main():
    """Unit-level caption scoring, preference generation and toy alignment."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.argument("samples_file", type=click.Path(exists=True, dir_okay=False))
@click.argument("oracles_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", default="out", type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--backend", "backend_override", default=None,
              help="Use this backend for every judge role.")
@click.option("--offline", is_flag=True, help="Forbid network; mock/cache only.")
def score(samples_file, oracles_file, config_path, out_dir, seed, backend_override, offline):
    """Score generated captions against reference decompositions."""
    try:
        cfg, gateway = _load(config_path, seed, offline)
        samples = load_samples(samples_file)
        oracles = load_oracles(oracles_file)
        b_decomp = _role_backend(cfg, cfg.decompose_backend, backend_override)
        b_match = _role_backend(cfg, cfg.match_backend, backend_override)
        b_verify = _role_backend(cfg, cfg.verify_backend, backend_override)
    except (ConfigError, EmptyInput, ValueError, OSError) as exc:
        _fail(EXIT_USAGE, str(exc))

    missing = [s.sample_id for s in samples if s.sample_id not in oracles]
    if missing:
        _fail(EXIT_USAGE, str(MissingOracle(missing)))

    decomp_cfg = DecompositionConfig(
        backend=cfg.decompose_backend, templates_dir=cfg.templates_dir
    )
    match_cfg = MatchConfig(backend=cfg.match_backend, templates_dir=cfg.templates_dir)
    verify_cfg = VerifyConfig(backend=cfg.verify_backend, templates_dir=cfg.templates_dir)

    def run_one(sample):
        oracle = oracles[sample.sample_id]
        image = load_image(sample.image_ref)
        pred = decompose(sample.caption, decomp_cfg, gateway, b_decomp)
        pred = match(pred, oracle, match_cfg, gateway, b_match)
        pred = verify_dcscore(
            pred, oracle.source_caption, verify_cfg, gateway, b_verify, image=image
        )
        return score_caption(pred, oracle)

    reports, rows, skipped = {}, [], []
    with ThreadPoolExecutor(max_workers=cfg.max_workers) as pool:
        futures = {pool.submit(run_one, s): s for s in samples}
        for future, sample in futures.items():
            try:
                reports[sample.sample_id] = future.result()
            except CapscoreError as exc:
                log.warning("skipping sample %s: %s", sample.sample_id, exc)
                skipped.append(sample.sample_id)

    if not reports:
        _fail(EXIT_BACKEND, "every sample failed; see log for details")

    for sample in samples:  # input order keeps reruns byte-identical
        if sample.sample_id in reports:
            rows.append({
                "sample_id": sample.sample_id,
                "system_tag": sample.system_tag,
                **reports[sample.sample_id].to_dict(),
            })

    out = Path(out_dir)
    write_jsonl(out / "reports.jsonl", rows)

    by_system: dict[str, list] = {}
    for sample in samples:
        if sample.sample_id in reports:
            by_system.setdefault(sample.system_tag, []).append(reports[sample.sample_id])
    summary = {
        "seed": cfg.seed,
        "n_samples": len(samples),
        "n_scored": len(rows),
        "skipped": sorted(skipped),
        "overall": aggregate(reports.values()).to_dict(),
        "per_system": {tag: aggregate(rs).to_dict() for tag, rs in sorted(by_system.items())},
    }
    write_json(out / "summary.json", summary)
    click.echo(f"scored {len(rows)}/{len(samples)} samples -> {out}")
    if skipped:
        sys.exit(EXIT_PARTIAL)


@main.command()
@click.argument("samples_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", default="out", type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=None)
@click.option("--backend", "backend_override", default=None,
              help="Use this backend as the candidate generator.")
@click.option("--offline", is_flag=True)
def prefgen(samples_file, config_path, out_dir, seed, backend_override, offline):
    """Build precision- and richness-channel preference datasets."""
    try:
        cfg, gateway = _load(config_path, seed, offline)
        samples = load_samples(samples_file)
        if cfg.channels.n_candidates < 2:
            raise ConfigError("channels.n_candidates must be >= 2")
        gen_backend = _role_backend(cfg, cfg.generate_backend, backend_override)
        decomp_backend = cfg.backend(cfg.decompose_backend)
        ensemble = cfg.ensemble_backends()
    except (ConfigError, EmptyInput, ValueError, OSError) as exc:
        _fail(EXIT_USAGE, str(exc))

    pool = prompt_pool(cfg.toy.prompt_pool)
    filled = [
        s if s.prompt else _with_prompt(s, pool[stable_offset(s.sample_id) % len(pool)])
        for s in samples
    ]

    out = Path(out_dir)
    decomp_cfg = DecompositionConfig(
        backend=cfg.decompose_backend, templates_dir=cfg.templates_dir
    )
    try:
        stats = generate_dataset(
            filled,
            gateway,
            gen_backend,
            decomp_backend,
            ensemble,
            decomp_cfg,
            out_precision=out / "d_precision.jsonl",
            out_richness=out / "d_richness.jsonl",
            n_candidates=cfg.channels.n_candidates,
            min_margin=cfg.channels.min_margin,
            seed=cfg.seed,
            precision_floor=cfg.channels.precision_floor,
            max_workers=cfg.max_workers,
        )
    except CapscoreError as exc:
        _fail(EXIT_BACKEND, str(exc))

    write_json(out / "prefgen_summary.json", {
        "seed": cfg.seed,
        "n_samples": stats.n_samples,
        "n_scored": stats.n_scored,
        "skipped": sorted(stats.skipped),
        "pair_counts": stats.pair_counts,
    })
    click.echo(
        f"pairs: precision={stats.pair_counts['precision']} "
        f"richness={stats.pair_counts['richness']} -> {out}"
    )
    if stats.skipped:
        sys.exit(EXIT_PARTIAL)


def _with_prompt(sample, prompt):
    return replace(sample, prompt=prompt)


@main.command()
@click.argument("d_precision", type=click.Path(dir_okay=False))
@click.argument("d_richness", type=click.Path(dir_okay=False))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", default="out", type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=None)
@click.option("--steps", type=int, default=None, help="Override toy.ppo_steps.")
def align(d_precision, d_richness, config_path, out_dir, seed, steps):
    """Train both toy reward models, then run the PPO loop."""
    try:
        cfg = load_config(config_path, seed_override=seed)
    except ConfigError as exc:
        _fail(EXIT_USAGE, str(exc))
    pairs = {}
    for channel, path in (("precision", d_precision), ("richness", d_richness)):
        try:
            pairs[channel] = read_jsonl(path)
        except (OSError, ValueError) as exc:
            _fail(EXIT_USAGE, f"cannot read {channel} pairs file: {exc}")
    pairs_p, pairs_r = pairs["precision"], pairs["richness"]

    toy = cfg.toy
    rng = np.random.default_rng(cfg.seed)
    try:
        rm_p, report_p = train_rm(
            pairs_p, "precision", toy.vocab_size, toy.max_len,
            epochs=toy.rm_epochs, lr=toy.rm_lr, holdout_frac=toy.rm_holdout_frac, rng=rng,
        )
        rm_r, report_r = train_rm(
            pairs_r, "richness", toy.vocab_size, toy.max_len,
            epochs=toy.rm_epochs, lr=toy.rm_lr, holdout_frac=toy.rm_holdout_frac, rng=rng,
        )
    except NoPairsForChannel as exc:
        _fail(EXIT_USAGE, str(exc))

    pool = prompt_pool(toy.prompt_pool)
    n_steps = steps if steps is not None else toy.ppo_steps
    curve, policy, _ = run_ppo(pool, cfg.ppo, rm_p, rm_r, steps=n_steps, seed=cfg.seed)

    out = Path(out_dir)
    write_json(out / "rm_precision.json", {**rm_p.to_dict(), "train": report_p.__dict__})
    write_json(out / "rm_richness.json", {**rm_r.to_dict(), "train": report_r.__dict__})
    write_curve_csv(curve, out / "ppo_curve.csv")
    write_json(out / "policy.json", {
        "vocab_size": policy.vocab_size,
        "max_len": policy.max_len,
        "params": policy.params.tolist(),
    })
    write_json(out / "config_snapshot.json", cfg.to_snapshot())
    last = curve[-1].mean_reward if curve else float("nan")
    click.echo(f"ppo ran {n_steps} steps, final mean reward {last:.4f} -> {out}")


@main.command()
@click.option("--metric", "metric_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--human", "human_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--votes", "votes_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--elo-mode", type=click.Choice(["online-elo", "bradley-terry"]),
              default="bradley-terry", show_default=True)
@click.option("--out", "out_path", default="stats.json", type=click.Path(dir_okay=False))
def stats(metric_path, human_path, votes_path, elo_mode, out_path):
    """Correlation statistics (``--metric`` + ``--human``) or vote ratings (``--votes``)."""
    if votes_path and (metric_path or human_path):
        _fail(EXIT_USAGE, "use either --votes or --metric/--human, not both")
    if votes_path:
        try:
            votes = read_votes_csv(votes_path)
            ratings = elo_ratings(votes, mode=elo_mode)
        except CapscoreError as exc:
            _fail(EXIT_USAGE, str(exc))
        result = {
            "mode": elo_mode,
            "n_votes": len(votes),
            "ratings": {k: ratings[k] for k in sorted(ratings)},
        }
    elif metric_path and human_path:
        try:
            metric = read_score_csv(metric_path)
            human = read_score_csv(human_path)
            m_vec, h_vec, _, _ = aligned_score_vectors(metric, human)
            m_mat, h_mat, _, systems = score_matrices(metric, human)
            result = {
                "n_points": len(m_vec),
                "n_systems": len(systems),
                "pearson": pearson(m_vec, h_vec),
                "one_minus_r2": one_minus_r2(m_vec, h_vec),
                "kendall_tau": kendall_tau(m_vec, h_vec),
                "spearman": spearman(m_vec, h_vec),
                "per_sample_tau": per_sample_tau(m_mat, h_mat),
            }
        except CapscoreError as exc:
            _fail(EXIT_USAGE, str(exc))
    else:
        _fail(EXIT_USAGE, "provide --votes, or both --metric and --human")

    write_json(out_path, result)
    click.echo(f"wrote {out_path}")


if __name__ == "__main__":
    main()

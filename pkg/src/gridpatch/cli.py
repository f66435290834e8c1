"""Operator command line.

Subcommands: gen-data, gen-case, train-forecast, eval-forecast,
train-dispatch, eval-dispatch, ablate.  Every command takes --config (a
key-value text file), --seed and --out overrides, writes its resolved
configuration and a hash manifest beside its outputs, and is byte-for-byte
reproducible for a fixed (config, seed).

Exit codes: 0 success, 1 validation failure, 2 I/O failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import confidence as cf
from . import data as gdata
from . import ddpg
from . import dispatcher as dpatch
from . import forecast as fcast
from . import grid as ggrid
from .config import ConfigError, RunConfig, dump_config, load_config

SERIES_FILE = "series.csv"
CASE_FILE = "case.json"
FORECAST_CKPT = "forecast.ckpt.json"
AGENT_CKPT = "agent.ckpt.json"
MANIFEST_FILE = "manifest.json"


class CliError(ValueError):
    pass


# ---------------------------------------------------------------------------
# small IO helpers
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (np.floating,)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def update_manifest(out: Path, files: list[Path]) -> None:
    manifest_path = out / MANIFEST_FILE
    entries = {}
    if manifest_path.exists():
        entries = json.loads(manifest_path.read_text()).get("files", {})
    for f in files:
        entries[f.name] = sha256_file(f)
    manifest_path.write_text(json.dumps({"files": dict(sorted(entries.items()))}, indent=1) + "\n")


def prepare_out(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config_resolved.txt").write_text(dump_config(cfg))
    return out


def require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise CliError(f"missing {hint}: {path} (run the producing command first)")
    return path


# ---------------------------------------------------------------------------
# shared pipeline pieces
# ---------------------------------------------------------------------------

def split_day_of(cfg: RunConfig, num_days: int) -> int:
    return int(np.floor(0.9 * num_days))


def load_artifacts(cfg: RunConfig, out: Path, *, series=False, case=False, model=False, agent=False):
    got = {}
    if series:
        got["series"] = gdata.load_series(require(out / SERIES_FILE, "series CSV"))
    if case:
        got["case"] = ggrid.load_case(require(out / CASE_FILE, "grid case"))
    if model:
        got["model"] = fcast.ForecastModel.load(require(out / FORECAST_CKPT, "forecast checkpoint"))
    if agent:
        got["agent"] = ddpg.Agent.load(require(out / AGENT_CKPT, "agent checkpoint"), got["case"])
    return got


def necessity_config(cfg: RunConfig, case: ggrid.GridCase) -> dpatch.NecessityConfig:
    return dpatch.NecessityConfig(omega_p=cfg.omega_p, phi_r=cfg.phi_r, phi_l=cfg.phi_l,
                                  n_dis=min(cfg.n_dis, case.n_gen))


def agent_config(cfg: RunConfig) -> ddpg.AgentConfig:
    return ddpg.AgentConfig(
        gamma=cfg.gamma, tau=cfg.tau, batch_size=cfg.batch_size,
        replay_capacity=cfg.replay_capacity, noise_start=cfg.noise_start,
        noise_end=cfg.noise_end, hidden=cfg.hidden, n_hidden=cfg.n_hidden,
        actor_lr=cfg.actor_lr, critic_lr=cfg.critic_lr,
    )


def eval_start_days(cfg: RunConfig, num_days: int) -> list[int]:
    """Deterministic evaluation start days spread over the test era."""
    split = split_day_of(cfg, num_days)
    lo = max(split, cfg.input_len)
    hi = num_days - 2
    if hi <= lo:
        raise CliError("series too short for evaluation episodes after the split")
    n = cfg.eval_episodes
    top = max(lo, hi - cfg.episode_len_cap)  # leave room to run the full cap
    if n == 1 or top == lo:
        return [lo] * n
    return [int(round(lo + k * (top - lo) / (n - 1))) for k in range(n)]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(cfg: RunConfig) -> list[Path]:
    out = prepare_out(cfg)
    series = gdata.synth_series(cfg.seed, cfg.num_units, cfg.num_days, cfg.synth_profile())
    gdata.save_series(out / SERIES_FILE, series)
    update_manifest(out, [out / SERIES_FILE, out / "config_resolved.txt"])
    print(f"wrote {out / SERIES_FILE}: {series.num_days} days x {series.num_units} units")
    return [out / SERIES_FILE]


def cmd_gen_case(cfg: RunConfig) -> list[Path]:
    out = prepare_out(cfg)
    case = ggrid.generate_case(cfg.seed, cfg.case_buses, cfg.case_gens,
                               cfg.case_branches, cfg.case_loads)
    ggrid.save_case(out / CASE_FILE, case)
    update_manifest(out, [out / CASE_FILE, out / "config_resolved.txt"])
    print(f"wrote {out / CASE_FILE}: {case.n_bus} buses, {case.n_gen} generators "
          f"({case.n_new} renewable), {case.n_branch} branches, hash {case.case_hash()[:12]}")
    return [out / CASE_FILE]


def cmd_train_forecast(cfg: RunConfig) -> list[Path]:
    out = prepare_out(cfg)
    series = gdata.load_series(require(out / SERIES_FILE, "series CSV"))
    split = gdata.make_windows(series, cfg.input_len, cfg.decoder_len, cfg.horizon)
    model = fcast.ForecastModel(
        series.num_units,
        fcast.ForecastConfig(d_model=cfg.d_model, heads=cfg.heads, enc_blocks=cfg.enc_blocks,
                             dec_blocks=cfg.dec_blocks, input_len=cfg.input_len,
                             decoder_len=cfg.decoder_len, horizon=cfg.horizon),
        seed=cfg.seed)
    history = fcast.train(model, split.train, cfg.train_epochs, cfg.train_lr,
                          max_windows_per_epoch=cfg.max_windows_per_epoch)
    model.save(out / FORECAST_CKPT)
    write_csv(out / "forecast_training.csv", ["epoch", "loss"],
              [[i, v] for i, v in enumerate(history)])
    update_manifest(out, [out / FORECAST_CKPT, out / "forecast_training.csv"])
    print(f"trained forecaster: loss {history[0]:.3f} -> {history[-1]:.3f} "
          f"over {len(history)} epochs ({len(split.train)} train windows)")
    return [out / FORECAST_CKPT]


def evaluate_forecast_cell(series: gdata.RenewableSeries, cfg: RunConfig,
                           input_len: int, horizon: int):
    """Train a per-cell model and walk the test era with the snapshot pool.

    Returns per-window RMSE arrays for the blended ensemble, the convexity
    bound, the single-latest-snapshot baseline and persistence, all over the
    shared blend window (horizon - 5 days).
    """
    split = gdata.make_windows(series, input_len, cfg.decoder_len, horizon)
    if not split.train or not split.test:
        raise CliError(f"series too short for input {input_len} / horizon {horizon}")
    model = fcast.ForecastModel(
        series.num_units,
        fcast.ForecastConfig(d_model=cfg.d_model, heads=cfg.heads, enc_blocks=cfg.enc_blocks,
                             dec_blocks=cfg.dec_blocks, input_len=input_len,
                             decoder_len=min(cfg.decoder_len, input_len), horizon=horizon),
        seed=cfg.seed)
    if not cfg.train_in_place:
        raise CliError("eval-forecast needs train_in_place=true (no pre-trained sweep models)")
    fcast.train(model, split.train, cfg.sweep_epochs, cfg.train_lr,
                max_windows_per_epoch=cfg.sweep_windows_per_epoch)

    blend = horizon - cf.POOL_WINDOW
    split_day = split_day_of(cfg, series.num_days)
    pool = cf.SnapshotPool()
    vals = series.values
    ens, bound, single, persist = [], [], [], []
    for step, t0 in enumerate(range(split_day, series.num_days - blend - 1)):
        out, records = cf.ensemble_forecast(t0, pool, model, vals[: t0 + 1],
                                            mu=cfg.mu, rel_t0=step, blend_days=blend)
        if records is None:
            continue
        truth = vals[t0 + 1 : t0 + 1 + blend]
        ens.append(fcast.rmse(out, truth))
        blocks = cf.blend_rows(pool, records, t0, blend)
        w = {r.issue_time: r.weight for r in records}
        bound.append(sum(w[t] * fcast.rmse(blocks[t], truth) for t in blocks))
        single.append(fcast.rmse(pool.get(t0).values[:blend], truth))
        persist.append(fcast.rmse(fcast.persistence_forecast(vals, t0, blend), truth))
    return (np.array(ens), np.array(bound), np.array(single), np.array(persist))


def cmd_eval_forecast(cfg: RunConfig) -> list[Path]:
    out = prepare_out(cfg)
    series = gdata.load_series(require(out / SERIES_FILE, "series CSV"))
    rows = []
    for input_len, horizon in cfg.sweep_grid():
        ens, bound, single, persist = evaluate_forecast_cell(series, cfg, input_len, horizon)
        rows.append([input_len, horizon, len(ens), float(ens.mean()), float(bound.mean()),
                     float(single.mean()), float(persist.mean())])
        print(f"input {input_len:3d} horizon {horizon:2d}: ensemble {ens.mean():.4f} "
              f"bound {bound.mean():.4f} single {single.mean():.4f} persistence {persist.mean():.4f}")
    write_csv(out / "rmse_table.csv",
              ["input_len", "horizon", "n_windows", "rmse_ensemble", "rmse_bound",
               "rmse_single", "rmse_persistence"], rows)
    update_manifest(out, [out / "rmse_table.csv"])
    return [out / "rmse_table.csv"]


def _build_sim(cfg: RunConfig, case, series) -> ggrid.DispatchSim:
    return ggrid.DispatchSim(case, series, seed=cfg.seed, omega_r=cfg.omega_r)


def cmd_train_dispatch(cfg: RunConfig) -> list[Path]:
    out = prepare_out(cfg)
    art = load_artifacts(cfg, out, series=True, case=True, model=True)
    series, case, model = art["series"], art["case"], art["model"]
    sim = _build_sim(cfg, case, series)
    agent = ddpg.Agent(case, cfg.forecast_days, agent_config(cfg), seed=cfg.seed)
    split_day = split_day_of(cfg, series.num_days)
    start_lo = cfg.input_len
    start_hi = split_day - cfg.episode_len_cap - 2
    if start_hi < start_lo:
        raise CliError("series too short for the configured episode length")
    log_rows = []

    def hook(ep, rec):
        log_rows.append([ep, rec.steps, rec.total_reward, rec.security_score,
                         rec.avg_cost, rec.avg_urre])
        if ep % 25 == 0 or ep == cfg.episodes - 1:
            print(f"episode {ep:4d}: steps {rec.steps:3d} total reward {rec.total_reward:8.2f}")

    ddpg.train_agent(sim, model, agent, necessity_config(cfg, case), cfg.episodes,
                     start_lo=start_lo, start_hi=start_hi, mu=cfg.mu,
                     max_steps=cfg.episode_len_cap, seed=cfg.seed, log_hook=hook)
    agent.save(out / AGENT_CKPT)
    write_csv(out / "training_log.csv",
              ["episode", "steps", "total_reward", "security", "avg_cost", "avg_urre"], log_rows)
    update_manifest(out, [out / AGENT_CKPT, out / "training_log.csv"])
    return [out / AGENT_CKPT]


def _eval_agent(cfg: RunConfig, sim, agent, model, necessity, starts):
    recs = []
    for start in starts:
        recs.append(ddpg.run_episode(sim, agent, model, necessity, start,
                                     train=False, mu=cfg.mu,
                                     max_steps=cfg.episode_len_cap, collect_trace=True))
    return recs


def cmd_eval_dispatch(cfg: RunConfig) -> list[Path]:
    out = prepare_out(cfg)
    art = load_artifacts(cfg, out, series=True, case=True, model=True, agent=True)
    series, case, model, agent = art["series"], art["case"], art["model"], art["agent"]
    sim = _build_sim(cfg, case, series)
    necessity = necessity_config(cfg, case)
    starts = eval_start_days(cfg, series.num_days)
    recs = _eval_agent(cfg, sim, agent, model, necessity, starts)

    written = []
    summary_rows = []
    for k, rec in enumerate(recs):
        summary_rows.append([k, rec.start_day, rec.steps, rec.security_score,
                             rec.avg_cost, rec.avg_urre, rec.total_reward,
                             rec.done_reason or ""])
        step_rows, conf_rows = [], []
        cum = 0.0
        for i, st in enumerate(rec.trace):
            rb = st.reward
            cum += rb.reward
            step_rows.append([st.day, rb.reward, rb.s_b, rb.zeta_s_r, rb.zeta_s_v,
                              rb.zeta_cost, rb.urre, rb.cost, cum,
                              ";".join(str(g) for g in st.kept), st.done_reason or ""])
            if st.weights is not None:
                conf_rows.append([st.day] + list(st.weights) +
                                 [st.forecast_rmse if st.forecast_rmse is not None else ""])
        p1 = out / f"episode_{k}_steps.csv"
        write_csv(p1, ["t", "r_t", "s_b", "zeta_s_r", "zeta_s_v", "zeta_cost", "urre",
                       "cost", "cum_reward", "dispatched", "done_reason"], step_rows)
        p2 = out / f"episode_{k}_confidence.csv"
        write_csv(p2, ["t0", "lambda_1", "lambda_2", "lambda_3", "lambda_4", "lambda_5",
                       "ensemble_rmse"], conf_rows)
        written += [p1, p2]
    mean_row = ["mean", "", float(np.mean([r.steps for r in recs])),
                float(np.mean([r.security_score for r in recs])),
                float(np.mean([r.avg_cost for r in recs])),
                float(np.mean([r.avg_urre for r in recs])),
                float(np.mean([r.total_reward for r in recs])), ""]
    p = out / "summary.csv"
    write_csv(p, ["episode", "start_day", "steps", "security_score", "avg_cost",
                  "avg_urre", "total_reward", "done_reason"], summary_rows + [mean_row])
    written.append(p)
    update_manifest(out, written)
    print(f"evaluated {len(recs)} episodes: mean steps {mean_row[2]:.1f}, "
          f"mean total reward {mean_row[6]:.2f}")
    return written


def cmd_ablate(cfg: RunConfig) -> list[Path]:
    """Train/evaluate short-budget variants: full, no necessity patching
    (every adjustment applied), and no forecast block in the state."""
    out = prepare_out(cfg)
    art = load_artifacts(cfg, out, series=True, case=True, model=True)
    series, case, model = art["series"], art["case"], art["model"]
    split_day = split_day_of(cfg, series.num_days)
    start_lo, start_hi = cfg.input_len, split_day - cfg.episode_len_cap - 2
    starts = eval_start_days(cfg, series.num_days)

    variants = {
        "full": (cfg.forecast_days, necessity_config(cfg, case)),
        "no-patch": (cfg.forecast_days,
                     dpatch.NecessityConfig(cfg.omega_p, cfg.phi_r, cfg.phi_l, case.n_gen)),
        "no-forecast": (0, necessity_config(cfg, case)),
    }
    rows = []
    for name, (fdays, necessity) in variants.items():
        sim = _build_sim(cfg, case, series)
        agent = ddpg.Agent(case, fdays, agent_config(cfg), seed=cfg.seed)
        ddpg.train_agent(sim, model, agent, necessity, cfg.ablate_episodes,
                         start_lo=start_lo, start_hi=start_hi, mu=cfg.mu,
                         max_steps=cfg.episode_len_cap, seed=cfg.seed)
        recs = _eval_agent(cfg, sim, agent, model, necessity, starts)
        rows.append([name, float(np.mean([r.steps for r in recs])),
                     float(np.mean([r.security_score for r in recs])),
                     float(np.mean([r.avg_cost for r in recs])),
                     float(np.mean([r.avg_urre for r in recs])),
                     float(np.mean([r.total_reward for r in recs]))])
        print(f"{name}: mean total reward {rows[-1][5]:.2f} over {len(recs)} eval episodes")
    p = out / "ablation.csv"
    write_csv(p, ["variant", "steps", "security_score", "avg_cost", "avg_urre", "total_reward"], rows)
    update_manifest(out, [p])
    return [p]


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "gen-case": cmd_gen_case,
    "train-forecast": cmd_train_forecast,
    "eval-forecast": cmd_eval_forecast,
    "train-dispatch": cmd_train_dispatch,
    "eval-dispatch": cmd_eval_dispatch,
    "ablate": cmd_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gridpatch", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg = load_config(require(Path(args.config), "config file"), cfg)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    return cfg


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        COMMANDS[args.command](cfg)
        return 0
    except (OSError, json.JSONDecodeError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

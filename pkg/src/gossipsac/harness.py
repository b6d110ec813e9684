"""Orchestration: the training loop, theory verification, cost replay.

``run`` drives N independent learners through the ring task, firing a
lockstep communication round every ``comm_interval`` policy updates, and
streams per-test-epoch metrics plus every mixing decision to CSV. Reports
are accompanied by rendered figures. ``verify_theory`` sweeps the exact
tabular checks and fails loudly (with a replayable instance record) if any
bound or identity breaks. ``bench_comm`` replays reconstruction counts
through the transmission-cost formulas.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gossip, mixing, sac, tabular
from .config import RunConfig, as_dict
from .envs import RingConfig, RingEnv, make_tabular, random_policy
from .mixing import MixConfig
from .sac import AgentConfig, AgentState

METRICS_COLUMNS = [
    "epoch", "eval_mean_reward", "rho_total", "rho_ef", "rho_r", "psi_gb",
    "messages", "mean_zeta", "mean_advantage", "rejections",
]
DECISIONS_COLUMNS = [
    "epoch", "agent", "replica", "advantage", "epsilon", "c_const",
    "quad_form", "zeta_bound", "zeta_used", "accepted", "weights_clipped",
    "low_confidence",
]


def _ring_config(cfg: RunConfig) -> RingConfig:
    return RingConfig(
        n_vehicles=cfg.n_agents, circumference=cfg.ring_circumference,
        dt=cfg.ring_dt, accel_max=cfg.ring_accel_max,
        v_desired=cfg.ring_v_desired, v_limit=cfg.ring_v_limit,
        gap_min=cfg.ring_gap_min, max_steps=cfg.steps_per_epoch,
        v_init_min=cfg.ring_v_init_min, v_init_max=cfg.ring_v_init_max)


def _agent_config(cfg: RunConfig) -> AgentConfig:
    return AgentConfig(
        hidden=cfg.hidden, buffer_capacity=cfg.buffer_capacity,
        batch_size=cfg.batch_size, lr_policy=cfg.lr_policy,
        lr_critic=cfg.lr_critic, lr_alpha=cfg.lr_alpha, gamma=cfg.gamma,
        polyak=cfg.polyak, policy_delay=cfg.policy_delay,
        init_alpha=cfg.init_alpha)


def _mix_config(cfg: RunConfig) -> MixConfig:
    return MixConfig(
        n_samples=cfg.advantage_samples, k_entropy=cfg.k_entropy,
        n_value_actions=cfg.n_value_actions, n_fim_actions=cfg.n_fim_actions,
        c_safety=cfg.c_safety, zeta_cap=cfg.zeta_cap,
        weight_clip=cfg.weight_clip, fim_mode=cfg.fim_mode)


@dataclass
class RunResult:
    metrics_path: Path
    decisions_path: Path
    eval_epochs: list[int] = field(default_factory=list)
    eval_rewards: list[float] = field(default_factory=list)
    ledger: gossip.CommLedger = field(default_factory=gossip.CommLedger)
    aborted: bool = False
    abort_reason: str = ""

    @property
    def final_rewards(self) -> list[float]:
        return self.eval_rewards


class _DecisionWindow:
    """Aggregates mixing decisions between consecutive metric rows."""

    def __init__(self):
        self.zetas: list[float] = []
        self.advantages: list[float] = []
        self.rejections = 0

    def add(self, decisions):
        for d in decisions:
            self.advantages.append(d.advantage)
            if d.accepted:
                self.zetas.append(d.zeta_used)
            else:
                self.rejections += 1

    def drain(self):
        mean_zeta = float(np.mean(self.zetas)) if self.zetas else 0.0
        mean_adv = float(np.mean(self.advantages)) if self.advantages else 0.0
        row = (mean_zeta, mean_adv, self.rejections)
        self.__init__()
        return row


def _evaluate(cfg: RunConfig, agents: list[AgentState],
              episode_seeds: list[int]) -> np.ndarray:
    """Deterministic greedy-mean rollouts; per-agent reward sums over T."""
    totals = np.zeros(cfg.n_agents)
    for seed in episode_seeds:
        env = RingEnv(_ring_config(cfg), np.random.default_rng(seed))
        obs = env.reset()
        for _ in range(cfg.steps_per_epoch):
            acts = np.array([sac.act_deterministic(agents[i], obs[i])[0]
                             for i in range(cfg.n_agents)])
            obs, rewards, done = env.step(acts * cfg.ring_accel_max)
            totals += rewards
            if done:
                break
    return totals / (len(episode_seeds) * cfg.steps_per_epoch)


def _comm_round(cfg: RunConfig, env: RingEnv, agents: list[AgentState],
                ledger: gossip.CommLedger, mix_cfg: MixConfig,
                rng: np.random.Generator, window: _DecisionWindow,
                decisions_writer, epoch: int) -> None:
    graph = gossip.neighbors(env.pos, cfg.comm_range,
                             circumference=cfg.ring_circumference)
    thetas = [agent.theta.copy() for agent in agents]
    if cfg.mode == "rsm":
        refs = gossip.run_comm_round(thetas, graph, cfg.n_segments,
                                     cfg.n_replicas, cfg.prr, rng, ledger,
                                     cfg.payload_bytes)
        for i, agent in enumerate(agents):
            if not refs[i]:
                continue
            _, decisions = mixing.comm_mix(agent, refs[i], mix_cfg, rng)
            ledger.record_accepts(sum(d.accepted for d in decisions))
            window.add(decisions)
            for r, d in enumerate(decisions):
                decisions_writer.writerow([
                    epoch, i, r, repr(d.advantage), repr(d.epsilon),
                    repr(d.c_const), repr(d.quad_form), repr(d.zeta_bound),
                    repr(d.zeta_used), int(d.accepted), d.weights_clipped,
                    int(d.low_confidence)])
    elif cfg.mode == "avg":
        means = gossip.run_averaging_round(thetas, graph, cfg.prr, rng,
                                           ledger, cfg.payload_bytes)
        for i, (mean_theta, received) in means.items():
            zeta = 1.0 - 1.0 / (len(graph[i]) + 1)
            agents[i].theta = mixing.mix_parameters(agents[i].theta,
                                                    mean_theta, zeta)
            ledger.record_accepts(received)


def run(cfg: RunConfig, out_dir: str | Path) -> RunResult:
    """Train under the configured mixing mode; stream metrics to CSV."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.csv"
    decisions_path = out / "decisions.csv"
    (out / "config.txt").write_text(
        "\n".join(f"{k} = {v}" for k, v in as_dict(cfg).items()) + "\n",
        encoding="utf-8")

    root = np.random.SeedSequence(cfg.seed)
    env_ss, gossip_ss, eval_ss, *agent_ss = root.spawn(3 + cfg.n_agents)
    env = RingEnv(_ring_config(cfg), np.random.default_rng(env_ss))
    agent_cfg = _agent_config(cfg)
    agents = [AgentState.create(6, 1, agent_cfg, np.random.default_rng(ss))
              for ss in agent_ss]
    agent_rngs = [np.random.default_rng(ss.spawn(1)[0]) for ss in agent_ss]
    gossip_rng = np.random.default_rng(gossip_ss)
    eval_seeds = [int(s) for s in
                  np.random.default_rng(eval_ss).integers(0, 2**31, cfg.eval_episodes)]

    ledger = gossip.CommLedger()
    mix_cfg = _mix_config(cfg)
    window = _DecisionWindow()
    result = RunResult(metrics_path=metrics_path, decisions_path=decisions_path,
                       ledger=ledger)
    last_comm_k = 0
    started = time.perf_counter()

    columns = list(METRICS_COLUMNS)
    columns[2:2] = [f"eval_reward_agent_{i}" for i in range(cfg.n_agents)]
    if cfg.record_wallclock:
        columns.append("wall_clock_s")

    with open(metrics_path, "w", newline="", encoding="utf-8") as mf, \
            open(decisions_path, "w", newline="", encoding="utf-8") as df:
        metrics = csv.writer(mf)
        decisions = csv.writer(df)
        metrics.writerow(columns)
        decisions.writerow(DECISIONS_COLUMNS)
        try:
            for epoch in range(1, cfg.epochs + 1):
                obs = env.reset()
                for _ in range(cfg.steps_per_epoch):
                    actions = np.empty(cfg.n_agents)
                    logps = np.empty(cfg.n_agents)
                    for i, agent in enumerate(agents):
                        a, logp = sac.act(agent, obs[i], agent_rngs[i])
                        actions[i], logps[i] = a[0], logp
                    next_obs, rewards, done = env.step(actions * cfg.ring_accel_max)
                    policy_updated = False
                    for i, agent in enumerate(agents):
                        agent.buffer.add(sac.Transition(
                            state=obs[i], action=np.array([actions[i]]),
                            reward=float(rewards[i]), next_state=next_obs[i],
                            behavior_logp=float(logps[i]), done=done))
                        if sac.maybe_update(agent, done, agent_rngs[i]):
                            policy_updated = True
                    obs = next_obs
                    k = agents[0].k
                    if (cfg.mode != "none" and policy_updated and k > 0
                            and k % cfg.comm_interval == 0 and k != last_comm_k):
                        last_comm_k = k
                        _comm_round(cfg, env, agents, ledger, mix_cfg,
                                    gossip_rng, window, decisions, epoch)
                    if done:
                        break
                if epoch % cfg.eval_every == 0:
                    per_agent = _evaluate(cfg, agents, eval_seeds)
                    psi, messages = gossip.comm_cost(ledger, agents[0].theta.size,
                                                     cfg.payload_bytes)
                    mean_zeta, mean_adv, rejections = window.drain()
                    row = [epoch, repr(float(per_agent.mean()))]
                    row += [repr(float(v)) for v in per_agent]
                    row += [ledger.rho_total, ledger.rho_ef,
                            repr(ledger.mixing_rate), repr(psi), messages,
                            repr(mean_zeta), repr(mean_adv), rejections]
                    if cfg.record_wallclock:
                        row.append(repr(time.perf_counter() - started))
                    metrics.writerow(row)
                    mf.flush()
                    result.eval_epochs.append(epoch)
                    result.eval_rewards.append(float(per_agent.mean()))
        except sac.DivergenceError as err:
            result.aborted = True
            result.abort_reason = str(err)
            metrics.writerow([f"# aborted: {err}"])

    if cfg.figures:
        _render_training_figure(out, result, cfg)
    return result


def _render_training_figure(out: Path, result: RunResult, cfg: RunConfig) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    ax1.plot(result.eval_epochs, result.eval_rewards, marker="o", ms=3)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("mean eval reward")
    ax1.set_title(f"mode={cfg.mode} seed={cfg.seed}")
    ledger = result.ledger
    ax2.bar(["reconstructed", "accepted"], [ledger.rho_total, ledger.rho_ef])
    ax2.set_title(f"mixing rate {ledger.mixing_rate:.1%}"
                  if ledger.rho_total else "no communication")
    fig.tight_layout()
    fig.savefig(out / "reward_curve.png", dpi=120)
    plt.close(fig)


# ---------------------------------------------------------------------------
# Theory verification
# ---------------------------------------------------------------------------

THEORY_COLUMNS = ["check", "instances", "failures", "worst_margin",
                  "tolerance", "passed"]

_THEOREM_ALPHAS = (0.0, 0.1, 1.0)
_THEOREM_GAMMAS = (0.5, 0.9, 0.99)
_BETA_GRID = tuple(np.round(np.linspace(0.0, 1.0, 11), 2))


def _instance(master_seed: int, combo: int, index: int,
              alpha: float, gamma: float):
    ss = np.random.SeedSequence([master_seed, combo, index])
    rng = np.random.default_rng(ss)
    mdp_seed = int(rng.integers(1 << 31))
    mdp = make_tabular(mdp_seed, 4, 3, gamma=gamma, alpha=alpha)
    pi = random_policy(rng, 4, 3)
    pi_ref = random_policy(rng, 4, 3)
    return mdp, pi, pi_ref


@dataclass
class TheoryReport:
    rows: list[dict]
    failures: list[dict]

    @property
    def passed(self) -> bool:
        return all(row["passed"] for row in self.rows)


def verify_theory(instances: int = 1000, seed: int = 0,
                  taylor_draws: int = 50,
                  tol_overrides: dict | None = None) -> TheoryReport:
    """Sweep the exact bound/identity checks over random instances."""
    tol = {
        "theorem1": 1e-9, "corollary1": 1e-9, "lemma_state": 1e-10,
        "lemma_entropy": 1e-12, "lemma_return": 1e-8, "lemma_improve": 1e-9,
        "taylor_ratio": 0.02, "score_identity": 1e-12, "table_mix": 1e-9,
    }
    tol.update(tol_overrides or {})
    combos = [(a, g) for a in _THEOREM_ALPHAS for g in _THEOREM_GAMMAS]
    per_combo = -(-instances // len(combos))  # ceil
    failures: list[dict] = []

    th_checked = th_failed = 0
    th_worst = np.inf
    co_checked = co_failed = 0
    co_worst = np.inf
    for combo, (alpha, gamma) in enumerate(combos):
        for index in range(per_combo):
            mdp, pi, pi_ref = _instance(seed, combo, index, alpha, gamma)
            for beta in _BETA_GRID:
                res = tabular.theorem1_check(mdp, pi, pi_ref, float(beta),
                                             tol=tol["theorem1"])
                th_checked += 1
                th_worst = min(th_worst, res.lhs - res.rhs)
                if not res.holds:
                    th_failed += 1
                    failures.append({
                        "check": "theorem1", "seed": seed, "combo": combo,
                        "index": index, "alpha": alpha, "gamma": gamma,
                        "beta": float(beta), "lhs": res.lhs, "rhs": res.rhs})
            cres = tabular.corollary1_check(
                mdp, pi, pi_ref, betas=np.asarray(_BETA_GRID),
                tol=tol["corollary1"])
            co_checked += 1
            co_worst = min(co_worst, cres.worst_margin)
            if not (cres.bound_holds and cres.positivity_sound):
                co_failed += 1
                failures.append({
                    "check": "corollary1", "seed": seed, "combo": combo,
                    "index": index, "alpha": alpha, "gamma": gamma,
                    "worst_margin": cres.worst_margin})

    lemma_rows = {"lemma_state": 0.0, "lemma_entropy": 0.0,
                  "lemma_return": 0.0}
    lemma_checked = lemma_failed = 0
    improve_worst = np.inf
    rng = np.random.default_rng(np.random.SeedSequence([seed, 10_001]))
    for index in range(100):
        alpha = float(rng.choice([0.1, 0.5, 1.0]))
        gamma = float(rng.choice(_THEOREM_GAMMAS))
        mdp, pi, pi_ref = _instance(seed, 9, index, alpha, gamma)
        rep = tabular.lemma_checks(mdp, pi, pi_ref, float(rng.random()))
        lemma_checked += 1
        lemma_rows["lemma_state"] = max(lemma_rows["lemma_state"],
                                        rep.expected_advantage_err,
                                        rep.mixture_advantage_err)
        lemma_rows["lemma_entropy"] = max(lemma_rows["lemma_entropy"],
                                          rep.entropy_decomposition_err)
        lemma_rows["lemma_return"] = max(lemma_rows["lemma_return"],
                                         rep.return_gap_identity_err)
        improve_worst = min(improve_worst, rep.improvement_min_gap)
        if not rep.passes(tol["lemma_state"], tol["lemma_entropy"],
                          tol["lemma_return"], tol["lemma_improve"]):
            lemma_failed += 1
            failures.append({"check": "lemmas", "seed": seed, "index": index,
                             "alpha": alpha, "gamma": gamma,
                             "report": rep._asdict()})

    taylor_checked = taylor_failed = 0
    worst_ratio = 0.0
    worst_score = 0.0
    rng = np.random.default_rng(np.random.SeedSequence([seed, 10_002]))
    for index in range(taylor_draws):
        theta = rng.normal(size=(4, 3))
        delta = rng.normal(size=(4, 3))
        rep = tabular.kl_and_fim_taylor_check(theta, delta,
                                              zetas=(1e-1, 1e-2, 1e-3))
        taylor_checked += 1
        ratios = [r for z, r in rep.decade_ratios.items() if z <= 1e-2]
        worst_ratio = max(worst_ratio, max(ratios))
        worst_score = max(worst_score, rep.score_identity_max)
        if not rep.passes(tol["taylor_ratio"], 1e-2, tol["score_identity"]):
            taylor_failed += 1
            failures.append({"check": "taylor", "seed": seed, "index": index})

    mix_checked = mix_failed = 0
    mix_worst = np.inf
    rng = np.random.default_rng(np.random.SeedSequence([seed, 10_003]))
    for index in range(200):
        alpha = float(rng.choice([0.1, 1.0]))
        gamma = float(rng.choice(_THEOREM_GAMMAS))
        mdp, pi, pi_ref = _instance(seed, 11, index, alpha, gamma)
        out = tabular.regulated_table_mix(mdp, pi, pi_ref)
        if not out.accepted:
            continue
        mix_checked += 1
        margin = out.eta_after - out.eta_before
        mix_worst = min(mix_worst, margin)
        if margin < -tol["table_mix"]:
            mix_failed += 1
            failures.append({"check": "table_mix", "seed": seed,
                             "index": index, "margin": margin})

    rows = [
        {"check": "theorem1_bound", "instances": th_checked,
         "failures": th_failed, "worst_margin": th_worst,
         "tolerance": tol["theorem1"], "passed": th_failed == 0},
        {"check": "corollary1_bound_and_positivity", "instances": co_checked,
         "failures": co_failed, "worst_margin": co_worst,
         "tolerance": tol["corollary1"], "passed": co_failed == 0},
        {"check": "per_state_identities", "instances": lemma_checked,
         "failures": lemma_failed,
         "worst_margin": max(lemma_rows.values()),
         "tolerance": tol["lemma_return"], "passed": lemma_failed == 0},
        {"check": "soft_improvement", "instances": lemma_checked,
         "failures": lemma_failed, "worst_margin": improve_worst,
         "tolerance": tol["lemma_improve"], "passed": lemma_failed == 0},
        {"check": "kl_quadratic_taylor", "instances": taylor_checked,
         "failures": taylor_failed, "worst_margin": worst_ratio,
         "tolerance": tol["taylor_ratio"], "passed": taylor_failed == 0},
        {"check": "score_identity", "instances": taylor_checked,
         "failures": taylor_failed, "worst_margin": worst_score,
         "tolerance": tol["score_identity"], "passed": taylor_failed == 0},
        {"check": "regulated_table_mix", "instances": mix_checked,
         "failures": mix_failed, "worst_margin": mix_worst,
         "tolerance": tol["table_mix"], "passed": mix_failed == 0},
    ]
    return TheoryReport(rows=rows, failures=failures)


def replay_failure(record: dict):
    """Recompute (lhs, rhs) for a serialized theorem failure record."""
    mdp, pi, pi_ref = _instance(record["seed"], record["combo"],
                                record["index"], record["alpha"],
                                record["gamma"])
    res = tabular.theorem1_check(mdp, pi, pi_ref, record["beta"])
    return res.lhs, res.rhs


def write_theory_report(report: TheoryReport, out_dir: str | Path,
                        figures: bool = True) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "theory_report.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=THEORY_COLUMNS)
        writer.writeheader()
        for row in report.rows:
            writer.writerow(row)
    if report.failures:
        (out / "theory_failures.json").write_text(
            json.dumps(report.failures, indent=2, default=float),
            encoding="utf-8")
    if figures:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(7, 3.2))
        names = [r["check"] for r in report.rows]
        margins = [max(abs(r["worst_margin"]), 1e-18) for r in report.rows]
        colors = ["tab:green" if r["passed"] else "tab:red"
                  for r in report.rows]
        ax.barh(names, margins, color=colors)
        ax.set_xscale("log")
        ax.set_xlabel("|worst margin| (log scale)")
        ax.set_title("theory verification sweep")
        fig.tight_layout()
        fig.savefig(out / "theory_report.png", dpi=120)
        plt.close(fig)
    return path


def format_theory_report(report: TheoryReport) -> str:
    lines = [f"{'check':34s} {'n':>6s} {'fail':>5s} {'worst margin':>14s} {'ok':>4s}"]
    for row in report.rows:
        lines.append(f"{row['check']:34s} {row['instances']:6d} "
                     f"{row['failures']:5d} {row['worst_margin']:14.3e} "
                     f"{'yes' if row['passed'] else 'NO':>4s}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Communication-cost replay
# ---------------------------------------------------------------------------

def bench_comm(rho_total: int, d: int, n_segments: int = 4,
               payload_bytes: int = gossip.DEFAULT_PAYLOAD_BYTES) -> dict:
    """Table-shaped cost row for a synthetic reconstruction count."""
    ledger = gossip.CommLedger(rho_total=rho_total,
                               by_partition={n_segments: rho_total})
    psi, messages = gossip.comm_cost(ledger, d, payload_bytes)
    return {"rho_total": rho_total, "d": d, "segments": n_segments,
            "psi_gb": psi, "messages": messages}

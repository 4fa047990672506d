"""Command-line entry points for the pipeline stages."""

from __future__ import annotations

import json
import sys

import click
import numpy as np

from .config import PipelineConfig
from .keyframes import KeyframeConfig, extract_keyframes
from .pipeline import report_from_metrics, run_pipeline
from .psl import default_templates, fuse_inter
from .discriminability import DiscriminabilityScores
from .fusion import ModalResult
from .reward import PreferenceRecord, RewardEnsemble
from .synthesis import ENVS, augment, foresight_generate, make_reach_generator
from .trajectory import TrajectoryPair, load_dataset, save_dataset


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="TOML pipeline configuration.")
@click.option("--seed", type=int, default=None, help="Override the configured seed.")
@click.option("--out", "out_dir", type=click.Path(), default=None, help="Output directory.")
@click.option("--workers", type=int, default=None, help="Worker pool size.")
@click.pass_context
def main(ctx, config_path, seed, out_dir, workers):
    cfg = PipelineConfig.from_toml(config_path) if config_path else PipelineConfig()
    if seed is not None:
        cfg.seed = seed
    if workers is not None:
        cfg.workers = workers
    ctx.obj = {"cfg": cfg, "out": out_dir}


@main.command("extract-keyframes")
@click.option("--input", "input_path", type=click.Path(exists=True), required=True)
@click.option("--output", "output_path", type=click.Path(), required=True)
@click.pass_context
def extract_keyframes_cmd(ctx, input_path, output_path):
    """Emit {id, indices} JSONL for each trajectory in the input file."""
    cfg = ctx.obj["cfg"]
    kf_cfg = KeyframeConfig(cfg.delta_v, cfg.k, cfg.K, cfg.delta_e, cfg.beta)
    trajectories = load_dataset(input_path)
    with open(output_path, "w", encoding="utf-8", newline="\n") as f:
        for traj in trajectories:
            keys = extract_keyframes(traj, kf_cfg)
            f.write(json.dumps({"id": traj.id, "indices": list(keys.indices)}) + "\n")
    click.echo(f"wrote {len(trajectories)} keyframe records to {output_path}")


@main.command("fuse")
@click.option("--input", "input_path", type=click.Path(exists=True), required=True,
              help="JSONL of per-pair modality results: "
                   "{pair_id, vlm_label, c_vlm, llm_label, c_llm, vd, td}.")
@click.option("--output", "output_path", type=click.Path(), required=True)
@click.pass_context
def fuse_cmd(ctx, input_path, output_path):
    """Run inter-modal fusion over pre-computed modality results."""
    cfg = ctx.obj["cfg"]
    templates = default_templates(cfg.w_agree, cfg.w_vlm, cfg.w_llm,
                                  cfg.w_indecision, cfg.p)
    n = 0
    with open(input_path, encoding="utf-8") as fin, \
            open(output_path, "w", encoding="utf-8", newline="\n") as fout:
        for line in fin:
            if not line.strip():
                continue
            rec = json.loads(line)
            vlm = ModalResult(rec["vlm_label"], rec["c_vlm"], "VLM", ())
            llm = ModalResult(rec["llm_label"], rec["c_llm"], "LLM", ())
            ctx_scores = DiscriminabilityScores(rec["vd"], rec["td"])
            fused = fuse_inter(vlm, llm, ctx_scores, templates)
            fout.write(json.dumps({
                "pair_id": rec["pair_id"], "label": fused.label,
                "soft_scores": {str(k): v for k, v in fused.soft_scores.items()},
                "vd": rec["vd"], "td": rec["td"],
                "c_vlm": rec["c_vlm"], "c_llm": rec["c_llm"],
            }) + "\n")
            n += 1
    click.echo(f"fused {n} pairs to {output_path}")


@main.command("synthesize")
@click.option("--mode", type=click.Choice(["foresight", "hindsight"]), required=True)
@click.option("--env", "env_name", type=click.Choice(sorted(ENVS)), default="reach")
@click.option("--n", type=int, default=None, help="Trajectory count (foresight mode).")
@click.option("--input", "input_path", type=click.Path(exists=True), default=None,
              help="Preferred trajectories JSONL (hindsight mode).")
@click.option("--output", "output_path", type=click.Path(), required=True)
@click.pass_context
def synthesize_cmd(ctx, mode, env_name, n, input_path, output_path):
    """Generate foresight trajectories or hindsight counterfactuals."""
    cfg = ctx.obj["cfg"]
    env = ENVS[env_name]()
    if mode == "foresight":
        generator = make_reach_generator(env, T=cfg.segment_length)
        trajs, failures = foresight_generate(generator, n or cfg.n_foresight, cfg.seed)
        save_dataset(trajs, output_path)
        click.echo(f"wrote {len(trajs)} trajectories ({failures} failures)")
        return
    if input_path is None:
        raise click.UsageError("hindsight mode requires --input")
    from .evaluators import scripted_teacher

    def fuser(pair):
        return scripted_teacher(pair, env.reward).label

    kf_cfg = KeyframeConfig(cfg.delta_v, cfg.k, cfg.K, cfg.delta_e, cfg.beta)
    trajectories = load_dataset(input_path)
    edited, sidecar = [], []
    for traj in trajectories:
        keys = extract_keyframes(traj, kf_cfg)
        for sample in augment(traj, env, fuser, keys, max_cf=cfg.max_cf,
                              threshold=cfg.l1_threshold, seed=cfg.seed):
            edited.append(sample.edited)
            sidecar.append({
                "original_id": sample.original.id, "cf_id": sample.edited.id,
                "mask": sample.mask.tolist(),
                "intervention": {
                    "kind": sample.intervention.kind,
                    "t_star": sample.intervention.t_star,
                    "magnitude": sample.intervention.magnitude,
                },
            })
    save_dataset(edited, output_path)
    with open(str(output_path) + ".meta.jsonl", "w", encoding="utf-8", newline="\n") as f:
        for rec in sidecar:
            f.write(json.dumps(rec) + "\n")
    click.echo(f"wrote {len(edited)} counterfactuals")


@main.command("train-reward")
@click.option("--pairs", "pairs_path", type=click.Path(exists=True), required=True,
              help="JSONL of {a: trajectory record, b: trajectory record, label}.")
@click.option("--output", "output_path", type=click.Path(), required=True)
@click.pass_context
def train_reward_cmd(ctx, pairs_path, output_path):
    """Train the reward ensemble from labeled pairs; saves a checkpoint."""
    from .trajectory import _record_to_trajectory

    cfg = ctx.obj["cfg"]
    records = []
    with open(pairs_path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            records.append(PreferenceRecord(
                TrajectoryPair(_record_to_trajectory(rec["a"], lineno),
                               _record_to_trajectory(rec["b"], lineno)),
                rec["label"],
            ))
    ensemble = RewardEnsemble(
        learning_rate=cfg.learning_rate, batch_size=cfg.batch_size,
        epochs=cfg.epochs, lambda_cf=cfg.lambda_cf,
        ensemble_size=cfg.ensemble_size, hidden=cfg.hidden, seed=cfg.seed,
    ).fit(records)
    ensemble.save(output_path)
    click.echo(f"trained on {len(records)} records; checkpoint at {output_path}")


@main.command("run")
@click.pass_context
def run_cmd(ctx):
    """Run the full offline experiment and print the report."""
    cfg = ctx.obj["cfg"]
    report = run_pipeline(cfg, out_dir=ctx.obj["out"])
    dist = report.label_distribution
    click.echo(f"stages: {', '.join(report.stages)}")
    click.echo(f"labels: correct={dist['correct']:.3f} "
               f"incorrect={dist['incorrect']:.3f} indecision={dist['indecision']:.3f}")
    click.echo(f"per-step Spearman vs ground truth: {report.spearman:.3f}")


@main.command("report")
@click.option("--metrics", "metrics_path", type=click.Path(exists=True), required=True)
@click.pass_context
def report_cmd(ctx, metrics_path):
    """Summarize a metrics CSV and emit the derived CSV files."""
    click.echo(report_from_metrics(metrics_path, ctx.obj["out"]))


if __name__ == "__main__":
    main()

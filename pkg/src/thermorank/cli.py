"""Command-line entry point.

Exit codes: 0 on success, 2 for bad input (missing files, malformed or
schema-invalid documents, bad options), 3 when processing fails.  Failures
print a one-line JSON object ``{"error": kind, "message": text}`` on stderr.
"""

from __future__ import annotations

import json
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import click

from . import artifacts
from .errors import ConfigError, DomainError, InputError, ThermorankError
from .ingest import encode_gray_image, extract_relations, load_dataset
from .radiance import SceneSpec, coco_document, render_scene
from .rankcore import RelationPair, spearman
from .stability import empirical_stability, image_stability
from .theorem import DetectorQuality, TheoremModel, verify_theorem1
from .trainer import SurrogateDetector, TrainConfig, run_training
from .weights import WeightConfig, weight_record

EXIT_INPUT = 2
EXIT_PROCESSING = 3

log = logging.getLogger("thermorank")


@dataclass
class RunConfig:
    seed: int = 0
    threads: int = 1
    out: str | None = None
    verbosity: int = 0
    weights: dict = field(default_factory=dict)
    seed_given: bool = False

    def weight_config(self, **overrides) -> WeightConfig:
        merged = {**self.weights, **{k: v for k, v in overrides.items() if v is not None}}
        return WeightConfig(**merged)


def _fail(ctx: click.Context, kind: str, message: str, code: int) -> None:
    click.echo(json.dumps({"error": kind, "message": message}, sort_keys=True), err=True)
    ctx.exit(code)


class _Group(click.Group):
    def invoke(self, ctx: click.Context):
        try:
            return super().invoke(ctx)
        except ThermorankError as exc:
            code = EXIT_INPUT if isinstance(exc, InputError) else EXIT_PROCESSING
            _fail(ctx, exc.kind, str(exc), code)
        except click.UsageError as exc:
            _fail(ctx, "usage_error", exc.format_message(), EXIT_INPUT)
        except OSError as exc:
            _fail(ctx, "io_error", str(exc), EXIT_INPUT)


def _out_path(ctx: click.Context, out: str | None) -> Path:
    cfg: RunConfig = ctx.obj
    chosen = out or cfg.out
    if not chosen:
        raise ConfigError("no output path: pass --out")
    return Path(chosen)


@click.group(cls=_Group)
@click.option("--seed", type=int, default=None, help="Seed for every random stream (default 0).")
@click.option("--threads", type=click.IntRange(min=1), default=None, help="Worker cap.")
@click.option("--config", "config_path", type=click.Path(), default=None, help="Run config JSON.")
@click.option("--out", default=None, help="Output path (subcommands accept --out too).")
@click.option("-v", "--verbose", count=True, help="More logging on stderr.")
@click.pass_context
def cli(ctx, seed, threads, config_path, out, verbose):
    """Gray-value rank relations for infrared detection training."""
    cfg = RunConfig()
    if config_path is not None:
        doc = artifacts.read_artifact(config_path, "run_config")
        cfg = RunConfig(
            seed=doc.get("seed", 0),
            threads=doc.get("threads", 1),
            out=doc.get("out"),
            verbosity=doc.get("verbosity", 0),
            weights=dict(doc.get("weights", {})),
            seed_given="seed" in doc,
        )
    cfg = replace(
        cfg,
        seed=cfg.seed if seed is None else seed,
        threads=cfg.threads if threads is None else threads,
        out=out or cfg.out,
        verbosity=max(cfg.verbosity, verbose),
        seed_given=cfg.seed_given or seed is not None,
    )
    level = {0: logging.WARNING, 1: logging.INFO}.get(cfg.verbosity, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    ctx.obj = cfg


@cli.command()
@click.argument("annotations", type=click.Path())
@click.argument("images", type=click.Path())
@click.option("--out", default=None, help="Extraction JSON to write.")
@click.pass_context
def extract(ctx, annotations, images, out):
    """Per-image class and background mean grays from a COCO-style dataset."""
    target = _out_path(ctx, out)
    dataset = load_dataset(annotations, images)
    relations = extract_relations(dataset, ctx.obj.threads)
    artifacts.write_artifact(
        target,
        "extraction",
        {
            "relations": [artifacts.relation_to_dict(r) for r in relations],
            "class_names": {str(k): v for k, v in dataset.class_names.items()},
            "warnings": list(dataset.warnings),
        },
    )
    log.info("wrote %d relations to %s", len(relations), target)


@cli.command()
@click.argument("extraction", type=click.Path())
@click.option("--out", default=None, help="Stability JSON to write.")
@click.pass_context
def stability(ctx, extraction, out):
    """Pairwise relation stability over all images of an extraction."""
    target = _out_path(ctx, out)
    relations = artifacts.relations_from_extraction(artifacts.read_artifact(extraction, "extraction"))
    matrix = empirical_stability(relations, ctx.obj.threads)
    artifacts.write_artifact(target, "stability", matrix.to_dict())
    log.info("wrote %d pair entries to %s", len(matrix.entries()), target)


@cli.command()
@click.argument("extraction", type=click.Path())
@click.argument("predictions", type=click.Path())
@click.argument("stability_path", metavar="STABILITY", type=click.Path())
@click.option("--beta", type=float, default=None)
@click.option("--upsilon", type=float, default=None)
@click.option("--eta", type=float, default=None, help="Stability-weight slope (not a learning rate).")
@click.option("--gamma", type=float, default=None)
@click.option("--out", default=None, help="Weight records JSON to write.")
@click.pass_context
def weights(ctx, extraction, predictions, stability_path, beta, upsilon, eta, gamma, out):
    """Per-image weights from annotated vs predicted relations."""
    target = _out_path(ctx, out)
    cfg = ctx.obj.weight_config(beta=beta, upsilon=upsilon, eta=eta, gamma=gamma)
    reference = artifacts.relations_from_extraction(artifacts.read_artifact(extraction, "extraction"))
    predicted = {
        r.image_id: r
        for r in artifacts.relations_from_extraction(artifacts.read_artifact(predictions, "extraction"))
    }
    matrix = artifacts.stability_from_doc(artifacts.read_artifact(stability_path, "stability"))
    records = []
    for ref in reference:
        if ref.image_id not in predicted:
            raise DomainError(f"no predicted relation for image {ref.image_id}")
        rho = spearman(RelationPair(ref, predicted[ref.image_id]))
        s_x = image_stability(matrix, ref.class_ids)
        records.append(weight_record(ref.image_id, rho, s_x, cfg).to_dict())
    artifacts.write_artifact(target, "weights", {"config": cfg.to_dict(), "records": records})


@cli.command()
@click.argument("scenespec", type=click.Path())
@click.option("--out", default=None, help="Directory for images/ and annotations.json.")
@click.pass_context
def render(ctx, scenespec, out):
    """Render synthetic gray-body scenes with their COCO annotations."""
    target = _out_path(ctx, out)
    doc = artifacts.read_artifact(scenespec, "scene_spec")
    rendered, temperatures = [], {}
    for index, scene in enumerate(doc["scenes"]):
        image_id = int(scene.get("image_id", index + 1))
        file_name = scene.get("file_name", f"scene_{image_id:04d}.png")
        scene = {**scene, "rng_seed": scene.get("rng_seed", ctx.obj.seed + index)}
        try:
            spec = SceneSpec.from_dict(scene)
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ThermorankError):
                raise
            raise ConfigError(f"scene {index}: {exc}") from exc
        image, boxes = render_scene(spec)
        artifacts.write_atomic(target / "images" / file_name, encode_gray_image(image, Path(file_name).suffix))
        rendered.append((image_id, file_name, image, boxes))
        temperatures[str(image_id)] = {
            "0": spec.background.temperature,
            **{str(c.class_id): c.params.temperature for c in spec.classes},
        }
    names = {int(k): v for k, v in doc.get("class_names", {}).items()}
    for _, _, _, boxes in rendered:
        for b in boxes:
            names.setdefault(b.class_id, f"class_{b.class_id}")
    artifacts.write_atomic(target / "annotations.json", artifacts.dumps(coco_document(rendered, names)))
    artifacts.write_artifact(
        target / "manifest.json",
        "render_manifest",
        {"annotations": "annotations.json", "images": "images", "temperatures": temperatures},
    )


def _table(results: list[dict]) -> str:
    head = f"{'pair':<16}{'E1[rho]':>12}{'E2[rho]':>12}{'E1[L_kn]':>12}{'E2[L_kn]':>12}  improved"
    lines = [head]
    for r in results:
        lines.append(
            f"{r['name']:<16}{r['e_rho_1']:>12.6f}{r['e_rho_2']:>12.6f}"
            f"{r['e_knowledge_loss_1']:>12.6f}{r['e_knowledge_loss_2']:>12.6f}  {r['improved']}"
        )
        for side in ("first", "second"):
            mc = r[side]
            if mc["mc_estimate"] is not None:
                gap = (mc["mc_estimate"] - mc["e_rho"]) / mc["mc_stderr"] if mc["mc_stderr"] else 0.0
                lines.append(
                    f"{'':<16}{side} MC {mc['mc_estimate']:.6f} +- {mc['mc_stderr']:.6f} ({gap:+.2f} se)"
                )
    return "\n".join(lines)


@cli.command("verify-theorem")
@click.argument("modelspec", type=click.Path())
@click.option("--factors", type=click.Choice(["chain", "marginal"]), default=None)
@click.option("--mc-samples", type=click.IntRange(min=0), default=None)
@click.option("--out", default=None, help="Report JSON to write.")
@click.pass_context
def verify_theorem(ctx, modelspec, factors, mc_samples, out):
    """Compare expected rank agreement of detector pairs."""
    target = _out_path(ctx, out)
    doc = artifacts.read_artifact(modelspec, "theorem_spec")
    factors = factors or doc.get("factors", "chain")
    mc_samples = doc.get("mc_samples", 0) if mc_samples is None else mc_samples
    results = []
    for index, pair in enumerate(doc["pairs"]):
        offsets = {int(o["class_id"]): (float(o["mu"]), float(o["sigma"])) for o in pair["offsets"]}
        m1 = TheoremModel(DetectorQuality(pair["quality_1"]), offsets)
        m2 = TheoremModel(DetectorQuality(pair["quality_2"]), offsets)
        cmp = verify_theorem1(m1, m2, factors, mc_samples, ctx.obj.seed)
        results.append({"name": pair.get("name", f"pair_{index}"), **cmp.to_dict()})
    artifacts.write_artifact(target, "theorem_report", {"factors": factors, "results": results})
    click.echo(_table(results))


@cli.command()
@click.argument("config", type=click.Path())
@click.option("--out", default=None, help="Report JSON to write; the CSV goes next to it.")
@click.pass_context
def train(ctx, config, out):
    """Train the surrogate detector from extraction and stability artifacts."""
    target = _out_path(ctx, out)
    doc = artifacts.read_artifact(config, "train_config")
    base = Path(config).parent
    relations = artifacts.relations_from_extraction(
        artifacts.read_artifact(base / doc["extraction"], "extraction")
    )
    matrix = None
    if "stability" in doc:
        matrix = artifacts.stability_from_doc(artifacts.read_artifact(base / doc["stability"], "stability"))
    settings = {k: v for k, v in doc.items() if k not in ("extraction", "stability", "kind")}
    settings.setdefault("weights", ctx.obj.weights)
    if ctx.obj.seed_given:
        settings["seed"] = ctx.obj.seed
    cfg = TrainConfig.from_dict(settings)
    detector = None
    if "init_logits" in doc:
        detector = SurrogateDetector.from_logits({int(k): v for k, v in doc["init_logits"].items()})
    report = run_training(relations, matrix, cfg, detector)
    artifacts.write_artifact(target, "train_report", report.to_dict())
    artifacts.write_atomic(target.with_suffix(".csv"), report.to_csv())
    final = report.final
    click.echo(
        f"{cfg.mode}: {cfg.epochs} epochs, final l_det {final.l_det:.6f}, l_knowledge {final.l_knowledge:.6f}"
    )


def main() -> None:
    cli(prog_name="thermorank")


if __name__ == "__main__":
    main()

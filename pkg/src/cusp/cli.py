"""Command line entry points: train, eval, edit, sweep, serve."""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .data import load_folder, make_toy_dataset, tensor_to_image
from .errors import CheckpointError, ContractError
from .masking import BlurParams, mask_to_png, resize_mask
from .model import forward_edit


def _fail(message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


def _load_records(dataset: str, resolution: int, classifier=None):
    """A dataset is either `toy:<n>:<seed>` or an image folder with labels.csv."""
    if dataset.startswith("toy:"):
        parts = dataset.split(":")
        if len(parts) != 3:
            raise ContractError(f"toy dataset spec must be toy:<n>:<seed>, got {dataset!r}")
        return make_toy_dataset(int(parts[1]), seed=int(parts[2]), resolution=resolution)
    folder = Path(dataset)
    if not folder.is_dir():
        raise ContractError(f"dataset folder {dataset!r} does not exist")
    labels = folder / "labels.csv"
    return list(
        load_folder(
            folder,
            labels_file=labels if labels.exists() else None,
            resolution=resolution,
            classifier=classifier,
        )
    )


def _load_editor_bundle(ckpt: str, estimator_path: str | None):
    from .evaluation import LocalAttributeClient
    from .training import load_classifier, load_editor

    model, cfg, step = load_editor(ckpt)
    est = Path(estimator_path) if estimator_path else Path(ckpt).parent / "estimator.ckpt"
    if not est.exists():
        raise ContractError(
            f"independent estimator checkpoint not found at {est}; pass --estimator"
        )
    estimator = load_classifier(est, "estimator")
    return model, cfg, step, estimator, LocalAttributeClient(estimator)


@click.group()
def main():
    """Face age editing with adjustable structure preservation."""


@main.command()
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--quiet", is_flag=True, help="Suppress per-step loss lines.")
def train(config_path, quiet):
    """Run the full training pipeline described by a key=value config file."""
    from .figures import plot_loss_curves
    from .training import parse_config, run_training, write_config

    try:
        cfg = parse_config(config_path)
        echo = None if quiet else lambda rec: click.echo(
            " ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}"
                     for k, v in rec.items())
        )
        artifacts = run_training(cfg, log_fn=echo)
        out = Path(cfg.out_dir)
        write_config(cfg, out / "config.cfg")
        fig = plot_loss_curves(artifacts["loss_log"], out / "loss_curves.png")
        click.echo(f"checkpoint: {artifacts['checkpoint']}")
        click.echo(f"loss log:   {artifacts['loss_log']}")
        click.echo(f"figure:     {fig}")
    except (ContractError, CheckpointError, OSError) as e:
        _fail(str(e))


@main.command("eval")
@click.argument("ckpt", type=click.Path(exists=True, dir_okay=False))
@click.argument("dataset")
@click.option("--out", "out_dir", default="eval_out", show_default=True)
@click.option("--estimator", "estimator_path", default=None,
              help="Independent age estimator checkpoint (defaults to one beside CKPT).")
@click.option("--seed", default=0, show_default=True)
def cmd_eval(ckpt, dataset, out_dir, estimator_path, seed):
    """Reconstruction and per-group translation metrics on a dataset."""
    from .evaluation import evaluate_model, write_eval_report
    from .figures import plot_group_metrics

    try:
        model, cfg, step, estimator, client = _load_editor_bundle(ckpt, estimator_path)
        records = _load_records(dataset, cfg.resolution, classifier=model.classifier)
        report = evaluate_model(model, records, client, estimator=estimator, seed=seed)
        paths = write_eval_report(report, out_dir)
        fig = plot_group_metrics(report, Path(out_dir) / "group_metrics.png")
        click.echo(f"step {step}: recon_l1={report.recon_l1:.4f} "
                   f"recon_perceptual={report.recon_perceptual:.4f}")
        for g in report.groups:
            click.echo(f"  {g.group}: age_mae={g.age_mae:.2f} kid={g.kid:.4g} n={g.n_real}")
        click.echo(f"wrote {paths['csv']}, {paths['json']}, {fig}")
    except (ContractError, CheckpointError, OSError) as e:
        _fail(str(e))


@main.command()
@click.argument("ckpt", type=click.Path(exists=True, dir_okay=False))
@click.argument("image", type=click.Path(exists=True, dir_okay=False))
@click.option("--age", required=True, type=int, help="Target age in years.")
@click.option("--sigma-m", default=0.0, show_default=True)
@click.option("--sigma-g", default=0.0, show_default=True)
@click.option("--out", "out_path", default="edited.png", show_default=True)
@click.option("--mask", "mask_path", default=None, help="Also write the mask PNG here.")
@click.option("--seed", default=0, show_default=True)
def edit(ckpt, image, age, sigma_m, sigma_g, out_path, mask_path, seed):
    """Edit one image toward a target age."""
    from PIL import Image, UnidentifiedImageError

    from .data import image_to_tensor
    from .training import load_editor

    try:
        model, cfg, _ = load_editor(ckpt)
        try:
            pil = Image.open(image)
            pil.load()
        except (UnidentifiedImageError, OSError) as e:
            raise ContractError(f"cannot read image {image!r}: {e}")
        x = image_to_tensor(pil, cfg.resolution).unsqueeze(0)
        img, mask = forward_edit(
            model, x, [age], BlurParams(sigma_m, sigma_g), noise_seed=seed
        )
        tensor_to_image(img[0]).save(out_path)
        click.echo(f"wrote {out_path}")
        if mask_path is not None:
            m = resize_mask(mask.values, cfg.resolution, cfg.resolution)
            mask_to_png(m[0], mask_path)
            click.echo(f"wrote {mask_path}")
    except (ContractError, CheckpointError, OSError) as e:
        _fail(str(e))


@main.command()
@click.argument("ckpt", type=click.Path(exists=True, dir_okay=False))
@click.argument("dataset")
@click.option("--grid", default="0,4.5,9", show_default=True,
              help="Comma-separated sigma values; the sweep covers their cross product.")
@click.option("--out", "out_dir", default="sweep_out", show_default=True)
@click.option("--estimator", "estimator_path", default=None)
@click.option("--seed", default=0, show_default=True)
def sweep(ckpt, dataset, grid, out_dir, estimator_path, seed):
    """Blur-strength sweep over a (sigma_m, sigma_g) grid."""
    from .evaluation import sweep_sigma, write_sweep_csv
    from .figures import plot_sweep

    try:
        model, cfg, _, _, client = _load_editor_bundle(ckpt, estimator_path)
        try:
            vals = [float(v) for v in grid.split(",") if v.strip() != ""]
        except ValueError:
            raise ContractError(f"bad --grid value {grid!r}")
        if not vals:
            raise ContractError("--grid must list at least one sigma value")
        records = _load_records(dataset, cfg.resolution, classifier=model.classifier)
        pairs = [BlurParams(m, g) for m in vals for g in vals]
        rows = sweep_sigma(model, records, pairs, client, seed=seed)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = write_sweep_csv(rows, out / "sweep.csv")
        fig = plot_sweep(rows, out / "sweep.png")
        for r in rows:
            click.echo(f"sigma=({r.sigma_m:g},{r.sigma_g:g}) "
                       f"age_mae={r.age_mae:.2f} recon={r.recon:.4f}")
        click.echo(f"wrote {csv_path}, {fig}")
    except (ContractError, CheckpointError, OSError) as e:
        _fail(str(e))


@main.command()
@click.argument("ckpt", required=False, type=click.Path(dir_okay=False))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
@click.option("--timeout", "timeout_s", default=60.0, show_default=True,
              help="Per-request timeout in seconds before the service answers 503.")
@click.option("--ui", "ui_dir", default=None, type=click.Path(file_okay=False, exists=True),
              help="Also serve a built browser UI directory at /.")
def serve(ckpt, host, port, timeout_s, ui_dir):
    """Serve the HTTP editing API from a checkpoint (or $CUSP_CKPT)."""
    from .server import serve as run_server

    try:
        run_server(ckpt, host=host, port=port, timeout_s=timeout_s, static_dir=ui_dir)
    except (ContractError, CheckpointError, OSError) as e:
        _fail(str(e))


@main.command("export-schemas")
@click.option("--out", "out_dir", default="docs", show_default=True)
def export_schemas_cmd(out_dir):
    """Regenerate the HTTP wire-contract JSON schema files."""
    from .server import export_schemas

    for p in export_schemas(out_dir):
        click.echo(f"wrote {p}")


if __name__ == "__main__":
    main()

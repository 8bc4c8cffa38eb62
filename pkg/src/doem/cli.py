"""Command-line surface.

Every command writes a ``resolved_config.json`` into its output
directory; replaying that config with the same seed reproduces all
primary outputs byte-identically (timing diagnostics live in separate
sidecar files for exactly this reason).

Exit codes: 0 success, 2 validation/usage, 3 I/O, 4 numeric failure.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__, data as dataio, exact, qidbm as qidbm_mod, rng as rngmod
from .engine import DoemConfig, run_doem
from .errors import NumericError, ValidationError
from .models import QbmSpec, cqlvm_blocks, random_qbm_spec
from .qidbm import CdConfig, init_params, load_checkpoint, save_checkpoint

EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

OUTPUT_ROOT_ENV = "DOEM_OUTPUT_ROOT"


def _out_dir(out: str | None, default_name: str) -> Path:
    if out is None:
        root = os.environ.get(OUTPUT_ROOT_ENV, ".")
        out = str(Path(root) / default_name)
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_resolved_config(out: Path, command: str, params: dict) -> None:
    doc = {"command": command, "version": __version__, "config": params}
    (out / "resolved_config.json").write_text(json.dumps(doc, indent=1, sort_keys=True))


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guarded(fn):
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ValidationError as exc:
            _fail(EXIT_VALIDATION, str(exc))
        except (OSError, FileNotFoundError) as exc:
            _fail(EXIT_IO, str(exc))
        except NumericError as exc:
            _fail(EXIT_NUMERIC, str(exc))

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@click.group()
@click.version_option(version=__version__)
def main():
    """Train and evaluate density-operator latent variable models."""


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------


@main.group("gen-data")
def gen_data():
    """Generate or ingest binary datasets."""


@gen_data.command("bernoulli")
@click.option("--n", "n_bits", type=int, default=8, show_default=True, help="Bits per sample.")
@click.option("--modes", type=int, default=8, show_default=True)
@click.option("--p", type=float, default=0.9, show_default=True, help="Per-bit success probability.")
@click.option("--samples", type=int, default=1000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), default=None, help="Output directory.")
@_guarded
def gen_bernoulli(n_bits, modes, p, samples, seed, out):
    """Mixture-of-Bernoulli dataset plus its exact probability table."""
    out_dir = _out_dir(out, "bernoulli-data")
    spec = dataio.BernoulliMixtureSpec(n_bits, modes, p, samples, seed)
    dataset, table = dataio.gen_bernoulli_mixture(spec)
    dataio.save_dataset(out_dir / "dataset.bin", dataset)
    (out_dir / "exact_table.csv").write_text(dataio.table_to_csv(table))
    _write_resolved_config(
        out_dir,
        "gen-data bernoulli",
        {"n": n_bits, "modes": modes, "p": p, "samples": samples, "seed": seed},
    )
    click.echo(f"wrote {samples} samples over {n_bits} bits to {out_dir}")


@gen_data.command("mnist")
@click.option("--input", "input_path", type=click.Path(), required=True, help="IDX image file (raw or gzip).")
@click.option("--bits", type=click.Choice(["1", "8"]), default="1", show_default=True)
@click.option("--threshold", type=int, default=128, show_default=True, help="1-bit binarization threshold.")
@click.option("--downscale", "factor", type=float, default=1, show_default=True, help="Block-average factor (3.5 gives 8x8).")
@click.option("--sha256", "expected_sha", type=str, default=None, help="Expected input hash from a pinned manifest.")
@click.option("--out", type=click.Path(), default=None)
@_guarded
def gen_mnist(input_path, bits, threshold, factor, expected_sha, out):
    """Binarize or bit-plane-encode an IDX image file."""
    out_dir = _out_dir(out, "mnist-data")
    actual_sha = dataio.sha256_file(input_path)
    if expected_sha is not None and actual_sha != expected_sha.lower():
        raise ValidationError(
            f"input hash mismatch for {input_path}: expected {expected_sha}, got {actual_sha}"
        )
    images = dataio.read_idx(input_path)
    if images.ndim != 3:
        raise ValidationError(f"{input_path} holds labels, not images")
    if factor != 1:
        images = dataio.downscale(images, factor if factor != int(factor) else int(factor))
    provenance = {
        "source": str(input_path),
        "source_sha256": actual_sha,
        "downscale": factor,
        "image_shape": list(images.shape[1:]),
    }
    if bits == "1":
        dataset = dataio.binarize_1bit(images, threshold, provenance)
    else:
        dataset = dataio.encode_8bit_planes(images, provenance)
    dataio.save_dataset(out_dir / "dataset.bin", dataset)
    _write_resolved_config(
        out_dir,
        "gen-data mnist",
        {
            "input": str(input_path),
            "bits": int(bits),
            "threshold": threshold,
            "downscale": factor,
            "sha256": expected_sha,
        },
    )
    click.echo(f"wrote {dataset.n_rows} rows of {dataset.d_v} units to {out_dir}")


def _load_dataset_arg(path_str: str) -> dataio.BinaryDataset:
    path = Path(path_str)
    if path.is_dir():
        path = path / "dataset.bin"
    return dataio.load_dataset(path)


# ---------------------------------------------------------------------------
# train-doem
# ---------------------------------------------------------------------------


@main.command("train-doem")
@click.option("--data", "data_path", type=click.Path(), required=True)
@click.option("--model", "model_path", type=click.Path(), default=None, help="Model spec JSON; overrides the size flags.")
@click.option("--visible", type=int, default=None)
@click.option("--hidden", type=int, default=None)
@click.option("--gamma", type=float, default=None, help="Initial transverse bias on every hidden unit (default: random).")
@click.option("--init-scale", type=float, default=0.1, show_default=True)
@click.option("--iters", type=int, default=200, show_default=True)
@click.option("--inner", type=int, default=5, show_default=True, help="Ascent steps per M-step.")
@click.option("--lr", type=float, default=0.2, show_default=True)
@click.option("--grad-tol", type=float, default=1e-6, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--checkpoint-every", type=int, default=0, show_default=True)
@click.option("--threads", type=int, default=1, show_default=True)
@click.option("--out", type=click.Path(), default=None)
@_guarded
def train_doem(
    data_path, model_path, visible, hidden, gamma, init_scale, iters, inner, lr,
    grad_tol, seed, checkpoint_every, threads, out,
):
    """Exact EM training of a transverse-field machine with a classical
    visible distribution."""
    out_dir = _out_dir(out, "doem-run")
    dataset = _load_dataset_arg(data_path)
    if model_path is not None:
        spec = QbmSpec.from_json(Path(model_path).read_text())
    else:
        if visible is None or hidden is None:
            raise ValidationError("provide either --model or both --visible and --hidden")
        if visible != dataset.d_v:
            raise ValidationError(
                f"--visible {visible} does not match dataset width {dataset.d_v}"
            )
        rng = np.random.default_rng(seed)
        spec = random_qbm_spec(visible, hidden, rng, scale=init_scale)
        if gamma is not None:
            g = np.zeros(visible + hidden)
            g[visible:] = gamma
            spec = QbmSpec(visible, hidden, spec.b, spec.w, g, seed=seed)
        else:
            spec = QbmSpec(visible, hidden, spec.b, spec.w, spec.gamma, seed=seed)
    cqlvm_blocks(spec)  # early refusal when visible quantum terms are present
    config = DoemConfig(
        max_outer_iters=iters,
        m_step_inner_iters=inner,
        learning_rate=lr,
        grad_tol=grad_tol,
        seed=seed,
        checkpoint_every=checkpoint_every,
        threads=threads,
    )
    result = run_doem(
        dataset.bits(), spec, config, method="blocks",
        checkpoint_dir=out_dir / "checkpoints" if checkpoint_every else None,
    )
    (out_dir / "trace.csv").write_text(result.trace.to_csv())
    (out_dir / "timing.csv").write_text(result.trace.timing_csv())
    (out_dir / "model_final.json").write_text(result.spec.to_json())
    _write_resolved_config(
        out_dir,
        "train-doem",
        {
            "data": str(data_path), "model": model_path, "visible": spec.m,
            "hidden": spec.n, "gamma": gamma, "init_scale": init_scale,
            "iters": iters, "inner": inner, "lr": lr, "grad_tol": grad_tol,
            "seed": seed, "checkpoint_every": checkpoint_every, "threads": threads,
        },
    )
    final = result.trace.rows[-1]
    click.echo(
        f"finished ({result.trace.stop_reason}): loglik {final.loglik:.6f}, "
        f"rel entropy {final.rel_entropy:.6f} after {final.iter} iterations"
    )


# ---------------------------------------------------------------------------
# train-cd
# ---------------------------------------------------------------------------


@main.command("train-cd")
@click.option("--data", "data_path", type=click.Path(), required=True)
@click.option("--hidden", nargs=2, type=int, required=True, help="Units in the two hidden layers.")
@click.option("--model", "model_kind", type=click.Choice(["qidbm", "dbm"]), default="qidbm", show_default=True)
@click.option("--gamma", type=float, default=1.0, show_default=True, help="Transverse bias on the interleaved layer.")
@click.option("--k", type=int, default=1, show_default=True)
@click.option("--lr", type=float, default=0.001, show_default=True)
@click.option("--batch", type=int, default=600, show_default=True)
@click.option("--epochs", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--encoding", type=click.Choice([qidbm_mod.ZERO_ONE, qidbm_mod.PLUS_MINUS]), default=qidbm_mod.ZERO_ONE, show_default=True)
@click.option("--train-gamma", is_flag=True, default=False, help="Experimental transverse-bias updates.")
@click.option("--holdout", type=float, default=0.1, show_default=True)
@click.option("--out", type=click.Path(), default=None)
@_guarded
def train_cd(
    data_path, hidden, model_kind, gamma, k, lr, batch, epochs, seed, encoding,
    train_gamma, holdout, out,
):
    """Contrastive-divergence training of an interleaved (or classical)
    three-layer machine."""
    out_dir = _out_dir(out, "cd-run")
    dataset = _load_dataset_arg(data_path)
    m, n = hidden
    quantum = model_kind == "qidbm"
    params = init_params(dataset.d_v, m, n, seed=seed, gamma=gamma if quantum else 0.0)
    config = CdConfig(
        k=k, learning_rate=lr, batch_size=batch, epochs=epochs, seed=seed,
        encoding=encoding, train_gamma=train_gamma, holdout_fraction=holdout,
    )
    stats = qidbm_mod.train(dataset.bits(), params, config, quantum=quantum)
    manifest = {
        "seed": seed,
        "epoch": epochs,
        "config_hash": config.config_hash(),
        "model": model_kind,
        "image_shape": dataset.provenance.get("image_shape"),
        "pixel_encoding": dataset.provenance.get("pixel_encoding"),
    }
    save_checkpoint(out_dir / "model.qdbm", params, encoding, manifest)
    lines = ["epoch,recon_error,holdout_free_energy"]
    for s in stats:
        lines.append(f"{s.epoch},{s.recon_error!r},{s.holdout_free_energy!r}")
    (out_dir / "epoch_metrics.csv").write_text("\n".join(lines) + "\n")
    timing = ["epoch,seconds"] + [f"{s.epoch},{s.seconds!r}" for s in stats]
    (out_dir / "timing.csv").write_text("\n".join(timing) + "\n")
    _write_resolved_config(
        out_dir,
        "train-cd",
        {
            "data": str(data_path), "hidden": list(hidden), "model": model_kind,
            "gamma": gamma, "k": k, "lr": lr, "batch": batch, "epochs": epochs,
            "seed": seed, "encoding": encoding, "train_gamma": train_gamma,
            "holdout": holdout,
        },
    )
    click.echo(
        f"trained {model_kind} ({dataset.d_v}-{m}-{n}) for {epochs} epochs; "
        f"final reconstruction error {stats[-1].recon_error:.6f}"
    )


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


@main.command("eval")
@click.option("--model", "model_path", type=click.Path(), required=True, help="Model spec JSON or .qdbm checkpoint.")
@click.option("--data", "data_path", type=click.Path(), required=True)
@click.option("--table", "table_path", type=click.Path(), default=None, help="Exact distribution table CSV for divergence metrics.")
@click.option("--exact/--no-exact", "want_exact", default=True, show_default=True)
@click.option("--out", type=click.Path(), default=None)
@_guarded
def eval_command(model_path, data_path, table_path, want_exact, out):
    """Exact divergence/likelihood metrics for small models;
    reconstruction error and sample dumps for large ones."""
    from .engine import BlockDoem

    out_dir = _out_dir(out, "eval")
    dataset = _load_dataset_arg(data_path)
    report: dict = {"model": str(model_path), "data": str(data_path)}

    target_probs = None
    if table_path is not None:
        rowsv = [
            line.split(",") for line in Path(table_path).read_text().strip().splitlines()[1:]
        ]
        target_probs = np.zeros(2**dataset.d_v)
        for idx, prob in rowsv:
            target_probs[int(idx)] = float(prob)

    model_path = Path(model_path)
    if model_path.suffix == ".json":
        spec = QbmSpec.from_json(model_path.read_text())
        if spec.m != dataset.d_v:
            raise ValidationError(
                f"model has {spec.m} visible units, dataset has {dataset.d_v}"
            )
        if not want_exact:
            raise ValidationError("spec-model evaluation is exact; pass --exact")
        if spec.m > 20:
            raise ValidationError(
                f"exact metrics refused above 20 visible units (got {spec.m})"
            )
        engine = BlockDoem(cqlvm_blocks(spec))
        state = engine.state(spec.theta())
        emp = dataio.empirical_probs(dataset)
        report["nll"] = -engine.loglik(emp, state)
        report["kl_empirical"] = engine.rel_entropy(emp, state)
        if target_probs is not None:
            report["kl_exact_table"] = engine.rel_entropy(target_probs, state)
    else:
        params, encoding, manifest = load_checkpoint(model_path)
        if params.l != dataset.d_v:
            raise ValidationError(
                f"checkpoint has {params.l} visible units, dataset has {dataset.d_v}"
            )
        config = CdConfig(encoding=encoding)
        values = qidbm_mod.encode_rows(dataset.bits(), encoding)
        streams = rngmod.row_streams(0, 0, 0, min(values.shape[0], 256))
        _, diag = qidbm_mod.cd_step(
            values[: len(streams)], params, config, streams,
            quantum=manifest.get("model", "qidbm") == "qidbm",
        )
        report["recon_error"] = diag["recon_error"]
        if want_exact:
            if params.l + params.n > exact.MAX_ENUM_UNITS:
                raise ValidationError(
                    f"exact metrics refused above {exact.MAX_ENUM_UNITS} "
                    f"enumerable units (have {params.l + params.n}); rerun with --no-exact"
                )
            report["nll"] = exact.qidbm_exact_nll(params, dataset.bits(), encoding)
        else:
            samples = qidbm_mod.generate(params, 64, 200, seed=0, encoding=encoding)
            shape = manifest.get("image_shape")
            if shape and manifest.get("pixel_encoding") == "8bit-planes":
                imgs = dataio.decode_8bit_planes(samples, tuple(shape))
                dataio.write_pgm(out_dir / "samples.pgm", dataio.tile_images(imgs))
            elif shape:
                imgs = (samples.reshape(-1, *shape) * 255).astype(np.uint8)
                dataio.write_pgm(out_dir / "samples.pgm", dataio.tile_images(imgs))

    (out_dir / "metrics.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    _write_resolved_config(
        out_dir,
        "eval",
        {"model": str(model_path), "data": str(data_path), "table": table_path, "exact": want_exact},
    )
    click.echo(json.dumps(report, indent=1, sort_keys=True))


# ---------------------------------------------------------------------------
# sample
# ---------------------------------------------------------------------------


@main.command("sample")
@click.option("--model", "model_path", type=click.Path(), required=True, help=".qdbm checkpoint.")
@click.option("--n", "n_samples", type=int, default=64, show_default=True)
@click.option("--burn-in", type=int, default=1000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--grid-cols", type=int, default=8, show_default=True)
@click.option("--out", type=click.Path(), default=None)
@_guarded
def sample_command(model_path, n_samples, burn_in, seed, grid_cols, out):
    """Draw visible samples from a trained machine; image-shaped data
    additionally gets a PGM grid."""
    out_dir = _out_dir(out, "samples")
    params, encoding, manifest = load_checkpoint(model_path)
    quantum = manifest.get("model", "qidbm") == "qidbm"
    samples = qidbm_mod.generate(
        params, n_samples, burn_in, seed=seed, encoding=encoding, quantum=quantum
    )
    dataset = dataio.BinaryDataset(
        params.l, samples, dataio.ZERO_ONE,
        {"generator": "gibbs-chains", "seed": seed, "burn_in": burn_in, "model": str(model_path)},
    )
    dataio.save_dataset(out_dir / "samples.bin", dataset)
    shape = manifest.get("image_shape")
    if shape:
        shape = tuple(shape)
        if manifest.get("pixel_encoding") == "8bit-planes":
            imgs = dataio.decode_8bit_planes(samples, shape)
        else:
            imgs = (samples.reshape(-1, *shape) * 255).astype(np.uint8)
        dataio.write_pgm(out_dir / "samples.pgm", dataio.tile_images(imgs, columns=grid_cols))
    _write_resolved_config(
        out_dir,
        "sample",
        {"model": str(model_path), "n": n_samples, "burn_in": burn_in, "seed": seed, "grid_cols": grid_cols},
    )
    click.echo(f"wrote {n_samples} samples to {out_dir}")


if __name__ == "__main__":
    main()

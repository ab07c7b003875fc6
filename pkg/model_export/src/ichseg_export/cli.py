"""Command line entry points for checkpoint export."""

import sys

import click

from .export import ExportError, export_detector, export_segmenter


@click.group()
def main():
    """Export TorchScript checkpoints to interchange graphs + descriptors."""


@main.command()
@click.argument("checkpoint", type=click.Path())
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--input-size", nargs=2, type=int, default=(64, 64),
              show_default=True, help="Graph input height and width.")
def detector(checkpoint, out_dir, input_size):
    """Export a detector checkpoint with fixture parity verification."""
    try:
        desc = export_detector(checkpoint, out_dir, input_size=input_size)
    except ExportError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(f"wrote {desc}")


@main.command()
@click.argument("checkpoint", type=click.Path())
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--input-size", nargs=2, type=int, default=(64, 64),
              show_default=True, help="Graph input height and width.")
def segmenter(checkpoint, out_dir, input_size):
    """Export an encoder/decoder segmenter checkpoint with parity verification."""
    try:
        desc = export_segmenter(checkpoint, out_dir, input_size=input_size)
    except ExportError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(f"wrote {desc}")

import click
from rich.status import Status

from ..core.attacks import ATTACK_PARAMS, AttackSpec
from ..core.errors import InvalidArgumentError
from .utils import (
    CONTEXT_SETTINGS,
    config_options,
    display_df_as_table,
    get_handler_and_console,
    handle_errors,
)


def _parse_params(pairs):
    params = {}
    for pair in pairs:
        name, sep, raw = pair.partition('=')
        if not sep or not name:
            raise InvalidArgumentError(f"--param expects name=value, got {pair!r}")
        try:
            value = int(raw)
        except ValueError:
            try:
                value = float(raw)
            except ValueError as e:
                raise InvalidArgumentError(f"--param {name} needs a number, got {raw!r}") from e
        params[name.strip()] = value
    return params


@click.command('gen', context_settings=CONTEXT_SETTINGS)
@config_options
@click.option('--plain', is_flag=True, help="Generate without the watermark (reference messages are still recorded).")
@click.pass_context
@handle_errors
def gen_command(ctx, config_path, out_dir, seed, plain):
    """
    Generate watermarked images.

    Writes noise_XXXX.metr (the watermarked initial noise), image_XXXX.metr
    (the DDIM output) and manifest.json with the seed, key and message of
    every item.

    Example:
    `metr gen --config experiment.json --out runs/clean`
    """
    handler, console = get_handler_and_console(ctx, config_path, seed, out_dir)
    with Status("Sampling...", console=console, spinner="dots"):
        handler.generate(plain=plain)


@click.command('attack', context_settings=CONTEXT_SETTINGS)
@config_options
@click.option('--in', 'in_dir', required=True, type=click.Path(exists=False, file_okay=False),
              help="Directory written by `metr gen`.")
@click.option('--kind', type=click.Choice(sorted(ATTACK_PARAMS)), default=None,
              help="Apply one attack. Without it every attack in the config runs into its own subdirectory.")
@click.option('--param', 'params', multiple=True, help="Attack parameter as name=value (e.g. quality=25).")
@click.pass_context
@handle_errors
def attack_command(ctx, config_path, out_dir, seed, in_dir, kind, params):
    """
    Apply image-space attacks to generated images.

    Example:
    `metr attack --config experiment.json --in runs/clean --kind jpeg --param quality=25 --out runs/jpeg25`
    """
    handler, console = get_handler_and_console(ctx, config_path, seed, out_dir)
    with Status("Attacking...", console=console, spinner="dots"):
        if kind:
            handler.attack(in_dir, AttackSpec(kind, _parse_params(params)))
        else:
            if params:
                raise InvalidArgumentError("--param needs --kind")
            handler.attack_all(in_dir)


@click.command('detect', context_settings=CONTEXT_SETTINGS)
@config_options
@click.option('--in', 'in_dir', required=True, type=click.Path(exists=False, file_okay=False),
              help="Directory with images and a manifest.")
@click.option('--blind', is_flag=True,
              help="Test against the decoded message instead of the manifest's reference message.")
@click.pass_context
@handle_errors
def detect_command(ctx, config_path, out_dir, seed, in_dir, blind):
    """
    Detect the watermark and decode the message of every listed image.

    Example:
    `metr detect --config experiment.json --in runs/jpeg25 --out reports/jpeg25`
    """
    handler, console = get_handler_and_console(ctx, config_path, seed, out_dir)
    if blind:
        console.print("[yellow]Blind mode: p-values are taken against the decoded bits and run low.[/yellow]")
    with Status("Inverting and decoding...", console=console, spinner="dots"):
        _, summary = handler.detect(in_dir, blind=blind)
    display_df_as_table(console, summary, title="Detection")

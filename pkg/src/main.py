import importlib.metadata

import click
from rich.console import Console, Group
from rich.panel import Panel
from rich.table import Table as RichTable
from rich.text import Text

from config import config

from .commands import eval_commands, pipeline_commands
from .commands.utils import CONTEXT_SETTINGS, RichHelpFormatter, handle_errors
from .core.experiment import ExperimentConfig, load_config
from .core.experiment_handler import ExperimentHandler

# Initialize Rich Console
console = Console()

_BANNER_ART = """
███╗   ███╗███████╗████████╗██████╗
████╗ ████║██╔════╝╚══██╔══╝██╔══██╗
██╔████╔██║█████╗     ██║   ██████╔╝
██║╚██╔╝██║██╔══╝     ██║   ██╔══██╗
██║ ╚═╝ ██║███████╗   ██║   ██║  ██║
╚═╝     ╚═╝╚══════╝   ╚═╝   ╚═╝  ╚═╝
    """
_BANNER_COLOR = "dark_cyan"


def get_banner_art() -> Text:
    """Returns the styled ASCII banner art."""
    return Text(_BANNER_ART, style=f"bold {_BANNER_COLOR}")


def get_version() -> str:
    try:
        return importlib.metadata.version("metr")
    except importlib.metadata.PackageNotFoundError:
        return "0.1.0 (local)"


class RichContext(click.Context):
    formatter_class = RichHelpFormatter


@click.group(context_settings=CONTEXT_SETTINGS)
@click.version_option(None, "-v", "--version", message="%(prog)s CLI version %(version)s", package_name="metr")
@click.option('--threads', type=click.IntRange(min=1), default=None, envvar="METR_THREADS",
              help="Worker threads for trial loops (default: METR_THREADS or the CPU count).")
@click.pass_context
def cli(ctx, threads):
    """
    METR - message-carrying ring watermarks for diffusion sampling.

    Generate watermarked samples in a closed-form DDIM world, attack them,
    recover the initial noise by DDIM inversion, and decode the ring message
    with a non-central chi-squared presence test.
    """
    ctx.ensure_object(dict)
    ctx.obj = {'console': console, 'threads': threads or config.THREADS}


cli.context_class = RichContext


@cli.command('info', help="Shows the version and the active experiment settings.")
@click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None,
              help="Experiment JSON document (built-in defaults when omitted).")
@click.pass_context
@handle_errors
def show_cli_info(ctx, config_path):
    """Displays version and the resolved experiment settings."""
    experiment = load_config(config_path) if config_path else ExperimentConfig()
    handler = ExperimentHandler(experiment, rich_console=console, threads=ctx.obj.get('threads'))

    field_color = "bold deep_sky_blue4"
    value_color = "sea_green3"

    details = RichTable(box=None, show_header=False, padding=(0, 1, 0, 1), expand=False)
    details.add_column(style=field_color, justify="right", width=18)
    details.add_column(style=value_color, overflow="fold")
    details.add_row("Version:", get_version())
    details.add_row("Config:", config_path or "built-in defaults")
    for name, value in handler.describe().items():
        details.add_row(f"{name}:", str(value))

    console.print(Panel(
        Group(get_banner_art(), "\n", details),
        title="[bold white]METR CLI Information[/bold white]",
        border_style="dim deep_sky_blue1",
        padding=(1, 2),
        expand=False
    ))


cli.add_command(pipeline_commands.gen_command)
cli.add_command(pipeline_commands.attack_command)
cli.add_command(pipeline_commands.detect_command)
cli.add_command(eval_commands.eval_command)
cli.add_command(eval_commands.tune_command)
cli.add_command(eval_commands.metrpp_command)

for _command in cli.commands.values():
    _command.context_class = RichContext

if __name__ == '__main__':
    cli(prog_name="metr")

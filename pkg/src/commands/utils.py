import functools
import math

import click
from rich.console import Console
from rich.panel import Panel
from rich.table import Table
from rich.text import Text

from ..core.errors import MetrError
from ..core.experiment import load_config
from ..core.experiment_handler import ExperimentHandler

EXIT_IO = 3
EXIT_INTERNAL = 4


# Custom Rich Help Formatter
class RichHelpFormatter(click.HelpFormatter):
    def __init__(self, indent_increment=2, width=None, max_width=None):
        super().__init__(indent_increment, width, max_width if width is None else width)
        self.console = Console()

    def write_usage(self, prog, args, prefix="[bold #F4A261]Usage:[/bold #F4A261] "):
        self.console.print(Text.assemble(Text.from_markup(prefix), (f"{prog} {args}", "italic #E0E0E0")))
        self.write_full_line("")

    def write_heading(self, heading):
        self.console.print(f"\n[bold underline #E9C46A]{heading}[/bold underline #E9C46A]")

    def write_text(self, text):
        if text.startswith("METR"):
            self.console.print(Panel(Text(text, style="grey82"), border_style="#2A9D8F", padding=(0, 1), expand=False))
        else:
            self.console.print(Text(text, style="grey82"))
        self.write_full_line("")

    def write_dl(self, rows, col_max=30, col_spacing=2):
        table = Table(box=None, show_header=False, padding=0, expand=True)
        table.add_column(min_width=20, max_width=col_max, overflow="fold", style="bold #26A9D0")
        table.add_column(style="#D0D0D0")
        for cmd_opt, description in rows:
            table.add_row(cmd_opt, Text(description))
        self.console.print(table)
        self.write_full_line("")

    def write_full_line(self, text):
        self.write(f"{text}\n")


CONTEXT_SETTINGS = dict(help_option_names=['-h', '--help'])


def config_options(fn):
    """--config / --out / --seed, shared by every experiment command."""
    fn = click.option('--seed', type=click.IntRange(0, 2**64 - 1), default=None,
                      help="Override the seed from the config.")(fn)
    fn = click.option('--out', 'out_dir', type=click.Path(file_okay=False), default=None,
                      help="Output directory (defaults to output_dir from the config).")(fn)
    fn = click.option('--config', 'config_path', required=True, type=click.Path(dir_okay=False),
                      help="Experiment JSON document.")(fn)
    return fn


def get_handler_and_console(ctx, config_path, seed=None, out_dir=None):
    """Load the experiment document and build the handler for it."""
    obj = ctx.ensure_object(dict)
    console = obj.get('console') or Console()
    experiment = load_config(config_path).with_overrides(seed=seed, output_dir=out_dir)
    handler = ExperimentHandler(experiment, rich_console=console, threads=obj.get('threads'))
    return handler, console


def handle_errors(fn):
    """Print failures in red and exit with the code of the error class."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        ctx = click.get_current_context()
        console = (ctx.obj or {}).get('console') or Console()
        try:
            return fn(*args, **kwargs)
        except MetrError as e:
            console.print(f"[red]:x: {type(e).__name__}: {e}[/red]")
            ctx.exit(e.exit_code)
        except OSError as e:
            console.print(f"[red]:x: I/O error: {e}[/red]")
            ctx.exit(EXIT_IO)
        except click.exceptions.Exit:
            raise
        except click.ClickException:
            raise
        except Exception as e:  # noqa: BLE001
            console.print(f"[bold red]:x: Internal error: {type(e).__name__}: {e}[/bold red]")
            ctx.exit(EXIT_INTERNAL)
    return wrapper


def _format_cell(value) -> str:
    if isinstance(value, float):
        return "inf" if math.isinf(value) else ("-" if math.isnan(value) else f"{value:.4g}")
    if value is None:
        return "-"
    return str(value)


def display_df_as_table(console, df, title=""):
    if df is None:
        console.print("[yellow]No data to display.[/yellow]")
        return
    if df.empty:
        console.print(f"[yellow]{title if title else 'Result'} is empty.[/yellow]")
        return

    table = Table(title=title if title else None, show_header=True, header_style="bold magenta", show_lines=True)
    for col in df.columns:
        table.add_column(str(col))
    for _, row in df.iterrows():
        table.add_row(*(_format_cell(x) for x in row))
    console.print(table)

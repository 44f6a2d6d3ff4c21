import click
from rich.status import Status

from .utils import (
    CONTEXT_SETTINGS,
    config_options,
    display_df_as_table,
    get_handler_and_console,
    handle_errors,
)


@click.command('eval', context_settings=CONTEXT_SETTINGS)
@config_options
@click.pass_context
@handle_errors
def eval_command(ctx, config_path, out_dir, seed):
    """
    Run the attack x trials grid and write eval.csv with one row per attack.

    Columns: attack, auc, tpr@1%fpr, bit_acc, word_acc, mean_R_det,
    distortion. Per-trial p-values, decoded messages and ROC points go to
    eval.json.

    Example:
    `metr eval --config config/experiment.example.json --out reports/table`
    """
    handler, console = get_handler_and_console(ctx, config_path, seed, out_dir)
    with Status("Evaluating...", console=console, spinner="dots"):
        table, _ = handler.evaluate()
    display_df_as_table(console, table, title="Detection metrics")


@click.command('tune', context_settings=CONTEXT_SETTINGS)
@config_options
@click.pass_context
@handle_errors
def tune_command(ctx, config_path, out_dir, seed):
    """
    Search the message scaler S over the configured range.

    The smallest S passing the g-criterion and the quality budget is
    reported; the full per-S trace goes to tune.csv.
    """
    handler, console = get_handler_and_console(ctx, config_path, seed, out_dir)
    with Status("Searching scaler...", console=console, spinner="dots"):
        _, trace = handler.tune()
    display_df_as_table(console, trace, title="Scaler trace")


@click.command('metrpp', context_settings=CONTEXT_SETTINGS)
@config_options
@click.pass_context
@handle_errors
def metrpp_command(ctx, config_path, out_dir, seed):
    """
    Evaluate METR++ (ring message plus signature-carried group ID) per attack.
    """
    handler, console = get_handler_and_console(ctx, config_path, seed, out_dir)
    with Status("Running METR++ trials...", console=console, spinner="dots"):
        table = handler.evaluate_metrpp()
    display_df_as_table(console, table, title="METR++")

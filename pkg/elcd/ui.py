from contextlib import contextmanager
from typing import Callable, Dict, Iterator, List, Optional

from rich.console import Console
from rich.panel import Panel
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn, TimeElapsedColumn
from rich.table import Table

from .config import log_level
from .datasets import Dataset
from .rollout import CSV_HEADER, EvalSummary
from .verify import VerifyReport


def format_value(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    if isinstance(value, (list, tuple)):
        return "[" + ",".join(format_value(v) for v in value) + "]"
    return str(value)


class ConsoleUI:
    def __init__(self, console: Optional[Console] = None, level: Optional[str] = None):
        self.console = console or Console()
        self.level = level or log_level()

    @property
    def quiet(self) -> bool:
        return self.level == "quiet"

    def info(self, message: str):
        if not self.quiet:
            self.console.print(message)

    def debug(self, message: str):
        if self.level == "debug":
            self.console.print(message, style="dim")

    def success(self, message: str):
        if not self.quiet:
            self.console.print(f"[bold green]{message}[/bold green]")

    def display_config(self, command: str, settings: Dict, seed: Optional[int] = None):
        """The resolved-config line; enough to rerun the command."""
        parts = [f"{key}={format_value(value)}" for key, value in settings.items() if value is not None]
        if seed is not None:
            parts.append(f"seed={seed}")
        line = f"resolved: {command} " + " ".join(parts)
        self.console.print(line, markup=False, highlight=False, soft_wrap=True)
        if self.level == "debug":
            table = Table(show_header=False, box=None, padding=(0, 2))
            table.add_column("Setting", style="bold blue")
            table.add_column("Value")
            for key, value in settings.items():
                table.add_row(key, format_value(value))
            self.console.print(Panel(table, title=f"{command} configuration", border_style="blue", expand=False))

    def display_dataset(self, dataset: Dataset, path: str):
        if self.quiet:
            return
        lengths = [len(t) for t in dataset.trajectories]
        self.console.print(f"wrote {path}: {len(dataset)} trajectories, dimension {dataset.dimension}, "
                           f"{min(lengths)}-{max(lengths)} samples each")

    def display_presets(self, presets: List):
        table = Table(title="Experiment presets")
        table.add_column("Name", style="bold")
        table.add_column("Generator", style="cyan")
        table.add_column("Description", style="dim")
        for preset in presets:
            table.add_row(preset.name, preset.generator, preset.description)
        self.console.print(table)

    @contextmanager
    def training_progress(self, epochs: int) -> Iterator[Callable[[int, float], None]]:
        """Progress bar over epochs; yields the per-epoch callback."""
        if self.quiet or epochs == 0:
            yield lambda epoch, loss: None
            return
        with Progress(
            SpinnerColumn(),
            TextColumn("[progress.description]{task.description}"),
            BarColumn(),
            TextColumn("{task.completed}/{task.total}"),
            TimeElapsedColumn(),
            console=self.console,
            transient=self.level != "debug",
        ) as progress:
            task = progress.add_task(description="training", total=epochs)

            def on_epoch(epoch: int, loss: float):
                progress.update(task, advance=1, description=f"epoch {epoch + 1} loss {loss:.3e}")
                if self.level == "debug":
                    progress.console.print(f"epoch {epoch + 1}: loss {loss:.6e}", style="dim")

            yield on_epoch

    def display_training_result(self, history: List[float], steps: int, path: str):
        if self.quiet:
            return
        final = f"{history[-1]:.6e}" if history else "n/a"
        self.console.print(f"trained {len(history)} epochs ({steps} steps), final loss {final}; checkpoint {path}")

    def display_eval(self, summary: EvalSummary, model: str, dataset: str, per_item: Optional[List[float]] = None,
                     label: str = "demonstration"):
        if not self.quiet:
            table = Table(title=f"DTWD: {model} on {dataset}")
            table.add_column(label.capitalize(), justify="right", style="bold")
            table.add_column("DTWD", justify="right")
            for index, value in enumerate(per_item if per_item is not None else summary.values):
                table.add_row(str(index), f"{value:.6f}")
            self.console.print(table)
            self.console.print(f"{model} on {dataset}: {summary.mean:.2f} ± {summary.std:.2f}")
        self.console.print(CSV_HEADER, markup=False, highlight=False)
        self.console.print(summary.csv_row(model, dataset), markup=False, highlight=False)

    def display_verify(self, report: VerifyReport, space: str):
        table = Table(title=f"Contraction checks ({space} space)")
        table.add_column("Check", style="bold")
        table.add_column("Value", justify="right")
        table.add_column("Tolerance", justify="right")
        table.add_column("Result", justify="center")
        table.add_column("Detail", style="dim")
        for check in report.checks:
            verdict = "[green]pass[/green]" if check.passed else "[red]FAIL[/red]"
            table.add_row(check.name, f"{check.value:.3e}", f"{check.tolerance:.1e}", verdict, check.detail)
        self.console.print(table)
        if report.achieved_rate is not None and not self.quiet:
            self.console.print(f"achieved contraction rate: {report.achieved_rate:.6g}")
        if report.passed:
            self.success("all checks passed")
        else:
            self.console.print("[bold red]verification failed[/bold red]")

    def display_error(self, error: Exception):
        kind = type(error).__name__
        self.console.print(Panel(f"[red]{error}[/red]", title=kind, border_style="red"))

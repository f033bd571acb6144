import dataclasses
import logging

from django.core.exceptions import ImproperlyConfigured
from django.core.management.base import BaseCommand, CommandError

from fedsim import harness, partition, utils
from fedsim.errors import ConfigurationError, DivergenceError, SchemaError

EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_IO = 4


def _setup_logging():  # pragma: no cover
    utils.LOGGER.addHandler(logging.StreamHandler())
    if not utils.LOGGER.level:
        utils.LOGGER.setLevel(logging.INFO)


class SubCommands(BaseCommand):  # pragma: no cover
    """
    Subcommand class vendored in from
    https://github.com/andrewp-as-is/django-subcommands.py
    because of installation issues
    """

    argv = []
    subcommands = {}

    def add_arguments(self, parser):
        subparsers = parser.add_subparsers(dest="subcommand", title="subcommands", description="")
        subparsers.required = True

        for command_name, command_class in self.subcommands.items():
            command = command_class()

            subparser = subparsers.add_parser(command_name, help=command_class.help)
            command.add_arguments(subparser)
            prog_name = subcommand = ""
            if self.argv:
                prog_name = self.argv[0]
                subcommand = self.argv[1]

            command_parser = command.create_parser(prog_name, subcommand)
            subparser._actions = command_parser._actions

    def run_from_argv(self, argv):
        self.argv = argv
        return super().run_from_argv(argv)

    def handle(self, *args, **options):
        command_name = options["subcommand"]
        command_class = self.subcommands[command_name]

        if self.argv:
            args = [self.argv[0]] + self.argv[2:]
            return command_class().run_from_argv(args)
        else:
            return command_class().execute(*args, **options)


def _add_experiment_arguments(parser):
    parser.add_argument("--config", help="Config JSON file, or a run manifest to replay")
    parser.add_argument("--data", help="CICIoT2023-style CSV file")
    parser.add_argument(
        "--synth", action="store_true", default=None, help="Use generated Gaussian blobs"
    )
    parser.add_argument("--granularity", help="binary, categories8 or attacks34")
    parser.add_argument("--strategy", help="fedavg, fedprox or scaffold")
    parser.add_argument("--mu", type=float, help="FedProx proximal coefficient")
    parser.add_argument("--rounds", type=int, help="Communication rounds")
    parser.add_argument("--epochs", type=int, help="Local epochs per round")
    parser.add_argument("--lr", type=float, dest="lr0", help="Initial learning rate")
    parser.add_argument("--batch-size", type=int, dest="batch_size")
    parser.add_argument("--partition", help="iid, noniid_category or label_shard")
    parser.add_argument("--clients", type=int, help="Number of clients")
    parser.add_argument("--shards-per-client", type=int, dest="shards_per_client")
    parser.add_argument("--seed", type=int, help="Master seed")
    parser.add_argument("--out", dest="output_dir", help="Output directory")


_OVERRIDES = (
    "data",
    "synth",
    "granularity",
    "strategy",
    "mu",
    "rounds",
    "epochs",
    "lr0",
    "batch_size",
    "partition",
    "clients",
    "shards_per_client",
    "seed",
    "output_dir",
)


def _experiment_config(options) -> harness.ExperimentConfig:
    config = (
        harness.load_config(options["config"])
        if options.get("config")
        else harness.ExperimentConfig()
    )
    config = config.with_overrides(**{key: options.get(key) for key in _OVERRIDES})
    # A data source given on the command line replaces the one in the config file
    if options.get("data") is not None and not options.get("synth"):
        config = dataclasses.replace(config, synth=None)
    elif options.get("synth") and options.get("data") is None:
        config = dataclasses.replace(config, data=None)

    return config.validate()


class BaseExperimentCommand(BaseCommand):
    """Maps library errors onto the command's exit codes"""

    def handle(self, *args, **options):
        _setup_logging()
        try:
            return self.handle_experiment(*args, **options)
        except (ConfigurationError, SchemaError, ImproperlyConfigured) as exc:
            raise CommandError(str(exc), returncode=EXIT_CONFIG) from exc
        except DivergenceError as exc:
            raise CommandError(str(exc), returncode=EXIT_DIVERGED) from exc
        except OSError as exc:
            raise CommandError(str(exc), returncode=EXIT_IO) from exc


class RunCommand(BaseExperimentCommand):
    help = "Run a federated experiment."

    def add_arguments(self, parser):
        _add_experiment_arguments(parser)

    def handle_experiment(self, *args, **options):
        metrics_path = harness.run_experiment(_experiment_config(options))
        self.stdout.write(metrics_path)


class BaselineCommand(BaseExperimentCommand):
    help = "Train the centralized baseline on the pooled training data."

    def add_arguments(self, parser):
        _add_experiment_arguments(parser)

    def handle_experiment(self, *args, **options):
        metrics_path = harness.run_centralized_baseline(_experiment_config(options))
        self.stdout.write(metrics_path)


class SweepCommand(BaseExperimentCommand):
    help = "Run a sweep file, or a FedProx mu sweep over a base config."

    def add_arguments(self, parser):
        parser.add_argument("sweep_file", nargs="?", help="Sweep JSON file")
        _add_experiment_arguments(parser)
        parser.add_argument(
            "--mus",
            type=float,
            nargs="+",
            help="Sweep FedProx over these mu values using the base config",
        )

    def handle_experiment(self, *args, **options):
        output_dir = options.get("output_dir")
        if options.get("sweep_file"):
            configs = harness.load_sweep(options["sweep_file"])
        else:
            base = _experiment_config({**options, "mu": None, "strategy": None})
            configs = harness.mu_sweep(base, options.get("mus") or harness.DEFAULT_MUS)
            output_dir = base.resolved_output_dir

        summary_path = harness.sweep(configs, output_dir)
        self.stdout.write(summary_path)


class PartitionCommand(BaseExperimentCommand):
    help = "Prepare and partition the data, then print rows per client and class."

    def add_arguments(self, parser):
        _add_experiment_arguments(parser)

    def handle_experiment(self, *args, **options):
        config = _experiment_config(options)
        clients, label_names = harness.prepare_partition(config)
        self.stdout.write(
            partition.summarize(clients, label_names).to_csv(index=False).rstrip("\n")
        )


class Command(SubCommands):
    help = "Federated learning simulator subcommands."

    subcommands = {
        "run": RunCommand,
        "baseline": BaselineCommand,
        "sweep": SweepCommand,
        "partition": PartitionCommand,
    }

import django.apps
from django.core.exceptions import ImproperlyConfigured

from fedsim import features


def check_settings():
    """
    Fail early on settings the simulator cannot run with
    """
    features.threads()

    if features.eval_batch_size() < 1:
        raise ImproperlyConfigured("FEDSIM_EVAL_BATCH_SIZE must be >= 1")

    if not features.label_column():
        raise ImproperlyConfigured("FEDSIM_LABEL_COLUMN must name a CSV column")


class FedsimConfig(django.apps.AppConfig):
    name = "fedsim"

    def ready(self):
        """
        Validate settings and register the built-in strategies
        """
        check_settings()

        import fedsim.fl  # noqa: F401

"""
Command-line entry point: ``panorama-iqa <command> [options]``.

The package runs as a settings-less Django app so its commands are found and
dispatched by Django's management utility.
"""

import sys
from typing import List, Optional

PROG_NAME = "panorama-iqa"

DJANGO_SETTINGS = {
    "INSTALLED_APPS": ["panorama_iqa"],
    "LOGGING_CONFIG": None,
    "USE_TZ": True,
}


def setup() -> None:
    """Configure Django for the panorama_iqa app; safe to call twice."""
    import django
    from django.conf import settings

    if not settings.configured:
        settings.configure(**DJANGO_SETTINGS)
    django.setup()


def main(argv: Optional[List[str]] = None) -> int:
    from django.core.management import ManagementUtility

    argv = list(sys.argv[1:] if argv is None else argv)
    setup()
    try:
        ManagementUtility([PROG_NAME, *argv]).execute()
    except SystemExit as e:
        # usage errors, unknown commands and CommandError all exit here
        if e.code is None:
            return 0
        return e.code if isinstance(e.code, int) else 1
    except KeyboardInterrupt:
        sys.stderr.write("Cancelled by user (Ctrl+C)\n")
        return 130
    return 0
